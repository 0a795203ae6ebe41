"""HTTP front for synthesis: a FastAPI app over a loaded Synthesizer.

The CLI's `synth --server URL` talks to this app instead of loading models
itself. Model states are read-only, so concurrent requests share them.
"""

from __future__ import annotations

import base64
import io
from typing import List, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .corpus import write_wav
from .errors import NoNativeSpeaker, UnknownLanguage, UnknownSpeaker, VQTTSError


class SynthesizeBody(BaseModel):
    text: str = Field(min_length=1)
    speaker: str
    language: str
    native: Optional[str] = None


class TraceModel(BaseModel):
    mode: str
    language_id: str
    target_speaker_id: str
    am_speaker_id: str
    voc_speaker_id: str
    pitch_rescaled: bool
    tokens: List[str]
    durations: List[int]
    T: int
    hop: int
    audio_length: int


class SynthesizeResult(BaseModel):
    trace: TraceModel
    sample_rate: int
    wav_base64: str


class SpeakerInfo(BaseModel):
    speaker_id: str
    language_id: str
    logf0_mean: Optional[float] = None


class Health(BaseModel):
    status: str
    speakers: int
    languages: List[str]


def wav_bytes(samples, sample_rate: int) -> bytes:
    buf = io.BytesIO()
    write_wav(buf, samples, sample_rate)
    return buf.getvalue()


def create_app(synthesizer=None, config=None) -> FastAPI:
    """Serve `synthesizer`, or one loaded lazily from `config` on first use."""
    app = FastAPI(title="mmvqtts")
    state = {"synth": synthesizer}

    def get():
        if state["synth"] is None:
            from .pipeline import Synthesizer

            state["synth"] = Synthesizer.load(config)
        return state["synth"]

    @app.get("/health", response_model=Health)
    def health():
        s = get()
        return Health(status="ok", speakers=len(s.registry), languages=s.registry.languages())

    @app.get("/speakers", response_model=List[SpeakerInfo])
    def speakers():
        s = get()
        return [
            SpeakerInfo(speaker_id=spk, language_id=s.registry.language_of(spk),
                        logf0_mean=s.profiles[spk].logf0_mean if spk in s.profiles else None)
            for spk in s.registry.speakers()
        ]

    @app.post("/synthesize", response_model=SynthesizeResult)
    def synthesize(body: SynthesizeBody):
        s = get()
        try:
            wav, trace = s(body.text, body.speaker, body.language, body.native)
        except (UnknownSpeaker, UnknownLanguage, NoNativeSpeaker) as e:
            raise HTTPException(status_code=404, detail=str(e))
        except VQTTSError as e:
            raise HTTPException(status_code=422, detail=f"{type(e).__name__}: {e}")
        return SynthesizeResult(trace=TraceModel(**trace.to_dict()), sample_rate=s.sample_rate,
                                wav_base64=base64.b64encode(wav_bytes(wav, s.sample_rate)).decode("ascii"))

    return app
