"""Mono- and cross-lingual synthesis.

Cross-lingual requests feed a native speaker's embedding to the acoustic
model and the target speaker's embedding to the vocoder, moving the
predicted pitch contour onto the target speaker's log-F0 statistics in
between.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .corpus import SpeakerRegistry, normalize_transcript
from .errors import InconsistentRegistry, MissingStats, NoNativeSpeaker, UnknownLanguage
from .features import AuxFeatureSeq, SpeakerProfile
from .frontend import predict_and_insert_sil, tokenize

MIN_STD = 1e-6


def _check_stats(p: SpeakerProfile):
    if p is None or p.n_voiced_frames <= 0 or not math.isfinite(p.logf0_mean) or not math.isfinite(p.logf0_std):
        raise MissingStats(f"no log-F0 statistics for {getattr(p, 'speaker_id', None)!r}")


def pitch_rescale(aux: AuxFeatureSeq, src: SpeakerProfile, tgt: SpeakerProfile) -> AuxFeatureSeq:
    """Map voiced log-pitch from src statistics onto tgt statistics.

    Shift-only when src has (numerically) zero spread. Unvoiced frames and the
    energy/POV channels pass through unchanged.
    """
    _check_stats(src)
    _check_stats(tgt)
    values = aux.values.copy()
    pitch = values[:, 0]
    voiced = pitch > 0
    lp = np.log(pitch[voiced])
    if src.logf0_std < MIN_STD:
        lp = lp - src.logf0_mean + tgt.logf0_mean
    else:
        lp = (lp - src.logf0_mean) / src.logf0_std * tgt.logf0_std + tgt.logf0_mean
    pitch[voiced] = np.exp(lp)
    return AuxFeatureSeq(values)


def choose_native_speaker(language_id: str, target: SpeakerProfile, registry: SpeakerRegistry,
                          profiles: Mapping[str, SpeakerProfile], override: Optional[str] = None) -> str:
    """Native speaker of `language_id` with the closest logf0_mean; ties go to the smallest id."""
    if override is not None:
        if override not in registry or registry.language_of(override) != language_id:
            raise InconsistentRegistry(f"override {override!r} is not a native {language_id!r} speaker")
        if override not in profiles:
            raise NoNativeSpeaker(f"override {override!r} has no profile")
        return override
    candidates = [s for s in registry.speakers(language_id) if s in profiles]
    if not candidates:
        raise NoNativeSpeaker(f"no profiled native speaker for {language_id!r}")
    return min(candidates, key=lambda s: (abs(profiles[s].logf0_mean - target.logf0_mean), s))


@dataclass
class SynthesisRequest:
    text: str
    target_speaker_id: str
    language_id: str
    native_speaker_override: Optional[str] = None

    def mode(self, registry: SpeakerRegistry) -> str:
        return "mono" if registry.language_of(self.target_speaker_id) == self.language_id else "cross"

    def validate(self, registry: SpeakerRegistry) -> str:
        registry.language_of(self.target_speaker_id)  # UnknownSpeaker
        if self.language_id not in registry.languages():
            raise UnknownLanguage(self.language_id)
        if self.native_speaker_override is not None:
            if (self.native_speaker_override not in registry
                    or registry.language_of(self.native_speaker_override) != self.language_id):
                raise InconsistentRegistry(
                    f"override {self.native_speaker_override!r} is not native in {self.language_id!r}")
        return self.mode(registry)


TRACE_FIELDS = ("mode", "language_id", "target_speaker_id", "am_speaker_id", "voc_speaker_id",
                "pitch_rescaled", "tokens", "durations", "T", "hop", "audio_length")


@dataclass
class SynthesisTrace:
    mode: str
    language_id: str
    target_speaker_id: str
    am_speaker_id: str
    voc_speaker_id: str
    pitch_rescaled: bool
    tokens: list = field(default_factory=list)
    durations: list = field(default_factory=list)
    T: int = 0
    hop: int = 0
    audio_length: int = 0

    def check(self):
        if self.audio_length != self.T * self.hop or self.T != sum(self.durations):
            raise AssertionError(f"trace length mismatch: {self.audio_length} != {self.T} x {self.hop}")
        if self.mode == "mono" and (self.am_speaker_id != self.voc_speaker_id or self.pitch_rescaled):
            raise AssertionError("mono trace must route one speaker without rescaling")
        if self.mode == "cross" and (self.voc_speaker_id != self.target_speaker_id
                                     or self.am_speaker_id == self.target_speaker_id or not self.pitch_rescaled):
            raise AssertionError("cross trace must route native -> am and target -> vocoder")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in TRACE_FIELDS}

    def to_tsv(self) -> str:
        rows = []
        for k in TRACE_FIELDS:
            v = getattr(self, k)
            if isinstance(v, list):
                v = " ".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            rows.append(f"{k}\t{v}")
        return "\n".join(rows) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "SynthesisTrace":
        kv = dict(line.split("\t", 1) for line in text.splitlines() if line)
        return cls(
            mode=kv["mode"], language_id=kv["language_id"], target_speaker_id=kv["target_speaker_id"],
            am_speaker_id=kv["am_speaker_id"], voc_speaker_id=kv["voc_speaker_id"],
            pitch_rescaled=kv["pitch_rescaled"] == "true", tokens=kv["tokens"].split(" ") if kv["tokens"] else [],
            durations=[int(x) for x in kv["durations"].split()], T=int(kv["T"]), hop=int(kv["hop"]),
            audio_length=int(kv["audio_length"]),
        )


def write_trace(trace: SynthesisTrace, path) -> None:
    Path(path).write_text(trace.to_tsv(), encoding="utf-8")


def read_trace(path) -> SynthesisTrace:
    return SynthesisTrace.from_tsv(Path(path).read_text(encoding="utf-8"))


def synthesize(request: SynthesisRequest, frontend, am, vocoder, profiles: Mapping[str, SpeakerProfile],
               registry: SpeakerRegistry):
    """Text -> (waveform, SynthesisTrace). `frontend` may be None to skip silence insertion."""
    mode = request.validate(registry)
    target = profiles.get(request.target_speaker_id)
    if target is None:
        raise MissingStats(f"no profile for {request.target_speaker_id!r}")
    seq = tokenize(normalize_transcript(request.text), request.language_id)
    if frontend is not None:
        seq = predict_and_insert_sil(frontend, seq)
    if mode == "mono":
        am_spk = request.target_speaker_id
    else:
        am_spk = choose_native_speaker(request.language_id, target, registry, profiles,
                                       request.native_speaker_override)
    vq, aux, durations = am.infer(seq, profiles[am_spk].embedding, request.language_id)
    rescaled = mode == "cross"
    if rescaled:
        aux = pitch_rescale(aux, profiles[am_spk], target)
    wav = vocoder.generate(vq, aux, target.embedding)
    trace = SynthesisTrace(
        mode=mode, language_id=request.language_id, target_speaker_id=request.target_speaker_id,
        am_speaker_id=am_spk, voc_speaker_id=request.target_speaker_id, pitch_rescaled=rescaled,
        tokens=list(seq.tokens), durations=[int(d) for d in durations], T=int(vq.T), hop=int(vocoder.hop),
        audio_length=int(len(wav)),
    )
    return wav, trace
