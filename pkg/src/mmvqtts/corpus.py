"""Utterance records, manifests, transcripts and the on-disk feature store."""

from __future__ import annotations

import os
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import (
    AudioFormatError,
    DigitInBraces,
    DigitOutsideBraces,
    DuplicateUttId,
    FeatureFileError,
    InconsistentRegistry,
    MalformedRecord,
    UnbalancedBraces,
    UnknownSpeaker,
)

MANIFEST_KEYS = ("speaker", "lang", "audio", "sr", "dur", "text")

# feature store file names
VQ_FILE = "vq.idx"
AUX_FILE = "aux.f32"
SPK_FILE = "spk.f32"
CTM_FILE = "align.ctm"
HYP_FILE = "hyp.txt"

HEADER = struct.Struct("<4sIII")
FORMAT_VERSION = 1
_MAGIC = {
    VQ_FILE: (b"VQIX", np.dtype("<i4")),
    AUX_FILE: (b"AUXF", np.dtype("<f4")),
    SPK_FILE: (b"SPKE", np.dtype("<f4")),
}


@dataclass
class Utterance:
    utt_id: str
    speaker_id: str
    language_id: str
    audio_ref: str
    sample_rate: int
    duration_s: float
    transcript: str

    def audio_path(self, root: Optional[os.PathLike] = None) -> Path:
        p = Path(self.audio_ref)
        if root is not None and not p.is_absolute():
            p = Path(root) / p
        return p


@dataclass
class SpeakerRegistry:
    """speaker_id -> (language_id, gender or None)."""

    entries: dict = field(default_factory=dict)

    def add(self, speaker_id: str, language_id: str, gender: Optional[str] = None):
        if speaker_id in self.entries:
            if self.entries[speaker_id][0] != language_id:
                raise InconsistentRegistry(
                    f"speaker {speaker_id!r} registered for both "
                    f"{self.entries[speaker_id][0]!r} and {language_id!r}"
                )
            return
        self.entries[speaker_id] = (language_id, gender)

    def language_of(self, speaker_id: str) -> str:
        try:
            return self.entries[speaker_id][0]
        except KeyError:
            raise UnknownSpeaker(speaker_id) from None

    def languages(self) -> list:
        return sorted({lang for lang, _ in self.entries.values()})

    def speakers(self, language_id: Optional[str] = None) -> list:
        return sorted(
            s for s, (lang, _) in self.entries.items()
            if language_id is None or lang == language_id
        )

    def __contains__(self, speaker_id):
        return speaker_id in self.entries

    def __len__(self):
        return len(self.entries)

    @classmethod
    def from_utterances(cls, utts: Iterable[Utterance]) -> "SpeakerRegistry":
        reg = cls()
        for u in utts:
            reg.add(u.speaker_id, u.language_id)
        return reg


def load_registry(path) -> SpeakerRegistry:
    """Read `speaker<TAB>lang[<TAB>gender]` lines."""
    reg = SpeakerRegistry()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise MalformedRecord(line_no, "registry line needs speaker and language")
            if parts[0] in reg:
                raise InconsistentRegistry(f"duplicate speaker {parts[0]!r}")
            reg.add(parts[0], parts[1], parts[2] if len(parts) > 2 and parts[2] else None)
    return reg


def save_registry(reg: SpeakerRegistry, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for spk in sorted(reg.entries):
            lang, gender = reg.entries[spk]
            f.write(f"{spk}\t{lang}" + (f"\t{gender}" if gender else "") + "\n")


def normalize_transcript(raw: str) -> str:
    """Strip braces around spelled-out digits and collapse whitespace.

    ``"room {one two} open"`` becomes ``"room one two open"``. Digits left
    anywhere in the text are an error, since the frontend has no number
    expansion.
    """
    out = []
    depth_open = -1
    for i, ch in enumerate(raw):
        if ch == "{":
            if depth_open >= 0:
                raise UnbalancedBraces(i)
            depth_open = i
            out.append(" ")
        elif ch == "}":
            if depth_open < 0:
                raise UnbalancedBraces(i)
            depth_open = -1
            out.append(" ")
        elif ch.isdigit():
            if depth_open >= 0:
                raise DigitInBraces(i)
            raise DigitOutsideBraces(i)
        else:
            out.append(ch)
    if depth_open >= 0:
        raise UnbalancedBraces(depth_open)
    return " ".join("".join(out).split())


def _check_transcript(text: str) -> bool:
    return not any(c.isdigit() or c in "{}" for c in text) and "\t" not in text


def format_manifest_line(u: Utterance) -> str:
    return (
        f"{u.utt_id}\tspeaker={u.speaker_id}\tlang={u.language_id}\taudio={u.audio_ref}"
        f"\tsr={u.sample_rate}\tdur={u.duration_s!r}\ttext={u.transcript}"
    )


def parse_manifest_line(line: str, line_no: int) -> Utterance:
    parts = line.split("\t")
    utt_id = parts[0]
    if not utt_id or "=" in utt_id:
        raise MalformedRecord(line_no, "missing utterance id")
    fields = {}
    for part in parts[1:]:
        key, sep, value = part.partition("=")
        if not sep:
            raise MalformedRecord(line_no, f"field {part!r} is not key=value")
        if key in fields:
            raise MalformedRecord(line_no, f"repeated key {key!r}")
        fields[key] = value
    missing = [k for k in MANIFEST_KEYS if k not in fields]
    if missing:
        raise MalformedRecord(line_no, f"missing {', '.join(missing)}")
    try:
        sr = int(fields["sr"])
        dur = float(fields["dur"])
    except ValueError as e:
        raise MalformedRecord(line_no, str(e)) from None
    if sr <= 0 or not dur > 0 or not np.isfinite(dur):
        raise MalformedRecord(line_no, "sample rate and duration must be positive")
    if not fields["audio"]:
        raise MalformedRecord(line_no, "empty audio path")
    if not _check_transcript(fields["text"]) or not fields["text"].strip():
        raise MalformedRecord(line_no, "transcript must be normalized (no digits/braces)")
    return Utterance(
        utt_id=utt_id,
        speaker_id=fields["speaker"],
        language_id=fields["lang"],
        audio_ref=fields["audio"],
        sample_rate=sr,
        duration_s=dur,
        transcript=fields["text"],
    )


def load_manifest(path, registry: Optional[SpeakerRegistry] = None) -> list:
    """Parse a manifest; one utterance per line, order preserved.

    With a registry, speakers must be registered and their language must
    match. Without one, each speaker must at least stick to a single language.
    """
    utts = []
    seen = set()
    implied = SpeakerRegistry()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            u = parse_manifest_line(line, line_no)
            if u.utt_id in seen:
                raise DuplicateUttId(u.utt_id)
            seen.add(u.utt_id)
            if registry is not None:
                if u.speaker_id not in registry:
                    raise UnknownSpeaker(u.speaker_id)
                if registry.language_of(u.speaker_id) != u.language_id:
                    raise InconsistentRegistry(
                        f"line {line_no}: {u.speaker_id} is not a {u.language_id} speaker"
                    )
            else:
                implied.add(u.speaker_id, u.language_id)
            utts.append(u)
    return utts


def save_manifest(utts: Iterable[Utterance], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for u in utts:
            f.write(format_manifest_line(u) + "\n")


# audio


def read_wav(path) -> tuple:
    """Return (float32 samples in [-1, 1), sample_rate). Only mono 16-bit PCM."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getsampwidth() != 2:
                raise AudioFormatError(f"{path}: expected 16-bit PCM")
            if w.getnchannels() != 1:
                raise AudioFormatError(f"{path}: expected mono audio")
            sr = w.getframerate()
            data = w.readframes(w.getnframes())
    except wave.Error as e:
        raise AudioFormatError(f"{path}: {e}") from None
    x = np.frombuffer(data, dtype="<i2").astype(np.float32) / 32768.0
    return x, sr


def write_wav(path, samples, sample_rate: int) -> None:
    """Mono 16-bit PCM; `path` may also be a writable binary file object."""
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(x * 32767.0).astype("<i2")
    with wave.open(path if hasattr(path, "write") else str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())


def check_duration(u: Utterance, n_samples: int, sample_rate: int, hop: int) -> None:
    """Enforce the duration/sample-rate consistency check (tolerance: one frame)."""
    if sample_rate != u.sample_rate:
        raise AudioFormatError(
            f"{u.utt_id}: file sample rate {sample_rate} != manifest {u.sample_rate}"
        )
    if abs(n_samples / sample_rate - u.duration_s) > hop / sample_rate:
        raise AudioFormatError(
            f"{u.utt_id}: manifest duration {u.duration_s} s disagrees with "
            f"{n_samples / sample_rate:.4f} s of audio"
        )


# feature store


def write_matrix(path, array, kind: Optional[str] = None) -> None:
    kind = kind or os.path.basename(path)
    magic, dtype = _MAGIC[kind]
    a = np.asarray(array)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise FeatureFileError(f"{path}: expected a matrix, got shape {a.shape}")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(HEADER.pack(magic, FORMAT_VERSION, a.shape[0], a.shape[1]))
        f.write(np.ascontiguousarray(a, dtype=dtype).tobytes())
    os.replace(tmp, path)


def read_matrix(path, kind: Optional[str] = None) -> np.ndarray:
    kind = kind or os.path.basename(path)
    magic, dtype = _MAGIC[kind]
    with open(path, "rb") as f:
        head = f.read(HEADER.size)
        if len(head) != HEADER.size:
            raise FeatureFileError(f"{path}: truncated header")
        got_magic, version, rows, cols = HEADER.unpack(head)
        if got_magic != magic or version != FORMAT_VERSION:
            raise FeatureFileError(f"{path}: bad magic/version")
        body = f.read()
    if len(body) != rows * cols * dtype.itemsize:
        raise FeatureFileError(f"{path}: expected {rows}x{cols} values")
    return np.frombuffer(body, dtype=dtype).reshape(rows, cols).copy()


class FeatureStore:
    """`root/<utt_id>/{vq.idx, aux.f32, spk.f32, align.ctm, hyp.txt}`."""

    def __init__(self, root):
        self.root = Path(root)

    def utt_dir(self, utt_id: str, create: bool = False) -> Path:
        d = self.root / utt_id
        if create:
            d.mkdir(parents=True, exist_ok=True)
        return d

    def path(self, utt_id: str, name: str) -> Path:
        return self.root / utt_id / name

    def has(self, utt_id: str, name: str) -> bool:
        return self.path(utt_id, name).exists()

    def write_vq(self, utt_id, indices):
        write_matrix(self.utt_dir(utt_id, True) / VQ_FILE, np.asarray(indices), VQ_FILE)

    def read_vq(self, utt_id) -> np.ndarray:
        return read_matrix(self.path(utt_id, VQ_FILE), VQ_FILE)

    def write_aux(self, utt_id, aux):
        write_matrix(self.utt_dir(utt_id, True) / AUX_FILE, np.asarray(aux), AUX_FILE)

    def read_aux(self, utt_id) -> np.ndarray:
        return read_matrix(self.path(utt_id, AUX_FILE), AUX_FILE)

    def write_spk(self, utt_id, emb):
        write_matrix(self.utt_dir(utt_id, True) / SPK_FILE, np.asarray(emb).reshape(1, -1), SPK_FILE)

    def read_spk(self, utt_id) -> np.ndarray:
        return read_matrix(self.path(utt_id, SPK_FILE), SPK_FILE)[0]

    def write_hyp(self, utt_id, text: str):
        (self.utt_dir(utt_id, True) / HYP_FILE).write_text(text.strip() + "\n", encoding="utf-8")

    def read_hyp(self, utt_id) -> str:
        return self.path(utt_id, HYP_FILE).read_text(encoding="utf-8").strip()
