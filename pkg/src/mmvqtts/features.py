"""Per-frame acoustic targets: VQ code indices, pitch/energy/POV, speaker profiles."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np
import torch

from .audio import frame_signal, log_mel_np
from .errors import DegenerateEmbedding, InsufficientData, NoVoicedFrames, TooShort

SAMPLE_RATE = 16000
HOP = 160  # 10 ms
WIN = 400  # 25 ms
N_MELS = 80
F_MIN = 60.0
F_MAX = 400.0
VOICING_THRESHOLD = 0.5
ENERGY_FLOOR = -11.5
SPK_DIM = 192


@dataclass
class VQFeatureSeq:
    indices: np.ndarray  # (T, G) int
    V: int
    frame_hop_s: float = HOP / SAMPLE_RATE

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.ndim != 2 or self.indices.shape[0] < 1 or self.indices.shape[1] < 1:
            raise ValueError(f"indices must be T x G with T, G >= 1, got {self.indices.shape}")
        if self.V < 2 or self.indices.min() < 0 or self.indices.max() >= self.V:
            raise ValueError("code index out of range")

    @property
    def T(self) -> int:
        return self.indices.shape[0]

    @property
    def G(self) -> int:
        return self.indices.shape[1]


@dataclass
class AuxFeatureSeq:
    """Columns: pitch in Hz (0 = unvoiced), log-RMS energy, probability of voicing."""

    values: np.ndarray  # (T, 3)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != 3:
            raise ValueError(f"aux features must be T x 3, got {self.values.shape}")
        if np.any(self.values[:, 0] < 0) or np.any((self.values[:, 2] < 0) | (self.values[:, 2] > 1)):
            raise ValueError("pitch must be >= 0 and pov within [0, 1]")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def pitch(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def energy(self) -> np.ndarray:
        return self.values[:, 1]

    @property
    def pov(self) -> np.ndarray:
        return self.values[:, 2]

    @property
    def voiced(self) -> np.ndarray:
        return self.values[:, 0] > 0


@dataclass
class SpeakerProfile:
    speaker_id: str
    embedding: np.ndarray
    logf0_mean: float
    logf0_std: float
    n_voiced_frames: int

    def to_json(self) -> dict:
        return {
            "speaker_id": self.speaker_id,
            "embedding": [float(x) for x in self.embedding],
            "logf0_mean": self.logf0_mean,
            "logf0_std": self.logf0_std,
            "n_voiced_frames": self.n_voiced_frames,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SpeakerProfile":
        return cls(d["speaker_id"], np.asarray(d["embedding"], dtype=np.float64), float(d["logf0_mean"]),
                   float(d["logf0_std"]), int(d["n_voiced_frames"]))


def save_profiles(profiles: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({k: p.to_json() for k, p in sorted(profiles.items())}, f, indent=1)


def load_profiles(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return {k: SpeakerProfile.from_json(v) for k, v in json.load(f).items()}


# quantizer


class Quantizer(Protocol):
    """Anything that maps a waveform to per-frame code indices."""

    hop: int
    n_groups: int
    codebook_size: int

    def quantize(self, waveform) -> np.ndarray:
        ...


def kmeans(data, k: int, iters: int = 20, seed: int = 0):
    """Lloyd's algorithm with k-means++ seeding.

    Returns (centroids, objective history). ``history[i]`` is the total
    squared distance after assignment step i, so it never increases. Empty
    clusters keep their previous centroid.
    """
    x = np.asarray(data, dtype=np.float64)
    n = len(x)
    if n < k:
        raise InsufficientData(f"{n} points for {k} centroids")
    rng = np.random.default_rng(seed)
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centroids[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centroids[j]) ** 2, axis=1))
    history = []
    for _ in range(max(1, iters)):
        labels, dist = assign(x, centroids)
        history.append(float(dist.sum()))
        for j in range(k):
            members = x[labels == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    labels, dist = assign(x, centroids)
    history.append(float(dist.sum()))
    return centroids, history


def assign(x, centroids):
    """Nearest centroid per row (ties -> lowest index) and the squared distance."""
    x = np.asarray(x, dtype=np.float64)
    d = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * x @ centroids.T
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    d = np.maximum(d, 0.0)
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(len(x)), labels]


@dataclass
class SurrogateQuantizer:
    """Group-wise k-means over random linear projections of normalised log-mel frames."""

    sample_rate: int
    hop: int
    win: int
    n_mels: int
    mean: np.ndarray
    std: np.ndarray
    projections: np.ndarray  # (G, n_mels, P)
    codebooks: np.ndarray  # (G, V, P)
    history: list = field(default_factory=list)

    @property
    def n_groups(self) -> int:
        return self.codebooks.shape[0]

    @property
    def codebook_size(self) -> int:
        return self.codebooks.shape[1]

    def project(self, mel: np.ndarray) -> np.ndarray:
        """(T, n_mels) -> (G, T, P)."""
        z = (np.asarray(mel, dtype=np.float64) - self.mean) / self.std
        return np.einsum("tm,gmp->gtp", z, self.projections)

    def quantize_mel(self, mel) -> np.ndarray:
        proj = self.project(mel)
        return np.stack([assign(proj[g], self.codebooks[g])[0] for g in range(self.n_groups)], axis=1)

    def quantize(self, waveform) -> np.ndarray:
        return self.quantize_mel(log_mel_np(waveform, self.sample_rate, self.win, self.hop, self.n_mels))

    def save(self, path) -> None:
        np.savez(path, sample_rate=self.sample_rate, hop=self.hop, win=self.win, n_mels=self.n_mels,
                 mean=self.mean, std=self.std, projections=self.projections, codebooks=self.codebooks)

    @classmethod
    def load(cls, path) -> "SurrogateQuantizer":
        z = np.load(path)
        return cls(int(z["sample_rate"]), int(z["hop"]), int(z["win"]), int(z["n_mels"]),
                   z["mean"], z["std"], z["projections"], z["codebooks"])


def fit_surrogate_quantizer(
    mels: Sequence[np.ndarray],
    n_groups: int = 2,
    codebook_size: int = 320,
    seed: int = 0,
    iters: int = 20,
    proj_dim: int = 16,
    sample_rate: int = SAMPLE_RATE,
    hop: int = HOP,
    win: int = WIN,
    max_frames: Optional[int] = 200_000,
) -> SurrogateQuantizer:
    """Fit the stand-in quantizer on log-mel frames of a corpus (list of (T, n_mels))."""
    data = np.concatenate([np.asarray(m, dtype=np.float64) for m in mels], axis=0) if len(mels) else np.zeros((0, 1))
    if len(data) < codebook_size:
        raise InsufficientData(f"{len(data)} frames for a codebook of {codebook_size}")
    rng = np.random.default_rng(seed)
    if max_frames and len(data) > max_frames:
        data = data[np.sort(rng.choice(len(data), max_frames, replace=False))]
    n_mels = data.shape[1]
    mean = data.mean(axis=0)
    std = np.maximum(data.std(axis=0), 1e-5)
    projections = rng.normal(size=(n_groups, n_mels, proj_dim)) / math.sqrt(n_mels)
    q = SurrogateQuantizer(sample_rate, hop, win, n_mels, mean, std, projections,
                           np.zeros((n_groups, codebook_size, proj_dim)))
    proj = q.project(data)
    for g in range(n_groups):
        centroids, hist = kmeans(proj[g], codebook_size, iters, seed=int(rng.integers(2**31)))
        q.codebooks[g] = centroids
        q.history.append(hist)
    return q


def extract_vq(waveform, quantizer: Quantizer) -> VQFeatureSeq:
    waveform = np.asarray(waveform)
    if len(waveform) < quantizer.hop:
        raise TooShort(f"{len(waveform)} samples < hop {quantizer.hop}")
    idx = quantizer.quantize(waveform)
    T = len(waveform) // quantizer.hop
    if idx.shape[0] != T:
        raise ValueError(f"quantizer produced {idx.shape[0]} frames, expected {T}")
    return VQFeatureSeq(idx, quantizer.codebook_size, quantizer.hop / getattr(quantizer, "sample_rate", SAMPLE_RATE))


# pitch / energy / POV


def _nccf(x: np.ndarray, sample_rate, hop, win, f_min, f_max):
    """Normalised cross-correlation per frame over the pitch lag range.

    Returns (lags, r) with r of shape (T, n_lags).
    """
    lag_min = int(math.floor(sample_rate / f_max))
    lag_max = int(math.ceil(sample_rate / f_min))
    T = len(x) // hop
    left = (win - hop) // 2
    seg_len = win + lag_max
    padded = np.concatenate([np.zeros(left), x, np.zeros(seg_len)])
    idx = np.arange(T)[:, None] * hop + np.arange(seg_len)[None, :]
    seg = padded[idx]
    ref = seg[:, :win]
    n_fft = 1 << int(math.ceil(math.log2(seg_len + win)))
    corr = np.fft.irfft(np.conj(np.fft.rfft(ref, n_fft)) * np.fft.rfft(seg, n_fft), n_fft)
    lags = np.arange(lag_min, lag_max + 1)
    num = corr[:, lags]
    c = np.concatenate([np.zeros((T, 1)), np.cumsum(seg * seg, axis=1)], axis=1)
    e0 = c[:, win][:, None]
    e_lag = c[:, lags + win] - c[:, lags]
    denom = np.sqrt(e0 * e_lag)
    tiny = 1e-10 * win
    r = np.where(denom > tiny, num / np.maximum(denom, tiny), 0.0)
    return lags, np.clip(r, -1.0, 1.0)


def extract_aux(
    waveform,
    sample_rate: int = SAMPLE_RATE,
    hop: int = HOP,
    win: int = WIN,
    f_min: float = F_MIN,
    f_max: float = F_MAX,
    voicing_threshold: float = VOICING_THRESHOLD,
) -> AuxFeatureSeq:
    """Pitch (normalised autocorrelation peak), log-RMS energy and POV per frame.

    Among lags scoring within 10% of the best one the shortest wins, which
    keeps sub-harmonic (octave-down) picks out of periodic frames.
    """
    x = np.asarray(waveform, dtype=np.float64)
    if len(x) < hop:
        raise TooShort(f"{len(x)} samples < hop {hop}")
    frames = frame_signal(torch.from_numpy(x), win, hop).numpy()
    rms = np.sqrt(np.mean(frames * frames, axis=1))
    with np.errstate(divide="ignore"):
        energy = np.maximum(np.log(rms), ENERGY_FLOOR)

    lags, r = _nccf(x, sample_rate, hop, win, f_min, f_max)
    T = len(energy)
    peak = r.max(axis=1)
    pov = np.clip(peak, 0.0, 1.0)
    pitch = np.zeros(T)
    for t in np.flatnonzero(pov >= voicing_threshold):
        row = r[t]
        ok = np.flatnonzero(row >= 0.9 * peak[t])
        # walk to the local maximum starting from the first qualifying lag
        i = ok[0]
        while i + 1 < len(row) and row[i + 1] > row[i]:
            i += 1
        lag = float(lags[i])
        if 0 < i < len(row) - 1:
            a, b, c = row[i - 1], row[i], row[i + 1]
            den = a - 2 * b + c
            if den < 0:
                lag += 0.5 * (a - c) / den
        pitch[t] = sample_rate / lag
    return AuxFeatureSeq(np.stack([pitch, energy, pov], axis=1))


# speaker embeddings / profiles


def surrogate_speaker_embedding(waveform, sample_rate: int = SAMPLE_RATE, dim: int = SPK_DIM,
                                hop: int = HOP, win: int = WIN) -> np.ndarray:
    """Unit-normalised [per-band mean, per-band std] of a (dim/2)-band log-mel spectrogram."""
    if dim % 2:
        raise ValueError("surrogate embedding dimension must be even")
    mel = log_mel_np(waveform, sample_rate, win, hop, dim // 2).astype(np.float64)
    v = np.concatenate([mel.mean(axis=0), mel.std(axis=0)])
    return v / np.linalg.norm(v)


def build_speaker_profile(speaker_id: str, embeddings: Sequence, aux_features: Sequence) -> SpeakerProfile:
    """Average per-utterance embeddings (re-normalised) and collect voiced log-F0 statistics."""
    if len(embeddings) == 0:
        raise DegenerateEmbedding(f"{speaker_id}: no utterance embeddings")
    mean = np.mean(np.stack([np.asarray(e, dtype=np.float64) for e in embeddings]), axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-8:
        raise DegenerateEmbedding(f"{speaker_id}: embeddings cancel out")
    pitches = [np.asarray(a.pitch if isinstance(a, AuxFeatureSeq) else np.asarray(a)[:, 0]) for a in aux_features]
    voiced = np.concatenate([p[p > 0] for p in pitches]) if pitches else np.zeros(0)
    if len(voiced) == 0:
        raise NoVoicedFrames(f"{speaker_id}: no voiced frames")
    logf0 = np.log(voiced)
    return SpeakerProfile(speaker_id, mean / norm, float(np.mean(logf0)), float(np.std(logf0)), int(len(voiced)))
