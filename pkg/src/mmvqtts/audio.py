"""Framing and log-mel analysis shared by feature extraction and the vocoder loss.

Frame ``t`` covers samples ``[t*hop - (win-hop)//2, t*hop + win - (win-hop)//2)``
of the zero-padded signal, so a waveform of ``n`` samples yields exactly
``n // hop`` frames and frame ``t`` is centred on the hop span
``[t*hop, (t+1)*hop)`` the vocoder renders for it.
"""

import functools
import math

import numpy as np
import torch

from .errors import TooShort

LOG_FLOOR = 1e-5


def num_frames(n_samples: int, hop: int) -> int:
    return n_samples // hop


def frame_signal(x: torch.Tensor, win: int, hop: int) -> torch.Tensor:
    """(..., n) -> (..., n // hop, win)."""
    n = x.shape[-1]
    if n < hop:
        raise TooShort(f"{n} samples is shorter than one hop ({hop})")
    left = (win - hop) // 2
    right = win - hop - left
    padded = torch.nn.functional.pad(x, (left, right))
    frames = padded.unfold(-1, win, hop)
    return frames[..., : n // hop, :]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@functools.lru_cache(maxsize=16)
def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float = 0.0, fmax=None) -> np.ndarray:
    """Triangular HTK-style mel filters, shape (n_mels, n_fft // 2 + 1)."""
    fmax = sample_rate / 2 if fmax is None else fmax
    bins = np.linspace(0, sample_rate / 2, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fb = np.zeros((n_mels, len(bins)))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        up = (bins - lo) / max(mid - lo, 1e-9)
        down = (hi - bins) / max(hi - mid, 1e-9)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def _n_fft(win: int) -> int:
    return 1 << math.ceil(math.log2(win))


def log_mel(x, sample_rate: int, win: int, hop: int, n_mels: int) -> torch.Tensor:
    """Natural-log mel spectrogram, (..., n) -> (..., n // hop, n_mels). Differentiable."""
    x = torch.as_tensor(x)
    if not x.is_floating_point():
        x = x.float()
    frames = frame_signal(x, win, hop) * torch.hann_window(win, periodic=False, dtype=x.dtype, device=x.device)
    n_fft = _n_fft(win)
    spec = torch.fft.rfft(frames, n=n_fft).abs().pow(2)
    fb = torch.as_tensor(mel_filterbank(sample_rate, n_fft, n_mels), dtype=x.dtype, device=x.device)
    mel = spec @ fb.T
    return torch.log(torch.clamp(mel, min=LOG_FLOOR))


def log_mel_np(x, sample_rate: int, win: int, hop: int, n_mels: int) -> np.ndarray:
    with torch.no_grad():
        return log_mel(torch.as_tensor(np.asarray(x, dtype=np.float32)), sample_rate, win, hop, n_mels).numpy()
