"""vec2wav: VQ indices + aux features + speaker embedding -> waveform.

Codes are embedded per group, concatenated with projected aux features,
smoothed by a residual convolutional feature encoder, offset by a projected
speaker embedding at every frame and rendered by a HiFi-GAN style upsampling
generator whose rates multiply to the hop size.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import checkpoint
from .audio import log_mel
from .errors import CheckpointError, EmptyInput, IndexOutOfRange, LengthMismatch

LRELU_SLOPE = 0.1


@dataclass
class VocoderConfig:
    groups: int = 2
    codebook_size: int = 320
    code_dim: int = 64
    aux_dim: int = 32
    enc_width: int = 256
    enc_blocks: int = 4
    enc_kernel: int = 5
    spk_dim: int = 192
    upsample_rates: list = field(default_factory=lambda: [5, 4, 4, 2])
    gen_channels: int = 256
    resblock_kernels: list = field(default_factory=lambda: [3, 7])
    resblock_dilations: list = field(default_factory=lambda: [[1, 3], [1, 3]])
    mpd_periods: list = field(default_factory=lambda: [2, 3, 5, 7, 11])
    msd_scales: int = 3
    disc_channels: int = 16
    mode: str = "lite"
    lambda_mel: float = 45.0
    lambda_adv: float = 1.0
    lambda_fm: float = 2.0
    lr: float = 2e-4
    batch_size: int = 8
    segment_frames: int = 32
    max_steps: int = 1000
    seed: int = 0
    sample_rate: int = 16000
    win: int = 400
    n_mels: int = 80
    aux_mean: list = field(default_factory=lambda: [150.0, -4.0, 0.0])
    aux_std: list = field(default_factory=lambda: [50.0, 2.0, 1.0])

    def __post_init__(self):
        if min(self.code_dim, self.aux_dim, self.enc_width, self.gen_channels) <= 0:
            raise ValueError("widths must be positive")
        if self.mode not in ("lite", "adversarial"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.gen_channels % (2 ** len(self.upsample_rates)):
            raise ValueError("gen_channels must halve cleanly at every upsampling stage")

    @property
    def hop(self) -> int:
        return int(np.prod(self.upsample_rates))


class ResStack(nn.Module):
    """Residual 1-D conv block used by the feature encoder."""

    def __init__(self, width, kernel):
        super().__init__()
        self.c1 = nn.Conv1d(width, width, kernel, padding=kernel // 2)
        self.c2 = nn.Conv1d(width, width, kernel, padding=kernel // 2)

    def forward(self, x):
        return x + self.c2(F.leaky_relu(self.c1(F.leaky_relu(x, LRELU_SLOPE)), LRELU_SLOPE))


class MRFBlock(nn.Module):
    def __init__(self, channels, kernel, dilations):
        super().__init__()
        self.convs1 = nn.ModuleList(
            [nn.Conv1d(channels, channels, kernel, dilation=d, padding=d * (kernel - 1) // 2) for d in dilations]
        )
        self.convs2 = nn.ModuleList(
            [nn.Conv1d(channels, channels, kernel, padding=(kernel - 1) // 2) for _ in dilations]
        )

    def forward(self, x):
        for c1, c2 in zip(self.convs1, self.convs2):
            x = x + c2(F.leaky_relu(c1(F.leaky_relu(x, LRELU_SLOPE)), LRELU_SLOPE))
        return x


class Vocoder(nn.Module):
    def __init__(self, config: VocoderConfig):
        super().__init__()
        c = config
        self.config = c
        self.code_embed = nn.ModuleList([nn.Embedding(c.codebook_size, c.code_dim) for _ in range(c.groups)])
        self.aux_proj = nn.Linear(3, c.aux_dim)
        width_in = c.groups * c.code_dim + c.aux_dim
        self.enc_in = nn.Conv1d(width_in, c.enc_width, c.enc_kernel, padding=c.enc_kernel // 2)
        self.encoder = nn.ModuleList([ResStack(c.enc_width, c.enc_kernel) for _ in range(c.enc_blocks)])
        self.spk_proj = nn.Linear(c.spk_dim, c.enc_width)
        self.conv_pre = nn.Conv1d(c.enc_width, c.gen_channels, 7, padding=3)
        self.ups = nn.ModuleList()
        self.mrfs = nn.ModuleList()
        ch = c.gen_channels
        for r in c.upsample_rates:
            # kernel 2r, this padding/output_padding gives exactly r x length
            self.ups.append(nn.ConvTranspose1d(ch, ch // 2, 2 * r, r, padding=r // 2 + r % 2, output_padding=r % 2))
            ch //= 2
            self.mrfs.append(nn.ModuleList([MRFBlock(ch, k, d) for k, d in zip(c.resblock_kernels, c.resblock_dilations)]))
        self.conv_post = nn.Conv1d(ch, 1, 7, padding=3)
        self.register_buffer("aux_mean", torch.tensor(c.aux_mean, dtype=torch.float32))
        self.register_buffer("aux_std", torch.tensor(c.aux_std, dtype=torch.float32))

    @property
    def hop(self) -> int:
        return self.config.hop

    def embed_codes(self, indices, aux):
        """(B, T, G) indices, (B, T, 3) aux -> (B, T, G*code_dim + aux_dim)."""
        indices = torch.as_tensor(indices)
        if indices.shape[:2] != aux.shape[:2]:
            raise LengthMismatch("code and aux sequences differ in length")
        if indices.numel() and (int(indices.min()) < 0 or int(indices.max()) >= self.config.codebook_size):
            raise IndexOutOfRange(f"code index outside [0, {self.config.codebook_size})")
        codes = [emb(indices[..., g]) for g, emb in enumerate(self.code_embed)]
        aux = aux.to(self.aux_std.dtype)
        pitch = torch.where(aux[..., :1] > 0, aux[..., :1], self.aux_mean[:1])
        norm = (torch.cat([pitch, aux[..., 1:]], dim=-1) - self.aux_mean) / self.aux_std
        return torch.cat(codes + [self.aux_proj(norm)], dim=-1)

    def encode(self, indices, aux, spk):
        x = self.embed_codes(indices, aux).transpose(1, 2)
        x = self.enc_in(x)
        for block in self.encoder:
            x = block(x)
        return x + self.spk_proj(spk.to(x.dtype))[:, :, None]

    def forward(self, indices, aux, spk):
        """-> (B, T * hop) waveform in [-1, 1]."""
        x = self.conv_pre(self.encode(indices, aux, spk))
        for up, mrfs in zip(self.ups, self.mrfs):
            x = up(F.leaky_relu(x, LRELU_SLOPE))
            x = sum(m(x) for m in mrfs) / len(mrfs)
        x = self.conv_post(F.leaky_relu(x))
        return torch.tanh(x).squeeze(1)

    @torch.no_grad()
    def generate(self, vq, aux, spk_embedding) -> np.ndarray:
        """Single utterance: VQFeatureSeq/array (T, G), AuxFeatureSeq/array (T, 3), (D,) -> samples."""
        idx = np.asarray(getattr(vq, "indices", vq))
        a = np.asarray(getattr(aux, "values", aux), dtype=np.float32)
        if idx.ndim != 2 or idx.shape[0] == 0:
            raise EmptyInput("no frames to vocode")
        if len(a) != len(idx):
            raise LengthMismatch(f"{len(idx)} code frames vs {len(a)} aux frames")
        was = self.training
        self.eval()
        dtype = self.aux_std.dtype
        wav = self(
            torch.as_tensor(idx, dtype=torch.long)[None],
            torch.as_tensor(a, dtype=dtype)[None],
            torch.as_tensor(np.asarray(spk_embedding), dtype=dtype)[None],
        )[0]
        self.train(was)
        return wav.double().numpy()


# discriminators


class PeriodDiscriminator(nn.Module):
    def __init__(self, period, ch):
        super().__init__()
        self.period = period
        chans = [1, ch, 2 * ch, 4 * ch, 4 * ch]
        self.convs = nn.ModuleList(
            [nn.Conv2d(chans[i], chans[i + 1], (5, 1), (3 if i < 3 else 1, 1), padding=(2, 0)) for i in range(4)]
        )
        self.post = nn.Conv2d(chans[-1], 1, (3, 1), padding=(1, 0))

    def forward(self, x):
        fmap = []
        b, t = x.shape
        if t % self.period:
            x = F.pad(x, (0, self.period - t % self.period), mode="reflect")
        x = x.view(b, 1, -1, self.period)
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmap.append(x)
        x = self.post(x)
        fmap.append(x)
        return x.flatten(1), fmap


class ScaleDiscriminator(nn.Module):
    def __init__(self, ch):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Conv1d(1, ch, 15, 1, padding=7),
            nn.Conv1d(ch, 2 * ch, 41, 4, padding=20),
            nn.Conv1d(2 * ch, 4 * ch, 41, 4, padding=20),
            nn.Conv1d(4 * ch, 4 * ch, 5, 1, padding=2),
        ])
        self.post = nn.Conv1d(4 * ch, 1, 3, 1, padding=1)

    def forward(self, x):
        fmap = []
        x = x[:, None, :]
        for conv in self.convs:
            x = F.leaky_relu(conv(x), LRELU_SLOPE)
            fmap.append(x)
        x = self.post(x)
        fmap.append(x)
        return x.flatten(1), fmap


class Discriminators(nn.Module):
    """Multi-period and multi-scale discriminators; returns (scores, feature maps) lists."""

    def __init__(self, config: VocoderConfig):
        super().__init__()
        self.period = nn.ModuleList([PeriodDiscriminator(p, config.disc_channels) for p in config.mpd_periods])
        self.scale = nn.ModuleList([ScaleDiscriminator(config.disc_channels) for _ in range(config.msd_scales)])

    def forward(self, x):
        scores, fmaps = [], []
        for d in self.period:
            s, f = d(x)
            scores.append(s)
            fmaps.append(f)
        y = x
        for i, d in enumerate(self.scale):
            if i:
                y = F.avg_pool1d(y[:, None, :], 4, 2, padding=2).squeeze(1)
            s, f = d(y)
            scores.append(s)
            fmaps.append(f)
        return scores, fmaps


# losses


@dataclass
class VocoderBatch:
    vq: torch.Tensor  # (B, T, G)
    aux: torch.Tensor  # (B, T, 3)
    spk: torch.Tensor  # (B, D)
    wav: torch.Tensor  # (B, T * hop)


def mel_l1(gen, ref, config: VocoderConfig):
    if gen.shape[-1] != ref.shape[-1]:
        raise LengthMismatch(f"generated {gen.shape[-1]} samples, reference has {ref.shape[-1]}")
    a = log_mel(gen, config.sample_rate, config.win, config.hop, config.n_mels)
    b = log_mel(ref, config.sample_rate, config.win, config.hop, config.n_mels)
    return (a - b).abs().mean()


def discriminator_loss(real_scores, fake_scores):
    return sum(torch.mean((1 - r) ** 2) + torch.mean(f**2) for r, f in zip(real_scores, fake_scores))


def generator_adv_loss(fake_scores):
    return sum(torch.mean((1 - f) ** 2) for f in fake_scores)


def feature_matching_loss(real_fmaps, fake_fmaps):
    return sum(torch.mean(torch.abs(r.detach() - f)) for rs, fs in zip(real_fmaps, fake_fmaps) for r, f in zip(rs, fs))


def vocoder_loss(model: Vocoder, batch: VocoderBatch, mode: str = "lite", discriminators: Optional[Discriminators] = None,
                 generated=None) -> dict:
    """Generator-side loss terms. `generated` lets callers reuse (or inject) the waveform."""
    c = model.config
    gen = model(batch.vq, batch.aux, batch.spk) if generated is None else generated
    out = {"mel": mel_l1(gen, batch.wav, c)}
    if mode == "lite":
        out["total"] = out["mel"]
        return out
    if discriminators is None:
        raise ValueError("adversarial mode needs discriminators")
    fake_scores, fake_fmaps = discriminators(gen)
    _, real_fmaps = discriminators(batch.wav)
    out["adv"] = generator_adv_loss(fake_scores)
    out["fm"] = feature_matching_loss(real_fmaps, fake_fmaps)
    out["total"] = c.lambda_mel * out["mel"] + c.lambda_adv * out["adv"] + c.lambda_fm * out["fm"]
    out["generated"] = gen
    return out


# data / training


def crop_segments(utterances: Sequence[dict], segment_frames: int, hop: int, rng: np.random.Generator,
                  batch_size: int) -> VocoderBatch:
    """Random aligned crops; utterances are dicts with vq (T, G), aux (T, 3), spk (D,), wav (>= T*hop,)."""
    vqs, auxs, spks, wavs = [], [], [], []
    for i in rng.integers(0, len(utterances), batch_size):
        u = utterances[int(i)]
        T = len(u["vq"])
        seg = min(segment_frames, T)
        start = int(rng.integers(0, T - seg + 1))
        vqs.append(u["vq"][start : start + seg])
        auxs.append(u["aux"][start : start + seg])
        spks.append(u["spk"])
        wavs.append(u["wav"][start * hop : (start + seg) * hop])
    return _stack(vqs, auxs, spks, wavs)


def fixed_segments(utterances: Sequence[dict], segment_frames: int, hop: int) -> VocoderBatch:
    """The leading segment of every utterance, for deterministic evaluation."""
    seg = min(segment_frames, min(len(u["vq"]) for u in utterances))
    return _stack([u["vq"][:seg] for u in utterances], [u["aux"][:seg] for u in utterances],
                  [u["spk"] for u in utterances], [u["wav"][: seg * hop] for u in utterances])


def _stack(vqs, auxs, spks, wavs) -> VocoderBatch:
    n = min(len(v) for v in vqs)
    hop = len(wavs[0]) // len(vqs[0])
    return VocoderBatch(
        vq=torch.as_tensor(np.stack([np.asarray(v[:n], dtype=np.int64) for v in vqs])),
        aux=torch.as_tensor(np.stack([np.asarray(a[:n], dtype=np.float32) for a in auxs])),
        spk=torch.as_tensor(np.stack([np.asarray(s, dtype=np.float32) for s in spks])),
        wav=torch.as_tensor(np.stack([np.asarray(w[: n * hop], dtype=np.float32) for w in wavs])),
    )


@torch.no_grad()
def evaluate_mel(model: Vocoder, batch: VocoderBatch) -> float:
    was = model.training
    model.eval()
    value = float(mel_l1(model(batch.vq, batch.aux, batch.spk), batch.wav, model.config))
    model.train(was)
    return value


def train_vocoder(model: Vocoder, utterances: Sequence[dict], steps: int, mode: Optional[str] = None,
                  discriminators: Optional[Discriminators] = None, optimizers=None, start_step: int = 0, log=None):
    """Returns (discriminators, optimizers, history) with history = [(step, eval mel L1)]."""
    c = model.config
    mode = mode or c.mode
    rng = np.random.default_rng(c.seed + start_step)
    if mode == "adversarial" and discriminators is None:
        discriminators = Discriminators(c)
    if optimizers is None:
        optimizers = {"g": torch.optim.AdamW(model.parameters(), lr=c.lr, betas=(0.8, 0.99))}
        if discriminators is not None:
            optimizers["d"] = torch.optim.AdamW(discriminators.parameters(), lr=c.lr, betas=(0.8, 0.99))
    eval_batch = fixed_segments(utterances, c.segment_frames, c.hop)
    history = [(start_step, evaluate_mel(model, eval_batch))]
    if log:
        log(step=start_step, eval_mel=history[0][1])
    model.train()
    for step in range(start_step + 1, start_step + steps + 1):
        batch = crop_segments(utterances, c.segment_frames, c.hop, rng, c.batch_size)
        if mode == "adversarial":
            d_loss = adversarial_step(model, discriminators, batch, optimizers)
        out = vocoder_loss(model, batch, "lite") if mode == "lite" else vocoder_loss(model, batch, mode, discriminators)
        optimizers["g"].zero_grad()
        out["total"].backward()
        optimizers["g"].step()
        if log and (step % 25 == 0 or step == start_step + steps):
            extra = {"d_loss": float(d_loss)} if mode == "adversarial" else {}
            log(step=step, loss=out["total"].item(), mel=out["mel"].item(), **extra)
    history.append((start_step + steps, evaluate_mel(model, eval_batch)))
    if log:
        log(step=start_step + steps, eval_mel=history[-1][1])
    return discriminators, optimizers, history


def adversarial_step(model: Vocoder, discriminators: Discriminators, batch: VocoderBatch, optimizers) -> torch.Tensor:
    """One discriminator update on (real, detached fake)."""
    with torch.no_grad():
        fake = model(batch.vq, batch.aux, batch.spk)
    real_scores, _ = discriminators(batch.wav)
    fake_scores, _ = discriminators(fake)
    loss = discriminator_loss(real_scores, fake_scores)
    optimizers["d"].zero_grad()
    loss.backward()
    optimizers["d"].step()
    return loss.detach()


def save_vocoder(model: Vocoder, root, step: int, discriminators=None, optimizers=None, history=None):
    extra = {"history": history or []}
    if discriminators is not None:
        extra["discriminators"] = discriminators.state_dict()
    if optimizers:
        extra["optimizers"] = {k: o.state_dict() for k, o in optimizers.items()}
    return checkpoint.save(root, step, asdict(model.config), model.state_dict(), extra)


def load_vocoder(path) -> tuple:
    config, params, extra = checkpoint.load(path)
    try:
        model = Vocoder(VocoderConfig(**config))
        model.load_state_dict(params)
    except Exception as e:
        raise CheckpointError(f"checkpoint {path} does not match its config: {e}") from e
    model.eval()
    return model, extra
