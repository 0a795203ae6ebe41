"""txt2vec: tokens + speaker embedding + language -> VQ code indices and pitch/energy/POV.

The encoder output is offset by a projected speaker embedding and a learned
per-language row; a detached duration predictor reads those states, a length
regulator expands them to frames, and a frame-level decoder classifies the
code index of every group and regresses the three auxiliary channels.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import checkpoint
from .alignment import SIL
from .errors import AllZeroDurations, CheckpointError, EmptyTokens, ShapeMismatch, UnknownLanguage
from .features import AuxFeatureSeq, VQFeatureSeq
from .layers import SelfAttentionStack, lengths_to_mask

PAD_ID, UNK_ID, SIL_ID = 0, 1, 2
MIN_VOICED_HZ = 20.0


@dataclass
class AcousticModelConfig:
    vocab: list = field(default_factory=list)
    languages: list = field(default_factory=list)
    spk_dim: int = 192
    enc_blocks: int = 4
    dec_blocks: int = 4
    width: int = 256
    heads: int = 2
    ff_width: int = 1024
    dur_width: int = 256
    dur_kernel: int = 3
    groups: int = 2
    codebook_size: int = 320
    lambda_aux: float = 1.0
    lambda_dur: float = 1.0
    lr: float = 1e-3
    batch_size: int = 16
    max_steps: int = 1000
    seed: int = 0
    # per-channel location/scale of the aux targets; the pov scale is fixed at 1
    aux_mean: list = field(default_factory=lambda: [150.0, -4.0, 0.0])
    aux_std: list = field(default_factory=lambda: [50.0, 2.0, 1.0])

    def __post_init__(self):
        if min(self.width, self.ff_width, self.dur_width) <= 0 or self.width % self.heads:
            raise ValueError("widths must be positive and divisible by the head count")
        if self.groups < 1 or self.codebook_size < 2:
            raise ValueError("need at least one group and two codes")


@dataclass
class AcousticBatch:
    ids: torch.Tensor  # (B, S)
    token_lengths: torch.Tensor  # (B,)
    spk: torch.Tensor  # (B, D)
    lang: torch.Tensor  # (B,)
    vq: torch.Tensor  # (B, T, G)
    aux: torch.Tensor  # (B, T, 3)
    durations: torch.Tensor  # (B, S)
    frame_lengths: torch.Tensor  # (B,)

    @property
    def token_mask(self):
        return lengths_to_mask(self.token_lengths, self.ids.shape[1])

    @property
    def frame_mask(self):
        return lengths_to_mask(self.frame_lengths, self.vq.shape[1])

    def to(self, dtype):
        return AcousticBatch(self.ids, self.token_lengths, self.spk.to(dtype), self.lang, self.vq,
                             self.aux.to(dtype), self.durations, self.frame_lengths)


def make_batch(items: Sequence[dict], pad_tokens: int = 0, pad_frames: int = 0) -> AcousticBatch:
    """items: dicts with ids, spk, lang, vq (T, G), aux (T, 3), durations (S,).

    `pad_tokens` / `pad_frames` add extra padding beyond the longest item.
    """
    for it in items:
        T = len(it["vq"])
        if len(it["aux"]) != T or len(it["ids"]) != len(it["durations"]) or int(np.sum(it["durations"])) != T:
            raise ShapeMismatch("token/duration/frame lengths disagree")
    B = len(items)
    S = max(len(it["ids"]) for it in items) + pad_tokens
    T = max(len(it["vq"]) for it in items) + pad_frames
    G = np.asarray(items[0]["vq"]).shape[1]
    ids = torch.zeros(B, S, dtype=torch.long)
    dur = torch.zeros(B, S, dtype=torch.long)
    vq = torch.zeros(B, T, G, dtype=torch.long)
    aux = torch.zeros(B, T, 3)
    for i, it in enumerate(items):
        n, t = len(it["ids"]), len(it["vq"])
        ids[i, :n] = torch.as_tensor(it["ids"])
        dur[i, :n] = torch.as_tensor(np.asarray(it["durations"], dtype=np.int64))
        vq[i, :t] = torch.as_tensor(np.asarray(it["vq"], dtype=np.int64))
        aux[i, :t] = torch.as_tensor(np.asarray(it["aux"], dtype=np.float32))
    return AcousticBatch(
        ids=ids,
        token_lengths=torch.tensor([len(it["ids"]) for it in items]),
        spk=torch.as_tensor(np.stack([np.asarray(it["spk"], dtype=np.float32) for it in items])),
        lang=torch.tensor([int(it["lang"]) for it in items]),
        vq=vq,
        aux=aux,
        durations=dur,
        frame_lengths=torch.tensor([len(it["vq"]) for it in items]),
    )


class DurationPredictor(nn.Module):
    """Two masked conv/GELU/LayerNorm layers and a linear head; outputs log(1 + frames)."""

    def __init__(self, width, hidden, kernel):
        super().__init__()
        self.convs = nn.ModuleList([nn.Conv1d(width, hidden, kernel, padding=kernel // 2),
                                    nn.Conv1d(hidden, hidden, kernel, padding=kernel // 2)])
        self.norms = nn.ModuleList([nn.LayerNorm(hidden), nn.LayerNorm(hidden)])
        self.out = nn.Linear(hidden, 1)

    def forward(self, x, mask):
        keep = mask.unsqueeze(-1).to(x.dtype)
        for conv, norm in zip(self.convs, self.norms):
            x = x * keep
            x = norm(F.gelu(conv(x.transpose(1, 2)).transpose(1, 2)))
        return self.out(x * keep).squeeze(-1) * mask.to(x.dtype)


def length_regulate(hidden, durations):
    """Repeat row s of `hidden` (S, C) durations[s] times."""
    durations = torch.as_tensor(durations, dtype=torch.long)
    if durations.shape[0] != hidden.shape[0]:
        raise ShapeMismatch("one duration per token required")
    if torch.any(durations < 0):
        raise ValueError("durations must be non-negative")
    if int(durations.sum()) == 0:
        raise AllZeroDurations("every token has zero duration")
    return torch.repeat_interleave(hidden, durations, dim=0)


def durations_from_log(log_dur, is_sil):
    """round(exp(pred) - 1), at least 1 frame for characters and 0 for `<sil>`."""
    d = torch.round(torch.exp(torch.as_tensor(log_dur)) - 1).long()
    floor = torch.where(torch.as_tensor(is_sil), 0, 1)
    return torch.maximum(d, floor)


class AcousticModel(nn.Module):
    def __init__(self, config: AcousticModelConfig):
        super().__init__()
        self.config = config
        c = config
        self.token_ids = {ch: i + 3 for i, ch in enumerate(c.vocab)}
        self.lang_ids = {l: i for i, l in enumerate(c.languages)}
        self.embed = nn.Embedding(len(c.vocab) + 3, c.width, padding_idx=PAD_ID)
        self.encoder = SelfAttentionStack(c.width, c.heads, c.enc_blocks, c.ff_width)
        self.spk_proj = nn.Linear(c.spk_dim, c.width, bias=False)
        self.language_table = nn.Embedding(max(1, len(c.languages)), c.width)
        nn.init.normal_(self.language_table.weight, std=0.1)
        self.duration_predictor = DurationPredictor(c.width, c.dur_width, c.dur_kernel)
        self.decoder = SelfAttentionStack(c.width, c.heads, c.dec_blocks, c.ff_width)
        self.vq_head = nn.Linear(c.width, c.groups * c.codebook_size)
        self.aux_head = nn.Linear(c.width, 3)
        self.register_buffer("aux_mean", torch.tensor(c.aux_mean, dtype=torch.float32))
        self.register_buffer("aux_std", torch.tensor(c.aux_std, dtype=torch.float32))

    # --- ids -------------------------------------------------------------
    def token_id(self, tok: str) -> int:
        if tok == SIL:
            return SIL_ID
        return self.token_ids.get(tok, UNK_ID)

    def lang_index(self, language_id: str) -> int:
        try:
            return self.lang_ids[language_id]
        except KeyError:
            raise UnknownLanguage(language_id) from None

    # --- network pieces ---------------------------------------------------
    def encode(self, ids, lengths, spk, lang):
        """(B, S) ids -> (B, S, width) states with speaker and language offsets added."""
        mask = lengths_to_mask(lengths, ids.shape[1])
        h = self.encoder(self.embed(ids), mask)
        offset = self.spk_proj(spk) + self.language_table(lang)
        return (h + offset[:, None, :]) * mask.unsqueeze(-1).to(h.dtype)

    def predict_log_durations(self, hidden, mask):
        return self.duration_predictor(hidden.detach(), mask)

    def decode_heads(self, frames, frame_mask):
        """(B, T, width) -> logits (B, T, G, V), aux (B, T, 3) in physical units."""
        h = self.decoder(frames, frame_mask)
        B, T, _ = h.shape
        logits = self.vq_head(h).view(B, T, self.config.groups, self.config.codebook_size)
        raw = self.aux_head(h)
        pitch_energy = raw[..., :2] * self.aux_std[:2].to(raw.dtype) + self.aux_mean[:2].to(raw.dtype)
        aux = torch.cat([pitch_energy, torch.sigmoid(raw[..., 2:])], dim=-1)
        return logits, aux

    def regulate_batch(self, hidden, durations, token_lengths):
        seqs = [length_regulate(hidden[i, : int(token_lengths[i])], durations[i, : int(token_lengths[i])])
                for i in range(hidden.shape[0])]
        lengths = torch.tensor([len(s) for s in seqs])
        T = int(lengths.max())
        out = hidden.new_zeros(hidden.shape[0], T, hidden.shape[2])
        for i, s in enumerate(seqs):
            out[i, : len(s)] = s
        return out, lengths

    def forward(self, batch: AcousticBatch):
        """Teacher-forced pass: returns (logits, aux, log-duration predictions)."""
        tmask = batch.token_mask
        hidden = self.encode(batch.ids, batch.token_lengths, batch.spk, batch.lang)
        log_dur = self.predict_log_durations(hidden, tmask)
        frames, _ = self.regulate_batch(hidden, batch.durations, batch.token_lengths)
        T = batch.vq.shape[1]
        if frames.shape[1] < T:
            frames = F.pad(frames, (0, 0, 0, T - frames.shape[1]))
        logits, aux = self.decode_heads(frames, batch.frame_mask)
        return logits, aux, log_dur

    def loss(self, batch: AcousticBatch, outputs=None):
        """(total, ce_vq, l1_aux, mse_dur); padded positions contribute nothing."""
        if batch.vq.shape[-1] != self.config.groups or batch.aux.shape[:2] != batch.vq.shape[:2]:
            raise ShapeMismatch("batch does not match the model's code groups")
        logits, aux, log_dur = outputs if outputs is not None else self(batch)
        dtype = logits.dtype
        fmask = batch.frame_mask
        G, V = self.config.groups, self.config.codebook_size

        ce = F.cross_entropy(logits.reshape(-1, V), batch.vq.reshape(-1), reduction="none").view(fmask.shape[0], -1, G)
        fm = fmask.unsqueeze(-1).to(dtype)
        ce_vq = (ce * fm).sum() / (fm.sum() * G)

        target = batch.aux.to(dtype)
        scale = torch.cat([self.aux_std[:2].to(dtype), torch.ones(1, dtype=dtype)])
        err = (aux - target).abs() / scale
        voiced = (target[..., 0] > 0).to(dtype)
        m = torch.stack([voiced, torch.ones_like(voiced), torch.ones_like(voiced)], dim=-1) * fm
        l1_aux = (err * m).sum() / m.sum().clamp(min=1)

        tmask = batch.token_mask.to(dtype)
        dur_target = torch.log1p(batch.durations.to(dtype))
        mse_dur = (((log_dur - dur_target) ** 2) * tmask).sum() / tmask.sum()

        total = ce_vq + self.config.lambda_aux * l1_aux + self.config.lambda_dur * mse_dur
        return total, ce_vq, l1_aux, mse_dur

    # --- inference --------------------------------------------------------
    @torch.no_grad()
    def infer(self, tokens, spk_embedding, language_id: str):
        """Returns (VQFeatureSeq, AuxFeatureSeq, durations as an int array)."""
        toks = list(tokens.tokens if hasattr(tokens, "tokens") else tokens)
        if not toks:
            raise EmptyTokens("nothing to synthesise")
        lang = self.lang_index(language_id)
        was_training = self.training
        self.eval()
        dtype = self.embed.weight.dtype
        ids = torch.tensor([[self.token_id(t) for t in toks]])
        lengths = torch.tensor([len(toks)])
        spk = torch.as_tensor(np.asarray(spk_embedding), dtype=dtype)[None]
        hidden = self.encode(ids, lengths, spk, torch.tensor([lang]))
        log_dur = self.predict_log_durations(hidden, lengths_to_mask(lengths))[0]
        durations = durations_from_log(log_dur, torch.tensor([t == SIL for t in toks]))
        frames = length_regulate(hidden[0], durations)[None]
        logits, aux = self.decode_heads(frames, lengths_to_mask(torch.tensor([frames.shape[1]])))
        self.train(was_training)
        indices = torch.argmax(logits[0], dim=-1).numpy()
        aux = aux[0].double().numpy()
        pov = np.clip(aux[:, 2], 0.0, 1.0)
        pitch = np.where(pov >= 0.5, np.maximum(aux[:, 0], MIN_VOICED_HZ), 0.0)
        aux_seq = AuxFeatureSeq(np.stack([pitch, aux[:, 1], pov], axis=1))
        return VQFeatureSeq(indices, self.config.codebook_size), aux_seq, durations.numpy()


def aux_statistics(aux_list: Sequence[np.ndarray]) -> tuple:
    """Location/scale for pitch (voiced frames only) and energy; pov keeps (0, 1)."""
    allv = np.concatenate([np.asarray(a, dtype=np.float64) for a in aux_list])
    voiced = allv[allv[:, 0] > 0, 0]
    p_mean, p_std = (float(voiced.mean()), float(max(voiced.std(), 1.0))) if len(voiced) else (150.0, 50.0)
    e_mean, e_std = float(allv[:, 1].mean()), float(max(allv[:, 1].std(), 1e-3))
    return [p_mean, e_mean, 0.0], [p_std, e_std, 1.0]


def evaluate(model: AcousticModel, items: Sequence[dict], batch_size: int = 16) -> float:
    """Frame/token-weighted mean of the total loss over `items` in eval mode."""
    was = model.training
    model.eval()
    total, weight = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(items), batch_size):
            chunk = items[i : i + batch_size]
            loss = model.loss(make_batch(chunk).to(model.embed.weight.dtype))[0]
            total += float(loss) * len(chunk)
            weight += len(chunk)
    model.train(was)
    return total / weight


def train_acoustic_model(model: AcousticModel, items: Sequence[dict], steps: int, optimizer=None,
                         start_step: int = 0, log=None, generator: Optional[torch.Generator] = None):
    """Adam on random minibatches for `steps` updates.

    Returns (optimizer, history) with history = [(step, full-set eval loss)]
    at the start and the end of the run.
    """
    c = model.config
    optimizer = optimizer or torch.optim.Adam(model.parameters(), lr=c.lr)
    if generator is None:
        generator = torch.Generator().manual_seed(c.seed + start_step)
    history = [(start_step, evaluate(model, items))]
    if log:
        log(step=start_step, eval_loss=history[0][1])
    model.train()
    for step in range(start_step + 1, start_step + steps + 1):
        pick = torch.randperm(len(items), generator=generator)[: c.batch_size].tolist()
        batch = make_batch([items[i] for i in pick])
        total, ce, l1, mse = model.loss(batch)
        optimizer.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 5.0)
        optimizer.step()
        if log and (step % 25 == 0 or step == start_step + steps):
            log(step=step, loss=total.item(), ce_vq=ce.item(), l1_aux=l1.item(), mse_dur=mse.item())
    history.append((start_step + steps, evaluate(model, items)))
    if log:
        log(step=start_step + steps, eval_loss=history[-1][1])
    return optimizer, history


def save_acoustic_model(model: AcousticModel, root, step: int, optimizer=None, history=None):
    extra = {"history": history or []}
    if optimizer is not None:
        extra["optimizer"] = optimizer.state_dict()
    return checkpoint.save(root, step, asdict(model.config), model.state_dict(), extra)


def load_acoustic_model(path) -> tuple:
    """Return (model, extra)."""
    config, params, extra = checkpoint.load(path)
    try:
        model = AcousticModel(AcousticModelConfig(**config))
        model.load_state_dict(params)
    except Exception as e:
        raise CheckpointError(f"checkpoint {path} does not match its config: {e}") from e
    model.eval()
    return model, extra
