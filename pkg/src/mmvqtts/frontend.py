"""Character tokenization, `<sil>` targets and the self-attention silence predictor."""

from __future__ import annotations

import random
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from . import checkpoint
from .alignment import SIL
from .errors import AlreadyHasSil, CheckpointError, EmptyText, MissingAlignment, NoBoundaries
from .layers import SelfAttentionStack, lengths_to_mask

PAD_ID = 0
UNK_ID = 1


@dataclass
class TokenSequence:
    """Characters (and `<sil>`) with word-boundary slots.

    A boundary index ``b`` points at ``tokens[b]``: the `<sil>` token when one
    was inserted there, otherwise the first character of the next word.
    """

    tokens: list
    boundaries: list
    language_id: str

    def __post_init__(self):
        b = self.boundaries
        if any(x >= y for x, y in zip(b, b[1:])) or any(x <= 0 or x >= len(self.tokens) for x in b):
            raise ValueError(f"invalid boundaries {b} for {len(self.tokens)} tokens")
        bset = set(b)
        for i, tok in enumerate(self.tokens):
            if tok == SIL:
                if i not in bset:
                    raise ValueError(f"{SIL} at {i} is not on a word boundary")
            elif len(tok) != 1 or tok.isspace():
                raise ValueError(f"bad token {tok!r}")

    def has_sil(self) -> bool:
        return SIL in self.tokens

    def characters(self) -> list:
        return [t for t in self.tokens if t != SIL]

    def sil_flags(self) -> list:
        return [self.tokens[b] == SIL for b in self.boundaries]

    def char_boundaries(self) -> list:
        """Boundary positions counted in characters only (ignoring `<sil>`)."""
        out, n_sil = [], 0
        for b in self.boundaries:
            out.append(b - n_sil)
            n_sil += self.tokens[b] == SIL
        return out


@dataclass
class SilTargets:
    utt_id: str
    labels: list


def tokenize(text: str, language_id: str) -> TokenSequence:
    words = text.split()
    if not words:
        raise EmptyText("nothing to tokenize")
    tokens, boundaries = [], []
    for w in words:
        if tokens:
            boundaries.append(len(tokens))
        tokens.extend(w)
    return TokenSequence(tokens, boundaries, language_id)


def insert_silences(seq: TokenSequence, flags: Sequence[bool]) -> TokenSequence:
    """Insert `<sil>` at every boundary whose flag is set. `seq` must be sil-free."""
    if seq.has_sil():
        raise AlreadyHasSil("sequence already contains <sil> tokens")
    if len(flags) != len(seq.boundaries):
        raise ValueError(f"{len(flags)} flags for {len(seq.boundaries)} boundaries")
    tokens, boundaries = [], []
    prev = 0
    for b, flag in zip(seq.boundaries, flags):
        tokens.extend(seq.tokens[prev:b])
        boundaries.append(len(tokens))
        if flag:
            tokens.append(SIL)
        prev = b
    tokens.extend(seq.tokens[prev:])
    return TokenSequence(tokens, boundaries, seq.language_id)


def with_candidate_silences(seq: TokenSequence) -> TokenSequence:
    return insert_silences(seq, [True] * len(seq.boundaries))


def strip_silences(seq: TokenSequence) -> TokenSequence:
    return TokenSequence(seq.characters(), seq.char_boundaries(), seq.language_id)


def labels_from_ctm(seq: TokenSequence, ctm_tokens: Sequence[str]) -> list:
    """Boundary labels implied by an aligned token list (`<sil>` present = silent)."""
    chars = [t for t in ctm_tokens if t != SIL]
    if chars != seq.characters():
        raise ValueError("alignment tokens do not match the transcript")
    silent_at, n = set(), 0
    for t in ctm_tokens:
        if t == SIL:
            silent_at.add(n)
        else:
            n += 1
    bounds = seq.char_boundaries()
    if not silent_at <= set(bounds):
        raise ValueError("alignment has <sil> away from word boundaries")
    return [b in silent_at for b in bounds]


def build_sil_targets(utterances, alignments) -> list:
    """One SilTargets per utterance; `alignments` maps utt_id -> aligned token list (CTM order)."""
    out = []
    for u in utterances:
        if u.utt_id not in alignments:
            raise MissingAlignment(u.utt_id)
        seq = tokenize(u.transcript, u.language_id)
        out.append(SilTargets(u.utt_id, labels_from_ctm(seq, alignments[u.utt_id])))
    return out


def write_sil_targets(targets: Sequence[SilTargets], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in targets:
            f.write(f"{t.utt_id}\t{','.join('1' if x else '0' for x in t.labels)}\n")


def read_sil_targets(path) -> list:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            utt_id, _, labels = line.partition("\t")
            out.append(SilTargets(utt_id, [x == "1" for x in labels.split(",")] if labels else []))
    return out


# silence predictor


@dataclass
class SilPredictorConfig:
    blocks: int = 2
    width: int = 128
    heads: int = 2
    ff_width: int = 256
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    vocab: list = field(default_factory=list)
    languages: list = field(default_factory=list)


class SilPredictor(nn.Module):
    """Character + language embeddings -> self-attention -> per-position silence logit.

    The logit for a boundary is read at the character just before it.
    """

    def __init__(self, config: SilPredictorConfig):
        super().__init__()
        self.config = config
        self.char_ids = {c: i + 2 for i, c in enumerate(config.vocab)}
        self.lang_ids = {l: i for i, l in enumerate(config.languages)}
        self.embed = nn.Embedding(len(config.vocab) + 2, config.width, padding_idx=PAD_ID)
        self.lang_embed = nn.Embedding(max(1, len(config.languages)), config.width)
        self.encoder = SelfAttentionStack(config.width, config.heads, config.blocks, config.ff_width)
        self.classifier = nn.Linear(config.width, 1)
        nn.init.normal_(self.classifier.weight, std=0.02)
        nn.init.zeros_(self.classifier.bias)

    def encode_ids(self, seq: TokenSequence) -> list:
        return [self.char_ids.get(c, UNK_ID) for c in seq.characters()]

    def lang_index(self, language_id: str) -> int:
        return self.lang_ids.get(language_id, 0)

    def forward(self, ids, langs, lengths):
        mask = lengths_to_mask(lengths, ids.shape[1])
        x = self.embed(ids) + self.lang_embed(langs)[:, None, :]
        h = self.encoder(x, mask)
        return self.classifier(h).squeeze(-1)

    def batch(self, seqs: Sequence[TokenSequence]):
        ids = [self.encode_ids(s) for s in seqs]
        lengths = torch.tensor([len(x) for x in ids])
        padded = torch.zeros(len(ids), int(lengths.max()), dtype=torch.long)
        for i, x in enumerate(ids):
            padded[i, : len(x)] = torch.tensor(x)
        langs = torch.tensor([self.lang_index(s.language_id) for s in seqs])
        return padded, langs, lengths

    @torch.no_grad()
    def boundary_probabilities(self, seq: TokenSequence) -> np.ndarray:
        seq = strip_silences(seq) if seq.has_sil() else seq
        if not seq.boundaries:
            return np.zeros(0)
        was_training = self.training
        self.eval()
        ids, langs, lengths = self.batch([seq])
        logits = self(ids, langs, lengths)[0]
        self.train(was_training)
        pos = torch.tensor(seq.boundaries) - 1
        return torch.sigmoid(logits[pos]).numpy().astype(np.float64)


def _examples_loss(model, examples, batch_size=64):
    """Mean BCE and accuracy over every boundary of `examples`."""
    total, correct, count = 0.0, 0, 0
    model.eval()
    with torch.no_grad():
        for i in range(0, len(examples), batch_size):
            chunk = examples[i : i + batch_size]
            loss, logits, y = _batch_loss(model, chunk, reduction="sum")
            total += float(loss)
            correct += int(((logits > 0) == (y > 0.5)).sum())
            count += len(y)
    model.train()
    return total / count, correct / count


def _batch_loss(model, chunk, reduction="mean"):
    seqs = [s for s, _ in chunk]
    ids, langs, lengths = model.batch(seqs)
    logits = model(ids, langs, lengths)
    rows, cols, ys = [], [], []
    for i, (s, labels) in enumerate(chunk):
        for b, y in zip(s.boundaries, labels):
            rows.append(i)
            cols.append(b - 1)
            ys.append(float(y))
    sel = logits[torch.tensor(rows), torch.tensor(cols)]
    y = torch.tensor(ys, dtype=sel.dtype)
    return nn.functional.binary_cross_entropy_with_logits(sel, y, reduction=reduction), sel, y


def train_sil_predictor(examples, config: Optional[SilPredictorConfig] = None, log=None):
    """Train on (sil-free TokenSequence, boundary labels) pairs.

    Returns (model, history) where history holds per-epoch (loss, accuracy)
    over the whole training set, entry 0 being the untrained model.
    """
    config = config or SilPredictorConfig()
    examples = [(strip_silences(s) if s.has_sil() else s, list(l)) for s, l in examples]
    for s, labels in examples:
        if len(labels) != len(s.boundaries):
            raise ValueError("label count differs from boundary count")
    examples = [(s, l) for s, l in examples if s.boundaries]
    if not examples:
        raise NoBoundaries("no utterance has a word boundary")
    if not config.vocab:
        config.vocab = sorted({c for s, _ in examples for c in s.characters()})
    if not config.languages:
        config.languages = sorted({s.language_id for s, _ in examples})

    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)
    model = SilPredictor(config)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    history = [_examples_loss(model, examples)]
    if log:
        log(epoch=0, loss=history[0][0], acc=history[0][1])
    order = list(range(len(examples)))
    for epoch in range(1, config.epochs + 1):
        rng.shuffle(order)
        for i in range(0, len(order), config.batch_size):
            chunk = [examples[j] for j in order[i : i + config.batch_size]]
            loss, _, _ = _batch_loss(model, chunk)
            opt.zero_grad()
            loss.backward()
            opt.step()
        history.append(_examples_loss(model, examples))
        if log:
            log(epoch=epoch, loss=history[-1][0], acc=history[-1][1])
    model.eval()
    return model, history


def predict_and_insert_sil(predictor: SilPredictor, tokens: TokenSequence, threshold: float = 0.5) -> TokenSequence:
    if tokens.has_sil():
        raise AlreadyHasSil("predict_and_insert_sil expects a sequence without <sil>")
    probs = predictor.boundary_probabilities(tokens)
    return insert_silences(tokens, [bool(p >= threshold) for p in probs])


def save_sil_predictor(model: SilPredictor, root, step: int, history=None):
    return checkpoint.save(root, step, asdict(model.config), model.state_dict(), {"history": history or []})


def load_sil_predictor(path) -> SilPredictor:
    config, params, _ = checkpoint.load(path)
    try:
        model = SilPredictor(SilPredictorConfig(**config))
        model.load_state_dict(params)
    except Exception as e:
        raise CheckpointError(f"checkpoint {path} does not match its config: {e}") from e
    model.eval()
    return model
