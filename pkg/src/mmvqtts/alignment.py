"""Monotonic alignment search with optional (skippable) silence tokens.

Tokens flagged skippable may receive zero frames; every other token gets at
least one. The same topology drives Viterbi (best path), forward-backward
(soft occupancies used for the focus rate) and silence detection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InfeasibleAlignment, NotRowStochastic

SIL = "<sil>"
DEFAULT_MIN_SIL_FRAMES = 3


@dataclass
class ScoreMatrix:
    logp: np.ndarray  # (T, S)
    frame_hop_s: float = 0.01

    def __post_init__(self):
        self.logp = np.asarray(self.logp, dtype=np.float64)
        if self.logp.ndim != 2 or self.logp.shape[0] < 1 or self.logp.shape[1] < 1:
            raise ValueError(f"score matrix must be T x S with T, S >= 1, got {self.logp.shape}")
        if not np.all(np.isfinite(self.logp)):
            raise ValueError("score matrix has non-finite entries")

    @property
    def T(self) -> int:
        return self.logp.shape[0]

    @property
    def S(self) -> int:
        return self.logp.shape[1]


@dataclass
class AlignmentPath:
    token_of_frame: np.ndarray
    loglik: float

    @property
    def normalized_loglik(self) -> float:
        return self.loglik / len(self.token_of_frame)


@dataclass
class TokenDurations:
    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)


def _mask(skippable, S) -> np.ndarray:
    if skippable is None:
        return np.zeros(S, dtype=bool)
    m = np.asarray(skippable, dtype=bool)
    if m.shape != (S,):
        raise ValueError(f"skippable mask must have length {S}")
    if S > 1 and np.any(m[1:] & m[:-1]):
        raise ValueError("skippable tokens must not be adjacent")
    return m


def _endpoints(skip: np.ndarray):
    S = len(skip)
    starts = [0] + ([1] if S > 1 and skip[0] else [])
    ends = ([S - 2] if S > 1 and skip[S - 1] else []) + [S - 1]
    return starts, ends


def _check_feasible(T, skip):
    need = int(np.sum(~skip))
    if T < need:
        raise InfeasibleAlignment(f"{T} frames cannot cover {need} non-skippable tokens")


def mas_viterbi(scores: ScoreMatrix, skippable=None) -> AlignmentPath:
    """Maximum-score monotonic path.

    Among equal-scoring paths the one that stays on each token longest
    (advances latest; lexicographically smallest token sequence) wins.
    """
    logp = scores.logp
    T, S = logp.shape
    skip = _mask(skippable, S)
    _check_feasible(T, skip)
    starts, ends = _endpoints(skip)

    neg = -np.inf
    D = np.full((T, S), neg)
    # 0 = skip from s-2, 1 = advance from s-1, 2 = stay
    back = np.zeros((T, S), dtype=np.int8)
    for s in starts:
        D[0, s] = logp[0, s]
    can_skip = np.zeros(S, dtype=bool)
    can_skip[2:] = skip[1:-1]
    for t in range(1, T):
        prev = D[t - 1]
        stay = prev
        adv = np.concatenate(([neg], prev[:-1]))
        skp = np.where(can_skip, np.concatenate(([neg, neg], prev[:-2]))[:S], neg)
        cand = np.stack([skp, adv, stay])
        choice = np.argmax(cand, axis=0)  # first max -> smallest predecessor
        D[t] = cand[choice, np.arange(S)] + logp[t]
        back[t] = choice

    end_scores = np.array([D[T - 1, e] for e in ends])
    s = ends[int(np.argmax(end_scores))]
    loglik = float(D[T - 1, s])
    if not np.isfinite(loglik):
        raise InfeasibleAlignment("no feasible path")
    path = np.empty(T, dtype=np.int64)
    for t in range(T - 1, -1, -1):
        path[t] = s
        if t:
            s -= 2 - int(back[t, s])
    return AlignmentPath(token_of_frame=path, loglik=loglik)


def _logsumexp(stack, axis=0):
    m = np.max(stack, axis=axis)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.sum(np.exp(stack - np.expand_dims(safe, axis)), axis=axis))
    return np.where(np.isfinite(m), out, -np.inf)


def alignment_posteriors(scores: ScoreMatrix, skippable=None) -> tuple:
    """Forward-backward over the same path set; returns (T x S occupancies, log Z).

    Treating each path's total score as an unnormalized log-weight, row t of
    the result is the posterior probability that frame t sits on token s.
    """
    logp = scores.logp
    T, S = logp.shape
    skip = _mask(skippable, S)
    _check_feasible(T, skip)
    starts, ends = _endpoints(skip)
    neg = -np.inf
    can_skip = np.zeros(S, dtype=bool)
    can_skip[2:] = skip[1:-1]

    alpha = np.full((T, S), neg)
    for s in starts:
        alpha[0, s] = logp[0, s]
    for t in range(1, T):
        prev = alpha[t - 1]
        adv = np.concatenate(([neg], prev[:-1]))
        skp = np.where(can_skip, np.concatenate(([neg, neg], prev[:-2]))[:S], neg)
        alpha[t] = _logsumexp(np.stack([skp, adv, prev])) + logp[t]

    beta = np.full((T, S), neg)
    for e in ends:
        beta[T - 1, e] = 0.0
    # successor s+2 reachable from s only when s+1 is skippable
    can_jump = np.zeros(S, dtype=bool)
    can_jump[: max(S - 2, 0)] = skip[1:-1]
    for t in range(T - 2, -1, -1):
        nxt = logp[t + 1] + beta[t + 1]
        adv = np.concatenate((nxt[1:], [neg]))
        jmp = np.where(can_jump, np.concatenate((nxt[2:], [neg, neg]))[:S], neg)
        beta[t] = _logsumexp(np.stack([nxt, adv, jmp]))

    log_z = float(_logsumexp(alpha[T - 1, ends]))
    gamma = np.exp(alpha + beta - log_z)
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma, log_z


def focus_rate(attention) -> float:
    """Mean over frames of the largest attention weight."""
    a = np.asarray(attention, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise NotRowStochastic("attention must be a non-empty T x S matrix")
    if np.any(a < 0) or np.any(np.abs(a.sum(axis=1) - 1.0) > 1e-6):
        raise NotRowStochastic("rows must be non-negative and sum to 1")
    return float(np.mean(a.max(axis=1)))


def path_to_attention(path: AlignmentPath, S: int) -> np.ndarray:
    tof = np.asarray(path.token_of_frame)
    att = np.zeros((len(tof), S))
    att[np.arange(len(tof)), tof] = 1.0
    return att


def durations_from_path(path: AlignmentPath, S: int, skippable=None) -> TokenDurations:
    frames = np.bincount(np.asarray(path.token_of_frame), minlength=S)
    skip = _mask(skippable, S)
    if np.any(frames[~skip] < 1):
        raise InfeasibleAlignment("path leaves a non-skippable token without frames")
    return TokenDurations(frames)


def silence_labels(tokens: Sequence[str], boundaries: Sequence[int], frames, min_sil_frames: int) -> list:
    """Per boundary: did its candidate `<sil>` token get at least `min_sil_frames`?"""
    if min_sil_frames < 1:
        raise ValueError("min_sil_frames must be >= 1")
    labels = []
    for b in boundaries:
        if tokens[b] != SIL:
            raise ValueError(f"boundary {b} has no candidate {SIL} token")
        labels.append(bool(frames[b] >= min_sil_frames))
    return labels


def detect_silences(utt, tokens, scores: ScoreMatrix, min_sil_frames: int = DEFAULT_MIN_SIL_FRAMES) -> list:
    """Boolean per word boundary of `tokens` (which carries a candidate `<sil>` at each).

    `utt` is only used for error messages.
    """
    skip = [t == SIL for t in tokens.tokens]
    try:
        path = mas_viterbi(scores, skip)
    except InfeasibleAlignment as e:
        raise InfeasibleAlignment(f"{getattr(utt, 'utt_id', utt)}: {e}") from None
    frames = durations_from_path(path, scores.S, skip).frames
    return silence_labels(tokens.tokens, tokens.boundaries, frames, min_sil_frames)


def merge_undetected_silences(tokens: Sequence[str], frames, keep: Sequence[bool]) -> tuple:
    """Drop candidate `<sil>` tokens not in `keep` (one flag per `<sil>`, in order).

    Frames of a dropped silence go to the preceding token, so the total is
    unchanged. Returns (tokens, durations).
    """
    out_tok, out_dur = [], []
    k = iter(keep)
    for tok, n in zip(tokens, frames):
        if tok == SIL and not next(k):
            out_dur[-1] += int(n)
            continue
        out_tok.append(tok)
        out_dur.append(int(n))
    return out_tok, out_dur


class GaussianFrameScorer:
    """Per-symbol diagonal Gaussians over feature frames, fit per utterance by hard EM.

    Tokens sharing a symbol share a Gaussian. Initialisation splits the frames
    uniformly over the non-skippable tokens; the silence Gaussian starts from
    the lowest-energy frames. Variances are shrunk towards the utterance-wide
    variance since each symbol only sees a handful of frames.
    """

    def __init__(self, n_iter: int = 4, shrink: float = 10.0, var_floor: float = 1e-3, sil_quantile: float = 0.1):
        self.n_iter = n_iter
        self.shrink = shrink
        self.var_floor = var_floor
        self.sil_quantile = sil_quantile

    def _fit_params(self, feats, symbols, assign, params, global_var):
        sym_of_frame = [symbols[s] for s in assign]
        for sym in set(symbols):
            rows = feats[[i for i, x in enumerate(sym_of_frame) if x == sym]]
            if len(rows) == 0:
                continue
            n = len(rows)
            mu = rows.mean(axis=0)
            var = rows.var(axis=0) if n > 1 else global_var
            var = (n * var + self.shrink * global_var) / (n + self.shrink)
            params[sym] = (mu, np.maximum(var, self.var_floor))
        return params

    def _scores(self, feats, symbols, params):
        logp = np.empty((len(feats), len(symbols)))
        cache = {}
        for s, sym in enumerate(symbols):
            if sym not in cache:
                mu, var = params[sym]
                cache[sym] = -0.5 * (
                    np.sum((feats - mu) ** 2 / var, axis=1) + np.sum(np.log(2 * np.pi * var))
                )
            logp[:, s] = cache[sym]
        return logp

    def fit(self, feats, tokens: Sequence[str], skippable=None, frame_hop_s: float = 0.01):
        """Return (ScoreMatrix, AlignmentPath) after the final EM iteration."""
        feats = np.asarray(feats, dtype=np.float64)
        T = len(feats)
        S = len(tokens)
        skip = _mask(skippable, S)
        _check_feasible(T, skip)
        global_var = np.maximum(feats.var(axis=0), self.var_floor)

        hard = np.flatnonzero(~skip)
        assign = hard[(np.arange(T) * len(hard)) // T]
        params = self._fit_params(feats, list(tokens), assign, {}, global_var)
        for sym in {tokens[s] for s in np.flatnonzero(skip)}:
            if sym in params:
                continue
            energy = feats.mean(axis=1)
            n = max(1, int(round(self.sil_quantile * T)))
            quiet = feats[np.argsort(energy, kind="stable")[:n]]
            var = (n * quiet.var(axis=0) + self.shrink * global_var) / (n + self.shrink)
            params[sym] = (quiet.mean(axis=0), np.maximum(var, self.var_floor))

        scores = ScoreMatrix(self._scores(feats, list(tokens), params), frame_hop_s)
        path = mas_viterbi(scores, skip)
        for _ in range(self.n_iter):
            params = self._fit_params(feats, list(tokens), path.token_of_frame, params, global_var)
            scores = ScoreMatrix(self._scores(feats, list(tokens), params), frame_hop_s)
            path = mas_viterbi(scores, skip)
        return scores, path


# CTM files: "<token> <start_frame> <n_frames>" per line


def write_ctm(path, tokens: Sequence[str], frames) -> None:
    start = 0
    with open(path, "w", encoding="utf-8") as f:
        for tok, n in zip(tokens, frames):
            f.write(f"{tok} {start} {int(n)}\n")
            start += int(n)


def read_ctm(path) -> list:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            tok, start, n = line.split()
            rows.append((tok, int(start), int(n)))
    return rows
