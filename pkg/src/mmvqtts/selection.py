"""Two-stage per-speaker training-data selection under duration budgets.

Stage 1 ranks by a z-scored combination of ASR character error rate and
length-normalised alignment log-likelihood and keeps ``budget1_s`` seconds.
Stage 2 re-ranks that subset by alignment focus rate and keeps ``budget2_s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import EmptyReference

BUDGET1_S = 36000.0  # 10 h per speaker
BUDGET2_S = 18000.0  # 5 h per speaker
# ranking scores are rounded before sorting so that float noise from an
# affine rescale of the inputs cannot reorder genuinely tied utterances
SCORE_DECIMALS = 9


@dataclass
class SelectionMetrics:
    utt_id: str
    cer: float
    norm_loglik: float
    focus_rate: float
    duration_s: float
    speaker_id: str = ""

    def __post_init__(self):
        if not self.cer >= 0:
            raise ValueError(f"{self.utt_id}: cer must be >= 0")
        if not 0 < self.focus_rate <= 1:
            raise ValueError(f"{self.utt_id}: focus rate must be in (0, 1]")
        if not self.duration_s > 0:
            raise ValueError(f"{self.utt_id}: duration must be positive")


@dataclass
class SpeakerSelection:
    stage1_ids: list = field(default_factory=list)
    stage2_ids: list = field(default_factory=list)
    stage1_seconds: float = 0.0
    stage2_seconds: float = 0.0
    metrics: list = field(default_factory=list)


@dataclass
class SelectionReport:
    budget1_s: float
    budget2_s: float
    speakers: dict = field(default_factory=dict)  # speaker_id -> SpeakerSelection

    def rows(self):
        """(speaker, utt_id, cer, norm_loglik, focus_rate, stage1, stage2), speakers sorted."""
        for spk in sorted(self.speakers):
            sel = self.speakers[spk]
            s1, s2 = set(sel.stage1_ids), set(sel.stage2_ids)
            for m in sel.metrics:
                yield spk, m.utt_id, m.cer, m.norm_loglik, m.focus_rate, int(m.utt_id in s1), int(m.utt_id in s2)

    def to_tsv(self) -> str:
        lines = ["speaker\tutt_id\tcer\tnorm_loglik\tfocus_rate\tstage1\tstage2"]
        for spk, utt, c, ll, fr, s1, s2 in self.rows():
            lines.append(f"{spk}\t{utt}\t{c!r}\t{ll!r}\t{fr!r}\t{s1}\t{s2}")
        return "\n".join(lines) + "\n"


def cer(ref: str, hyp: str) -> float:
    """Character-level Levenshtein distance / len(ref), spaces included.

    Both strings are whitespace-normalised first.
    """
    ref = " ".join(ref.split())
    hyp = " ".join(hyp.split())
    if not ref:
        raise EmptyReference("reference transcript is empty")
    prev = list(range(len(hyp) + 1))
    for i, rc in enumerate(ref, 1):
        cur = [i]
        for j, hc in enumerate(hyp, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (rc != hc)))
        prev = cur
    return prev[-1] / len(ref)


def _zscores(values: Sequence[float]) -> list:
    n = len(values)
    mean = math.fsum(values) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / n)
    if std == 0.0:
        return [0.0] * n
    return [(v - mean) / std for v in values]


def stage1_scores(metrics: Sequence[SelectionMetrics], loglik_weight=1.0, cer_weight=1.0) -> list:
    zl = _zscores([m.norm_loglik for m in metrics])
    zc = _zscores([m.cer for m in metrics])
    return [loglik_weight * a - cer_weight * b for a, b in zip(zl, zc)]


def rank_stage1(metrics: Sequence[SelectionMetrics], loglik_weight=1.0, cer_weight=1.0) -> list:
    """Best first: high likelihood, low CER. Ties go to the smaller utt_id."""
    metrics = list(metrics)
    if not metrics:
        return []
    scores = stage1_scores(metrics, loglik_weight, cer_weight)
    order = sorted(
        range(len(metrics)),
        key=lambda i: (-round(scores[i], SCORE_DECIMALS), metrics[i].utt_id),
    )
    return [metrics[i] for i in order]


def rank_focus(metrics: Sequence[SelectionMetrics]) -> list:
    return sorted(metrics, key=lambda m: (-m.focus_rate, m.utt_id))


def select_budget(ranked: Sequence[SelectionMetrics], budget_s: float) -> list:
    """Greedy skip-and-continue: keep each item that still fits, in ranked order."""
    if budget_s < 0:
        raise ValueError("budget must be >= 0")
    chosen, used = [], 0.0
    for m in ranked:
        if used + m.duration_s <= budget_s:
            chosen.append(m)
            used += m.duration_s
    return chosen


def select_training_set(
    metrics: Iterable[SelectionMetrics],
    registry=None,
    budget1_s: float = BUDGET1_S,
    budget2_s: float = BUDGET2_S,
    loglik_weight: float = 1.0,
    cer_weight: float = 1.0,
) -> SelectionReport:
    """Run both stages independently for every speaker.

    Speakers listed in `registry` but without metrics get empty selections.
    """
    if not 0 <= budget2_s <= budget1_s:
        raise ValueError("budgets must satisfy 0 <= budget2 <= budget1")
    by_speaker: dict = {}
    for m in metrics:
        by_speaker.setdefault(m.speaker_id, []).append(m)
    if registry is not None:
        for spk in registry.speakers():
            by_speaker.setdefault(spk, [])

    report = SelectionReport(budget1_s, budget2_s)
    for spk in sorted(by_speaker):
        ms = sorted(by_speaker[spk], key=lambda m: m.utt_id)
        stage1 = select_budget(rank_stage1(ms, loglik_weight, cer_weight), budget1_s)
        stage2 = select_budget(rank_focus(stage1), budget2_s)
        report.speakers[spk] = SpeakerSelection(
            stage1_ids=[m.utt_id for m in stage1],
            stage2_ids=[m.utt_id for m in stage2],
            stage1_seconds=math.fsum(m.duration_s for m in stage1),
            stage2_seconds=math.fsum(m.duration_s for m in stage2),
            metrics=ms,
        )
    return report


def write_metrics(metrics: Sequence[SelectionMetrics], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("utt_id\tspeaker\tcer\tnorm_loglik\tfocus_rate\tduration_s\n")
        for m in metrics:
            f.write(f"{m.utt_id}\t{m.speaker_id}\t{m.cer!r}\t{m.norm_loglik!r}\t{m.focus_rate!r}\t{m.duration_s!r}\n")


def read_metrics(path) -> list:
    out = []
    with open(path, encoding="utf-8") as f:
        next(f)
        for line in f:
            if not line.strip():
                continue
            utt, spk, c, ll, fr, dur = line.rstrip("\n").split("\t")
            out.append(SelectionMetrics(utt, float(c), float(ll), float(fr), float(dur), spk))
    return out
