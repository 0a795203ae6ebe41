import random

import pytest
from hypothesis import given, settings, strategies as st

from mmvqtts.errors import EmptyReference
from mmvqtts.selection import (
    SelectionMetrics,
    cer,
    rank_stage1,
    read_metrics,
    select_budget,
    select_training_set,
    write_metrics,
)

from oracles import edit_distance, simulate_two_stage, stage1_scores


def M(utt, cer_=0.1, ll=-5.0, fr=0.8, dur=3.0, spk="s"):
    return SelectionMetrics(utt, cer_, ll, fr, dur, spk)


def test_cer_examples():
    assert cer("abc", "abc") == 0.0
    assert cer("abc", "axc") == pytest.approx(edit_distance("abc", "axc") / 3)
    assert cer("abc", "axc") == pytest.approx(1 / 3)
    assert cer("ab", "abxy") == edit_distance("ab", "abxy") / 2 == 1.0
    with pytest.raises(EmptyReference):
        cer("  ", "x")


@settings(max_examples=200)
@given(st.text("abc d", min_size=1, max_size=20), st.text("abc d", max_size=20))
def test_cer_matches_full_table(ref, hyp):
    r = " ".join(ref.split())
    if not r:
        return
    h = " ".join(hyp.split())
    assert cer(ref, hyp) == edit_distance(r, h) / len(r)


def test_rank_identical_metrics_by_id():
    ms = [M(u) for u in ["c", "a", "b"]]
    assert [m.utt_id for m in rank_stage1(ms)] == ["a", "b", "c"]


def test_rank_dominant_first():
    ms = [M("a", 0.2, -6), M("b", 0.3, -7), M("z", 0.0, -1), M("c", 0.25, -6.5)]
    assert rank_stage1(ms)[0].utt_id == "z"


def test_rank_matches_scripted_formula():
    rng = random.Random(4)
    ms = [M(f"u{i:02d}", rng.random(), rng.uniform(-9, -2)) for i in range(20)]
    scores = stage1_scores([{"cer": m.cer, "norm_loglik": m.norm_loglik} for m in ms])
    expected = [ms[i].utt_id for i in sorted(range(20), key=lambda i: (-scores[i], ms[i].utt_id))]
    assert [m.utt_id for m in rank_stage1(ms)] == expected


@settings(max_examples=100)
@given(
    st.lists(st.tuples(st.floats(0, 2), st.floats(-20, 0)), min_size=1, max_size=12),
    st.floats(0.01, 100),
    st.floats(-100, 100),
)
def test_rank_affine_invariance(values, a, b):
    ms = [M(f"u{i:02d}", c, ll) for i, (c, ll) in enumerate(values)]
    scaled = [M(m.utt_id, m.cer, a * m.norm_loglik + b) for m in ms]
    assert [m.utt_id for m in rank_stage1(ms)] == [m.utt_id for m in rank_stage1(scaled)]


def test_select_budget_examples():
    six = [M(f"u{i}", dur=3600) for i in range(6)]
    assert [m.utt_id for m in select_budget(six, 10800)] == ["u0", "u1", "u2"]
    ranked = [M("a", dur=4000), M("b", dur=5000), M("c", dur=3000)]
    assert [m.utt_id for m in select_budget(ranked, 8000)] == ["a", "c"]
    assert select_budget(ranked, 0) == []


def test_budget_slack_selects_everything():
    ms = [M(f"u{i}", dur=100.0 + i) for i in range(5)]
    rep = select_training_set(ms)
    sel = rep.speakers["s"]
    assert sorted(sel.stage1_ids) == sorted(sel.stage2_ids) == [m.utt_id for m in ms]


def test_speakers_are_independent():
    rng = random.Random(0)
    a = [M(f"a{i}", rng.random(), -rng.random() * 5, rng.uniform(0.3, 1), rng.uniform(1, 9), "A") for i in range(8)]
    b = [M(f"b{i}", rng.random(), -rng.random() * 5, rng.uniform(0.3, 1), rng.uniform(1, 9), "B") for i in range(8)]
    mixed = [x for pair in zip(a, b) for x in pair]
    joint = select_training_set(mixed, budget1_s=30, budget2_s=15)
    alone = select_training_set(a, budget1_s=30, budget2_s=15)
    assert joint.speakers["A"].stage2_ids == alone.speakers["A"].stage2_ids
    assert joint.speakers["A"].stage1_ids == alone.speakers["A"].stage1_ids


def _random_instance(rng, n):
    return [
        dict(
            utt_id=f"u{i:02d}",
            cer=rng.choice([0.0, 0.1, rng.random()]),
            norm_loglik=rng.uniform(-10, -1),
            focus_rate=rng.choice([1.0, rng.uniform(0.2, 1.0)]),
            duration_s=rng.uniform(500, 9000),
        )
        for i in range(n)
    ]


def test_twelve_utterance_instance_matches_simulation():
    rng = random.Random(12)
    items = _random_instance(rng, 12)
    rep = select_training_set([M(d["utt_id"], d["cer"], d["norm_loglik"], d["focus_rate"], d["duration_s"]) for d in items])
    s1, s2 = simulate_two_stage(items, 36000, 18000)
    assert rep.speakers["s"].stage1_ids == s1
    assert rep.speakers["s"].stage2_ids == s2
    assert set(s2) <= set(s1)


def test_report_deterministic_and_roundtrip(tmp_path):
    rng = random.Random(1)
    ms = [M(f"u{i}", rng.random(), -rng.random(), rng.uniform(0.2, 1), rng.uniform(1, 5), "A") for i in range(10)]
    assert select_training_set(ms, budget1_s=20, budget2_s=10).to_tsv() == select_training_set(
        list(reversed(ms)), budget1_s=20, budget2_s=10
    ).to_tsv()
    write_metrics(ms, tmp_path / "m.tsv")
    assert read_metrics(tmp_path / "m.tsv") == ms


def test_invalid_metrics_rejected():
    with pytest.raises(ValueError):
        M("x", fr=0.0)
    with pytest.raises(ValueError):
        M("x", cer_=-0.1)
