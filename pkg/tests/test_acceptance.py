"""Acceptance criteria 1-10, each at its stated tolerance and time limit.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary prints
one PASS/FAIL line per criterion.
"""

import dataclasses
import math
import random
import time

import numpy as np
import pytest
import torch

from mmvqtts.alignment import ScoreMatrix, focus_rate, mas_viterbi
from mmvqtts.cli import main as cli_main
from mmvqtts.config import load_config
from mmvqtts.errors import InfeasibleAlignment
from mmvqtts.features import AuxFeatureSeq, SpeakerProfile
from mmvqtts.frontend import SilPredictorConfig, train_sil_predictor
from mmvqtts.pipeline import _read_marker, run_prepare, run_select, run_train_am, run_train_voc
from mmvqtts.selection import BUDGET1_S, BUDGET2_S, SelectionMetrics, cer, select_training_set
from mmvqtts.synthesis import pitch_rescale, read_trace
from mmvqtts.toy import make_toy_corpus, rule_boundary_corpus, write_toy_config
from mmvqtts.txt2vec import AcousticModel, AcousticModelConfig, length_regulate, make_batch

from oracles import brute_force_best, edit_distance, enumerate_paths, simulate_two_stage


def acceptance(n, title):
    return pytest.mark.acceptance(n, title)


@acceptance(1, "CER equals a full-DP edit-distance oracle on 1000 random pairs, < 5 s")
def test_c1_cer_oracle(record_property):
    rng = random.Random(1)
    alphabet = "abcdefgh"
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        ref = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 40)))
        hyp = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 40)))
        mismatches += cer(ref, hyp) != edit_distance(ref, hyp) / len(ref)
    elapsed = time.perf_counter() - t0
    record_property("mismatches", mismatches)
    record_property("seconds", round(elapsed, 2))
    assert mismatches == 0
    assert elapsed < 5


@acceptance(2, "MAS loglik within 1e-9 of brute force and tie-broken path identical on 500 matrices, < 30 s")
def test_c2_mas_optimality(record_property):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst = 0.0
    n = infeasible = 0
    while n < 500:
        T = int(rng.integers(1, 9))
        S = int(rng.integers(1, 5))
        skip = list(rng.random(S) < 0.4)
        n_req = S - sum(skip)
        # precondition: skippable tokens never adjacent
        if n_req > T or n_req == 0 or any(a and b for a, b in zip(skip, skip[1:])):
            continue
        logp = rng.normal(size=(T, S))
        if n % 5 == 0:  # coarse values force exact ties
            logp = np.round(logp)
        if not enumerate_paths(T, S, skip):
            with pytest.raises(InfeasibleAlignment):
                mas_viterbi(ScoreMatrix(logp), skip)
            infeasible += 1
            continue
        best, best_path = brute_force_best(logp, skip)
        got = mas_viterbi(ScoreMatrix(logp), skip)
        worst = max(worst, abs(got.loglik - best))
        assert abs(got.loglik - best) <= 1e-9, (logp, skip)
        assert tuple(int(x) for x in got.token_of_frame) == best_path, (logp, skip)
        n += 1
    elapsed = time.perf_counter() - t0
    record_property("max_abs_err", f"{worst:.1e}")
    record_property("infeasible_rejected", infeasible)
    record_property("seconds", round(elapsed, 2))
    assert elapsed < 30


@acceptance(3, "selection matches the scripted two-stage oracle on 200 instances; budgets never exceeded, < 10 s")
def test_c3_selection(record_property):
    rng = random.Random(3)
    t0 = time.perf_counter()
    for inst in range(200):
        n = rng.randint(1, 12)
        items = [dict(utt_id=f"u{i:02d}", cer=rng.choice([0.0, 0.1, 0.25, rng.random()]),
                      norm_loglik=rng.choice([-5.0, rng.uniform(-10, 0)]), focus_rate=rng.choice([1.0, rng.uniform(0.3, 1)]),
                      duration_s=rng.choice([3600.0, rng.uniform(1000, 9000)])) for i in range(n)]
        metrics = [SelectionMetrics(speaker_id="spk", **it) for it in items]
        report = select_training_set(metrics)
        sel = report.speakers["spk"]
        s1, s2 = simulate_two_stage(items, BUDGET1_S, BUDGET2_S)
        assert sel.stage1_ids == s1 and sel.stage2_ids == s2, inst
        assert sel.stage1_seconds <= BUDGET1_S and sel.stage2_seconds <= BUDGET2_S
        assert set(s2) <= set(s1)
    elapsed = time.perf_counter() - t0
    record_property("seconds", round(elapsed, 2))
    assert elapsed < 10


@acceptance(4, "focus rate: one-hot gives 1.0 exactly, uniform over S gives 1/S within 1e-12")
def test_c4_focus_anchors():
    rng = np.random.default_rng(4)
    for S in range(1, 20):
        T = int(rng.integers(1, 30))
        onehot = np.zeros((T, S))
        onehot[np.arange(T), rng.integers(0, S, T)] = 1.0
        assert focus_rate(onehot) == 1.0
        assert abs(focus_rate(np.full((T, S), 1.0 / S)) - 1.0 / S) <= 1e-12


@acceptance(5, "length regulator output frames equal sum of durations on 1000 random vectors")
def test_c5_length_regulator():
    rng = np.random.default_rng(5)
    done = 0
    while done < 1000:
        S = int(rng.integers(1, 30))
        d = rng.integers(0, 8, S)
        if d.sum() == 0:
            continue
        h = torch.randn(S, 4)
        out = length_regulate(h, torch.as_tensor(d))
        assert out.shape[0] == int(d.sum())
        # each token's row repeated exactly d times, in order
        assert torch.equal(out, torch.repeat_interleave(h, torch.as_tensor(d), dim=0))
        done += 1


def _log_moments(pitch):
    lp = np.log(pitch[pitch > 0])
    return float(lp.mean()), float(lp.std())


@acceptance(6, "pitch rescale matches target log-F0 mean/std within 1e-6 and round-trips within 1e-6 on 100 sequences")
def test_c6_pitch_rescale(record_property):
    rng = np.random.default_rng(6)
    worst = 0.0
    for i in range(100):
        T = int(rng.integers(5, 200))
        pitch = np.where(rng.random(T) < 0.7, np.exp(rng.normal(math.log(160), 0.3, T)), 0.0)
        pitch[:2] = [120.0, 220.0]  # at least two distinct voiced frames
        aux = AuxFeatureSeq(np.stack([pitch, rng.normal(-4, 1, T), rng.random(T)], axis=1))
        m, s = _log_moments(pitch)
        src = SpeakerProfile("src", np.ones(2), m, s, int((pitch > 0).sum()))
        tgt = SpeakerProfile("tgt", np.ones(2), float(rng.normal(5.0, 0.4)), float(rng.uniform(0.05, 0.5)), 100)
        out = pitch_rescale(aux, src, tgt)
        om, os_ = _log_moments(out.pitch)
        worst = max(worst, abs(om - tgt.logf0_mean), abs(os_ - tgt.logf0_std))
        assert abs(om - tgt.logf0_mean) <= 1e-6 and abs(os_ - tgt.logf0_std) <= 1e-6
        back = pitch_rescale(out, tgt, src)
        voiced = pitch > 0
        assert np.array_equal(out.pitch > 0, voiced)
        assert np.max(np.abs(back.pitch[voiced] - pitch[voiced])) <= 1e-6 * np.max(pitch)
        np.testing.assert_array_equal(back.values[:, 1:], aux.values[:, 1:])
    record_property("max_moment_err", f"{worst:.1e}")


@acceptance(7, "width-16 txt2vec gradient check on 20 random parameters, relative error <= 1e-3")
def test_c7_gradient_check(record_property):
    torch.manual_seed(7)
    cfg = AcousticModelConfig(vocab=list("abcdefgh"), languages=["hi", "mr", "te"], spk_dim=8, enc_blocks=1,
                              dec_blocks=1, width=16, heads=2, ff_width=32, dur_width=16, groups=2, codebook_size=8)
    m = AcousticModel(cfg).double()
    rng = np.random.default_rng(7)
    items = []
    for _ in range(2):
        S = int(rng.integers(2, 7))
        dur = rng.integers(1, 4, S)
        T = int(dur.sum())
        pitch = np.where(rng.random(T) < 0.6, rng.uniform(90, 250, T), 0.0)
        items.append(dict(ids=[m.token_id(c) for c in rng.choice(cfg.vocab, S)], spk=rng.normal(size=8),
                          lang=int(rng.integers(0, 3)), vq=rng.integers(0, 8, (T, 2)),
                          aux=np.stack([pitch, rng.normal(-4, 1, T), rng.random(T)], axis=1), durations=dur))
    batch = make_batch(items).to(torch.float64)
    m.zero_grad()
    m.loss(batch)[0].backward()
    with torch.no_grad():
        # the duration predictor trains on detached encoder states; hold its input fixed
        frozen = m.encode(batch.ids, batch.token_lengths, batch.spk, batch.lang)

    def objective():
        logits, aux, _ = m(batch)
        return m.loss(batch, (logits, aux, m.duration_predictor(frozen, batch.token_mask)))[0].item()

    params = [(n, p) for n, p in m.named_parameters() if p.grad is not None]
    sizes = np.array([p.numel() for _, p in params])
    offsets = np.cumsum(sizes) - sizes
    worst = 0.0
    h = 1e-5
    for k in rng.choice(sizes.sum(), 20, replace=False):
        j = int(np.searchsorted(offsets, k, side="right") - 1)
        name, p = params[j]
        i = int(k - offsets[j])
        flat = p.data.view(-1)
        old = flat[i].item()
        with torch.no_grad():
            flat[i] = old + h
            up = objective()
            flat[i] = old - h
            down = objective()
            flat[i] = old
        numeric = (up - down) / (2 * h)
        analytic = p.grad.view(-1)[i].item()
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, rel)
        assert rel <= 1e-3, (name, i, analytic, numeric)
    record_property("max_rel_err", f"{worst:.1e}")


@pytest.fixture(scope="module")
def toy_corpus(tmp_path_factory):
    """6 speakers x 3 languages, 16 utterances each of 2-4 s, with the toy config."""
    root = tmp_path_factory.mktemp("acceptance_toy")
    utts = make_toy_corpus(root, n_per_speaker=16, seed=0)
    assert len(utts) == 96 and all(2.0 <= u.duration_s <= 4.0 for u in utts)
    assert len({u.speaker_id for u in utts}) == 6 and len({u.language_id for u in utts}) == 3
    return write_toy_config(root)


@acceptance(8, "training descent: 50 AM steps and 100 lite vocoder steps end below step 0 (G=2, V=64), < 10 min")
def test_c8_training_descent(toy_corpus, record_property):
    t0 = time.perf_counter()
    cfg = load_config(toy_corpus)
    assert cfg.features.codebook_groups == 2 and cfg.features.codebook_size == 64
    cfg = dataclasses.replace(
        cfg,
        paths=dataclasses.replace(cfg.paths, ckpt=str(cfg.path("ckpt").parent / "ckpt_descent")),
        am=dataclasses.replace(cfg.am, max_steps=50),
        voc=dataclasses.replace(cfg.voc, max_steps=100, mode="lite"),
    )
    run_prepare(cfg)
    run_select(cfg)
    run_train_am(cfg)
    run_train_voc(cfg)
    am = _read_marker(cfg.path("ckpt") / "am")["history"]
    voc = _read_marker(cfg.path("ckpt") / "voc")["history"]
    elapsed = time.perf_counter() - t0
    record_property("am", f"{am[0][1]:.3f}->{am[-1][1]:.3f}@{am[-1][0]}")
    record_property("voc_mel", f"{voc[0][1]:.3f}->{voc[-1][1]:.3f}@{voc[-1][0]}")
    record_property("seconds", round(elapsed, 1))
    assert am[0][0] == 0 and am[-1][0] == 50 and am[-1][1] < am[0][1]
    assert voc[0][0] == 0 and voc[-1][0] == 100 and voc[-1][1] < voc[0][1]
    assert elapsed < 600


@acceptance(9, "run-all exits 0; mono/cross routing in traces; every waveform is T x hop samples")
def test_c9_run_all(toy_corpus, record_property):
    from mmvqtts.corpus import read_wav

    assert cli_main(["run-all", "--config", str(toy_corpus), "-q"]) == 0
    demo = load_config(toy_corpus).path("out") / "demo"
    traces = {p.stem: read_trace(p) for p in sorted(demo.glob("*.tsv"))}
    assert {t.mode for t in traces.values()} == {"mono", "cross"}
    for name, t in traces.items():
        wav, _ = read_wav(demo / f"{name}.wav")
        assert len(wav) == t.audio_length == t.T * t.hop == sum(t.durations) * t.hop
        if t.mode == "mono":
            assert t.am_speaker_id == t.voc_speaker_id == t.target_speaker_id and not t.pitch_rescaled
        else:
            assert t.am_speaker_id != t.target_speaker_id and t.voc_speaker_id == t.target_speaker_id
            assert t.pitch_rescaled
    record_property("demos", len(traces))


@acceptance(10, "silence predictor reaches >= 95% training accuracy on the rule-based boundary corpus")
def test_c10_sil_predictor(record_property):
    data = rule_boundary_corpus(n=200, seed=10)
    cfg = SilPredictorConfig(vocab=list("abcdefgx"), languages=["hi"], seed=0)
    _, history = train_sil_predictor(data, cfg)
    acc = history[-1][1]
    record_property("epochs", cfg.epochs)
    record_property("accuracy", f"{acc:.3f}")
    assert acc >= 0.95
