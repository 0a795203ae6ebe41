import dataclasses

import numpy as np
import pytest

from mmvqtts import pipeline
from mmvqtts.config import ENV_VAR, load_config
from mmvqtts.corpus import CTM_FILE, FeatureStore, load_manifest
from mmvqtts.errors import StageError
from mmvqtts.pipeline import (
    MARKER,
    Synthesizer,
    run_prepare,
    run_select,
    run_train_am,
    run_train_voc,
)
from mmvqtts.synthesis import read_trace

from conftest import TINY_CONFIG, write_tiny


def test_config_parsing(tiny_corpus, monkeypatch):
    cfg = load_config(tiny_corpus)
    assert cfg.features.codebook_size == 16
    assert cfg.am.max_steps == 8 and cfg.am.lr == 0.003
    assert cfg.selection.budget2_s == 5.0
    assert cfg.path("store").is_absolute()
    assert cfg.voc.hop == cfg.corpus.hop == 160
    reseeded = load_config(tiny_corpus, seed=7)
    assert reseeded.run.seed == reseeded.am.seed == reseeded.voc.seed == reseeded.silpred.seed == 7
    monkeypatch.setenv(ENV_VAR, str(tiny_corpus))
    assert load_config().features.codebook_size == 16


def test_config_rejects_typos_and_bad_budgets(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[am]\nwidht = 3\n")
    with pytest.raises(ValueError, match="widht"):
        load_config(bad)
    bad.write_text("[selection]\nbudget1_s = 10\nbudget2_s = 20\n")
    with pytest.raises(ValueError):
        load_config(bad)
    bad.write_text("[voc]\nupsample_rates = 5 4 4\n")
    with pytest.raises(ValueError):
        load_config(bad)


def test_empty_manifest(tmp_path):
    (tmp_path / "manifest.tsv").write_text("")
    (tmp_path / "speakers.tsv").write_text("")
    (tmp_path / "c.cfg").write_text(TINY_CONFIG)
    cfg = load_config(tmp_path / "c.cfg")
    marker = run_prepare(cfg)
    assert marker["utterances"] == []
    assert (cfg.path("store") / MARKER).exists()


def test_prepare_six_utterances_and_idempotence(tmp_path):
    cfg = load_config(write_tiny(tmp_path, n_per_speaker=1))
    run_prepare(cfg)
    utts = load_manifest(cfg.path("manifest"))
    assert len(utts) == 6
    store = FeatureStore(cfg.path("store"))
    dirs = [d for d in cfg.path("store").iterdir() if d.is_dir()]
    assert len(dirs) == 6
    for u in utts:
        vq, aux = store.read_vq(u.utt_id), store.read_aux(u.utt_id)
        assert len(vq) == len(aux) == int(round(u.duration_s * 100))
        assert store.read_spk(u.utt_id).shape == (192,)
        frames = [int(line.split()[2]) for line in store.path(u.utt_id, CTM_FILE).read_text().splitlines()]
        assert sum(frames) == len(vq)
    stamp = store.path(utts[0].utt_id, "vq.idx").stat().st_mtime_ns
    run_prepare(cfg)
    assert store.path(utts[0].utt_id, "vq.idx").stat().st_mtime_ns == stamp
    # touching an input invalidates the marker
    hyp = cfg.path("hyp_dir") / f"{utts[0].utt_id}.txt"
    hyp.write_text(hyp.read_text() + "x")
    run_prepare(cfg)
    assert store.path(utts[0].utt_id, "vq.idx").stat().st_mtime_ns != stamp


def test_prepare_error_names_utterance(tmp_path):
    cfg = load_config(write_tiny(tmp_path, n_per_speaker=1))
    victim = load_manifest(cfg.path("manifest"))[2]
    (cfg.path("hyp_dir") / f"{victim.utt_id}.txt").unlink()
    with pytest.raises(StageError) as e:
        run_prepare(cfg)
    assert e.value.stage == "prepare" and victim.utt_id in str(e.value)


def test_worker_pool_matches_serial(tmp_path):
    a = load_config(write_tiny(tmp_path / "a", n_per_speaker=1))
    b = load_config(write_tiny(tmp_path / "b", n_per_speaker=1, extra="\n[run]\nworkers = 2\n"))
    run_prepare(a)
    run_prepare(b)
    assert (a.path("store") / "metrics.tsv").read_text() == (b.path("store") / "metrics.tsv").read_text()


def test_selection_deterministic_under_seed(tmp_path):
    reports = []
    for name in ("x", "y"):
        cfg = load_config(write_tiny(tmp_path / name), seed=3)
        run_prepare(cfg)
        run_select(cfg)
        reports.append((cfg.path("store") / "selection" / "report.tsv").read_text())
    assert reports[0] == reports[1]


def test_run_all_traces(tiny_run):
    cfg, traces = tiny_run
    langs = {t.language_id for t in traces.values()}
    assert langs == {"hi", "mr", "te"}
    for name, t in traces.items():
        t.check()
        assert t.audio_length == t.T * 160 == sum(t.durations) * 160
        on_disk = read_trace(cfg.path("out") / "demo" / f"{name}.tsv")
        assert on_disk == t
        if t.mode == "mono":
            assert t.am_speaker_id == t.voc_speaker_id == t.target_speaker_id
        else:
            assert t.am_speaker_id != t.target_speaker_id and t.voc_speaker_id == t.target_speaker_id
            assert t.pitch_rescaled


def test_rerun_is_noop(tiny_copy):
    stamp = (tiny_copy.path("ckpt") / "am" / MARKER).stat().st_mtime_ns
    pipeline.run_all(tiny_copy)
    assert (tiny_copy.path("ckpt") / "am" / MARKER).stat().st_mtime_ns == stamp


def test_corrupted_checkpoint_names_stage(tiny_copy):
    ckpt = tiny_copy.path("ckpt") / "voc"
    (ckpt / "step4" / "params.pt").write_bytes(b"\x00junk")
    with pytest.raises(StageError) as e:
        pipeline.run_all(tiny_copy)
    assert e.value.stage == "train-voc"
    with pytest.raises(StageError) as e:
        Synthesizer.load(tiny_copy)
    assert e.value.stage == "train-voc"


def test_training_resumes_after_interruption(tiny_copy, monkeypatch):
    cfg = dataclasses.replace(tiny_copy, am=dataclasses.replace(tiny_copy.am, lr=0.002))  # new hash -> fresh run
    real = pipeline.save_acoustic_model
    calls = []

    def flaky(model, root, step, *a, **kw):
        calls.append(step)
        if len(calls) == 3:
            raise RuntimeError("simulated crash")
        return real(model, root, step, *a, **kw)

    monkeypatch.setattr(pipeline, "save_acoustic_model", flaky)
    with pytest.raises(StageError):
        run_train_am(cfg)
    monkeypatch.setattr(pipeline, "save_acoustic_model", real)
    events = []
    monkeypatch.setattr(pipeline, "log_event", lambda stage, **kv: events.append(kv))
    path = run_train_am(cfg)
    assert path.name == "step8"
    assert {"status": "resume", "step": 4} in events
    marker = pipeline._read_marker(cfg.path("ckpt") / "am")
    assert marker["step"] == 8 and marker["history"][-1][1] < marker["history"][0][1]


def test_adversarial_vocoder_stage(tiny_copy):
    cfg = dataclasses.replace(tiny_copy, voc=dataclasses.replace(tiny_copy.voc, mode="adversarial", max_steps=2))
    path = run_train_voc(cfg)
    from mmvqtts.vec2wav import load_vocoder

    model, extra = load_vocoder(path)
    assert model.config.mode == "adversarial" and "discriminators" in extra
    assert all(np.isfinite(l) for _, l in extra["history"])
