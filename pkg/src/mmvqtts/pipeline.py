"""Stage runners: prepare, select, train-sil, train-am, train-voc, synth, run-all.

Each stage writes a JSON marker holding a hash of its config section and
inputs; re-running with the same hash is a no-op. Training stages save a
checkpoint after every chunk of steps and resume from the latest one.
Failures are re-raised as StageError carrying the stage name.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from multiprocessing import get_context
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import checkpoint
from .alignment import SIL, GaussianFrameScorer, alignment_posteriors, durations_from_path, focus_rate, \
    merge_undetected_silences, read_ctm, silence_labels, write_ctm
from .audio import log_mel_np
from .config import PipelineConfig
from .corpus import CTM_FILE, FeatureStore, SpeakerRegistry, Utterance, check_duration, load_manifest, \
    load_registry, read_wav, save_manifest, write_wav
from .errors import AudioFormatError, CheckpointError, StageError, VQTTSError
from .features import AuxFeatureSeq, SurrogateQuantizer, build_speaker_profile, extract_aux, extract_vq, \
    fit_surrogate_quantizer, load_profiles, save_profiles, surrogate_speaker_embedding
from .frontend import SilTargets, load_sil_predictor, read_sil_targets, save_sil_predictor, tokenize, \
    train_sil_predictor, with_candidate_silences, write_sil_targets
from .selection import SelectionMetrics, cer, read_metrics, select_training_set, write_metrics
from .synthesis import SynthesisRequest, synthesize, write_trace
from .txt2vec import AcousticModel, aux_statistics, load_acoustic_model, save_acoustic_model, train_acoustic_model
from .vec2wav import Discriminators, Vocoder, load_vocoder, save_vocoder, train_vocoder

logger = logging.getLogger("mmvqtts")

QUANTIZER_FILE = "quantizer.npz"
METRICS_FILE = "metrics.tsv"
SIL_TARGETS_FILE = "sil_targets.tsv"
PROFILES_FILE = "profiles.json"
SELECTION_DIR = "selection"
REPORT_FILE = "report.tsv"
TRAIN_MANIFEST = "train.tsv"
MARKER = "DONE.json"
CHUNKS = 4  # checkpoints per training run


def log_event(stage: str, **kv):
    """One `ts stage key=value ...` line (the timestamp comes from the handler's formatter)."""
    parts = [stage] + [f"{k}={_fmt(v)}" for k, v in kv.items()]
    logger.info(" ".join(parts))


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v).replace(" ", "_")


def setup_logging(log_file=None, level=logging.INFO):
    fmt = logging.Formatter("%(asctime)s %(message)s", datefmt="%Y-%m-%dT%H:%M:%S")
    logger.setLevel(level)
    for h in list(logger.handlers):
        logger.removeHandler(h)
    handlers = [logging.StreamHandler()]
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    for h in handlers:
        h.setFormatter(fmt)
        logger.addHandler(h)
    logger.propagate = False


# markers


def _sha(*chunks) -> str:
    h = hashlib.sha256()
    for c in chunks:
        h.update(c if isinstance(c, bytes) else str(c).encode("utf-8"))
        h.update(b"\0")
    return h.hexdigest()[:16]


def _file_sha(path) -> str:
    p = Path(path)
    return _sha(p.read_bytes()) if p.exists() else "missing"


def _read_marker(d) -> Optional[dict]:
    p = Path(d) / MARKER
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None


def _write_marker(d, **payload):
    Path(d).mkdir(parents=True, exist_ok=True)
    tmp = Path(d) / (MARKER + ".tmp")
    tmp.write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")
    tmp.replace(Path(d) / MARKER)


def _stage(name):
    """Decorator: surface any failure as StageError(name, ...)."""

    def wrap(fn):
        def run(*a, **kw):
            t0 = time.perf_counter()
            try:
                out = fn(*a, **kw)
            except StageError:
                raise
            except (VQTTSError, OSError, ValueError, RuntimeError, AssertionError, KeyError) as e:
                raise StageError(name, f"{type(e).__name__}: {e}") from e
            log_event(name, status="ok", seconds=round(time.perf_counter() - t0, 2))
            return out

        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return wrap


# corpus helpers


def load_corpus(cfg: PipelineConfig):
    reg = load_registry(cfg.path("registry"))
    utts = load_manifest(cfg.path("manifest"), reg)
    return reg, utts


def _load_audio(cfg: PipelineConfig, u: Utterance) -> np.ndarray:
    wav, sr = read_wav(u.audio_path(cfg.corpus_root))
    if sr != cfg.corpus.sample_rate:
        raise AudioFormatError(f"{u.utt_id}: sample rate {sr} != configured {cfg.corpus.sample_rate}")
    check_duration(u, len(wav), sr, cfg.corpus.hop)
    return wav


def _prepare_hash(cfg: PipelineConfig, utts) -> str:
    parts = [_file_sha(cfg.path("manifest")), _file_sha(cfg.path("registry")),
             cfg.section_hash("corpus", "features", "alignment"), cfg.run.seed]
    for u in utts:
        p = u.audio_path(cfg.corpus_root)
        st = p.stat()
        parts += [u.utt_id, st.st_size, st.st_mtime_ns, _file_sha(cfg.path("hyp_dir") / f"{u.utt_id}.txt")]
    return _sha(*parts)


# prepare


def _prepare_one(args):
    """Per-utterance feature extraction and alignment. Runs in worker processes too."""
    cfg, u, quantizer = args
    c = cfg.corpus
    try:
        wav = _load_audio(cfg, u)
        store = FeatureStore(cfg.path("store"))
        vq = extract_vq(wav, quantizer)
        aux = extract_aux(wav, c.sample_rate, c.hop, c.win)
        emb = surrogate_speaker_embedding(wav, c.sample_rate, cfg.features.spk_dim, c.hop, c.win)

        feats = log_mel_np(wav, c.sample_rate, c.win, c.hop, c.n_mels).astype(np.float64)
        seq = with_candidate_silences(tokenize(u.transcript, u.language_id))
        skip = [t == SIL for t in seq.tokens]
        scores, path = GaussianFrameScorer(n_iter=cfg.alignment.em_iters).fit(feats, seq.tokens, skip)
        frames = durations_from_path(path, scores.S, skip).frames
        labels = silence_labels(seq.tokens, seq.boundaries, frames, cfg.alignment.min_sil_frames)
        tokens, durations = merge_undetected_silences(seq.tokens, frames, labels)
        gamma, _ = alignment_posteriors(scores, skip)

        hyp_path = cfg.path("hyp_dir") / f"{u.utt_id}.txt"
        hyp = hyp_path.read_text(encoding="utf-8").strip()
        metrics = SelectionMetrics(u.utt_id, cer(u.transcript, hyp), path.normalized_loglik, focus_rate(gamma),
                                   u.duration_s, u.speaker_id)

        store.write_vq(u.utt_id, vq.indices)
        store.write_aux(u.utt_id, aux.values)
        store.write_spk(u.utt_id, emb)
        store.write_hyp(u.utt_id, hyp)
        write_ctm(store.path(u.utt_id, CTM_FILE), tokens, durations)
    except Exception as e:
        raise StageError("prepare", f"utterance {u.utt_id}: {type(e).__name__}: {e}") from None
    return metrics, SilTargets(u.utt_id, labels)


@_stage("prepare")
def run_prepare(cfg: PipelineConfig, force: bool = False) -> dict:
    """Populate the feature store; returns the marker payload."""
    reg, utts = load_corpus(cfg)
    store_root = cfg.path("store")
    digest = _prepare_hash(cfg, utts)
    marker = _read_marker(store_root)
    if not force and marker and marker.get("hash") == digest and all(
        (store_root / u.utt_id / CTM_FILE).exists() for u in utts
    ):
        log_event("prepare", status="skip", reason="hash_match", utterances=len(utts))
        return marker
    store_root.mkdir(parents=True, exist_ok=True)
    log_event("prepare", utterances=len(utts), workers=cfg.run.workers)
    if not utts:
        write_metrics([], store_root / METRICS_FILE)
        write_sil_targets([], store_root / SIL_TARGETS_FILE)
        payload = dict(hash=digest, utterances=[])
        _write_marker(store_root, **payload)
        return payload

    c = cfg.corpus
    mels = []
    for u in utts:
        try:
            mels.append(log_mel_np(_load_audio(cfg, u), c.sample_rate, c.win, c.hop, c.n_mels))
        except VQTTSError as e:
            raise StageError("prepare", f"utterance {u.utt_id}: {e}") from None
    f = cfg.features
    quantizer = fit_surrogate_quantizer(mels, f.codebook_groups, f.codebook_size, seed=cfg.run.seed,
                                        iters=f.kmeans_iters, proj_dim=f.proj_dim, sample_rate=c.sample_rate,
                                        hop=c.hop, win=c.win)
    quantizer.save(store_root / QUANTIZER_FILE)
    log_event("prepare", quantizer_groups=f.codebook_groups, codebook=f.codebook_size,
              kmeans_final=float(sum(h[-1] for h in quantizer.history)))

    jobs = [(cfg, u, quantizer) for u in utts]
    if cfg.run.workers > 1:
        with ProcessPoolExecutor(cfg.run.workers, mp_context=get_context("spawn")) as pool:
            results = list(pool.map(_prepare_one, jobs))
    else:
        results = [_prepare_one(j) for j in jobs]
    metrics = [m for m, _ in results]
    write_metrics(metrics, store_root / METRICS_FILE)
    write_sil_targets([t for _, t in results], store_root / SIL_TARGETS_FILE)
    n_sil = sum(sum(t.labels) for _, t in results)
    n_bound = sum(len(t.labels) for _, t in results)
    log_event("prepare", detected_silences=n_sil, boundaries=n_bound,
              mean_focus=float(np.mean([m.focus_rate for m in metrics])))
    payload = dict(hash=digest, utterances=[u.utt_id for u in utts])
    _write_marker(store_root, **payload)
    return payload


# select


def _selection_dir(cfg) -> Path:
    return cfg.path("store") / SELECTION_DIR


@_stage("select")
def run_select(cfg: PipelineConfig, force: bool = False):
    """Two-stage selection, per-speaker stage-2 manifests and speaker profiles."""
    reg, utts = load_corpus(cfg)
    store_root = cfg.path("store")
    out = _selection_dir(cfg)
    digest = _sha(_file_sha(store_root / METRICS_FILE), _file_sha(cfg.path("registry")),
                  cfg.section_hash("selection"), (_read_marker(store_root) or {}).get("hash"))
    marker = _read_marker(out)
    if not force and marker and marker.get("hash") == digest:
        log_event("select", status="skip", reason="hash_match")
        return marker
    metrics = read_metrics(store_root / METRICS_FILE)
    s = cfg.selection
    report = select_training_set(metrics, reg, s.budget1_s, s.budget2_s, s.loglik_weight, s.cer_weight)
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_FILE).write_text(report.to_tsv(), encoding="utf-8")

    by_id = {u.utt_id: u for u in utts}
    store = FeatureStore(store_root)
    train, profiles = [], {}
    for spk, sel in sorted(report.speakers.items()):
        chosen = [by_id[i] for i in sorted(sel.stage2_ids)]
        save_manifest(chosen, out / f"{spk}.tsv")
        train += chosen
        # profiles fall back to all of a speaker's audio when nothing survived selection
        source = chosen or [u for u in utts if u.speaker_id == spk]
        if source:
            profiles[spk] = build_speaker_profile(spk, [store.read_spk(u.utt_id) for u in source],
                                                  [AuxFeatureSeq(store.read_aux(u.utt_id)) for u in source])
        log_event("select", speaker=spk, stage1=len(sel.stage1_ids), stage1_s=round(sel.stage1_seconds, 2),
                  stage2=len(sel.stage2_ids), stage2_s=round(sel.stage2_seconds, 2))
        if sel.stage1_seconds > s.budget1_s or sel.stage2_seconds > s.budget2_s:
            raise AssertionError(f"{spk}: selection exceeds its budget")
    save_manifest(train, out / TRAIN_MANIFEST)
    save_profiles(profiles, store_root / PROFILES_FILE)
    payload = dict(hash=digest, train=len(train), speakers=sorted(profiles))
    _write_marker(out, **payload)
    return payload


def training_set(cfg: PipelineConfig) -> list:
    path = _selection_dir(cfg) / TRAIN_MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"{path} missing; run select first")
    return load_manifest(path)


def _vocab(utts) -> list:
    return sorted({ch for u in utts for ch in u.transcript if not ch.isspace()})


def _train_inputs_hash(cfg) -> str:
    store_root = cfg.path("store")
    return _sha(_file_sha(_selection_dir(cfg) / TRAIN_MANIFEST), _file_sha(store_root / PROFILES_FILE),
                (_read_marker(store_root) or {}).get("hash"))


def _check_done(stage, ckpt_dir, digest, loader):
    """Return the completed checkpoint path, or None when the stage must (re)run."""
    marker = _read_marker(ckpt_dir)
    if not marker or marker.get("hash") != digest:
        return None
    path = Path(ckpt_dir) / f"step{marker['step']}"
    try:
        loader(path)
    except CheckpointError as e:
        raise StageError(stage, f"completed checkpoint is unreadable: {e}") from e
    log_event(stage, status="skip", reason="hash_match", checkpoint=path)
    return path


# train-sil


@_stage("train-sil")
def run_train_sil(cfg: PipelineConfig, force: bool = False) -> Path:
    reg, all_utts = load_corpus(cfg)
    utts = training_set(cfg)
    ckpt_dir = cfg.path("ckpt") / "sil"
    digest = _sha(_train_inputs_hash(cfg), _file_sha(cfg.path("store") / SIL_TARGETS_FILE),
                  cfg.section_hash("silpred"))
    if not force and (done := _check_done("train-sil", ckpt_dir, digest, load_sil_predictor)):
        return done
    _clear_steps(ckpt_dir)
    targets = {t.utt_id: t.labels for t in read_sil_targets(cfg.path("store") / SIL_TARGETS_FILE)}
    examples = [(tokenize(u.transcript, u.language_id), targets[u.utt_id]) for u in utts]
    scfg = replace(cfg.silpred, vocab=_vocab(all_utts), languages=reg.languages())
    model, history = train_sil_predictor(examples, scfg, log=lambda **kv: log_event("train-sil", **kv))
    first, last = history[0], history[-1]
    if not all(math.isfinite(l) for l, _ in history):
        raise AssertionError("non-finite silence-predictor loss")
    if len(history) > 1 and not last[0] < first[0]:
        raise AssertionError(f"silence-predictor loss did not decrease ({first[0]:.4f} -> {last[0]:.4f})")
    path = save_sil_predictor(model, ckpt_dir, scfg.epochs, history)
    _write_marker(ckpt_dir, hash=digest, step=scfg.epochs, loss=last[0], accuracy=last[1])
    return path


# train-am


def am_items(cfg: PipelineConfig, model: AcousticModel, utts, profiles) -> list:
    store = FeatureStore(cfg.path("store"))
    items = []
    for u in utts:
        ctm = read_ctm(store.path(u.utt_id, CTM_FILE))
        vq = store.read_vq(u.utt_id)
        items.append(dict(
            ids=[model.token_id(t) for t, _, _ in ctm],
            spk=profiles[u.speaker_id].embedding,
            lang=model.lang_index(u.language_id),
            vq=vq,
            aux=store.read_aux(u.utt_id),
            durations=np.array([n for _, _, n in ctm]),
        ))
    return items


def _clear_steps(ckpt_dir):
    """Drop checkpoints from an earlier, different configuration before a fresh start."""
    for d in checkpoint.step_dirs(ckpt_dir):
        shutil.rmtree(d)
    (Path(ckpt_dir) / MARKER).unlink(missing_ok=True)


def _chunk_log(stage, s0, first):
    """Logger for one training chunk; later chunks skip the eval line the previous chunk ended on."""

    def log(**kv):
        if not first and kv.get("step") == s0 and any(k.startswith("eval") for k in kv):
            return
        log_event(stage, **kv)

    return log


def _chunks(total, start):
    size = max(1, math.ceil(total / CHUNKS))
    step = start
    while step < total:
        n = min(size, total - step)
        yield step, n
        step += n


@_stage("train-am")
def run_train_am(cfg: PipelineConfig, force: bool = False) -> Path:
    reg, all_utts = load_corpus(cfg)
    utts = training_set(cfg)
    if not utts:
        raise ValueError("empty training set")
    profiles = load_profiles(cfg.path("store") / PROFILES_FILE)
    store = FeatureStore(cfg.path("store"))
    quantizer = SurrogateQuantizer.load(cfg.path("store") / QUANTIZER_FILE)
    ckpt_dir = cfg.path("ckpt") / "am"
    digest = _sha(_train_inputs_hash(cfg), cfg.section_hash("am", "features"))
    if not force and (done := _check_done("train-am", ckpt_dir, digest, load_acoustic_model)):
        return done
    marker = _read_marker(ckpt_dir) or {}
    latest = checkpoint.latest(ckpt_dir)
    steps = cfg.am.max_steps
    torch.manual_seed(cfg.am.seed)
    optimizer, history, start = None, [], 0
    if latest is not None and marker.get("partial") == digest:
        model, extra = load_acoustic_model(latest)
        start = int(latest.name[4:])
        history = list(extra.get("history", []))
        optimizer = torch.optim.Adam(model.parameters(), lr=model.config.lr)
        if "optimizer" in extra:
            optimizer.load_state_dict(extra["optimizer"])
        log_event("train-am", status="resume", step=start)
    else:
        mean, std = aux_statistics([store.read_aux(u.utt_id) for u in utts])
        acfg = replace(cfg.am, vocab=_vocab(all_utts), languages=reg.languages(), spk_dim=cfg.features.spk_dim,
                       groups=quantizer.n_groups, codebook_size=quantizer.codebook_size, aux_mean=mean, aux_std=std)
        _clear_steps(ckpt_dir)
        model = AcousticModel(acfg)
    items = am_items(cfg, model, utts, profiles)
    path = latest
    for s0, n in _chunks(steps, start):
        gen = torch.Generator().manual_seed(model.config.seed * 1_000_003 + s0)
        optimizer, hist = train_acoustic_model(model, items, n, optimizer, s0,
                                                log=_chunk_log("train-am", s0, s0 == start), generator=gen)
        history += [list(h) for h in (hist if not history else hist[1:])]
        path = save_acoustic_model(model, ckpt_dir, s0 + n, optimizer, history)
        _write_marker(ckpt_dir, partial=digest, step=s0 + n)
    if path is None:
        path = save_acoustic_model(model, ckpt_dir, 0, optimizer, history)
    if history and not all(math.isfinite(l) for _, l in history):
        raise AssertionError("non-finite acoustic-model loss")
    if len(history) > 1 and not history[-1][1] < history[0][1]:
        raise AssertionError(f"acoustic-model loss did not decrease ({history[0][1]:.4f} -> {history[-1][1]:.4f})")
    _write_marker(ckpt_dir, hash=digest, step=steps, history=history)
    return path


# train-voc


def voc_items(cfg: PipelineConfig, utts, profiles) -> list:
    store = FeatureStore(cfg.path("store"))
    hop = cfg.corpus.hop
    items = []
    for u in utts:
        vq = store.read_vq(u.utt_id)
        wav = _load_audio(cfg, u)[: len(vq) * hop]
        items.append(dict(vq=vq, aux=store.read_aux(u.utt_id), spk=profiles[u.speaker_id].embedding, wav=wav))
    return items


@_stage("train-voc")
def run_train_voc(cfg: PipelineConfig, force: bool = False) -> Path:
    utts = training_set(cfg)
    if not utts:
        raise ValueError("empty training set")
    profiles = load_profiles(cfg.path("store") / PROFILES_FILE)
    store = FeatureStore(cfg.path("store"))
    quantizer = SurrogateQuantizer.load(cfg.path("store") / QUANTIZER_FILE)
    ckpt_dir = cfg.path("ckpt") / "voc"
    digest = _sha(_train_inputs_hash(cfg), cfg.section_hash("voc", "features", "corpus"))
    if not force and (done := _check_done("train-voc", ckpt_dir, digest, load_vocoder)):
        return done
    marker = _read_marker(ckpt_dir) or {}
    latest = checkpoint.latest(ckpt_dir)
    steps = cfg.voc.max_steps
    torch.manual_seed(cfg.voc.seed)
    discs, optimizers, history, start = None, None, [], 0
    if latest is not None and marker.get("partial") == digest:
        model, extra = load_vocoder(latest)
        start = int(latest.name[4:])
        history = list(extra.get("history", []))
        c = model.config
        optimizers = {"g": torch.optim.AdamW(model.parameters(), lr=c.lr, betas=(0.8, 0.99))}
        if c.mode == "adversarial":
            discs = Discriminators(c)
            if "discriminators" in extra:
                discs.load_state_dict(extra["discriminators"])
            optimizers["d"] = torch.optim.AdamW(discs.parameters(), lr=c.lr, betas=(0.8, 0.99))
        for k, state in extra.get("optimizers", {}).items():
            if k in optimizers:
                optimizers[k].load_state_dict(state)
        log_event("train-voc", status="resume", step=start)
    else:
        mean, std = aux_statistics([store.read_aux(u.utt_id) for u in utts])
        vcfg = replace(cfg.voc, groups=quantizer.n_groups, codebook_size=quantizer.codebook_size,
                       spk_dim=cfg.features.spk_dim, sample_rate=cfg.corpus.sample_rate, win=cfg.corpus.win,
                       n_mels=cfg.corpus.n_mels, aux_mean=mean, aux_std=std)
        _clear_steps(ckpt_dir)
        model = Vocoder(vcfg)
    items = voc_items(cfg, utts, profiles)
    path = latest
    for s0, n in _chunks(steps, start):
        discs, optimizers, hist = train_vocoder(model, items, n, discriminators=discs, optimizers=optimizers,
                                                start_step=s0, log=_chunk_log("train-voc", s0, s0 == start))
        history += [list(h) for h in (hist if not history else hist[1:])]
        path = save_vocoder(model, ckpt_dir, s0 + n, discs, optimizers, history)
        _write_marker(ckpt_dir, partial=digest, step=s0 + n)
    if path is None:
        path = save_vocoder(model, ckpt_dir, 0, discs, optimizers, history)
    if history and not all(math.isfinite(l) for _, l in history):
        raise AssertionError("non-finite vocoder loss")
    if len(history) > 1 and not history[-1][1] < history[0][1]:
        raise AssertionError(f"vocoder mel loss did not decrease ({history[0][1]:.4f} -> {history[-1][1]:.4f})")
    _write_marker(ckpt_dir, hash=digest, step=steps, history=history)
    return path


# synthesis


@dataclass
class Synthesizer:
    """Loaded, read-only model states; safe to share across requests."""

    registry: SpeakerRegistry
    profiles: dict
    frontend: object
    am: AcousticModel
    vocoder: Vocoder
    sample_rate: int

    @classmethod
    def load(cls, cfg: PipelineConfig) -> "Synthesizer":
        ckpt = cfg.path("ckpt")
        loaded = {}
        for stage, sub, loader in (("train-sil", "sil", load_sil_predictor), ("train-am", "am", load_acoustic_model),
                                   ("train-voc", "voc", load_vocoder)):
            path = checkpoint.latest(ckpt / sub)
            if path is None:
                raise StageError(stage, f"no checkpoint under {ckpt / sub}")
            try:
                loaded[sub] = loader(path)
            except CheckpointError as e:
                raise StageError(stage, str(e)) from e
        return cls(load_registry(cfg.path("registry")), load_profiles(cfg.path("store") / PROFILES_FILE),
                   loaded["sil"], loaded["am"][0], loaded["voc"][0], cfg.corpus.sample_rate)

    def __call__(self, text: str, speaker: str, language: str, native: Optional[str] = None):
        request = SynthesisRequest(text, speaker, language, native)
        return synthesize(request, self.frontend, self.am, self.vocoder, self.profiles, self.registry)


@_stage("synth")
def run_synth(cfg: PipelineConfig, text: str, speaker: str, language: str, native: Optional[str] = None,
              out=None, trace_path=None, synthesizer: Optional[Synthesizer] = None):
    synth = synthesizer or Synthesizer.load(cfg)
    wav, trace = synth(text, speaker, language, native)
    trace.check()
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        write_wav(out, wav, synth.sample_rate)
    if trace_path:
        Path(trace_path).parent.mkdir(parents=True, exist_ok=True)
        write_trace(trace, trace_path)
    log_event("synth", mode=trace.mode, target=speaker, am=trace.am_speaker_id, voc=trace.voc_speaker_id,
              frames=trace.T, samples=trace.audio_length)
    return wav, trace


def demo_requests(cfg: PipelineConfig, reg: SpeakerRegistry, utts) -> list:
    """One mono and one cross request per language: (name, text, target, language)."""
    out = []
    for lang in reg.languages():
        text = cfg.run.demo_text or next(u.transcript for u in utts if u.language_id == lang)
        native = reg.speakers(lang)[0]
        foreign = [s for s in reg.speakers() if reg.language_of(s) != lang]
        out.append((f"{lang}_mono", text, native, lang))
        if foreign:
            out.append((f"{lang}_cross", text, foreign[0], lang))
    return out


def run_all(cfg: PipelineConfig) -> dict:
    """prepare -> select -> train-sil -> train-am -> train-voc -> demo synthesis."""
    run_prepare(cfg)
    run_select(cfg)
    run_train_sil(cfg)
    run_train_am(cfg)
    run_train_voc(cfg)
    reg, utts = load_corpus(cfg)
    synth = Synthesizer.load(cfg)
    demo = cfg.path("out") / "demo"
    results = {}
    for name, text, target, lang in demo_requests(cfg, reg, training_set(cfg) or utts):
        wav, trace = run_synth(cfg, text, target, lang, out=demo / f"{name}.wav", trace_path=demo / f"{name}.tsv",
                               synthesizer=synth)
        if len(wav) != trace.T * synth.vocoder.hop:
            raise StageError("synth", f"{name}: {len(wav)} samples for {trace.T} frames")
        results[name] = trace
    log_event("run-all", status="ok", demos=len(results))
    return results
