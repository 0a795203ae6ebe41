"""Pipeline configuration: INI-style `key = value` sections, one per module.

Keys inside the model sections ([silpred], [am], [voc]) map onto the
matching dataclass fields; unknown keys are rejected so typos surface early.
The config file may be given explicitly or through ``VQTTS_CONFIG``.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .frontend import SilPredictorConfig
from .selection import BUDGET1_S, BUDGET2_S
from .txt2vec import AcousticModelConfig
from .vec2wav import VocoderConfig

ENV_VAR = "VQTTS_CONFIG"


@dataclass
class Paths:
    manifest: str = "manifest.tsv"
    registry: str = "speakers.tsv"
    hyp_dir: str = "hyp"
    store: str = "store"
    ckpt: str = "ckpt"
    out: str = "out"
    corpus_root: str = ""  # audio paths in the manifest are relative to this; defaults to the manifest's dir


@dataclass
class CorpusSettings:
    sample_rate: int = 16000
    hop: int = 160
    win: int = 400
    n_mels: int = 80


@dataclass
class FeatureSettings:
    codebook_groups: int = 2
    codebook_size: int = 320
    kmeans_iters: int = 20
    proj_dim: int = 16
    spk_dim: int = 192


@dataclass
class AlignmentSettings:
    min_sil_frames: int = 3
    em_iters: int = 4


@dataclass
class SelectionSettings:
    budget1_s: float = BUDGET1_S
    budget2_s: float = BUDGET2_S
    loglik_weight: float = 1.0
    cer_weight: float = 1.0


@dataclass
class RunSettings:
    seed: int = 0
    workers: int = 1
    demo_text: str = ""  # empty: use a training transcript of each language


@dataclass
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    corpus: CorpusSettings = field(default_factory=CorpusSettings)
    features: FeatureSettings = field(default_factory=FeatureSettings)
    alignment: AlignmentSettings = field(default_factory=AlignmentSettings)
    selection: SelectionSettings = field(default_factory=SelectionSettings)
    silpred: SilPredictorConfig = field(default_factory=SilPredictorConfig)
    am: AcousticModelConfig = field(default_factory=AcousticModelConfig)
    voc: VocoderConfig = field(default_factory=VocoderConfig)
    run: RunSettings = field(default_factory=RunSettings)
    source: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        s = self.selection
        if not (s.budget1_s > 0 and 0 < s.budget2_s <= s.budget1_s):
            raise ValueError("budgets must satisfy 0 < budget2 <= budget1")
        if self.voc.hop != self.corpus.hop:
            raise ValueError(f"vocoder upsampling product {self.voc.hop} != hop {self.corpus.hop}")
        if self.run.workers < 1:
            raise ValueError("workers must be >= 1")

    # resolved locations
    def path(self, key: str) -> Path:
        return Path(getattr(self.paths, key)).expanduser()

    @property
    def corpus_root(self) -> Path:
        return Path(self.paths.corpus_root) if self.paths.corpus_root else self.path("manifest").parent

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Copy with one seed driving every random component."""
        return _reseed(self, seed)

    def section_hash(self, *names: str) -> str:
        blob = {n: dataclasses.asdict(getattr(self, n)) for n in names}
        return hashlib.sha256(json.dumps(blob, sort_keys=True, default=str).encode()).hexdigest()[:16]


_SECTIONS = ("paths", "corpus", "features", "alignment", "selection", "silpred", "am", "voc", "run")


def _coerce(raw: str, default, name: str):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        return json.loads(raw) if raw.strip().startswith("[") else [_num(x) for x in raw.replace(",", " ").split()]
    return raw


def _num(x: str):
    try:
        return int(x)
    except ValueError:
        try:
            return float(x)
        except ValueError:
            return x


def _apply(obj, items, section: str):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    kw = {}
    for key, raw in items:
        if key not in fields:
            raise ValueError(f"unknown key [{section}] {key}")
        kw[key] = _coerce(raw, getattr(obj, key), f"[{section}] {key}")
    return dataclasses.replace(obj, **kw)


def _reseed(cfg: PipelineConfig, seed: int) -> PipelineConfig:
    return dataclasses.replace(
        cfg,
        run=dataclasses.replace(cfg.run, seed=seed),
        silpred=dataclasses.replace(cfg.silpred, seed=seed),
        am=dataclasses.replace(cfg.am, seed=seed),
        voc=dataclasses.replace(cfg.voc, seed=seed),
    )


def resolve_config_path(path=None) -> Optional[Path]:
    if path:
        return Path(path)
    env = os.environ.get(ENV_VAR)
    return Path(env) if env else None


def load_config(path=None, seed: Optional[int] = None, store: Optional[str] = None) -> PipelineConfig:
    """Read a config file (explicit path, else $VQTTS_CONFIG, else defaults) and apply CLI overrides."""
    cfg = PipelineConfig()
    src = resolve_config_path(path)
    if src is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        if not parser.read(src, encoding="utf-8"):
            raise FileNotFoundError(f"config file {src} not found")
        updates = {}
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ValueError(f"unknown config section [{section}]")
            updates[section] = _apply(getattr(cfg, section), parser.items(section), section)
        base = src.parent
        if "paths" in updates:
            p = updates["paths"]
            updates["paths"] = dataclasses.replace(p, **{
                f.name: str(base / getattr(p, f.name)) for f in dataclasses.fields(p)
                if getattr(p, f.name) and not Path(getattr(p, f.name)).is_absolute()
            })
        cfg = dataclasses.replace(cfg, source=str(src), **updates)
        # a [run] seed propagates unless a model section pins its own
        run_seed = updates.get("run", cfg.run).seed
        cfg = _reseed(cfg, run_seed)
        for section in ("silpred", "am", "voc"):
            if parser.has_option(section, "seed"):
                setattr(cfg, section, dataclasses.replace(getattr(cfg, section), seed=parser.getint(section, "seed")))
    if seed is not None:
        cfg = _reseed(cfg, seed)
    if store is not None:
        cfg = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, store=store))
    cfg.validate()
    return cfg
