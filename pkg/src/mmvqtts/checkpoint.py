"""`<root>/step<N>/{config.json, params.pt}` checkpoints."""

import json
import os
import re
import shutil
from pathlib import Path

import torch

from .errors import CheckpointError

_STEP = re.compile(r"^step(\d+)$")


def step_dirs(root) -> list:
    root = Path(root)
    if not root.is_dir():
        return []
    found = []
    for d in root.iterdir():
        m = _STEP.match(d.name)
        if m and d.is_dir():
            found.append((int(m.group(1)), d))
    return [d for _, d in sorted(found)]


def latest(root):
    dirs = step_dirs(root)
    return dirs[-1] if dirs else None


def save(root, step: int, config: dict, params: dict, extra: dict = None) -> Path:
    root = Path(root)
    final = root / f"step{step}"
    tmp = root / f".step{step}.tmp"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    (tmp / "config.json").write_text(json.dumps(config, indent=1, sort_keys=True), encoding="utf-8")
    torch.save({"params": params, "extra": extra or {}}, tmp / "params.pt")
    if final.exists():
        shutil.rmtree(final)
    os.replace(tmp, final)
    return final


def load(path) -> tuple:
    """Return (config, params, extra); any unreadable piece raises CheckpointError."""
    path = Path(path)
    try:
        config = json.loads((path / "config.json").read_text(encoding="utf-8"))
        blob = torch.load(path / "params.pt", map_location="cpu", weights_only=False)
        return config, blob["params"], blob.get("extra", {})
    except Exception as e:  # corrupted or partial checkpoints surface uniformly
        raise CheckpointError(f"cannot load checkpoint {path}: {e}") from e
