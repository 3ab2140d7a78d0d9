"""Width sweep shared by the trend criteria, cached on disk.

The cache key hashes every numerical source module together with the sweep
configuration, so any change to the numerics forces a fresh run. Run this
file directly to populate the cache ahead of ``pytest``::

    python tests/acceptance_sweep.py erf tanh relu
"""

from __future__ import annotations

import hashlib
import os
import shutil
import sys
from dataclasses import replace
from pathlib import Path

import widthlab
from widthlab.config import ExperimentConfig
from widthlab.experiments import read_convergence, run_convergence
from widthlab.mfvi import TrainConfig

WIDTHS = (125, 1000, 8000)
SEEDS = (0, 1, 2, 3, 4)
EPOCHS = 5000
CACHE = Path(__file__).resolve().parent / ".sweep_cache"
_NUMERIC_MODULES = ("specfun", "priorcore", "mfvi", "nngp", "experiments", "config", "csvio")


def sweep_config(activation: str) -> ExperimentConfig:
    cfg = ExperimentConfig(widths=WIDTHS, seeds=SEEDS, activation=activation, jobs=os.cpu_count() or 1)
    return replace(cfg, train=replace(TrainConfig(), epochs=EPOCHS))


def cache_key(cfg: ExperimentConfig) -> str:
    h = hashlib.sha256()
    src = Path(widthlab.__file__).parent
    for name in _NUMERIC_MODULES:
        h.update((src / f"{name}.py").read_bytes())
    h.update(repr(replace(cfg, jobs=1)).encode())
    return h.hexdigest()[:16]


def sweep(activation: str):
    """Return ``(records, timing_csv)`` for one activation, running it if needed."""
    cfg = sweep_config(activation)
    folder = CACHE / f"{activation}_{cache_key(cfg)}"
    stem = f"convergence_two_points_{activation}"
    csv = folder / f"{stem}.csv"
    if not csv.exists():
        tmp = folder.with_name(folder.name + ".partial")
        shutil.rmtree(tmp, ignore_errors=True)
        run_convergence(cfg, tmp)
        shutil.rmtree(folder, ignore_errors=True)
        tmp.rename(folder)
    return read_convergence(csv), folder / f"{stem}_timing.csv"


if __name__ == "__main__":
    for act in sys.argv[1:] or ["erf", "tanh", "relu"]:
        records, _ = sweep(act)
        print(act, len(records), "runs cached", flush=True)
