"""Experiment configuration and its INI file format.

Grammar: UTF-8 text, ``[section]`` headers, ``key = value`` lines, ``#`` or
``;`` comments (full-line or trailing). Lists are comma-separated. Unknown
sections or keys are rejected. Recognised keys::

    [dataset]   name (two_points | sine | csv:<path>), n_points, noise_sd,
                frequency, seed
    [sweep]     widths, seeds, activation (erf | tanh | relu), jobs
    [prior]     sigma2_w1, sigma2_b1, sigma2_w2_tilde, sigma2_noise
    [train]     epochs, learning_rate, momentum, mc_samples, clip_norm,
                restart_period, lr_min, record_every
    [grid]      n_points, padding
    [sampling]  function_samples, upcross_points, upcross_bins, tanh_kernel_samples
    [output]    dir

Seed precedence for ``seeds``: command-line flag > ``WIDTHLAB_SEED`` > file.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .mfvi import TrainConfig
from .priorcore import Activation, PriorConfig

__all__ = ["DatasetSpec", "ExperimentConfig", "load_config", "SEED_ENV"]

SEED_ENV = "WIDTHLAB_SEED"


@dataclass(frozen=True)
class DatasetSpec:
    name: str = "two_points"
    n_points: int = 20
    noise_sd: float = 0.1
    frequency: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.name not in ("two_points", "sine") and not self.name.startswith("csv:"):
            raise ValueError(f"unknown dataset {self.name!r}; expected two_points, sine or csv:<path>")
        if self.name.startswith("csv:") and not self.name[4:]:
            raise ValueError("csv dataset needs a path, e.g. csv:marathon.csv")
        if self.n_points < 1 or self.noise_sd < 0:
            raise ValueError("sine dataset needs n_points >= 1 and noise_sd >= 0")

    @property
    def label(self) -> str:
        return Path(self.name[4:]).stem if self.name.startswith("csv:") else self.name


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    widths: tuple = (125, 500, 2000, 8000)
    seeds: tuple = (0,)
    activation: Activation = Activation.ERF
    prior: PriorConfig = field(default_factory=PriorConfig.experiment_defaults)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid_points: int = 50
    grid_padding: float = 1.0
    function_samples: int = 1000
    upcross_points: int = 400
    upcross_bins: int = 40
    tanh_kernel_samples: int = 200_000
    jobs: int = 1
    out_dir: str = "results"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if not widths or any(w < 1 for w in widths):
            raise ValueError("widths must be a non-empty list of positive integers")
        if any(b <= a for a, b in zip(widths, widths[1:])):
            raise ValueError(f"widths must be strictly increasing, got {widths}")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ValueError("seeds must be non-empty")
        if self.grid_points < 2:
            raise ValueError("grid needs at least 2 points")
        if self.function_samples < 2 or self.upcross_points < 2 or self.upcross_bins < 1:
            raise ValueError("sampling sizes too small")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "activation", Activation(self.activation))

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_SECTIONS = {
    "dataset": {"name": str, "n_points": int, "noise_sd": float, "frequency": float, "seed": int},
    "sweep": {"widths": "ints", "seeds": "ints", "activation": str, "jobs": int},
    "prior": {f.name: float for f in fields(PriorConfig)},
    "train": {
        "epochs": int,
        "learning_rate": float,
        "momentum": float,
        "mc_samples": int,
        "clip_norm": float,
        "restart_period": int,
        "lr_min": float,
        "record_every": int,
    },
    "grid": {"n_points": int, "padding": float},
    "sampling": {
        "function_samples": int,
        "upcross_points": int,
        "upcross_bins": int,
        "tanh_kernel_samples": int,
    },
    "output": {"dir": str},
}


def _parse_ints(text: str) -> tuple:
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _read_sections(path) -> dict:
    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#", ";"), comment_prefixes=("#", ";"), interpolation=None
    )
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    out = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ValueError(f"{path}: unknown section [{section}]")
        schema = _SECTIONS[section]
        values = {}
        for key, raw in parser.items(section):
            if key not in schema:
                raise ValueError(f"{path}: unknown key {key!r} in [{section}]")
            kind = schema[key]
            try:
                values[key] = _parse_ints(raw) if kind == "ints" else kind(raw.strip())
            except ValueError as exc:
                raise ValueError(f"{path}: bad value for {section}.{key}: {raw!r}") from exc
        out[section] = values
    return out


def env_seed() -> Optional[int]:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def load_config(path=None, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Build a config from defaults, an optional INI file and ``WIDTHLAB_SEED``."""
    cfg = base or ExperimentConfig()
    if path is not None:
        s = _read_sections(path)
        ds = s.get("dataset", {})
        sweep = s.get("sweep", {})
        grid = s.get("grid", {})
        sampling = s.get("sampling", {})
        cfg = replace(
            cfg,
            dataset=replace(cfg.dataset, **ds),
            widths=sweep.get("widths", cfg.widths),
            seeds=sweep.get("seeds", cfg.seeds),
            activation=sweep.get("activation", cfg.activation),
            jobs=sweep.get("jobs", cfg.jobs),
            prior=replace(cfg.prior, **s.get("prior", {})),
            train=replace(cfg.train, **s.get("train", {})),
            grid_points=grid.get("n_points", cfg.grid_points),
            grid_padding=grid.get("padding", cfg.grid_padding),
            out_dir=s.get("output", {}).get("dir", cfg.out_dir),
            **sampling,
        )
    seed = env_seed()
    if seed is not None:
        cfg = replace(cfg, seeds=(seed,))
    return cfg
