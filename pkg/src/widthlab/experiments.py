"""Experiment harness: datasets, width sweeps and their CSV outputs.

Every function here is deterministic in its config. Wall-clock times are
written to separate ``*_timing.csv`` files so the result files themselves
are byte-reproducible.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import csvio
from .config import DatasetSpec, ExperimentConfig
from .mfvi import (
    TrainingDiverged,
    VariationalParams,
    bound_check,
    expected_error,
    kl_to_prior,
    posterior_predictive,
    predictive_moments_exact,
    train,
)
from .nngp import KernelKind, gp_fit, gp_predict, kernel_diag, kernel_matrix
from .priorcore import (
    Activation,
    Architecture,
    Dataset,
    activation_prior_variance,
    c_x,
    prior_function_samples,
    prior_predictive_moments,
    upcrossings,
    zscore,
)

__all__ = [
    "load_xy_csv",
    "make_dataset",
    "make_grid",
    "RunRecord",
    "run_cell",
    "run_convergence",
    "read_convergence",
    "run_prior_check",
    "run_posterior",
    "run_param_density",
    "run_bound_check",
    "QUANTILES",
]

log = logging.getLogger(__name__)

QUANTILES = (0.01, 0.25, 0.5, 0.75, 0.99)


def load_xy_csv(path) -> Dataset:
    """Read raw observations from a CSV whose header is ``x,y``."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or [h.strip() for h in lines[0].split(",")] != ["x", "y"]:
        raise ValueError(f"{path}:1: expected header 'x,y'")
    xs, ys = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 2 fields, got {len(parts)}")
        try:
            x, y = float(parts[0]), float(parts[1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric value in {line!r}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise ValueError(f"{path}:{lineno}: non-finite value in {line!r}")
        xs.append(x)
        ys.append(y)
    if not xs:
        raise ValueError(f"{path}: no data rows")
    return Dataset(np.array(xs)[:, None], np.array(ys))


def raw_dataset(spec: DatasetSpec) -> Dataset:
    if spec.name == "two_points":
        return Dataset(np.array([[-1.0], [1.0]]), np.array([-1.0, 1.0]))
    if spec.name == "sine":
        x = np.linspace(-2.0, 2.0, spec.n_points)
        noise = np.random.default_rng(spec.seed).standard_normal(spec.n_points) * spec.noise_sd
        return Dataset(x[:, None], np.sin(spec.frequency * x) + noise)
    return load_xy_csv(spec.name[4:])


def make_dataset(spec: DatasetSpec) -> Dataset:
    """Build the named dataset and z-score it."""
    return zscore(raw_dataset(spec))


def make_grid(dataset: Dataset, n_points: int = 50, padding: float = 1.0) -> np.ndarray:
    """Uniform ``(n_points, 1)`` grid over ``[min x - padding, max x + padding]``."""
    if dataset.input_dim != 1:
        raise ValueError("evaluation grids are only defined for 1-D inputs")
    lo = float(dataset.X.min()) - padding
    hi = float(dataset.X.max()) + padding
    return np.linspace(lo, hi, n_points)[:, None]


def prior_seed(seed: int, width: int) -> list:
    return [int(seed) & 0xFFFFFFFF, 2, int(width)]


def _arch(config: ExperimentConfig, dataset: Dataset, width: int) -> Architecture:
    return Architecture(dataset.input_dim, width, config.activation)


def _train(config, dataset, width, seed):
    arch = _arch(config, dataset, width)
    return arch, train(arch, config.prior, dataset, replace(config.train, seed=seed))


@dataclass
class RunRecord:
    dataset: str
    activation: str
    width: int
    seed: int
    status: str
    elbo: float
    kl: float
    expected_nll: float
    c_x: float
    loss: float
    loss_premise_holds: bool
    mean_dist: float
    var_dist: float
    bound_max: float
    mean_abs_max: float
    bound_violations: int
    sigma2_dev_median: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def to_row(self) -> list:
        return list(astuple(self))

    @classmethod
    def from_row(cls, row) -> "RunRecord":
        kinds = {"str": str, "int": int, "float": float, "bool": bool}
        return cls(*(csvio.parse_value(v, kinds[f.type]) for f, v in zip(fields(cls), row)))

    @property
    def sort_key(self):
        return (self.dataset, self.activation, self.width, self.seed)


def summarize_run(config, dataset, arch, vp: VariationalParams, seed: int) -> RunRecord:
    """Distances to the prior and bound summary for one trained model."""
    prior = config.prior
    grid = make_grid(dataset, config.grid_points, config.grid_padding)
    post = predictive_moments_exact(vp, arch, prior, grid)
    prior_var = activation_prior_variance(arch, prior, grid)
    # the prior predictive mean is identically zero
    mean_dist = float(np.linalg.norm(post.means))
    var_dist = float(np.linalg.norm(post.variances - prior_var))
    err = expected_error(vp, dataset, arch, prior)
    kl = kl_to_prior(vp)
    nll = err + 0.5 * dataset.n * math.log(2.0 * math.pi * prior.sigma2_noise)
    cx = c_x(dataset, arch, prior)
    bound_max, violations = float("nan"), 0
    if arch.activation is Activation.ERF:
        report = bound_check(vp, arch, prior, dataset, grid)
        bound_max = float(report.bound.max())
        if report.premise_holds:
            violations = int(np.sum(report.mean_abs > report.bound))
    return RunRecord(
        dataset=config.dataset.label,
        activation=arch.activation.value,
        width=arch.width,
        seed=seed,
        status="ok",
        elbo=-(nll + kl),
        kl=kl,
        expected_nll=nll,
        c_x=cx,
        loss=err + kl,
        loss_premise_holds=bool(err + kl <= cx),
        mean_dist=mean_dist,
        var_dist=var_dist,
        bound_max=bound_max,
        mean_abs_max=float(np.max(np.abs(post.means))),
        bound_violations=violations,
        sigma2_dev_median=float(np.median(np.abs(vp.sigma2 - 1.0))),
    )


def run_cell(config: ExperimentConfig, width: int, seed: int):
    """Train and summarise one (width, seed) cell; returns ``(record, seconds)``."""
    start = time.perf_counter()
    dataset = make_dataset(config.dataset)
    try:
        arch, (vp, _) = _train(config, dataset, width, seed)
        record = summarize_run(config, dataset, arch, vp, seed)
    except TrainingDiverged as exc:
        log.warning("width %d seed %d diverged: %s", width, seed, exc)
        nan = float("nan")
        record = RunRecord(
            config.dataset.label, config.activation.value, width, seed, "diverged",
            nan, nan, nan, c_x(dataset, _arch(config, dataset, width), config.prior),
            nan, False, nan, nan, nan, nan, 0, nan,
        )
    return record, time.perf_counter() - start


def _cell_job(args):
    return run_cell(*args)


def run_convergence(config: ExperimentConfig, out_dir=None):
    """Sweep every (width, seed) cell and write ``convergence.csv``.

    Rows are in canonical (dataset, activation, width, seed) order whatever
    the execution order. Returns ``(records, csv_path)``.
    """
    out = Path(out_dir or config.out_dir)
    jobs = [(config, w, s) for w in config.widths for s in config.seeds]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_cell_job(job))
            rec = results[-1][0]
            log.info("width=%d seed=%d mean_dist=%.4g var_dist=%.4g", rec.width, rec.seed, rec.mean_dist, rec.var_dist)
    results.sort(key=lambda pair: pair[0].sort_key)
    records = [r for r, _ in results]
    stem = f"convergence_{config.dataset.label}_{config.activation.value}"
    path = csvio.write_rows(out / f"{stem}.csv", RunRecord.columns(), [r.to_row() for r in records])
    csvio.write_rows(
        out / f"{stem}_timing.csv",
        ["dataset", "activation", "width", "seed", "wall_time"],
        [(r.dataset, r.activation, r.width, r.seed, t) for r, t in results],
    )
    return records, path


def read_convergence(path) -> list[RunRecord]:
    header, rows = csvio.read_rows(path)
    if header != RunRecord.columns():
        raise ValueError(f"{path}: not a convergence CSV")
    return [RunRecord.from_row(r) for r in rows]


def _nngp_kind(config: ExperimentConfig, seed: int) -> KernelKind:
    return KernelKind.for_activation(config.activation, config.tanh_kernel_samples, seed)


PRIOR_MOMENT_COLUMNS = [
    "model", "width", "x", "mean", "variance", "mean_se", "var_se", "nngp_variance",
]
UPCROSS_COLUMNS = ["model", "width", "bin_lo", "bin_hi", "count"]
UPCROSS_SUMMARY_COLUMNS = ["model", "width", "n_functions", "mean_count", "se_count"]


def _gp_prior_samples(config, X, n, seed):
    kind = _nngp_kind(config, seed)
    cov = kernel_matrix(config.prior, X, X, kind)
    for jitter in (1e-10, 1e-8, 1e-6, 1e-4):
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(len(X)))
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise np.linalg.LinAlgError("NNGP prior covariance is not numerically PSD")
    z = np.random.default_rng(prior_seed(seed, 0)).standard_normal((n, len(X)))
    return z @ chol.T


def _upcross_stats(fine, samples, edges):
    counts = np.zeros(len(edges) - 1, dtype=int)
    per_fn = np.empty(samples.shape[0])
    for i, f in enumerate(samples):
        locs = upcrossings(fine[:, 0], f)
        per_fn[i] = len(locs)
        if locs:
            counts += np.histogram(locs, bins=edges)[0]
    return counts, per_fn


def run_prior_check(config: ExperimentConfig, out_dir=None):
    """Prior predictive moments per width, NNGP variances and upcrossing histograms.

    Writes ``prior_moments_*.csv``, ``prior_upcrossings_*.csv`` and
    ``prior_upcrossing_summary_*.csv``; returns the three paths.
    """
    out = Path(out_dir or config.out_dir)
    dataset = make_dataset(config.dataset)
    grid = make_grid(dataset, config.grid_points, config.grid_padding)
    fine = np.linspace(grid[0, 0], grid[-1, 0], config.upcross_points)[:, None]
    edges = np.linspace(grid[0, 0], grid[-1, 0], config.upcross_bins + 1)
    seed = config.seeds[0]
    kind = _nngp_kind(config, seed)
    nngp_var = kernel_diag(config.prior, grid, kind)
    moment_rows, hist_rows, summary_rows = [], [], []

    def add_upcross(model, width, samples):
        counts, per_fn = _upcross_stats(fine, samples, edges)
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            hist_rows.append((model, width, float(lo), float(hi), int(c)))
        se = float(per_fn.std(ddof=1) / math.sqrt(len(per_fn)))
        summary_rows.append((model, width, len(per_fn), float(per_fn.mean()), se))

    for width in config.widths:
        arch = _arch(config, dataset, width)
        mom = prior_predictive_moments(arch, config.prior, grid, config.function_samples, prior_seed(seed, width))
        for i in range(grid.shape[0]):
            moment_rows.append((
                "bnn", width, float(grid[i, 0]), mom.means[i], mom.variances[i],
                mom.mean_se[i], mom.var_se[i], nngp_var[i],
            ))
        fns = prior_function_samples(
            arch, config.prior, fine, config.function_samples, prior_seed(seed, width) + [1]
        )
        add_upcross("bnn", width, fns)
    gp_fns = _gp_prior_samples(config, fine, config.function_samples, seed)
    add_upcross("nngp", 0, gp_fns)
    for i in range(grid.shape[0]):
        moment_rows.append(("nngp", 0, float(grid[i, 0]), 0.0, nngp_var[i], 0.0, 0.0, nngp_var[i]))

    tag = f"{config.dataset.label}_{config.activation.value}"
    return (
        csvio.write_rows(out / f"prior_moments_{tag}.csv", PRIOR_MOMENT_COLUMNS, moment_rows),
        csvio.write_rows(out / f"prior_upcrossings_{tag}.csv", UPCROSS_COLUMNS, hist_rows),
        csvio.write_rows(out / f"prior_upcrossing_summary_{tag}.csv", UPCROSS_SUMMARY_COLUMNS, summary_rows),
    )


POSTERIOR_COLUMNS = [
    "x",
    "post_mean", "post_var",
    "post_mean_exact", "post_var_exact",
    "prior_mean", "prior_var",
    "nngp_mean", "nngp_var",
]
N_SHOWN_SAMPLES = 5


def run_posterior(config: ExperimentConfig, width: int, seed: int, out_dir=None, n_shown: int = N_SHOWN_SAMPLES):
    """Trained MFVI predictive, prior predictive and NNGP posterior on the grid.

    Also writes the standardised training data next to it. Returns the
    predictive CSV path.
    """
    out = Path(out_dir or config.out_dir)
    dataset = make_dataset(config.dataset)
    grid = make_grid(dataset, config.grid_points, config.grid_padding)
    arch, (vp, trace) = _train(config, dataset, width, seed)
    post = posterior_predictive(
        vp, arch, config.prior, grid, config.function_samples, [seed & 0xFFFFFFFF, 3, width], keep_samples=True
    )
    exact = predictive_moments_exact(vp, arch, config.prior, grid)
    prior_mom = prior_predictive_moments(arch, config.prior, grid, config.function_samples, prior_seed(seed, width))
    gp = gp_fit(dataset.X, dataset.y, _nngp_kind(config, seed), config.prior)
    gp_mean, gp_var = gp_predict(gp, grid)
    shown = post.samples[:n_shown]
    header = POSTERIOR_COLUMNS + [f"sample_{i}" for i in range(shown.shape[0])]
    rows = []
    for i in range(grid.shape[0]):
        rows.append([
            float(grid[i, 0]),
            post.means[i], post.variances[i],
            exact.means[i], exact.variances[i],
            prior_mom.means[i], prior_mom.variances[i],
            gp_mean[i], gp_var[i],
        ] + [shown[j, i] for j in range(shown.shape[0])])
    tag = f"{config.dataset.label}_{config.activation.value}_K{width}_s{seed}"
    csvio.write_rows(out / f"data_{config.dataset.label}.csv", ["x", "y"], zip(dataset.X[:, 0], dataset.y))
    csvio.write_rows(out / f"trace_{tag}.csv", list(trace.COLUMNS), trace.rows())
    return csvio.write_rows(out / f"posterior_{tag}.csv", header, rows)


PARAM_DENSITY_COLUMNS = ["group", "stat", "n"] + [f"q{int(round(q * 100)):02d}" for q in QUANTILES]


def param_quantile_rows(arch: Architecture, vp: VariationalParams) -> list:
    rows = []
    for stat, values in (("mean", vp.mu), ("variance", vp.sigma2)):
        w1, b1, w2 = arch.split(values)
        for group, arr in (("w1", w1.ravel()), ("b1", b1), ("w2", w2)):
            qs = np.quantile(arr, QUANTILES)
            rows.append([group, stat, int(arr.size)] + [float(q) for q in qs])
    return rows


def run_param_density(config: ExperimentConfig, width: int, seed: int, out_dir=None):
    """Quantile summary of the trained variational means and variances per group."""
    out = Path(out_dir or config.out_dir)
    dataset = make_dataset(config.dataset)
    arch, (vp, _) = _train(config, dataset, width, seed)
    tag = f"{config.dataset.label}_{config.activation.value}_K{width}_s{seed}"
    return csvio.write_rows(out / f"param_density_{tag}.csv", PARAM_DENSITY_COLUMNS, param_quantile_rows(arch, vp))


BOUND_COLUMNS = ["x", "mean_abs", "bound", "c_x_xstar", "within_bound"]
BOUND_SUMMARY_COLUMNS = [
    "dataset", "width", "seed", "c_x", "loss", "kl", "premise_holds", "holds",
    "w1_budget_used", "w1_budget", "b1_budget_used", "b1_budget", "w2_budget_used", "w2_budget",
]


def run_bound_check(config: ExperimentConfig, width: int, seed: int, out_dir=None):
    """Train one erf model and tabulate the posterior-mean bound over the grid."""
    if config.activation is not Activation.ERF:
        raise ValueError("bound-check applies to the erf activation only")
    out = Path(out_dir or config.out_dir)
    dataset = make_dataset(config.dataset)
    grid = make_grid(dataset, config.grid_points, config.grid_padding)
    arch, (vp, _) = _train(config, dataset, width, seed)
    rep = bound_check(vp, arch, config.prior, dataset, grid)
    tag = f"{config.dataset.label}_K{width}_s{seed}"
    rows = [
        (float(grid[i, 0]), rep.mean_abs[i], rep.bound[i], rep.c_x_xstar[i], bool(rep.mean_abs[i] <= rep.bound[i]))
        for i in range(grid.shape[0])
    ]
    summary = [(
        config.dataset.label, width, seed, rep.c_x, rep.loss_at_params, rep.kl, rep.premise_holds, rep.holds,
        float(rep.w1_budget_used.max()), float(rep.w1_budget.max()), rep.b1_budget_used, rep.b1_budget,
        rep.w2_budget_used, rep.w2_budget,
    )]
    csvio.write_rows(out / f"bound_summary_{tag}.csv", BOUND_SUMMARY_COLUMNS, summary)
    return csvio.write_rows(out / f"bound_{tag}.csv", BOUND_COLUMNS, rows), rep
