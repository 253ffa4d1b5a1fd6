"""Configuration-driven Monte Carlo harness comparing EFCP, VFCP, and the
linear baselines across the synthetic scenarios, with CSV and SVG emission.

Every repetition draws its own counter-based RNG stream from
(seed, repetition, dimension), so reports are identical regardless of how
many workers execute the sweep. Reports are pure functions of
(config, seed); wall-clock timings are logged, not stored, so emitted CSVs
are byte-reproducible.
"""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.random import SeedSequence

from .conformal import efcp, evaluate_coverage, vfcp
from .data import Dataset, SyntheticConfig, gen_linear_t, gen_nonlinear_poisson, sample_mvt, split
from .errors import ConfigError
from .estimators import (
    cqr_beta_grid,
    kde_fit,
    knn_quantile_fit,
    knn_quantile_pair,
    linear_gaussian_interval,
    naive_interval,
)
from .families import cqr_family, density_level_family
from .linear import ThetaDomain, ef_lin, select_theta, vf_lin, aggregate_features
from .ridge import default_lambda_grid, ef_ridge, fit_ridge_path, select_lambda, vf_ridge

logger = logging.getLogger(__name__)

SCENARIOS = ("RidgeLinearT", "RidgePoisson", "CqrPoisson", "DensityLevel", "LinearAggregation")
METHODS = ("EFCP", "VFCP", "Linear", "Naive")

CSV_HEADER = ["rep", "method", "d", "coverage", "width", "threshold", "chosen", "runtime_ms"]
AGG_HEADER = ["method", "d", "mean_coverage", "se_coverage", "mean_width", "se_width"]


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one Monte Carlo comparison run."""

    scenario: str
    alpha: float = 0.1
    n_train: int = 200
    n_test: int = 100
    dims: tuple[int, ...] = (10,)
    nu: float = 3.0
    rho: float = 0.5
    reps: int = 100
    methods: tuple[str, ...] = ("EFCP", "VFCP")
    seed: int = 0
    output_dir: str = "out"
    jobs: int = 1
    # ridge scenarios
    lambda_max: float = 200.0
    n_lambdas: int = 100
    kappa: float = 0.5
    # CQR scenario
    knn_k_grid: tuple[int, ...] = (5, 10, 20)
    n_betas: int = 4
    cqr_variants: tuple[str, ...] = ("V1", "V2", "V3")
    # density scenario
    bandwidths: tuple[float, ...] = (0.1, 0.2, 0.4, 0.8, 1.6)
    grid_resolution: int = 512
    # aggregation scenario
    n_aggregated: int = 4
    theta_budget: int = 600
    # optional external dataset (subsampled per repetition)
    csv_path: str | None = None
    response_column: str | None = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}, expected one of {SCENARIOS}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha={self.alpha} must lie strictly between 0 and 1")
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if not self.methods:
            raise ConfigError("method set must be nonempty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}, expected a subset of {METHODS}")
        dims = tuple(int(d) for d in self.dims)
        if any(b <= a for a, b in zip(dims, dims[1:])):
            raise ConfigError(f"d-sweep {dims} must be strictly increasing")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.scenario == "DensityLevel":
            if any(d > 2 for d in dims):
                raise ConfigError("DensityLevel supports dimension <= 2 (width by grid integration)")
            extra = set(self.methods) - {"EFCP", "VFCP"}
            if extra:
                raise ConfigError(f"DensityLevel supports only EFCP/VFCP, got {sorted(extra)}")
        if self.scenario in ("RidgePoisson", "CqrPoisson") and any(d < 2 for d in dims):
            raise ConfigError("the Poisson model needs d >= 2")
        if self.csv_path is not None and self.response_column is None:
            raise ConfigError("csv_path requires response_column")


@dataclass(frozen=True)
class Row:
    """One (repetition, method, dimension) outcome."""

    rep: int
    method: str
    d: int
    coverage: float
    width: float
    threshold: float
    chosen: str
    runtime_ms: float | None = None


@dataclass(frozen=True)
class AggregateRow:
    method: str
    d: int
    mean_coverage: float
    se_coverage: float
    mean_width: float
    se_width: float


@dataclass(frozen=True)
class ExperimentReport:
    """All per-repetition rows plus per-(method, d) aggregates."""

    rows: tuple[Row, ...]
    aggregates: tuple[AggregateRow, ...]
    alpha: float
    methods: tuple[str, ...]
    dims: tuple[int, ...]


def _cell_seeds(seed: int, rep: int, d: int) -> tuple[int, int]:
    state = SeedSequence(entropy=[seed, rep, d]).generate_state(2, np.uint64)
    return int(state[0]), int(state[1])


def _third_sizes(n: int) -> tuple[int, int, int]:
    lo = n // 3
    return (n - 2 * lo, lo, lo)


def _three_way(train: Dataset, split_seed: int) -> tuple[Dataset, Dataset, Dataset]:
    plan = split(train.n, _third_sizes(train.n), split_seed)
    return tuple(train.subset(p) for p in plan.parts)


def _merge(a: Dataset, b: Dataset) -> Dataset:
    return Dataset(np.vstack([a.x, b.x]), np.concatenate([a.y, b.y]))


def _make_data(cfg: ExperimentConfig, d: int, data_seed: int) -> tuple[Dataset, Dataset]:
    if cfg.csv_path is not None:
        from .data import load_csv, rng_stream

        full = load_csv(cfg.csv_path, cfg.response_column)
        want = cfg.n_train + cfg.n_test
        if full.n < want:
            raise ConfigError(f"CSV has {full.n} rows, need n_train + n_test = {want}")
        idx = rng_stream(data_seed).choice(full.n, size=want, replace=False)
        return full.subset(idx[: cfg.n_train]), full.subset(idx[cfg.n_train:])
    model = "NonlinearPoisson" if cfg.scenario in ("RidgePoisson", "CqrPoisson") else "LinearT"
    scfg = SyntheticConfig(model=model, d=d, nu=cfg.nu, rho=cfg.rho,
                           n_train=cfg.n_train, n_test=cfg.n_test, seed=data_seed)
    gen = gen_nonlinear_poisson if model == "NonlinearPoisson" else gen_linear_t
    return gen(scfg)


def _baseline_rows(cfg: ExperimentConfig, rep: int, d: int,
                   train: Dataset, test: Dataset) -> dict[str, Row]:
    out = {}
    for method, build in (("Linear", linear_gaussian_interval), ("Naive", naive_interval)):
        if method not in cfg.methods:
            continue
        interval = build(train, cfg.alpha)
        cov = float(np.mean(interval.contains(test.x, test.y)))
        hw = interval.half_width(test.x)
        out[method] = Row(rep=rep, method=method, d=d, coverage=cov,
                          width=float(np.mean(2.0 * hw)),
                          threshold=float(hw[0]) if np.ptp(hw) == 0 else float(np.mean(hw)),
                          chosen="")
    return out


def _ridge_cell(cfg: ExperimentConfig, rep: int, d: int) -> dict[str, Row]:
    data_seed, split_seed = _cell_seeds(cfg.seed, rep, d)
    train, test = _make_data(cfg, d, data_seed)
    d1, d2, d3 = _three_way(train, split_seed)
    grid = np.linspace(0.0, cfg.lambda_max, cfg.n_lambdas)
    path = fit_ridge_path(d1, grid, kappa=cfg.kappa)

    rows = _baseline_rows(cfg, rep, d, train, test)
    if "EFCP" in cfg.methods:
        sel = select_lambda(path, _merge(d2, d3), cfg.alpha)
        rep_cov = evaluate_coverage(ef_ridge(sel, path), test)
        rows["EFCP"] = Row(rep, "EFCP", d, rep_cov.coverage, rep_cov.mean_width,
                           sel.t_alpha, f"{sel.lambda_hat:g}")
    if "VFCP" in cfg.methods:
        sel = select_lambda(path, d2, cfg.alpha)
        pred = vf_ridge(sel, path, d3, cfg.alpha)
        rep_cov = evaluate_coverage(pred, test)
        rows["VFCP"] = Row(rep, "VFCP", d, rep_cov.coverage, rep_cov.mean_width,
                           pred.threshold, f"{sel.lambda_hat:g}")
    return rows


def _cqr_cell(cfg: ExperimentConfig, rep: int, d: int) -> dict[str, Row]:
    data_seed, split_seed = _cell_seeds(cfg.seed, rep, d)
    train, test = _make_data(cfg, d, data_seed)
    d1, d2, d3 = _three_way(train, split_seed)

    families = []
    for k in cfg.knn_k_grid:
        model = knn_quantile_fit(d1, min(k, d1.n))
        for beta in cqr_beta_grid(cfg.alpha, cfg.n_betas):
            pair = knn_quantile_pair(model, float(beta))
            for variant in cfg.cqr_variants:
                families.append(cqr_family(variant, pair,
                                           label=f"{variant}|k={k}|beta={beta:.4g}"))

    rows = _baseline_rows(cfg, rep, d, train, test)
    if "EFCP" in cfg.methods:
        sel = efcp(families, _merge(d2, d3), cfg.alpha)
        rep_cov = evaluate_coverage(sel.efcp_set, test)
        rows["EFCP"] = Row(rep, "EFCP", d, rep_cov.coverage, rep_cov.mean_width,
                           sel.efcp_set.threshold, sel.efcp_set.family.label)
    if "VFCP" in cfg.methods:
        sel = vfcp(families, d2, d3, cfg.alpha)
        rep_cov = evaluate_coverage(sel.vfcp_set, test)
        rows["VFCP"] = Row(rep, "VFCP", d, rep_cov.coverage, rep_cov.mean_width,
                           sel.vfcp_set.threshold, sel.vfcp_set.family.label)
    return rows


def _density_cell(cfg: ExperimentConfig, rep: int, d: int) -> dict[str, Row]:
    data_seed, split_seed = _cell_seeds(cfg.seed, rep, d)
    points = sample_mvt(cfg.n_train + cfg.n_test, d, cfg.nu, np.eye(d), data_seed)
    train = Dataset(points[: cfg.n_train], np.zeros(cfg.n_train))
    test = Dataset(points[cfg.n_train:], np.zeros(cfg.n_test))
    d1, d2, d3 = _three_way(train, split_seed)

    pad = 4.0 * max(cfg.bandwidths)
    box = [(float(d1.x[:, j].min() - pad), float(d1.x[:, j].max() + pad)) for j in range(d)]
    families = []
    for h in cfg.bandwidths:
        model = kde_fit(d1.x, h)
        families.append(density_level_family(model.density, box, cfg.grid_resolution,
                                             label=f"h={h:g}"))

    rows: dict[str, Row] = {}
    if "EFCP" in cfg.methods:
        sel = efcp(families, _merge(d2, d3), cfg.alpha)
        rep_cov = evaluate_coverage(sel.efcp_set, test)
        rows["EFCP"] = Row(rep, "EFCP", d, rep_cov.coverage, rep_cov.mean_width,
                           sel.efcp_set.threshold, sel.efcp_set.family.label)
    if "VFCP" in cfg.methods:
        sel = vfcp(families, d2, d3, cfg.alpha)
        rep_cov = evaluate_coverage(sel.vfcp_set, test)
        rows["VFCP"] = Row(rep, "VFCP", d, rep_cov.coverage, rep_cov.mean_width,
                           sel.vfcp_set.threshold, sel.vfcp_set.family.label)
    return rows


def _aggregation_cell(cfg: ExperimentConfig, rep: int, d: int) -> dict[str, Row]:
    data_seed, split_seed = _cell_seeds(cfg.seed, rep, d)
    train, test = _make_data(cfg, d, data_seed)
    d1, d2, d3 = _three_way(train, split_seed)

    # base predictors: ridge fits at spread-out penalties, trained on the first fold
    pred_lambdas = [0.0] + [5.0 * 4.0 ** i for i in range(cfg.n_aggregated - 1)]
    path = fit_ridge_path(d1, pred_lambdas, kappa=cfg.kappa)
    mus = [(lambda x, b=beta: x @ b) for beta in path.betas]
    domain = ThetaDomain.simplex(len(mus))

    z2 = aggregate_features(mus, d2)
    z3 = aggregate_features(mus, d3)
    ztest = aggregate_features(mus, test)

    rows = _baseline_rows(cfg, rep, d, train, test)
    if "EFCP" in cfg.methods:
        sel = select_theta(domain, _merge(z2, z3), cfg.alpha, budget=cfg.theta_budget,
                           seed=data_seed)
        rep_cov = evaluate_coverage(ef_lin(sel), ztest)
        rows["EFCP"] = Row(rep, "EFCP", d, rep_cov.coverage, rep_cov.mean_width,
                           sel.t_alpha, f"{np.linalg.norm(sel.theta_hat):.6g}")
    if "VFCP" in cfg.methods:
        sel = select_theta(domain, z2, cfg.alpha, budget=cfg.theta_budget, seed=data_seed)
        pred = vf_lin(sel, z3, cfg.alpha)
        rep_cov = evaluate_coverage(pred, ztest)
        rows["VFCP"] = Row(rep, "VFCP", d, rep_cov.coverage, rep_cov.mean_width,
                           pred.threshold, f"{np.linalg.norm(sel.theta_hat):.6g}")
    return rows


_CELLS = {
    "RidgeLinearT": _ridge_cell,
    "RidgePoisson": _ridge_cell,
    "CqrPoisson": _cqr_cell,
    "DensityLevel": _density_cell,
    "LinearAggregation": _aggregation_cell,
}


def _run_cell(args) -> list[Row]:
    cfg, rep, d = args
    try:
        by_method = _CELLS[cfg.scenario](cfg, rep, d)
        rows = [by_method[m] for m in cfg.methods]
    except Exception as exc:  # record, never abort the sweep
        logger.warning("repetition %d (d=%d) failed: %s", rep, d, exc)
        rows = [Row(rep, m, d, float("nan"), float("nan"), float("nan"),
                    f"error:{type(exc).__name__}") for m in cfg.methods]
    return rows


def aggregate_rows(rows, methods, dims) -> tuple[AggregateRow, ...]:
    """Per-(method, d) mean and standard error, skipping error-marked rows."""
    out = []
    for method in methods:
        for d in dims:
            cov = np.array([r.coverage for r in rows
                            if r.method == method and r.d == d and not r.chosen.startswith("error:")])
            wid = np.array([r.width for r in rows
                            if r.method == method and r.d == d and not r.chosen.startswith("error:")])
            if cov.size == 0:
                out.append(AggregateRow(method, d, float("nan"), float("nan"),
                                        float("nan"), float("nan")))
                continue
            se_c = float(np.std(cov, ddof=1) / np.sqrt(cov.size)) if cov.size > 1 else 0.0
            se_w = float(np.std(wid, ddof=1) / np.sqrt(wid.size)) if wid.size > 1 else 0.0
            out.append(AggregateRow(method, d, float(np.mean(cov)), se_c,
                                    float(np.mean(wid)), se_w))
    return tuple(out)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Execute the configured sweep and return its report.

    Repetitions run independently (optionally across ``cfg.jobs`` worker
    processes); each derives its RNG stream from (seed, rep, d), so the
    report is identical for any worker count. Per-repetition failures are
    recorded as error rows rather than aborting.
    """
    t0 = time.perf_counter()
    tasks = [(cfg, rep, d) for rep in range(cfg.reps) for d in cfg.dims]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            cell_rows = list(pool.map(_run_cell, tasks, chunksize=max(1, len(tasks) // (4 * cfg.jobs))))
    else:
        cell_rows = [_run_cell(t) for t in tasks]

    method_pos = {m: i for i, m in enumerate(cfg.methods)}
    dim_pos = {d: i for i, d in enumerate(cfg.dims)}
    rows = sorted((r for cell in cell_rows for r in cell),
                  key=lambda r: (r.rep, method_pos[r.method], dim_pos[r.d]))
    aggregates = aggregate_rows(rows, cfg.methods, cfg.dims)
    logger.info("%s: %d rows in %.1f s", cfg.scenario, len(rows), time.perf_counter() - t0)
    _plausibility_gate(rows, aggregates, cfg)
    return ExperimentReport(rows=tuple(rows), aggregates=aggregates, alpha=cfg.alpha,
                            methods=cfg.methods, dims=cfg.dims)


def _plausibility_gate(rows, aggregates, cfg: ExperimentConfig) -> None:
    for r in rows:
        if not r.chosen.startswith("error:") and not 0.0 <= r.coverage <= 1.0:
            raise RuntimeError(f"coverage {r.coverage} outside [0, 1] in rep {r.rep}")
    for a in aggregates:
        if a.method != "VFCP" or np.isnan(a.mean_coverage):
            continue
        n_eff = cfg.reps * cfg.n_test
        se = np.sqrt(cfg.alpha * (1 - cfg.alpha) / n_eff)
        if a.mean_coverage < 1.0 - cfg.alpha - 3.0 * se:
            logger.warning("VFCP aggregate coverage %.4f at d=%d is below %.4f",
                           a.mean_coverage, a.d, 1.0 - cfg.alpha - 3.0 * se)


def _fmt(x: float) -> str:
    return repr(float(x))


def emit_csv(report: ExperimentReport, path) -> None:
    """Write rows then aggregates; identical reports yield identical bytes."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in report.rows:
            writer.writerow([r.rep, r.method, r.d, _fmt(r.coverage), _fmt(r.width),
                             _fmt(r.threshold), r.chosen,
                             "" if r.runtime_ms is None else _fmt(r.runtime_ms)])
        writer.writerow([])
        writer.writerow(AGG_HEADER)
        for a in report.aggregates:
            writer.writerow([a.method, a.d, _fmt(a.mean_coverage), _fmt(a.se_coverage),
                             _fmt(a.mean_width), _fmt(a.se_width)])


def load_report_csv(path, alpha: float = 0.1) -> ExperimentReport:
    """Parse a CSV produced by ``emit_csv`` back into a report."""
    rows, aggregates = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ConfigError(f"unexpected header {header}")
        section = "rows"
        for rec in reader:
            if not rec:
                section = "agg_header"
                continue
            if section == "agg_header":
                if rec != AGG_HEADER:
                    raise ConfigError(f"unexpected aggregate header {rec}")
                section = "agg"
                continue
            if section == "rows":
                rows.append(Row(rep=int(rec[0]), method=rec[1], d=int(rec[2]),
                                coverage=float(rec[3]), width=float(rec[4]),
                                threshold=float(rec[5]), chosen=rec[6],
                                runtime_ms=None if rec[7] == "" else float(rec[7])))
            else:
                aggregates.append(AggregateRow(method=rec[0], d=int(rec[1]),
                                               mean_coverage=float(rec[2]),
                                               se_coverage=float(rec[3]),
                                               mean_width=float(rec[4]),
                                               se_width=float(rec[5])))
    methods = tuple(dict.fromkeys(r.method for r in rows))
    dims = tuple(sorted({r.d for r in rows}))
    return ExperimentReport(rows=tuple(rows), aggregates=tuple(aggregates), alpha=alpha,
                            methods=methods, dims=dims)


def emit_plot(report: ExperimentReport, path) -> None:
    """Coverage and width-ratio panels with mean +/- SE ribbons, saved as SVG.

    The coverage panel draws a horizontal reference at 1 - alpha; the ratio
    panel divides each method's mean width by VFCP's (so VFCP sits at 1).
    Single-dimension reports get bar panels instead of lines.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    agg = {(a.method, a.d): a for a in report.aggregates}
    dims = list(report.dims)
    ref_method = "VFCP" if "VFCP" in report.methods else report.methods[0]
    fig, (ax_cov, ax_ratio) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)

    for method in report.methods:
        mean_cov = np.array([agg[(method, d)].mean_coverage for d in dims])
        se_cov = np.array([agg[(method, d)].se_coverage for d in dims])
        ref_w = np.array([agg[(ref_method, d)].mean_width for d in dims])
        mean_ratio = np.array([agg[(method, d)].mean_width for d in dims]) / ref_w
        se_ratio = np.array([agg[(method, d)].se_width for d in dims]) / ref_w
        if len(dims) > 1:
            ax_cov.plot(dims, mean_cov, marker="o", label=method)
            ax_cov.fill_between(dims, mean_cov - se_cov, mean_cov + se_cov, alpha=0.25)
            ax_ratio.plot(dims, mean_ratio, marker="o", label=method)
            ax_ratio.fill_between(dims, mean_ratio - se_ratio, mean_ratio + se_ratio, alpha=0.25)
        else:
            pos = list(report.methods).index(method)
            ax_cov.bar([pos], mean_cov, yerr=se_cov, label=method)
            ax_ratio.bar([pos], mean_ratio, yerr=se_ratio, label=method)
    if len(dims) == 1:
        for ax in (ax_cov, ax_ratio):
            ax.set_xticks(range(len(report.methods)))
            ax.set_xticklabels(report.methods)
    else:
        ax_ratio.set_xlabel("dimension")
    ax_cov.axhline(1.0 - report.alpha, color="black", linestyle="--", linewidth=1,
                   label=f"target {1.0 - report.alpha:g}")
    ax_cov.set_ylabel("coverage")
    ax_ratio.set_ylabel(f"width ratio vs {ref_method}")
    ax_cov.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines ('#' comments) into a raw dictionary."""
    raw = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            raw[key] = value
    return raw


_INT_KEYS = {"n_train", "n_test", "reps", "seed", "jobs", "n_lambdas", "n_betas",
             "grid_resolution", "n_aggregated", "theta_budget"}
_FLOAT_KEYS = {"alpha", "nu", "rho", "lambda_max", "kappa"}
_STR_KEYS = {"scenario", "output_dir", "csv_path", "response_column"}


def make_config(raw: dict, **overrides) -> ExperimentConfig:
    """Build an ExperimentConfig from a raw key/value mapping plus overrides."""
    kwargs = {}
    for key, value in raw.items():
        if key in _INT_KEYS:
            kwargs[key] = int(value)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(value)
        elif key in _STR_KEYS:
            kwargs[key] = value
        elif key == "d":
            kwargs["dims"] = tuple(int(v) for v in value.split(","))
        elif key == "methods":
            kwargs["methods"] = tuple(v.strip() for v in value.split(","))
        elif key == "knn_k_grid":
            kwargs["knn_k_grid"] = tuple(int(v) for v in value.split(","))
        elif key == "cqr_variants":
            kwargs["cqr_variants"] = tuple(v.strip() for v in value.split(","))
        elif key == "bandwidths":
            kwargs["bandwidths"] = tuple(float(v) for v in value.split(","))
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    if "scenario" not in kwargs:
        raise ConfigError("configuration must set 'scenario'")
    return ExperimentConfig(**kwargs)
