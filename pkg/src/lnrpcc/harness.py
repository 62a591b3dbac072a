"""Noise-sweep experiments: repeated trials, parameter tuning, result tables.

Seeds are derived hierarchically from ``ExperimentSpec.seed`` with
:class:`numpy.random.SeedSequence` spawn keys:

* ``(fraction, trial, 0)`` draws the labeled subset and the noise;
* ``(fraction, trial, 1 + method, 1, candidate, r)`` seeds tuning run ``r``;
* ``(fraction, trial, 1 + method, 2, r)`` seeds evaluation repeat ``r``;
* beta sweeps add the beta value to the evaluation key.

``fraction``, ``trial`` and ``method`` are positions in the spec's lists, so
a run never consumes another run's stream and results do not depend on the
worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baselines, engine
from .datasets import (
    Dataset,
    LabelConfig,
    gen_gaussians,
    inject_label_noise,
    load_builtin,
    load_csv,
    sample_labeled_subset,
    zscore_normalize,
)
from .graph import GraphPolicy, NeighborOrder, build_graph

log = logging.getLogger(__name__)

PCC_METHODS = ("PCC1", "PCC2", "PCC3", "LNR")
DIFFUSION_METHODS = ("LGC", "LP")
METHODS = ("LGC", "LP", "PCC1", "PCC2", "PCC3", "LNR")
GRAPH_FOR = {"PCC1": "knn_or", "PCC2": "knn_or", "PCC3": "knn_pcc3", "LNR": "knn_lnr"}
WORKERS_ENV = "LNRPCC_WORKERS"

DEFAULT_K_GRID = list(range(3, 26, 2))
DEFAULT_SIGMA_GRID = [float(s) for s in np.logspace(-2, 1, 13)]


class ExperimentError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    dataset: str = "iris"
    label_column: int | str = -1
    normalize: bool = True
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    l: int = 40  # noqa: E741
    noise_fractions: list[float] = field(default_factory=lambda: [0.0])
    trials: int = 50
    repeats: int = 20
    tune_repeats: int = 1
    k_grid: list[int] = field(default_factory=lambda: list(DEFAULT_K_GRID))
    sigma_grid: list[float] = field(default_factory=lambda: list(DEFAULT_SIGMA_GRID))
    seed: int = 0
    metric: str = "unlabeled"
    splits: str | None = None
    p_grd: float = 0.5
    delta_v: float = 0.1
    delta_rho: float = 0.1
    alpha: float = 2000.0
    beta: int = 10
    max_total_iterations: int = 500_000
    workers: int = 1
    trace_dir: str | None = None

    def validate(self) -> None:
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ExperimentError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        if not self.methods:
            raise ExperimentError("no methods requested")
        if not self.noise_fractions:
            raise ExperimentError("no noise fractions requested")
        if any(not 0.0 <= f <= 1.0 for f in self.noise_fractions):
            raise ExperimentError("noise fractions must lie in [0, 1]")
        if self.trials < 1 or self.repeats < 1 or self.tune_repeats < 1:
            raise ExperimentError("trials, repeats and tune_repeats must be at least 1")
        if any(m in PCC_METHODS for m in self.methods) and not self.k_grid:
            raise ExperimentError("empty k grid")
        if any(m in DIFFUSION_METHODS for m in self.methods) and not self.sigma_grid:
            raise ExperimentError("empty sigma grid")
        if self.metric not in ("unlabeled", "all"):
            raise ExperimentError(f"unknown metric {self.metric!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentSpec:
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ExperimentError(f"unknown spec keys {sorted(unknown)}")
        return cls(**d)

    def variant_config(self, method: str, beta: int | None = None) -> engine.VariantConfig:
        return engine.VariantConfig(
            variant=method,
            p_grd=self.p_grd,
            delta_v=self.delta_v,
            delta_rho=self.delta_rho,
            alpha=self.alpha,
            beta=self.beta if beta is None else beta,
            max_total_iterations=self.max_total_iterations,
        )


@dataclass
class ResultRow:
    method: str
    noise: float
    mean_error: float
    std_error: float
    trials: int
    tuned: list
    mean_iterations: float
    mean_wall_time: float
    relabel_error: float | None = None
    trial_errors: list[float] = field(default_factory=list)
    beta: int | None = None


@dataclass
class ResultTable:
    rows: list[ResultRow]
    spec: dict = field(default_factory=dict)
    key: str = "noise"

    def row(self, method: str, noise: float | None = None, beta: int | None = None) -> ResultRow:
        for r in self.rows:
            if r.method != method:
                continue
            if noise is not None and not np.isclose(r.noise, noise):
                continue
            if beta is not None and r.beta != beta:
                continue
            return r
        raise KeyError((method, noise, beta))

    def to_dict(self) -> dict:
        return {"key": self.key, "spec": self.spec, "rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, d: dict) -> ResultTable:
        return cls([ResultRow(**r) for r in d["rows"]], d.get("spec", {}), d.get("key", "noise"))

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_json(cls, path) -> ResultTable:
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- context


def load_dataset(spec: ExperimentSpec) -> Dataset:
    src = spec.dataset
    if src.startswith("gauss"):
        opts = {"n_per_class": 250, "c": 4, "dims": 2, "spacing": 3.0}
        if ":" in src:
            for item in src.split(":", 1)[1].split(","):
                key, _, val = item.partition("=")
                if key not in opts:
                    raise ExperimentError(f"unknown gauss option {key!r}")
                opts[key] = type(opts[key])(val)
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(2**31,)))
        d = gen_gaussians(rng=rng, **opts)
    elif src in ("iris", "wine", "digits"):
        d = load_builtin(src)
    else:
        d = load_csv(src, spec.label_column)
    return zscore_normalize(d) if spec.normalize else d


def load_splits(path) -> list[np.ndarray]:
    """JSON list of labeled-index lists, one per trial (cycled)."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data["splits"]
    return [np.asarray(s, dtype=np.int64) for s in data]


class Context:
    """Per-dataset data shared by every trial: features, neighbour order, distances."""

    def __init__(self, spec: ExperimentSpec, dataset: Dataset | None = None):
        self.spec = spec
        self.data = load_dataset(spec) if dataset is None else dataset
        self.order = NeighborOrder(self.data.features)
        self.sqdist = self.order.dist**2
        self.splits = load_splits(spec.splits) if spec.splits else None

    def with_spec(self, spec: ExperimentSpec) -> Context:
        """Same data under a different spec (same dataset source assumed)."""
        other = object.__new__(Context)
        other.__dict__.update(self.__dict__)
        other.spec = spec
        other.splits = load_splits(spec.splits) if spec.splits else None
        return other

    def split(self, fi: int, trial: int) -> LabelConfig:
        spec = self.spec
        ss = np.random.SeedSequence(spec.seed, spawn_key=(fi, trial, 0))
        rng = np.random.default_rng(ss)
        if self.splits is not None:
            cfg = LabelConfig.from_indices(self.data, self.splits[trial % len(self.splits)])
        else:
            cfg = sample_labeled_subset(self.data, spec.l, rng)
        q = int(np.floor(spec.noise_fractions[fi] * cfg.l + 0.5))
        # redraw until every class keeps a given label, so each class has a particle
        for _ in range(1000):
            noisy = inject_label_noise(cfg, q, self.data.c, rng)
            if len(np.unique(noisy.given_labels[noisy.labeled_mask])) == self.data.c:
                break
        else:
            raise ExperimentError(f"q={q} noisy labels leave some class without a labeled sample")
        noisy.seed = spec.seed
        return noisy


def run_seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=key).generate_state(1, dtype=np.uint64)[0])


def score(labels: np.ndarray, data: Dataset, cfg: LabelConfig, metric: str = "unlabeled") -> float:
    """Misclassification rate against ground truth; ``unlabeled`` skips the labeled subset."""
    wrong = labels != data.true_labels
    if metric == "all":
        return float(wrong.mean())
    mask = ~cfg.labeled_mask
    return float(wrong[mask].mean()) if mask.any() else 0.0


def relabel_error(labels: np.ndarray, data: Dataset, cfg: LabelConfig) -> float | None:
    """Fraction of corrupted samples still carrying a wrong label in the output."""
    if not cfg.noisy_mask.any():
        return None
    m = cfg.noisy_mask
    return float((labels[m] != data.true_labels[m]).mean())


# ---------------------------------------------------------------- single runs


def classify(ctx: Context, cfg: LabelConfig, method: str, param, seed: int = 0, beta=None, trace=None):
    spec = ctx.spec
    if method in PCC_METHODS:
        g = build_graph(ctx.data.features, cfg, GraphPolicy(GRAPH_FOR[method], k=int(param)), ctx.order)
        vc = spec.variant_config(method, beta)
        return engine.run(g, cfg, vc, seed, features=ctx.data.features, c=ctx.data.c, trace=trace)
    ac = baselines.AffinityConfig(sigma=float(param))
    fn = baselines.lgc_classify if method == "LGC" else baselines.lp_classify
    return fn(ctx.data, cfg, ac, sqdist=ctx.sqdist)


def grid_search(ctx: Context, cfg: LabelConfig, method: str, candidates, seeds=None) -> tuple:
    """Error-minimizing candidate for one split; ties go to the smallest value.

    ``seeds[i]`` lists the run seeds averaged for candidate ``i`` (ignored by
    the deterministic baselines). Returns ``(value, errors per candidate)``.
    """
    candidates = list(candidates)
    if not candidates:
        raise ExperimentError("no candidates to search")
    if len(candidates) == 1:
        return candidates[0], [None]
    errors = []
    for i, value in enumerate(candidates):
        runs = seeds[i] if (seeds is not None and method in PCC_METHODS) else [0]
        errs = [score(classify(ctx, cfg, method, value, s).labels, ctx.data, cfg, ctx.spec.metric) for s in runs]
        errors.append(float(np.mean(errs)))
    best = min(errors)
    ties = [v for v, e in zip(candidates, errors) if e == best]
    return min(ties), errors


def tune_split(ctx: Context, cfg: LabelConfig, fi: int, trial: int, mi: int, method: str):
    """Grid-search ``method`` (position ``mi`` in the spec) on one split."""
    spec = ctx.spec
    if method in PCC_METHODS:
        grid = spec.k_grid
        seeds = [[run_seed(spec.seed, fi, trial, 1 + mi, 1, ci, r) for r in range(spec.tune_repeats)] for ci in range(len(grid))]
    else:
        grid, seeds = spec.sigma_grid, None
    return grid_search(ctx, cfg, method, grid, seeds)


def _evaluate(ctx, cfg, fi, trial, mi, method, value, betas=(None,)):
    """Per-beta lists of (error, relabel error, iterations, wall time)."""
    spec = ctx.spec
    out = {}
    for beta in betas:
        records = []
        n_runs = spec.repeats if method in PCC_METHODS else 1
        for r in range(n_runs):
            key = (fi, trial, 1 + mi, 2, r) if beta is None else (fi, trial, 1 + mi, 2, r, beta)
            trace = None
            if spec.trace_dir and method in PCC_METHODS:
                tag = f"{method}_f{fi}_t{trial}_r{r}" + ("" if beta is None else f"_b{beta}")
                trace = open(Path(spec.trace_dir) / f"trace_{tag}.txt", "w")
            t0 = time.perf_counter()
            try:
                res = classify(ctx, cfg, method, value, run_seed(spec.seed, *key), beta, trace)
            finally:
                if trace is not None:
                    trace.close()
            wall = time.perf_counter() - t0
            records.append(
                (
                    score(res.labels, ctx.data, cfg, spec.metric),
                    relabel_error(res.labels, ctx.data, cfg),
                    res.iterations,
                    wall,
                )
            )
        out[beta] = records
    return out


# ---------------------------------------------------------------- workers

_CTX: Context | None = None


def _init_worker(spec_dict: dict) -> None:
    global _CTX
    _CTX = Context(ExperimentSpec.from_dict(spec_dict))


def _trial_task(args):
    fi, trial, betas = args
    ctx = _CTX
    cfg = ctx.split(fi, trial)
    out = {}
    for mi, method in enumerate(ctx.spec.methods):
        value, _ = tune_split(ctx, cfg, fi, trial, mi, method)
        out[method] = (value, _evaluate(ctx, cfg, fi, trial, mi, method, value, betas or (None,)))
    return (fi, trial), out


def _worker_count(spec: ExperimentSpec) -> int:
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env else max(1, spec.workers)


def _dispatch(spec: ExperimentSpec, tasks, ctx: Context | None):
    global _CTX
    workers = _worker_count(spec)
    results = {}
    if workers == 1:
        _CTX = Context(spec) if ctx is None else ctx.with_spec(spec)
        for i, task in enumerate(tasks, 1):
            key, out = _trial_task(task)
            results[key] = out
            log.info("finished fraction %d trial %d (%d/%d)", key[0], key[1], i, len(tasks))
    else:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(spec.to_dict(),)) as pool:
            for key, out in pool.map(_trial_task, tasks):
                results[key] = out
                log.info("finished fraction %d trial %d", *key)
    return results


def _summarize(method, noise, per_trial, beta=None) -> ResultRow:
    """``per_trial`` holds ``(tuned value, run records)`` per trial, in trial order."""
    trial_errors = [float(np.mean([r[0] for r in recs])) for _, recs in per_trial]
    relabels = [r[1] for _, recs in per_trial for r in recs if r[1] is not None]
    return ResultRow(
        method=method,
        noise=float(noise),
        mean_error=float(np.mean(trial_errors)),
        std_error=float(np.std([r[0] for _, recs in per_trial for r in recs])),
        trials=len(per_trial),
        tuned=[v for v, _ in per_trial],
        mean_iterations=float(np.mean([r[2] for _, recs in per_trial for r in recs])),
        mean_wall_time=float(np.mean([r[3] for _, recs in per_trial for r in recs])),
        relabel_error=float(np.mean(relabels)) if relabels else None,
        trial_errors=trial_errors,
        beta=beta,
    )


def run_experiment(spec: ExperimentSpec, ctx: Context | None = None) -> ResultTable:
    """Every (noise fraction, trial) split, every method: tune, evaluate, aggregate.

    PCC methods report the mean of ``repeats`` fresh runs at the tuned ``k``
    (the tuning runs themselves are discarded); LGC and LP report the error
    at their best ``sigma``.
    """
    spec.validate()
    if spec.trace_dir:
        Path(spec.trace_dir).mkdir(parents=True, exist_ok=True)
    tasks = [(fi, t, None) for fi in range(len(spec.noise_fractions)) for t in range(spec.trials)]
    results = _dispatch(spec, tasks, ctx)
    rows = []
    for method in spec.methods:
        for fi, noise in enumerate(spec.noise_fractions):
            per_trial = []
            for t in range(spec.trials):
                value, recs = results[(fi, t)][method]
                per_trial.append((value, recs[None]))
            rows.append(_summarize(method, noise, per_trial))
    return ResultTable(rows, spec.to_dict(), "noise")


def beta_sweep(spec: ExperimentSpec, betas, ctx: Context | None = None) -> ResultTable:
    """LNR error per reset count at the spec's first noise fraction.

    ``k`` is tuned once per trial at ``spec.beta`` and reused for every beta.
    """
    betas = [int(b) for b in betas]
    if not betas or any(b < 1 for b in betas):
        raise ExperimentError("betas must be positive integers")
    spec = ExperimentSpec.from_dict({**spec.to_dict(), "methods": ["LNR"], "noise_fractions": spec.noise_fractions[:1]})
    spec.validate()
    tasks = [(0, t, betas) for t in range(spec.trials)]
    results = _dispatch(spec, tasks, ctx)
    rows = []
    noise = spec.noise_fractions[0]
    for beta in betas:
        per_trial = []
        for t in range(spec.trials):
            value, recs = results[(0, t)]["LNR"]
            per_trial.append((value, recs[beta]))
        rows.append(_summarize("LNR", noise, per_trial, beta=beta))
    return ResultTable(rows, {**spec.to_dict(), "betas": betas}, "beta")


# ---------------------------------------------------------------- output


def emit(table: ResultTable, path, fmt: str = "csv") -> Path:
    """Write ``table`` as CSV (means only) or JSON (everything).

    Noise tables become one row per noise fraction: ``q_size`` then one
    column per method in spec order. Beta tables have one row per beta.
    """
    if not table.rows:
        raise ExperimentError("refusing to write an empty table")
    path = Path(path)
    if fmt == "json":
        table.to_json(path)
        return path
    if fmt != "csv":
        raise ExperimentError(f"unknown format {fmt!r}")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        if table.key == "beta":
            w.writerow(["beta", "mean_error", "std_error", "trials"])
            for r in table.rows:
                w.writerow([r.beta, f"{r.mean_error:.6f}", f"{r.std_error:.6f}", r.trials])
            return path
        methods = list(dict.fromkeys(r.method for r in table.rows))
        noises = list(dict.fromkeys(r.noise for r in table.rows))
        w.writerow(["q_size", *methods])
        for q in noises:
            w.writerow([f"{q:.2f}", *(f"{table.row(m, q).mean_error:.6f}" for m in methods)])
    return path
