"""Particle competition and cooperation engine.

One engine covers four variants:

* ``PCC1``: labeled nodes frozen, separate random/greedy moves, label by
  final domination.
* ``PCC2``: as ``PCC1`` with a relaxed strength update; labels come from
  the domination accumulated during random moves.
* ``PCC3``: 50/50 random-greedy moves, one distance table per team,
  labeled nodes can be relabeled.
* ``LNR``: the label-noise-robust variant. Each particle keeps its own
  distance table; ``beta`` reset epochs bank their final dominations into
  an overall score that decides every label, labeled nodes included.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics
from .datasets import LabelConfig
from .graph import Graph

VARIANTS = ("PCC1", "PCC2", "PCC3", "LNR")


class EngineError(ValueError):
    pass


@dataclass(frozen=True)
class VariantConfig:
    variant: str = "LNR"
    p_grd: float = 0.5
    delta_v: float = 0.1
    delta_rho: float = 0.1
    alpha: float = 2000.0
    beta: int = 10
    max_total_iterations: int = 500_000

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise EngineError(f"unknown variant {self.variant!r}")
        if not 0.0 <= self.p_grd <= 1.0:
            raise EngineError("p_grd must lie in [0, 1]")
        if not 0.0 < self.delta_v <= 1.0:
            raise EngineError("delta_v must lie in (0, 1]")
        if not 0.0 < self.delta_rho <= 1.0:
            raise EngineError("delta_rho must lie in (0, 1]")
        if self.beta < 1:
            raise EngineError("beta must be at least 1")
        if self.alpha <= 0:
            raise EngineError("alpha must be positive")

    @property
    def frozen_labels(self) -> bool:
        return self.variant in ("PCC1", "PCC2")

    @property
    def shared_tables(self) -> bool:
        return self.variant == "PCC3"

    @property
    def greedy_probability(self) -> float:
        return self.p_grd if self.variant in ("PCC1", "PCC2") else 0.5

    @property
    def epochs(self) -> int:
        return self.beta if self.variant == "LNR" else 1

    def tau(self, n: int, l: int) -> int:  # noqa: E741
        """Stall patience in iterations, rounded half up."""
        x = self.alpha * n / (self.epochs * l)
        return max(1, int(math.floor(x + 0.5)))


@dataclass
class EngineState:
    graph: Graph
    cfg: LabelConfig
    vc: VariantConfig
    omega: np.ndarray
    lam: np.ndarray
    overall: np.ndarray
    rowmax: np.ndarray
    frozen: np.ndarray
    home: np.ndarray
    label: np.ndarray
    strength: np.ndarray
    current: np.ndarray
    previous: np.ndarray
    table: np.ndarray
    dist: np.ndarray
    tau: int
    monitor: np.ndarray = field(default_factory=lambda: np.zeros(2))
    counters: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=np.int64))
    rng: np.ndarray = field(default_factory=lambda: dynamics.make_rng_state(0))
    iterations: int = 0
    resets_done: int = 0

    @property
    def n(self) -> int:
        return self.omega.shape[0]

    @property
    def c(self) -> int:
        return self.omega.shape[1]

    @property
    def best_avg_max_dom(self) -> float:
        return float(self.monitor[1])

    @property
    def iterations_since_improvement(self) -> int:
        return int(self.counters[0])

    def avg_max_dom(self) -> float:
        return float(self.omega.max(axis=1).mean())

    def particle_distances(self, j: int) -> np.ndarray:
        return self.dist[self.table[j]]


def _check_classes(cfg: LabelConfig, c: int) -> None:
    present = np.unique(cfg.given_labels[cfg.labeled_mask])
    missing = sorted(set(range(c)) - set(present.tolist()))
    if missing:
        raise EngineError(f"classes {missing} have no particle")


def init_epoch(
    g: Graph,
    cfg: LabelConfig,
    vc: VariantConfig,
    c: int | None = None,
    state: EngineState | None = None,
) -> EngineState:
    """Fresh node dominations, particles and distance tables.

    Passing the previous ``state`` carries its overall domination and
    counters over (reset epoch); otherwise the overall domination starts at
    zero.
    """
    n = g.n
    labeled = cfg.labeled_mask
    if c is None:
        c = int(cfg.given_labels[labeled].max()) + 1
    if c < 2:
        raise EngineError("need at least two classes")
    _check_classes(cfg, c)
    homes = np.flatnonzero(labeled)
    labels = cfg.given_labels[homes].astype(np.int64)

    omega = np.full((n, c), 1.0 / c)
    omega[homes] = 0.0
    omega[homes, labels] = 1.0

    if vc.shared_tables:
        table = labels.copy()
        dist = np.full((c, n), n - 1, dtype=np.int64)
        dist[labels, homes] = 0
    else:
        table = np.arange(len(homes), dtype=np.int64)
        dist = np.full((len(homes), n), n - 1, dtype=np.int64)
        dist[table, homes] = 0

    rowmax = omega.max(axis=1)
    frozen = labeled.copy() if vc.frozen_labels else np.zeros(n, dtype=bool)
    new = EngineState(
        graph=g,
        cfg=cfg,
        vc=vc,
        omega=omega,
        lam=np.zeros((n, c)),
        overall=np.zeros((n, c)) if state is None else state.overall,
        rowmax=rowmax,
        frozen=frozen,
        home=homes,
        label=labels,
        strength=np.ones(len(homes)),
        current=homes.copy(),
        previous=homes.copy(),
        table=table,
        dist=dist,
        tau=vc.tau(n, len(homes)),
    )
    new.monitor[:] = [rowmax.sum(), rowmax.sum() / n]
    if state is not None:
        new.rng = state.rng
        new.iterations = state.iterations
        new.resets_done = state.resets_done
        new.counters[2] = state.counters[2]
    return new


def _advance(state: EngineState, max_iters: int, trace_rows: int = 0):
    trace = np.zeros((trace_rows, 5), dtype=np.int64)
    vc = state.vc
    done, stalled, written = dynamics.advance(
        state.graph.indptr,
        state.graph.indices,
        state.omega,
        state.lam,
        state.rowmax,
        state.frozen,
        state.label,
        state.strength,
        state.current,
        state.previous,
        state.table,
        state.dist,
        vc.greedy_probability,
        vc.delta_v,
        vc.delta_rho,
        vc.variant == "PCC2",
        vc.variant == "PCC2",
        state.monitor,
        state.counters,
        state.tau,
        max_iters,
        state.rng,
        trace,
    )
    state.iterations += done
    return done, stalled, trace[:written]


def step(state: EngineState) -> bool:
    """Move every particle once; returns True when the monitor stalled."""
    _, stalled, _ = _advance(state, 1)
    return stalled


@dataclass
class LabelAssignment:
    labels: np.ndarray
    decision: np.ndarray
    variant: str
    resets: int = 0
    iterations: int = 0
    truncated: bool = False
    seed: int | None = None
    isolated_events: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["labels"] = self.labels.tolist()
        d["decision"] = self.decision.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> LabelAssignment:
        d = dict(d)
        d["labels"] = np.asarray(d["labels"], dtype=np.int64)
        d["decision"] = np.asarray(d["decision"], dtype=np.float64)
        return cls(**d)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_json(cls, path) -> LabelAssignment:
        return cls.from_dict(json.loads(Path(path).read_text()))


def label_from_scores(scores: np.ndarray, cfg: LabelConfig, features=None, keep_given: bool = False) -> np.ndarray:
    """Row-wise argmax with lowest-class tie-breaking.

    Rows whose entries are all equal (never visited, or all zero) take the
    given label of the nearest labeled sample in feature space when
    ``features`` is supplied. ``keep_given`` pins labeled rows to their given
    label.
    """
    labels = np.argmax(scores, axis=1).astype(np.int64)
    tied = np.ptp(scores, axis=1) <= 1e-12
    if features is not None and tied.any():
        x = np.asarray(features, dtype=np.float64)
        homes = cfg.labeled_indices
        rows = np.flatnonzero(tied & ~cfg.labeled_mask)
        if len(rows):
            d2 = ((x[rows, None, :] - x[None, homes, :]) ** 2).sum(axis=2)
            labels[rows] = cfg.given_labels[homes[np.argmin(d2, axis=1)]]
    pinned = cfg.labeled_mask & (tied | keep_given)
    labels[pinned] = cfg.given_labels[pinned]
    return labels


def write_trace(fh, trace: np.ndarray) -> None:
    names = {dynamics.RANDOM: "random", dynamics.GREEDY: "greedy", dynamics.ISOLATED: "isolated"}
    for it, j, kind, target, stayed in trace:
        fh.write(f"{it} {j} {names[int(kind)]} {target} {'stay' if stayed else 'shock'}\n")


def run(
    g: Graph,
    cfg: LabelConfig,
    vc: VariantConfig,
    seed: int,
    features=None,
    c: int | None = None,
    trace=None,
) -> LabelAssignment:
    """Run one variant to completion and label every node.

    ``trace`` may be an open text file; one line per particle move is
    written (slow, for debugging only).
    """
    state = init_epoch(g, cfg, vc, c=c)
    state.rng = dynamics.make_rng_state(seed)
    budget = vc.max_total_iterations
    truncated = False
    chunk = 1000 if trace is not None else budget
    while True:
        stalled = False
        while not stalled:
            remaining = budget - state.iterations
            if remaining <= 0:
                truncated = True
                break
            rows = min(chunk, remaining) * len(state.label) if trace is not None else 0
            _, stalled, events = _advance(state, min(chunk, remaining), rows)
            if trace is not None:
                write_trace(trace, events)
        if truncated:
            break
        if vc.variant != "LNR":
            break
        state.overall += state.omega
        state.resets_done += 1
        if state.resets_done >= vc.beta:
            break
        state = init_epoch(g, cfg, vc, c=state.c, state=state)

    if vc.variant == "LNR":
        scores = state.overall + state.omega if truncated else state.overall
        labels = label_from_scores(scores, cfg, features)
    elif vc.variant == "PCC2":
        scores = state.lam
        labels = label_from_scores(scores, cfg, features, keep_given=True)
    else:
        scores = state.omega
        labels = label_from_scores(scores, cfg, features, keep_given=vc.variant == "PCC1")
    return LabelAssignment(
        labels=labels,
        decision=scores.copy(),
        variant=vc.variant,
        resets=state.resets_done,
        iterations=state.iterations,
        truncated=truncated,
        seed=int(seed),
        isolated_events=int(state.counters[2]),
    )

