"""Experiment engine: phase-transition grids, convergence traces and timing tables."""

from __future__ import annotations

import csv
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .blockmat import GroupKind, InvalidInputError
from .gpm import GpmConfig, run
from .metrics import estimation_error
from .sgbm import SgbmParams, generate
from .spectral import EigenConvergenceWarning, InitConfig, identity_init, initialize

log = logging.getLogger(__name__)

PHASE_COLUMNS = ("alpha", "beta", "trials", "successes", "rate", "mean_iters", "mean_seconds",
                 "solver")
CONVERGENCE_COLUMNS = ("seed", "iter", "epsilon", "objective", "frob_change")
BENCH_COLUMNS = ("n", "alpha", "beta", "reps", "median_seconds")

DESK_MAX_CELLS = 15
FULL_TRIALS = 50
FULL_RESOLUTION = 30


def trial_seed(base_seed: int, *key: int) -> int:
    """Order-independent 63-bit seed for one work item, hashed from ``(base_seed, *key)``."""
    ss = np.random.SeedSequence([int(base_seed), *[int(k) for k in key]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def _ascending(values, name):
    arr = [float(v) for v in values]
    if not arr:
        raise InvalidInputError(f"{name} must be nonempty")
    if any(b <= a for a, b in zip(arr, arr[1:])):
        raise InvalidInputError(f"{name} must be strictly ascending")
    if any(not math.isfinite(v) or v < 0 for v in arr):
        raise InvalidInputError(f"{name} must be finite and nonnegative")
    return tuple(arr)


@dataclass(frozen=True)
class ExperimentGrid:
    """A Monte-Carlo grid over ``(alpha, beta)`` at fixed ``(n, K, d, group)``."""

    alpha_values: tuple
    beta_values: tuple
    trials: int
    n: int
    K: int
    d: int
    group: str = "so"
    tau: float = 1e-3
    base_seed: int = 0
    max_iters: int = 100
    gpm_tol: float = 1e-12
    init: str = "spectral"

    def __post_init__(self):
        object.__setattr__(self, "alpha_values", _ascending(self.alpha_values, "alpha_values"))
        object.__setattr__(self, "beta_values", _ascending(self.beta_values, "beta_values"))
        if int(self.trials) < 1:
            raise InvalidInputError("trials must be >= 1")
        if not self.tau > 0:
            raise InvalidInputError("tau must be positive")
        if self.init not in ("spectral", "identity"):
            raise InvalidInputError("init must be 'spectral' or 'identity'")
        if self.n < 1 or self.K < 1 or self.d < 1 or self.n % self.K:
            raise InvalidInputError("need positive n, K, d with K dividing n")
        GroupKind.parse(self.group, self.d)

    @property
    def kind(self) -> GroupKind:
        return GroupKind.parse(self.group, self.d)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.alpha_values), len(self.beta_values)

    @classmethod
    def from_json(cls, cfg: dict) -> "ExperimentGrid":
        if not isinstance(cfg, dict):
            raise InvalidInputError("config must be a JSON object")
        known = {"alpha_values", "beta_values", "trials", "n", "K", "d", "group", "tau",
                 "base_seed", "max_iters", "gpm_tol", "init"}
        extra = set(cfg) - known - {"workers"}
        if extra:
            raise InvalidInputError(f"unknown config keys: {sorted(extra)}")
        missing = {"alpha_values", "beta_values", "trials", "n", "K", "d"} - set(cfg)
        if missing:
            raise InvalidInputError(f"missing config keys: {sorted(missing)}")
        try:
            return cls(**{k: v for k, v in cfg.items() if k in known})
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(str(exc)) from exc

    def desk_scale(self) -> "ExperimentGrid":
        """Cap the grid at ``DESK_MAX_CELLS`` values per axis by even subsampling."""
        def thin(vals):
            if len(vals) <= DESK_MAX_CELLS:
                return vals
            idx = np.unique(np.round(np.linspace(0, len(vals) - 1, DESK_MAX_CELLS)).astype(int))
            return tuple(vals[i] for i in idx)
        return replace(self, alpha_values=thin(self.alpha_values),
                       beta_values=thin(self.beta_values))

    def full_scale(self, resolution: int = FULL_RESOLUTION) -> "ExperimentGrid":
        """``FULL_TRIALS`` trials on ``alpha, beta`` from 0 to ``n / log n``."""
        top = self.n / math.log(self.n)
        vals = tuple(float(v) for v in np.linspace(0.0, top, resolution))
        return replace(self, alpha_values=vals, beta_values=vals, trials=FULL_TRIALS)


@dataclass(frozen=True)
class TrialOutcome:
    success: bool
    epsilon: float
    iters: int
    seconds: float
    reason: str


def solve_instance(A, K: int, kind: GroupKind, init: str = "spectral", *, pivot_seed: int = 0,
                   max_iters: int = 100, tol: float = 1e-12, track=None):
    """Initialise then run the power iteration; returns ``(state, trace, eig_warned)``."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EigenConvergenceWarning)
        if init == "spectral":
            V0 = initialize(A, K, kind.d, InitConfig(pivot_seed=pivot_seed))
        else:
            V0 = identity_init(A.n, K, kind.d)
    warned = any(issubclass(w.category, EigenConvergenceWarning) for w in caught)
    V, trace = run(A, V0, kind, GpmConfig(max_iters=max_iters, tol=tol, track_error=track))
    return V, trace, warned


def _run_trial(item) -> TrialOutcome:
    grid, alpha, beta, seed = item
    try:
        params = SgbmParams.from_log(grid.n, grid.K, grid.kind, alpha, beta)
        truth, A = generate(params, seed)
        t0 = time.perf_counter()
        V, trace, warned = solve_instance(A, grid.K, grid.kind, grid.init, pivot_seed=seed,
                                          max_iters=grid.max_iters, tol=grid.gpm_tol)
        seconds = time.perf_counter() - t0
        eps = estimation_error(V, truth, grid.kind)
    except Exception as exc:  # a failing trial never aborts the grid
        return TrialOutcome(False, math.nan, 0, 0.0, f"error:{type(exc).__name__}")
    ok = eps <= grid.tau
    if ok:
        reason = "ok"
    elif warned:
        reason = "eig_nonconvergence"
    else:
        reason = "not_recovered"
    return TrialOutcome(ok, eps, trace.iterates_used, seconds, reason)


@dataclass
class GridResult:
    alpha_values: tuple
    beta_values: tuple
    trials: int
    successes: np.ndarray
    mean_iters: np.ndarray
    mean_seconds: np.ndarray
    failures: list = field(default_factory=list)

    @property
    def success_rate(self) -> np.ndarray:
        return self.successes / self.trials

    def rows(self):
        for i, a in enumerate(self.alpha_values):
            for j, b in enumerate(self.beta_values):
                yield (a, b, self.trials, int(self.successes[i, j]), float(self.success_rate[i, j]),
                       float(self.mean_iters[i, j]), float(self.mean_seconds[i, j]), "gpm")


def run_phase(grid: ExperimentGrid, workers: int = 1) -> GridResult:
    """Success rates over the grid; identical counts for any ``workers``.

    Trial ``t`` of cell ``(i, j)`` uses ``trial_seed(base_seed, i, j, t)``.
    """
    na, nb = grid.shape
    items, keys = [], []
    for i, a in enumerate(grid.alpha_values):
        for j, b in enumerate(grid.beta_values):
            for t in range(grid.trials):
                items.append((grid, a, b, trial_seed(grid.base_seed, i, j, t)))
                keys.append((i, j, t))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_trial, items, chunksize=max(1, grid.trials // 2)))
    else:
        outcomes = [_run_trial(it) for it in items]

    succ = np.zeros((na, nb), dtype=np.int64)
    iters = np.zeros((na, nb))
    secs = np.zeros((na, nb))
    failures = []
    for (i, j, t), out in zip(keys, outcomes):
        succ[i, j] += out.success
        iters[i, j] += out.iters
        secs[i, j] += out.seconds
        if out.reason.startswith("error") or out.reason == "eig_nonconvergence":
            log.warning("cell (%d, %d) trial %d: %s", i, j, t, out.reason)
        if not out.success:
            failures.append((i, j, t, out.reason))
    return GridResult(grid.alpha_values, grid.beta_values, grid.trials, succ,
                      iters / grid.trials, secs / grid.trials, failures)


def monotone_trend(result: GridResult) -> list[bool]:
    """Per beta column: mean rate of the top alpha quartile >= that of the bottom quartile."""
    rate = result.success_rate
    q = max(1, rate.shape[0] // 4)
    return [bool(rate[-q:, j].mean() >= rate[:q, j].mean()) for j in range(rate.shape[1])]


def write_phase_csv(result: GridResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PHASE_COLUMNS)
        for row in result.rows():
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def read_phase_csv(path) -> list[dict]:
    conv = {"alpha": float, "beta": float, "trials": int, "successes": int, "rate": float,
            "mean_iters": float, "mean_seconds": float, "solver": str}
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != PHASE_COLUMNS:
            raise InvalidInputError(f"unexpected phase columns {rd.fieldnames}")
        return [{k: conv[k](v) for k, v in row.items()} for row in rd]


# --------------------------------------------------------------------------
# convergence

def run_convergence(params: SgbmParams, seeds, *, max_iters: int = 100, tol: float = 1e-12,
                    init: str = "spectral") -> dict:
    """Per-seed rows ``(seed, iter, epsilon, objective, frob_change)`` of the tracked iteration.

    ``epsilon`` is the relaxed O(d) error of the unrounded iterates.
    """
    out = {}
    for seed in seeds:
        truth, A = generate(params, seed)
        _, trace, _ = solve_instance(A, params.K, params.kind, init, pivot_seed=seed,
                                     max_iters=max_iters, tol=tol, track=truth)
        out[seed] = [(seed, t, err, obj, change) for t, change, err, obj in trace.rows()]
    return out


def write_convergence_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CONVERGENCE_COLUMNS)
        for seed, t, eps, obj, change in rows:
            w.writerow([seed, t, repr(eps), repr(obj), "" if change is None else repr(change)])


def read_convergence_csv(path) -> list[tuple]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != CONVERGENCE_COLUMNS:
            raise InvalidInputError(f"unexpected convergence columns {rd.fieldnames}")
        return [(int(r["seed"]), int(r["iter"]), float(r["epsilon"]), float(r["objective"]),
                 None if r["frob_change"] == "" else float(r["frob_change"])) for r in rd]


# --------------------------------------------------------------------------
# timing

@dataclass(frozen=True)
class TimingRow:
    n: int
    alpha: float
    beta: float
    reps: int
    median_seconds: float


def run_timing(sizes, reps: int, *, K: int = 2, d: int = 3, group: str = "so",
               base_seed: int = 0) -> list[TimingRow]:
    """Median wall-clock of initialisation plus iteration (generation excluded)."""
    if reps < 1:
        raise InvalidInputError("reps must be >= 1")
    kind = GroupKind.parse(group, d)
    table = []
    for k, (n, alpha, beta) in enumerate(sizes):
        params = SgbmParams.from_log(int(n), K, kind, float(alpha), float(beta))
        times = []
        for r in range(reps):
            seed = trial_seed(base_seed, k, r)
            _, A = generate(params, seed)
            t0 = time.perf_counter()
            solve_instance(A, K, kind, "spectral", pivot_seed=seed)
            times.append(time.perf_counter() - t0)
        table.append(TimingRow(int(n), float(alpha), float(beta), reps, float(np.median(times))))
    return table


def write_bench_csv(table, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for row in table:
            w.writerow([row.n, repr(row.alpha), repr(row.beta), row.reps, repr(row.median_seconds)])


def read_bench_csv(path) -> list[TimingRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if tuple(rd.fieldnames or ()) != BENCH_COLUMNS:
            raise InvalidInputError(f"unexpected bench columns {rd.fieldnames}")
        return [TimingRow(int(r["n"]), float(r["alpha"]), float(r["beta"]), int(r["reps"]),
                          float(r["median_seconds"])) for r in rd]
