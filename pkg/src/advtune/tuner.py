"""Budget-constrained hyperparameter search over (ratio, epsilon).

Three strategies on a shared discrete grid: grid search (a fresh uniform
subgrid per iteration count), random search (without replacement), and a
tree-structured Parzen estimator (good/bad density split at the gamma
quantile, truncated-Gaussian kernels with largest-gap bandwidths, proposals
snapped to the nearest unexplored grid point).

The accuracy budget beta is a filter, not a penalty: a trial is feasible iff
its clean accuracy strictly exceeds baseline - beta. Accuracies are fractions
in [0, 1]; beta arrives in percentage points and is scaled internally. The
best feasible trial maximizes adversarial accuracy, ties broken by higher
clean accuracy, then lower epsilon, then lower ratio. An empty feasible set
is a legitimate outcome (infeasible), not an error.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtr, ndtri

from .data import LabeledSet
from .errors import NumericError, SearchSpaceExhausted, SpecError, TrainingError
from .evaluation import adversarial_accuracy, clean_accuracy
from .nn import NetworkSpec
from .seeding import derive_seed
from .training import AdvTrainConfig, adversarial_train, derive_cell_config, train_clean

STRATEGIES = ("grid", "random", "tpe")


@dataclass(frozen=True)
class SearchSpace:
    """Discrete search grid: ratio over [0,1], epsilon over a positive range."""

    ratio_points: int = 30
    epsilon_points: int = 30
    epsilon_min: float = 0.01
    epsilon_max: float = 0.5

    def __post_init__(self):
        if self.ratio_points < 2 or self.epsilon_points < 2:
            raise SpecError("each axis needs at least 2 grid points")
        if not 0 < self.epsilon_min < self.epsilon_max:
            raise SpecError(
                f"epsilon range [{self.epsilon_min}, {self.epsilon_max}] invalid"
            )

    @property
    def ratio_axis(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.ratio_points)

    @property
    def epsilon_axis(self) -> np.ndarray:
        return np.linspace(self.epsilon_min, self.epsilon_max, self.epsilon_points)

    @property
    def total(self) -> int:
        return self.ratio_points * self.epsilon_points

    def config_at(self, flat_index: int) -> tuple[float, float]:
        ri, ei = divmod(flat_index, self.epsilon_points)
        return float(self.ratio_axis[ri]), float(self.epsilon_axis[ei])

    def flat_index(self, ratio: float, epsilon: float) -> int:
        """Grid index of an on-grid config (nearest point for float fuzz)."""
        ri = int(np.argmin(np.abs(self.ratio_axis - ratio)))
        ei = int(np.argmin(np.abs(self.epsilon_axis - epsilon)))
        return ri * self.epsilon_points + ei


@dataclass(frozen=True)
class Trial:
    ratio: float
    epsilon: float
    acc_test: float
    acc_adv: float
    seed: int
    duration: float
    iteration: int
    failed: bool = False
    error: str | None = None

    def __post_init__(self):
        if not self.failed and not (
            0.0 <= self.acc_test <= 1.0 and 0.0 <= self.acc_adv <= 1.0
        ):
            raise SpecError(
                f"trial accuracies ({self.acc_test}, {self.acc_adv}) outside [0,1]"
            )


@dataclass(frozen=True)
class Budget:
    """beta in percentage points (None = unbounded); baseline is a fraction."""

    beta: float | None
    baseline_acc: float

    def __post_init__(self):
        if self.beta is not None and self.beta < 0:
            raise SpecError(f"beta must be >= 0 when bounded, got {self.beta}")

    @property
    def threshold(self) -> float | None:
        return None if self.beta is None else self.baseline_acc - self.beta / 100.0


@dataclass(frozen=True)
class TunerOutcome:
    strategy: str
    trials: tuple[Trial, ...]
    feasible: tuple[Trial, ...]
    best: Trial | None
    iterations: int

    @property
    def infeasible(self) -> bool:
        return self.best is None


@dataclass(frozen=True)
class TPEParams:
    gamma: float = 0.25
    n_init: int = 10
    n_candidates: int = 24
    bandwidth_floor: float = 0.01
    bandwidth_cap: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise SpecError(f"gamma must lie in (0,1), got {self.gamma}")
        if self.n_init < 1 or self.n_candidates < 1:
            raise SpecError("n_init and n_candidates must be >= 1")
        if not 0 < self.bandwidth_floor <= self.bandwidth_cap:
            raise SpecError("bandwidth floor/cap must satisfy 0 < floor <= cap")


def measure_baseline(
    train: LabeledSet, budget_data: LabeledSet, net: NetworkSpec, base: AdvTrainConfig, seed: int
) -> float:
    """Clean-trained accuracy on the budget split; anchor for the beta filter."""
    cfg = AdvTrainConfig(
        ratio=0.0,
        train_epsilon=0.0,
        epochs=base.epochs,
        batch_size=base.batch_size,
        learning_rate=base.learning_rate,
        seed=seed,
    )
    report = train_clean(train, cfg, net)
    return clean_accuracy(report.params, net, budget_data)


def _spread_indices(count: int, points: int) -> list[int]:
    # evenly spaced axis indices, endpoints included; round half away from zero
    if count == 1:
        return [int(math.floor((points - 1) / 2 + 0.5))]
    step = (points - 1) / (count - 1)
    return [int(math.floor(i * step + 0.5)) for i in range(count)]


def grid_schedule(space: SearchSpace, n: int) -> list[tuple[float, float]]:
    """Uniform subgrid of n configs, re-derived from scratch for every n.

    Rows r = floor(sqrt(n)) on the ratio axis, columns c = ceil(n/r) on the
    epsilon axis (each clamped to its axis, the other recomputed), emitted
    row-major and truncated to n. Successive n values therefore do not nest.
    """
    if not 1 <= n <= space.total:
        raise SpecError(f"n must lie in [1, {space.total}], got {n}")
    r = int(math.floor(math.sqrt(n)))
    c = int(math.ceil(n / r))
    if c > space.epsilon_points:
        c = space.epsilon_points
        r = int(math.ceil(n / c))
    if r > space.ratio_points:
        r = space.ratio_points
    if r * c < n:
        raise SpecError(f"grid factorization {r}x{c} cannot cover n={n}")
    ratio_axis = space.ratio_axis
    eps_axis = space.epsilon_axis
    configs = [
        (float(ratio_axis[ri]), float(eps_axis[ei]))
        for ri in _spread_indices(r, space.ratio_points)
        for ei in _spread_indices(c, space.epsilon_points)
    ]
    return configs[:n]


def random_schedule(space: SearchSpace, n: int, seed: int) -> list[tuple[float, float]]:
    """Uniform sample of grid points without replacement, deterministic per seed."""
    if not 1 <= n <= space.total:
        raise SpecError(f"n must lie in [1, {space.total}], got {n}")
    rng = np.random.default_rng(seed)
    flats = rng.choice(space.total, size=n, replace=False)
    return [space.config_at(int(f)) for f in flats]


class _Parzen1D:
    """Equal-weight mixture of truncated Gaussians on [lo, hi].

    Bandwidths follow the largest-gap heuristic: each kernel's sigma is the
    larger of its gaps to the neighboring points, with the interval edges
    acting as virtual neighbors, clipped to [floor, cap] fractions of the
    interval width.
    """

    def __init__(self, values, lo: float, hi: float, params: TPEParams):
        width = hi - lo
        self.lo, self.hi = lo, hi
        if len(values) == 0:
            self.mu = None
            self.log_uniform = -math.log(width)
            return
        mu = np.sort(np.asarray(values, dtype=np.float64))
        padded = np.concatenate(([lo], mu, [hi]))
        gaps = np.maximum(padded[1:-1] - padded[:-2], padded[2:] - padded[1:-1])
        self.mu = mu
        self.sigma = np.clip(
            gaps, params.bandwidth_floor * width, params.bandwidth_cap * width
        )
        # per-kernel truncation mass over [lo, hi]
        self.cdf_lo = ndtr((lo - mu) / self.sigma)
        self.cdf_hi = ndtr((hi - mu) / self.sigma)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if self.mu is None:
            return np.full(x.shape, self.log_uniform)
        z = (x[:, None] - self.mu[None, :]) / self.sigma[None, :]
        kernel = np.exp(-0.5 * z * z) / (
            np.sqrt(2 * np.pi) * self.sigma[None, :] * (self.cdf_hi - self.cdf_lo)[None, :]
        )
        dens = kernel.mean(axis=1)
        return np.log(np.maximum(dens, 1e-300))

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if self.mu is None:
            return rng.uniform(self.lo, self.hi, size=count)
        comp = rng.integers(0, len(self.mu), size=count)
        u = rng.uniform(self.cdf_lo[comp], self.cdf_hi[comp])
        x = self.mu[comp] + self.sigma[comp] * ndtri(u)
        return np.clip(x, self.lo, self.hi)


def _objective_key(trials: list[Trial] | tuple[Trial, ...]):
    # stable descending order by acc_adv; failed trials sink to the bottom
    def key(i):
        t = trials[i]
        return (-(-math.inf if t.failed else t.acc_adv), i)

    return sorted(range(len(trials)), key=key)


def tpe_propose(
    space: SearchSpace,
    history: list[Trial] | tuple[Trial, ...],
    params: TPEParams,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Next config to evaluate; always an unexplored grid point."""
    explored = {space.flat_index(t.ratio, t.epsilon) for t in history}
    unexplored = sorted(set(range(space.total)) - explored)
    if not unexplored:
        raise SearchSpaceExhausted(f"all {space.total} grid points evaluated")
    if len(history) < params.n_init:
        return space.config_at(unexplored[rng.integers(len(unexplored))])

    order = _objective_key(history)
    n_good = math.ceil(params.gamma * len(history))
    good = [history[i] for i in order[:n_good]]
    bad = [history[i] for i in order[n_good:]]

    axes = (
        ("ratio", 0.0, 1.0, [t.ratio for t in good], [t.ratio for t in bad]),
        ("epsilon", space.epsilon_min, space.epsilon_max,
         [t.epsilon for t in good], [t.epsilon for t in bad]),
    )
    samples = []
    score = np.zeros(params.n_candidates)
    for _, lo, hi, good_vals, bad_vals in axes:
        dens_l = _Parzen1D(good_vals, lo, hi, params)
        dens_g = _Parzen1D(bad_vals, lo, hi, params)
        x = dens_l.sample(params.n_candidates, rng)
        score += dens_l.logpdf(x) - dens_g.logpdf(x)
        samples.append(x)
    best = int(np.argmax(score))
    ratio, epsilon = samples[0][best], samples[1][best]

    # snap to nearest unexplored grid point, per-axis normalized distance,
    # ties toward the lower flat index
    ratio_axis, eps_axis = space.ratio_axis, space.epsilon_axis
    eps_width = space.epsilon_max - space.epsilon_min
    best_flat, best_dist = -1, math.inf
    for flat in unexplored:
        ri, ei = divmod(flat, space.epsilon_points)
        d = ((ratio_axis[ri] - ratio)) ** 2 + ((eps_axis[ei] - epsilon) / eps_width) ** 2
        if d < best_dist:
            best_flat, best_dist = flat, d
    return space.config_at(best_flat)


def training_evaluator(
    train: LabeledSet,
    tuning_data: LabeledSet,
    net: NetworkSpec,
    base: AdvTrainConfig,
    eval_attack,
):
    """Standard trial evaluator: adversarial training, metrics on the tuning split."""

    def evaluate_trial(ratio: float, epsilon: float, seed: int, iteration: int) -> Trial:
        start = time.perf_counter()
        cfg = replace(derive_cell_config(base, ratio, epsilon), seed=seed)
        atk = replace(eval_attack, seed=derive_seed(seed, "eval"))
        try:
            report = adversarial_train(train, cfg, net)
            acc_test = clean_accuracy(report.params, net, tuning_data)
            acc_adv = adversarial_accuracy(report.params, net, tuning_data, atk)
        except (TrainingError, NumericError) as exc:
            return Trial(
                ratio, epsilon, float("nan"), float("nan"), seed,
                time.perf_counter() - start, iteration, failed=True, error=str(exc),
            )
        return Trial(
            ratio, epsilon, acc_test, acc_adv, seed, time.perf_counter() - start, iteration
        )

    return evaluate_trial


def budget_filter(
    trials: list[Trial] | tuple[Trial, ...], budget: Budget
) -> tuple[tuple[Trial, ...], Trial | None]:
    """Feasible subset under the strict accuracy budget, and the best of it."""
    candidates = [t for t in trials if not t.failed]
    threshold = budget.threshold
    if threshold is None:
        feasible = candidates
    else:
        feasible = [t for t in candidates if t.acc_test > threshold]
    if not feasible:
        return (), None
    best = max(feasible, key=lambda t: (t.acc_adv, t.acc_test, -t.epsilon, -t.ratio))
    return tuple(feasible), best


@dataclass(frozen=True)
class TuneResult:
    strategy: str
    space: SearchSpace
    n: int
    budget: Budget
    repeats: int
    root_seed: int
    outcomes: tuple[TunerOutcome, ...]
    rep_errors: tuple[str | None, ...]

    def summary(self) -> dict:
        """Mean/std of best-feasible robustness, normal 95% CI, success rate."""
        found = [o.best.acc_adv for o in self.outcomes if o.best is not None]
        success_rate = len(found) / len(self.outcomes) if self.outcomes else 0.0
        if found:
            mean = float(np.mean(found))
            std = float(np.std(found))
            half = 1.96 * std / math.sqrt(len(found))
            ci = [mean - half, mean + half]
        else:
            mean = std = None
            ci = [None, None]
        return {
            "strategy": self.strategy,
            "iterations": self.n,
            "repeats": len(self.outcomes),
            "beta": self.budget.beta,
            "baseline_acc": self.budget.baseline_acc,
            "mean_best_acc_adv": mean,
            "std_best_acc_adv": std,
            "ci95_best_acc_adv": ci,
            "success_rate": success_rate,
            "found_count": len(found),
        }


def _run_strategy(
    strategy: str,
    space: SearchSpace,
    n: int,
    evaluator,
    rep_seed: int,
    tpe_params: TPEParams,
) -> list[Trial]:
    if strategy == "grid":
        schedule = grid_schedule(space, n)
    elif strategy == "random":
        schedule = random_schedule(space, n, rep_seed)
    else:
        schedule = None
    trials: list[Trial] = []
    if schedule is not None:
        for i, (ratio, epsilon) in enumerate(schedule):
            trials.append(evaluator(ratio, epsilon, derive_seed(rep_seed, "trial", i), i))
        return trials
    rng = np.random.default_rng(derive_seed(rep_seed, "tpe"))
    for i in range(n):
        ratio, epsilon = tpe_propose(space, trials, tpe_params, rng)
        trials.append(evaluator(ratio, epsilon, derive_seed(rep_seed, "trial", i), i))
    return trials


def tune(
    strategy: str,
    space: SearchSpace,
    n: int,
    budget: Budget,
    evaluator,
    repeats: int,
    root_seed: int,
    tpe_params: TPEParams = TPEParams(),
) -> TuneResult:
    """Run a strategy `repeats` times with derived seeds and filter per repetition.

    Grid search is deterministic, so its repeat count is forced to 1. A
    repetition that dies (exhaustion, numeric collapse outside a trial) is
    recorded in rep_errors and the harness moves on.
    """
    if strategy not in STRATEGIES:
        raise SpecError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    if not 1 <= n <= space.total:
        raise SpecError(f"n must lie in [1, {space.total}], got {n}")
    if repeats < 1:
        raise SpecError(f"repeats must be >= 1, got {repeats}")
    if strategy == "grid":
        repeats = 1
    outcomes = []
    rep_errors: list[str | None] = []
    for r in range(repeats):
        rep_seed = derive_seed(root_seed, "rep", r)
        try:
            trials = _run_strategy(strategy, space, n, evaluator, rep_seed, tpe_params)
        except (SearchSpaceExhausted, TrainingError, NumericError) as exc:
            outcomes.append(TunerOutcome(strategy, (), (), None, 0))
            rep_errors.append(str(exc))
            continue
        feasible, best = budget_filter(trials, budget)
        outcomes.append(TunerOutcome(strategy, tuple(trials), feasible, best, len(trials)))
        rep_errors.append(None)
    return TuneResult(
        strategy, space, n, budget, repeats, root_seed, tuple(outcomes), tuple(rep_errors)
    )


def trial_rows(result: TuneResult) -> list[dict]:
    """JSON-ready trial log rows, deterministic fields only (no durations)."""
    rows = []
    for r, outcome in enumerate(result.outcomes):
        for t in outcome.trials:
            rows.append(
                {
                    "rep": r,
                    "iteration": t.iteration,
                    "ratio": t.ratio,
                    "epsilon": t.epsilon,
                    "acc_test": None if t.failed else t.acc_test,
                    "acc_adv": None if t.failed else t.acc_adv,
                    "seed": t.seed,
                    "failed": t.failed,
                    "error": t.error,
                }
            )
    return rows


def timing_rows(result: TuneResult) -> list[dict]:
    """Wall-clock sidecar, keyed like the trial log; intentionally separate."""
    return [
        {"rep": r, "iteration": t.iteration, "duration": t.duration}
        for r, outcome in enumerate(result.outcomes)
        for t in outcome.trials
    ]
