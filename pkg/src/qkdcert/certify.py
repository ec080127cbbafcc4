"""Parameter certification: exact confidence intervals and approval rules.

Certification draws IID observations of each device parameter, forms a
confidence interval at failure level epsilon per parameter, and approves the
device only if every interval is contained in the corresponding robust
interval.  Containment (not mere overlap) is what makes the approval flag
F satisfy Pr[F = 1] <= epsilon whenever the true parameters lie outside the
robust set: some component is then outside its interval, and approval forces
that component's confidence interval to miss the truth.  The overlap rule is
also implemented — solely so the suite can demonstrate that it fails.

Two estimators cover the observables the device families emit: exact
binomial (Clopper-Pearson) tail inversion for rates, and a bounded-mean
concentration interval for observables with a known range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import ConfigError, ConsistencyError
from .qstate import derive_rng
from .devices import (
    DeviceModel,
    FAMILIES,
    ParameterVector,
    RobustSet,
    in_robust_set,
    sample_cert_observable,
)

__all__ = [
    "REGION_GRID",
    "ConfidenceInterval",
    "ParameterPlan",
    "CertificationPlan",
    "CertificationOutcome",
    "ConfidenceRegion",
    "clopper_pearson",
    "hoeffding_interval",
    "certify",
    "characterize",
    "approval_probability",
    "enumerate_regions",
    "validate_criterion_1",
    "coverage_test",
]

# Region endpoints are snapped outward to this resolution so that every
# reachable characterization outcome has a canonical, countable descriptor.
REGION_GRID = 1e-6


@dataclass(frozen=True)
class ConfidenceInterval:
    """[low, high] containing the true parameter except with prob. epsilon."""

    low: float
    high: float
    epsilon: float
    estimator: str

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.low > self.high:
            raise ConsistencyError(f"empty interval [{self.low}, {self.high}]")

    def contained_in(self, interval: tuple[float, float]) -> bool:
        lo, hi = interval
        return lo <= self.low and self.high <= hi

    def overlaps(self, interval: tuple[float, float]) -> bool:
        lo, hi = interval
        return self.low <= hi and lo <= self.high


def clopper_pearson(successes: int, trials: int, epsilon: float,
                    side: str = "two") -> ConfidenceInterval:
    """Exact binomial tail-inversion interval.

    ``side`` is ``"two"`` (epsilon split across both tails), ``"upper"``
    ([0, u] with failure probability epsilon), or ``"lower"``.
    """
    if not 0 <= successes <= trials or trials < 1:
        raise ConfigError(f"invalid counts: {successes}/{trials}")
    if not 0.0 < epsilon < 1.0:
        raise ConfigError(f"epsilon must lie in (0, 1), got {epsilon}")
    k, n = successes, trials
    if side == "two":
        lo_q, hi_q = epsilon / 2.0, epsilon / 2.0
    elif side == "upper":
        lo_q, hi_q = None, epsilon
    elif side == "lower":
        lo_q, hi_q = epsilon, None
    else:
        raise ConfigError(f"side must be two|upper|lower, got {side!r}")
    low = 0.0
    if lo_q is not None and k > 0:
        low = float(stats.beta.ppf(lo_q, k, n - k + 1))
    high = 1.0
    if hi_q is not None and k < n:
        high = float(stats.beta.ppf(1.0 - hi_q, k + 1, n - k))
    return ConfidenceInterval(low, high, epsilon, f"clopper_pearson_{side}")


def hoeffding_interval(mean: float, trials: int, epsilon: float,
                       bounds: tuple[float, float] = (0.0, 1.0)) -> ConfidenceInterval:
    """Two-sided concentration interval for the mean of [a, b]-valued draws.

    Half-width (b - a) * sqrt(ln(2/eps) / (2n)), clipped to the range.
    """
    a, b = bounds
    if trials < 1:
        raise ConfigError("trials must be positive")
    if b <= a:
        raise ConfigError(f"empty observable range [{a}, {b}]")
    if not a - 1e-12 <= mean <= b + 1e-12:
        raise ConfigError(f"sample mean {mean} outside the declared range [{a}, {b}]")
    delta = (b - a) * math.sqrt(math.log(2.0 / epsilon) / (2.0 * trials))
    return ConfidenceInterval(max(a, mean - delta), min(b, mean + delta),
                              epsilon, "hoeffding")


# ---------------------------------------------------------------------------
# plans and outcomes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParameterPlan:
    """How one parameter is certified: which observable, how many draws, level."""

    observable: str
    trials: int
    epsilon: float
    estimator: str = "clopper_pearson"
    side: str = "two"

    def __post_init__(self):
        if self.estimator not in ("clopper_pearson", "hoeffding"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.trials < 1:
            raise ConfigError("trials must be positive")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")


@dataclass(frozen=True)
class CertificationPlan:
    """Per-parameter plans, keyed by the parameter names they certify."""

    entries: tuple[tuple[str, ParameterPlan], ...]

    def __init__(self, entries):
        raw = entries.items() if isinstance(entries, dict) else entries
        ent = tuple((str(n), p) for n, p in raw)
        names = [n for n, _ in ent]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate plan entries: {names}")
        if not ent:
            raise ConfigError("a certification plan needs at least one parameter")
        object.__setattr__(self, "entries", ent)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.entries)

    def plan_for(self, name: str) -> ParameterPlan:
        for n, p in self.entries:
            if n == name:
                return p
        raise KeyError(name)

    @property
    def max_epsilon(self) -> float:
        return max(p.epsilon for _, p in self.entries)


@dataclass(frozen=True)
class CertificationOutcome:
    approved: bool
    intervals: tuple[tuple[str, ConfidenceInterval], ...]
    observed: tuple[tuple[str, float], ...]  # per-parameter sample mean
    seed: int
    rule: str


def _observable_support(model: DeviceModel, observable: str,
                        param_value: float, bounds: tuple[float, float]):
    """Two-point support (x_low, x_high, P[x_high]) of a certification draw."""
    if observable == "temperature":
        lo, hi = bounds
        width = min(0.25 * (hi - lo), param_value - lo, hi - param_value)
        return param_value - width, param_value + width, 0.5
    return 0.0, 1.0, param_value


def _interval_from_counts(pp: ParameterPlan, high_count: int, x_lo: float,
                          x_hi: float, bounds: tuple[float, float]) -> ConfidenceInterval:
    if pp.estimator == "clopper_pearson":
        if (x_lo, x_hi) != (0.0, 1.0):
            raise ConfigError("clopper_pearson applies to Bernoulli observables only")
        return clopper_pearson(high_count, pp.trials, pp.epsilon, pp.side)
    mean = (x_lo * (pp.trials - high_count) + x_hi * high_count) / pp.trials
    return hoeffding_interval(mean, pp.trials, pp.epsilon, bounds)


def certify(model: DeviceModel, robust: RobustSet, plan: CertificationPlan,
            seed: int, rule: str = "containment") -> CertificationOutcome:
    """Sample every planned observable and decide the approval flag.

    ``rule`` must be ``"containment"`` for any security claim; ``"overlap"``
    approves when the confidence interval merely intersects the robust
    interval and exists only to exhibit its insufficiency.
    """
    if rule not in ("containment", "overlap"):
        raise ConfigError(f"unknown approval rule {rule!r}")
    observables = FAMILIES[model.family]["observables"]
    obs_for_param = {p: o for o, p in observables.items()}
    intervals = []
    observed = []
    approved = True
    for k, (name, pp) in enumerate(plan.entries):
        if name not in robust.names:
            raise ConfigError(f"plan certifies {name!r} but the robust set has no such interval")
        if name not in obs_for_param or pp.observable != obs_for_param[name]:
            raise ConfigError(
                f"observable {pp.observable!r} does not estimate parameter {name!r}"
            )
        draws = sample_cert_observable(model, pp.observable, pp.trials,
                                       seed=_param_seed(seed, k))
        bounds = model.params.bound(name)
        x_lo, x_hi, _ = _observable_support(model, pp.observable,
                                            model.params.get(name), bounds)
        if pp.estimator == "clopper_pearson":
            ci = clopper_pearson(int(draws.sum()), pp.trials, pp.epsilon, pp.side)
        else:
            ci = hoeffding_interval(float(draws.mean()), pp.trials, pp.epsilon, bounds)
        target = robust.interval(name)
        ok = ci.contained_in(target) if rule == "containment" else ci.overlaps(target)
        approved = approved and ok
        intervals.append((name, ci))
        observed.append((name, float(draws.mean())))
    return CertificationOutcome(approved, tuple(intervals), tuple(observed), seed, rule)


def _param_seed(seed: int, k: int) -> int:
    # distinct deterministic stream per parameter; sample_cert_observable
    # derives its own generator from this integer
    return (int(seed) << 8) + k


# ---------------------------------------------------------------------------
# characterization regions
# ---------------------------------------------------------------------------

def _snap_out(low: float, high: float) -> tuple[int, int]:
    lo = math.floor(low / REGION_GRID + 1e-9)
    hi = math.ceil(high / REGION_GRID - 1e-9)
    return lo, hi


@dataclass(frozen=True)
class ConfidenceRegion:
    """Product of per-parameter intervals with grid-snapped endpoints.

    Endpoints are stored as integer multiples of :data:`REGION_GRID`
    (rounded outward), so regions compare and hash exactly and the set of
    reachable regions is countable.
    """

    ticks: tuple[tuple[str, tuple[int, int]], ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.ticks)

    def interval(self, name: str) -> tuple[float, float]:
        for n, (lo, hi) in self.ticks:
            if n == name:
                return lo * REGION_GRID, hi * REGION_GRID
        raise KeyError(name)

    def contains(self, params: ParameterVector) -> bool:
        for n, (lo, hi) in self.ticks:
            v = params.get(n)
            if not lo * REGION_GRID <= v <= hi * REGION_GRID:
                return False
        return True

    def descriptor(self) -> tuple:
        return self.ticks


def characterize(model: DeviceModel, plan: CertificationPlan,
                 seed: int) -> ConfidenceRegion:
    """Run the plan and return the product confidence region it produced."""
    outcome = certify(model, _permissive_robust(plan), plan, seed)
    ticks = tuple(
        (name, _snap_out(ci.low, ci.high)) for name, ci in outcome.intervals
    )
    return ConfidenceRegion(ticks)


def _permissive_robust(plan: CertificationPlan) -> RobustSet:
    # containment against (-inf, inf) is vacuous; characterization only needs
    # the intervals, not the approval decision
    return RobustSet(tuple((n, (-math.inf, math.inf)) for n in plan.names))


# ---------------------------------------------------------------------------
# exact approval probability and region enumeration
# ---------------------------------------------------------------------------

def _approval_counts(model: DeviceModel, robust_iv: tuple[float, float],
                     name: str, pp: ParameterPlan, rule: str) -> tuple[np.ndarray, float]:
    """(indicator over high-outcome counts, P[high outcome]) for one parameter."""
    bounds = model.params.bound(name)
    value = model.params.get(name)
    x_lo, x_hi, theta = _observable_support(model, pp.observable, value, bounds)
    ok = np.zeros(pp.trials + 1, dtype=bool)
    for c in range(pp.trials + 1):
        ci = _interval_from_counts(pp, c, x_lo, x_hi, bounds)
        ok[c] = ci.contained_in(robust_iv) if rule == "containment" \
            else ci.overlaps(robust_iv)
    return ok, theta


def approval_probability(model: DeviceModel, robust: RobustSet,
                         plan: CertificationPlan, rule: str = "containment") -> float:
    """Exact Pr[F = 1]: the draw distributions are two-point, so the approval
    event is a product of binomial tail sums."""
    prob = 1.0
    for name, pp in plan.entries:
        ok, theta = _approval_counts(model, robust.interval(name), name, pp, rule)
        counts = np.arange(pp.trials + 1)
        pmf = stats.binom.pmf(counts, pp.trials, theta)
        prob *= float(pmf[ok].sum())
    return prob


def enumerate_regions(model: DeviceModel, plan: CertificationPlan,
                      max_outcomes: int = 1000) -> list[tuple[ConfidenceRegion, float]]:
    """All reachable characterization regions with their exact probabilities.

    Outcomes are enumerated per parameter over the binomial count support
    and combined as a product; the joint support must stay within
    ``max_outcomes`` (larger plans should be handled by sampling instead).
    """
    per_param = []
    total = 1
    for name, pp in plan.entries:
        total *= pp.trials + 1
        if total > max_outcomes:
            raise ConsistencyError(
                f"plan has more than {max_outcomes} joint outcomes; "
                "exact region enumeration refused"
            )
        bounds = model.params.bound(name)
        value = model.params.get(name)
        x_lo, x_hi, theta = _observable_support(model, pp.observable, value, bounds)
        counts = np.arange(pp.trials + 1)
        pmf = stats.binom.pmf(counts, pp.trials, theta)
        cells = []
        for c in counts:
            ci = _interval_from_counts(pp, int(c), x_lo, x_hi, bounds)
            cells.append((_snap_out(ci.low, ci.high), float(pmf[c])))
        per_param.append((name, cells))

    regions: dict[tuple, float] = {}
    def _walk(idx: int, ticks: tuple, prob: float):
        if prob == 0.0:
            return
        if idx == len(per_param):
            regions[ticks] = regions.get(ticks, 0.0) + prob
            return
        name, cells = per_param[idx]
        for span, p in cells:
            _walk(idx + 1, ticks + ((name, span),), prob * p)
    _walk(0, (), 1.0)
    return [(ConfidenceRegion(t), p) for t, p in sorted(regions.items())]


# ---------------------------------------------------------------------------
# statistical validation
# ---------------------------------------------------------------------------

def three_sigma_slack(rate: float, trials: int) -> float:
    return 3.0 * math.sqrt(max(rate * (1.0 - rate), 1e-12) / trials)


def validate_criterion_1(model: DeviceModel, robust: RobustSet,
                         plan: CertificationPlan, trials: int, seed: int,
                         rule: str = "containment") -> dict:
    """Monte Carlo check that bad devices are approved at most eps^cert often.

    Requires the model's parameters to lie outside the robust set.  The
    empirical approval rate is compared against the plan's per-parameter
    level plus three binomial standard deviations.
    """
    if in_robust_set(model.params, robust):
        raise ConsistencyError(
            "criterion-1 validation needs a model outside the robust set"
        )
    approvals = 0
    for t in range(trials):
        outcome = certify(model, robust, plan, seed=_trial_seed(seed, t), rule=rule)
        approvals += int(outcome.approved)
    rate = approvals / trials
    eps = plan.max_epsilon
    slack = three_sigma_slack(eps, trials)
    return {
        "trials": trials,
        "approvals": approvals,
        "approval_rate": rate,
        "eps_cert": eps,
        "slack": slack,
        "bound_ok": rate <= eps + slack,
        "exact_rate": approval_probability(model, robust, plan, rule),
    }


def _trial_seed(seed: int, trial: int) -> int:
    return (int(seed) << 20) + trial


def coverage_test(estimator: str, p: float, trials_per_ci: int, epsilon: float,
                  mc_trials: int, seed: int,
                  side: str = "two") -> dict:
    """Empirical confidence-interval coverage for a Bernoulli(p) parameter.

    Coverage must be at least 1 - epsilon up to three binomial standard
    deviations; both estimators treat the draws as [0, 1]-valued.
    """
    covered = 0
    cache: dict[int, ConfidenceInterval] = {}
    for t in range(mc_trials):
        rng = derive_rng(seed, t)
        count = int(rng.binomial(trials_per_ci, p))
        ci = cache.get(count)
        if ci is None:
            if estimator == "clopper_pearson":
                ci = clopper_pearson(count, trials_per_ci, epsilon, side)
            elif estimator == "hoeffding":
                ci = hoeffding_interval(count / trials_per_ci, trials_per_ci,
                                        epsilon, (0.0, 1.0))
            else:
                raise ConfigError(f"unknown estimator {estimator!r}")
            cache[count] = ci
        covered += int(ci.low <= p <= ci.high)
    coverage = covered / mc_trials
    slack = three_sigma_slack(1.0 - epsilon, mc_trials)
    return {
        "estimator": estimator,
        "p": p,
        "n": trials_per_ci,
        "epsilon": epsilon,
        "mc_trials": mc_trials,
        "coverage": coverage,
        "threshold": 1.0 - epsilon - slack,
        "ok": coverage >= 1.0 - epsilon - slack,
    }
