"""Sample-average-approximation driver with optimality-gap estimation.

Each iteration solves M replicated scenario problems, cross-evaluates every
candidate on every replication set to estimate its optimality gap, and (in
ghost mode) tightens an artificial box around the replication solutions.
Tighter boxes shrink the feasible set's conic hull, which grows the
non-risk region and makes aggregation sampling cheaper and sharper. Ghost
bounds only ever tighten, and they never relax the original constraints, so
every candidate stays feasible for the true problem. The final answer is
picked by out-of-sample CVaR on a fresh validation sample.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .cones import FeasibleRegion, conic_hull
from .cvar_opt import (P1, PortfolioProblem, Solution, discrete_cvar, discrete_var,
                       evaluate_objective, solve_cardinality, solve_lp)
from .distributions import (EllipticalDistribution, EmpiricalDistribution,
                            fit_from_returns, normal_quantile, sample)
from .errors import ConfigError, SolverError
from .risk_region import RiskRegion, estimate_nonrisk_prob
from .scenario_gen import aggregation_sampling
from .seeding import child_seed

BASIC = "basic-sampling"
AGGREGATION = "aggregation"
AGGREGATION_GHOST = "aggregation+ghost"
MODES = (BASIC, AGGREGATION, AGGREGATION_GHOST)

# child-seed stream tags
_T_SAMPLE, _T_PROB, _T_VALIDATE = 1, 2, 3


@dataclass(frozen=True)
class SaaConfig:
    n0: int = 200
    dn: int = 100
    replications: int = 10
    alpha_gap: float = 0.95
    alpha_ghost: float = 0.99
    validation_n: int = 100_000
    gap_tol: float = 1e-4
    var_tol: float = 1e-4
    max_iterations: int = 8
    mode: str = BASIC
    prob_estimate_n: int = 2000

    def __post_init__(self):
        if self.n0 < 1 or self.dn < 0:
            raise ConfigError("sample sizes must be positive")
        if self.replications < 2:
            raise ConfigError("need at least two replications")
        if not 0.5 < self.alpha_gap < 1.0 or not 0.0 < self.alpha_ghost < 1.0:
            raise ConfigError("confidence levels must be in (0.5, 1) / (0, 1)")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")


@dataclass
class SaaState:
    """One Algorithm-2 iteration: bounds, replication results, gap estimates."""

    iteration: int
    n: int
    lower: np.ndarray
    upper: np.ndarray
    nu: list[float]
    solutions: list[np.ndarray]
    supports: list
    g_values: np.ndarray  # (M, M) candidate evaluations across sets
    gaps: np.ndarray
    ci_halfwidths: np.ndarray
    nonrisk_prob: float | None
    seeds: list[int]
    elapsed: float = 0.0

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "n": self.n,
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "nu": [float(v) for v in self.nu],
            "solutions": [s.tolist() for s in self.solutions],
            "supports": [None if z is None else [int(v) for v in z] for z in self.supports],
            "gaps": self.gaps.tolist(),
            "ci_halfwidths": self.ci_halfwidths.tolist(),
            "nonrisk_prob": self.nonrisk_prob,
            "seeds": self.seeds,
            "elapsed": self.elapsed,
        }


def estimate_gap(nu_values, g_values, alpha: float = 0.95):
    """Gap and CI half-width per candidate from M replications.

    nu_values[m] is the m-th replication optimum; g_values[m, k] is
    candidate k evaluated on set m. gap_k = mean_m g[m,k] - mean_m nu[m]
    (clipped at zero for reporting); the half-width uses the sample standard
    deviation of the per-replication differences over sqrt(M).
    """
    nu = np.asarray(nu_values, dtype=float)
    g = np.atleast_2d(np.asarray(g_values, dtype=float))
    if nu.size < 2:
        raise ConfigError("gap estimation needs at least two replications")
    if not 0.5 < alpha < 1.0:
        raise ConfigError("confidence level must be in (0.5, 1)")
    m = nu.size
    diffs = g - nu[:, None]
    gaps = np.maximum(diffs.mean(axis=0), 0.0)
    spread = diffs.std(axis=0, ddof=1)
    half = normal_quantile(alpha) * spread / np.sqrt(m)
    return gaps, half


def update_ghost_bounds(solutions, alpha: float, region: FeasibleRegion,
                        lower, upper, cardinality=None):
    """Confidence box around the replication solutions, clamped and tightened.

    l = max(xbar - z sigma/sqrt(M), 0) and u = min(xbar + z sigma/sqrt(M),
    quota), then intersected with the incoming bounds so ghost boxes only
    shrink. If the box kills feasibility the level is widened once
    (alpha <- (1+alpha)/2); a second failure is an error.
    """
    X = np.atleast_2d(np.asarray(solutions, dtype=float))
    m = X.shape[0]
    xbar = X.mean(axis=0)
    sigma = X.std(axis=0, ddof=1) if m > 1 else np.zeros(X.shape[1])
    for attempt in range(2):
        z = normal_quantile(alpha)
        l = np.maximum(xbar - z * sigma / np.sqrt(m), 0.0)
        u = np.minimum(xbar + z * sigma / np.sqrt(m), region.upper)
        l = np.maximum(l, np.maximum(lower, region.lower))
        u = np.minimum(u, np.minimum(upper, region.upper))
        if _bounds_feasible(region, l, u, cardinality):
            return l, u
        alpha = (1.0 + alpha) / 2.0
    raise SolverError("ghost bounds infeasible even after widening")


def _bounds_feasible(region: FeasibleRegion, l, u, cardinality) -> bool:
    if np.any(l > u + 1e-12):
        return False
    if cardinality is not None:
        caps = np.minimum(cardinality.caps, u)
        if int((l > 1e-12).sum()) > cardinality.max_assets:
            return False
        if np.sort(caps)[::-1][: cardinality.max_assets].sum() < region.capital - 1e-12:
            return False
    try:
        region.with_bounds(l, u)
    except ConfigError:
        return False
    return True


def _surrogate_for(source, problem, family: str = "student-t", nu: float = 4.0):
    if isinstance(source, EllipticalDistribution):
        return source
    if isinstance(source, EmpiricalDistribution):
        scen = source.scenarios
        return fit_from_returns(scen.points, family, nu=nu, weights=scen.probs)
    raise ConfigError("cannot build a risk region for this distribution source")


def run_saa(problem: PortfolioProblem, source, config: SaaConfig, seed: int,
            surrogate: EllipticalDistribution | None = None):
    """Run the SAA loop and return (best out-of-sample solution, history).

    `source` supplies the scenario draws (elliptical or empirical); in
    aggregation modes the risk region uses `surrogate` when given, otherwise
    the source itself (elliptical) or a moment-fitted t(4) stand-in
    (empirical). Fixed (config, seed) reproduce the history bit-for-bit,
    timings aside.
    """
    region0 = problem.region
    lower = region0.lower.copy()
    upper = region0.upper.copy()
    n = config.n0
    history: list[SaaState] = []
    aggregating = config.mode in (AGGREGATION, AGGREGATION_GHOST)
    if aggregating and surrogate is None:
        surrogate = _surrogate_for(source, problem)

    for it in range(config.max_iterations):
        t0 = time.perf_counter()
        region_t = region0.with_bounds(lower, upper)
        problem_t = PortfolioProblem(region_t, problem.beta, problem.mu, problem.mode,
                                     problem.tau, problem.lam, problem.cardinality)
        rr = None
        if aggregating:
            rr = RiskRegion(surrogate, conic_hull(region_t), problem.beta)

        nu, xs, zs, seeds, sets = [], [], [], [], []
        for m in range(config.replications):
            s_m = child_seed(seed, _T_SAMPLE, it, m)
            if aggregating:
                scen = aggregation_sampling(rr, source, n, s_m).scenarios
            else:
                scen = sample(source, n, s_m)
            sol = (solve_cardinality(problem_t, scen)
                   if problem.cardinality is not None else solve_lp(problem_t, scen))
            if sol.status != "optimal":
                raise SolverError(f"replication {m} at iteration {it}: {sol.status}")
            nu.append(sol.objective)
            xs.append(sol.x)
            zs.append(sol.z)
            seeds.append(s_m)
            sets.append(scen)
        if not xs:
            raise SolverError("all replications failed")

        g = np.array([[evaluate_objective(problem, scen, x) for x in xs] for scen in sets])
        gaps, half = estimate_gap(nu, g, config.alpha_gap)
        prob_est = None
        if aggregating:
            prob_est = estimate_nonrisk_prob(rr, config.prob_estimate_n,
                                             child_seed(seed, _T_PROB, it), sampler=source)
        state = SaaState(it, n, lower.copy(), upper.copy(), nu, xs, zs, g, gaps, half,
                         prob_est, seeds, elapsed=time.perf_counter() - t0)
        history.append(state)

        best = int(np.argmin(gaps))
        if gaps[best] <= config.gap_tol and half[best] <= config.var_tol:
            break
        n += config.dn
        if config.mode == AGGREGATION_GHOST:
            lower, upper = update_ghost_bounds(xs, config.alpha_ghost, region0,
                                               lower, upper, problem.cardinality)

    return _screen_candidates(problem, source, config, seed, history), history


def _screen_candidates(problem, source, config, seed, history):
    """Out-of-sample screening: lowest validation CVaR, ties by lower VaR."""
    validation = sample(source, config.validation_n, child_seed(seed, _T_VALIDATE))
    best = None
    best_key = None
    for state in history:
        for x, z in zip(state.solutions, state.supports):
            cvar = discrete_cvar(validation, x, problem.beta)
            var = discrete_var(validation, x, problem.beta)
            key = (cvar, var)
            if best_key is None or key < best_key:
                best_key = key
                ret = float(x @ problem.mu)
                obj = cvar if problem.mode == P1 else problem.lam * cvar + (1 - problem.lam) * (-ret)
                best = Solution(x, obj, cvar, ret, "optimal", z=z, seed=int(seed),
                                scenario_count=validation.n)
    return best


def write_history(history, path, meta: dict | None = None) -> None:
    """One JSON record per iteration (includes wall-clock timings).

    An optional metadata record (generator version, seed, config hash) is
    written first.
    """
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"meta": meta}) + "\n")
        for state in history:
            fh.write(json.dumps(state.to_dict()) + "\n")
