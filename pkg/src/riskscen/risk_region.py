"""Risk-region membership, batch classification, and scenario aggregation.

An outcome y is "risk" when some feasible portfolio puts it in the upper
beta-tail of its loss. For elliptical returns this reduces to a cone
projection in spherical coordinates: with z = P^{-T}(y - mu) and K' = P K,

    y is risk  <=>  || p_{K'}(-z) || >= q_beta,

where q_beta is the spherical beta-quantile. Boundary ties (within 1e-9)
count as risk, which never invalidates aggregation. Aggregation collapses
all non-risk scenarios of a set into their probability-weighted mean.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cones import Cone, ConeProjector, transform
from .distributions import EllipticalDistribution, ScenarioSet, spherical_quantile
from .errors import ConfigError
from .seeding import rng_from

logger = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-9
_ARCHIVE_CAP = 256


@dataclass(frozen=True)
class RiskRegion:
    """Elliptical risk region for a feasible-set conic hull at level beta."""

    dist: EllipticalDistribution
    cone: Cone
    beta: float
    threshold: float = None
    image_cone: Cone = None

    def __post_init__(self):
        if not 0.5 < self.beta < 1.0:
            raise ConfigError("beta must be a tail level in (0.5, 1)")
        if self.cone.d != self.dist.d:
            raise ConfigError("cone and distribution dimensions differ")
        q = spherical_quantile(self.dist.family, self.beta, self.dist.nu)
        if self.threshold is None:
            object.__setattr__(self, "threshold", q)
        if self.image_cone is None:
            object.__setattr__(self, "image_cone", transform(self.cone, self.dist.factor))
        object.__setattr__(self, "_projector", ConeProjector(self.image_cone))

    @property
    def d(self) -> int:
        return self.dist.d

    def consistent_threshold(self) -> bool:
        """Whether the stored threshold is the recomputed spherical quantile."""
        return self.threshold == spherical_quantile(self.dist.family, self.beta, self.dist.nu)

    def spherical_coords(self, points: np.ndarray) -> np.ndarray:
        """z = P^{-T} (y - mu), one row per point."""
        Y = np.atleast_2d(np.asarray(points, dtype=float))
        return np.linalg.solve(self.dist.factor.T, (Y - self.dist.mu).T).T

    def projection_norm(self, y) -> float:
        """||p_{K'}(-z)||, the value compared against the threshold."""
        z = self.spherical_coords(np.asarray(y, dtype=float)[None, :])[0]
        return float(np.linalg.norm(self._projector.project(-z)))


def is_risk(region: RiskRegion, y) -> bool:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ConfigError("membership test needs a finite point")
    return region.projection_norm(y) >= region.threshold - BOUNDARY_TOL


def _cone_in_orthant(cone: Cone) -> bool:
    """Detect K subset of the nonnegative orthant (enables dominance shortcuts)."""
    if cone.generators is not None and cone.generators.shape[0] > 0:
        if np.all(cone.generators >= -1e-12):
            return True
    if cone.facets is not None and cone.facets.shape[0] > 0:
        B = cone.facets
        covered = np.zeros(cone.d, dtype=bool)
        for row in B:
            nz = np.flatnonzero(np.abs(row) > 1e-12)
            if nz.size == 1 and row[nz[0]] > 0:
                covered[nz[0]] = True
        if covered.all():
            return True
    return False


def classify_mask(region: RiskRegion, points, use_shortcuts: bool = True) -> np.ndarray:
    """Boolean risk mask for a batch of points; identical to pointwise is_risk.

    Exact shortcuts, none of which can change the partition:
      - ||z|| below the cutoff implies non-risk (projection is non-expansive);
      - -z already in K' makes the projection trivial;
      - when K is inside the orthant, the loss is monotone in y, so a point
        componentwise <= a known risk point is risk, and one >= a known
        non-risk point is non-risk (archives are capped; they are a cache).
    """
    Y = np.atleast_2d(np.asarray(points, dtype=float))
    n = Y.shape[0]
    if n == 0:
        return np.zeros(0, dtype=bool)
    if not np.all(np.isfinite(Y)):
        raise ConfigError("classification needs finite points")
    cutoff = region.threshold - BOUNDARY_TOL
    Z = region.spherical_coords(Y)
    risk = np.zeros(n, dtype=bool)
    decided = np.zeros(n, dtype=bool)

    if use_shortcuts:
        znorm = np.linalg.norm(Z, axis=1)
        below = znorm < cutoff
        decided |= below  # non-risk
        Kp = region.image_cone
        if Kp.facets is not None and Kp.facets.shape[0] > 0:
            inside = np.all((-Z) @ Kp.facets.T >= 0.0, axis=1)
            sel = inside & ~decided
            risk[sel] = znorm[sel] >= cutoff
            decided |= sel

    dominance = use_shortcuts and _cone_in_orthant(region.cone)
    risk_archive = np.empty((0, Y.shape[1]))
    nonrisk_archive = np.empty((0, Y.shape[1]))
    projector = region._projector
    for i in np.flatnonzero(~decided):
        y = Y[i]
        if dominance and risk_archive.shape[0] and bool(np.any(np.all(y <= risk_archive, axis=1))):
            risk[i] = True
            continue
        if dominance and nonrisk_archive.shape[0] and bool(np.any(np.all(y >= nonrisk_archive, axis=1))):
            risk[i] = False
            continue
        w = projector.project(-Z[i])
        risk[i] = bool(np.linalg.norm(w) >= cutoff)
        if dominance:
            if risk[i] and risk_archive.shape[0] < _ARCHIVE_CAP:
                risk_archive = np.vstack([risk_archive, y[None, :]])
            elif not risk[i] and nonrisk_archive.shape[0] < _ARCHIVE_CAP:
                nonrisk_archive = np.vstack([nonrisk_archive, y[None, :]])
    return risk


def classify_batch(region: RiskRegion, scenarios: ScenarioSet, use_shortcuts: bool = True):
    """Partition scenario indices into (risk, non-risk)."""
    mask = classify_mask(region, scenarios.points, use_shortcuts=use_shortcuts)
    idx = np.arange(scenarios.n)
    return idx[mask], idx[~mask]


def aggregate(region: RiskRegion, scenarios: ScenarioSet) -> ScenarioSet:
    """Keep risk scenarios, collapse the rest into their weighted mean.

    The aggregated point carries the total non-risk probability, so the
    weighted mean of the output equals that of the input. Returns the input
    unchanged when nothing is classified non-risk.
    """
    mask = classify_mask(region, scenarios.points)
    if mask.all():
        return scenarios
    pts, pr = scenarios.points, scenarios.probs
    nonrisk_mass = float(pr[~mask].sum())
    if nonrisk_mass <= 0.0:
        return ScenarioSet(pts[mask], pr[mask] / pr[mask].sum(), source="aggregated")
    center = pr[~mask] @ pts[~mask] / nonrisk_mass
    new_pts = np.vstack([pts[mask], center[None, :]])
    new_pr = np.concatenate([pr[mask], [nonrisk_mass]])
    return ScenarioSet(new_pts, new_pr, source="aggregated")


def estimate_nonrisk_prob(region: RiskRegion, n: int, seed: int, sampler=None) -> float:
    """Monte Carlo estimate of the non-risk probability.

    Draws from the region's own distribution unless a sampler (for example
    an empirical distribution) is supplied.
    """
    if n < 1:
        raise ConfigError("need at least one sample")
    src = region.dist if sampler is None else sampler
    pts = src.draw(rng_from(seed), n)
    mask = classify_mask(region, pts)
    return float((~mask).sum() / n)


def check_aggregation_center(region: RiskRegion, scenarios: ScenarioSet) -> bool:
    """Empirical check that the non-risk conditional mean is itself non-risk.

    Consistency of aggregation sampling needs the aggregated point inside
    the non-risk region; there is no constructive test, so violations are
    only logged.
    """
    mask = classify_mask(region, scenarios.points)
    if mask.all():
        return True
    pr = scenarios.probs
    mass = float(pr[~mask].sum())
    if mass <= 0:
        return True
    center = pr[~mask] @ scenarios.points[~mask] / mass
    ok = not is_risk(region, center)
    if not ok:
        logger.warning("aggregated point fell inside the risk region")
    return ok
