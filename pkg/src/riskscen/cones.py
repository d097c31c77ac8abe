"""Convex cones, conic hulls of portfolio feasible sets, and cone projection.

A cone carries a generator form {G' lam : lam >= 0} (generators are rows of
G), a polyhedral form {x : B x >= 0}, or both. Projection onto a finitely
generated cone reduces to a positive-semidefinite LCP solved by Lemke's
complementary pivoting; projection onto a polyhedral cone goes through the
polar cone (generated by the negated facet rows) and the Moreau
decomposition x = p_K(x) + p_polar(x).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import lp
from .errors import ConfigError, SolverError

MEMBER_TOL = 1e-9
LEMKE_PIVOT_TOL = 1e-11


@dataclass(frozen=True)
class FeasibleRegion:
    """Portfolio constraint system: budget equality, inequality rows, bounds.

    The region is {x : 1'x = capital, A x <= b, lower <= x <= upper}.
    Construction rejects empty regions (checked with an LP probe).
    """

    d: int
    capital: float
    A: np.ndarray = field(default=None)  # (m, d) inequality rows
    b: np.ndarray = field(default=None)  # (m,)
    lower: np.ndarray = field(default=None)  # defaults to 0
    upper: np.ndarray = field(default=None)  # defaults to capital

    def __post_init__(self):
        d = int(self.d)
        if d < 1:
            raise ConfigError("dimension must be >= 1")
        if not np.isfinite(self.capital) or self.capital <= 0:
            raise ConfigError("capital must be a positive real")
        A = np.zeros((0, d)) if self.A is None else np.atleast_2d(np.asarray(self.A, dtype=float))
        bb = np.zeros(0) if self.b is None else np.atleast_1d(np.asarray(self.b, dtype=float))
        if A.shape != (bb.size, d):
            raise ConfigError("inequality rows and right-hand sides do not match")
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(bb)):
            raise ConfigError("inequality rows must be finite")
        lo = np.zeros(d) if self.lower is None else np.asarray(self.lower, dtype=float) + np.zeros(d)
        up = np.full(d, self.capital) if self.upper is None else np.asarray(self.upper, dtype=float) + np.zeros(d)
        if np.any(lo < 0):
            raise ConfigError("lower bounds must be nonnegative (no short selling)")
        if np.any(lo > up):
            raise ConfigError("lower bounds exceed upper bounds")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "capital", float(self.capital))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", bb)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)
        if lp.find_feasible_point(
            A_ub=A if A.size else None,
            b_ub=bb if bb.size else None,
            A_eq=np.ones((1, d)),
            b_eq=np.array([self.capital]),
            bounds=list(zip(lo, up)),
        ) is None:
            raise ConfigError("feasible region is empty")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def contains(self, x, tol: float = 1e-8) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(
            abs(x.sum() - self.capital) <= tol
            and np.all(x >= self.lower - tol)
            and np.all(x <= self.upper + tol)
            and (self.m == 0 or np.all(self.A @ x <= self.b + tol))
        )

    def with_bounds(self, lower, upper) -> "FeasibleRegion":
        """Same rows, bounds intersected with the given box."""
        return FeasibleRegion(
            self.d,
            self.capital,
            self.A if self.m else None,
            self.b if self.m else None,
            np.maximum(self.lower, lower),
            np.minimum(self.upper, upper),
        )

    @classmethod
    def from_dict(cls, spec: dict) -> "FeasibleRegion":
        try:
            d = int(spec["d"])
            capital = float(spec.get("capital", 1.0))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad feasible-region spec: {exc}") from exc
        rows = spec.get("rows", [])
        A = np.array([r["a"] for r in rows], dtype=float) if rows else None
        b = np.array([r["b"] for r in rows], dtype=float) if rows else None
        return cls(d, capital, A, b, spec.get("lower"), spec.get("upper"))

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "capital": self.capital,
            "rows": [{"a": a.tolist(), "b": float(bi)} for a, bi in zip(self.A, self.b)],
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
        }


def _clean_generators(G: np.ndarray) -> np.ndarray:
    """Unit-normalize rows, dropping zero rows and duplicate directions."""
    norms = np.linalg.norm(G, axis=1)
    G = G[norms > 1e-12] / norms[norms > 1e-12, None]
    kept: list[np.ndarray] = []
    for row in G:
        if not any(row @ other > 1.0 - 1e-10 for other in kept):
            kept.append(row)
    return np.array(kept) if kept else np.zeros((0, G.shape[1] if G.ndim == 2 else 0))


@dataclass(frozen=True)
class Cone:
    """Convex cone in generator and/or polyhedral form.

    generators: (k, d), rows are generating rays (stored unit-normalized,
    zero rows and duplicates dropped). facets: (p, d), cone is
    {x : facets @ x >= 0}. At least one form must be present.
    """

    d: int
    generators: np.ndarray | None = None
    facets: np.ndarray | None = None

    def __post_init__(self):
        if self.generators is None and self.facets is None:
            raise ConfigError("cone needs a generator or a facet form")
        if self.generators is not None:
            G = np.atleast_2d(np.asarray(self.generators, dtype=float))
            if G.shape[1] != self.d:
                raise ConfigError("generator rows have the wrong dimension")
            object.__setattr__(self, "generators", _clean_generators(G))
        if self.facets is not None:
            B = np.atleast_2d(np.asarray(self.facets, dtype=float))
            if B.shape[1] != self.d:
                raise ConfigError("facet rows have the wrong dimension")
            B = B[np.linalg.norm(B, axis=1) > 1e-12]
            object.__setattr__(self, "facets", B)

    def to_json(self) -> str:
        doc: dict = {"d": self.d}
        if self.generators is not None:
            doc["generators"] = self.generators.tolist()
        if self.facets is not None:
            doc["facets"] = self.facets.tolist()
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "Cone":
        try:
            doc = json.loads(text)
            d = int(doc["d"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad cone document: {exc}") from exc
        gens = np.array(doc["generators"], dtype=float) if "generators" in doc else None
        facets = np.array(doc["facets"], dtype=float) if "facets" in doc else None
        return cls(d, gens, facets)


def conic_hull(region: FeasibleRegion) -> Cone:
    """Conic hull of the feasible set, in closed polyhedral form.

    Each inequality row (a, b) of the region contributes the facet
    (b/capital) * 1 - a; nontrivial bounds are folded in as rows first
    (x_j <= u_j for u_j < capital, x_j >= l_j for l_j > 0); the positivity
    constraints contribute the identity rows. With no rows and trivial
    bounds the hull is the nonnegative orthant and the standard basis is
    attached as a generator form as well.
    """
    c = region.capital
    if c <= 0:
        raise ConfigError("capital must be positive")
    d = region.d
    rows = [region.A] if region.m else []
    rhs = [region.b] if region.m else []
    up_idx = np.flatnonzero(region.upper < c - 1e-12)
    if up_idx.size:
        E = np.zeros((up_idx.size, d))
        E[np.arange(up_idx.size), up_idx] = 1.0
        rows.append(E)
        rhs.append(region.upper[up_idx])
    lo_idx = np.flatnonzero(region.lower > 1e-12)
    if lo_idx.size:
        E = np.zeros((lo_idx.size, d))
        E[np.arange(lo_idx.size), lo_idx] = -1.0
        rows.append(E)
        rhs.append(-region.lower[lo_idx])
    if rows:
        A = np.vstack(rows)
        b = np.concatenate(rhs)
        B = np.vstack([np.outer(b / c, np.ones(d)) - A, np.eye(d)])
        return Cone(d, facets=B)
    return Cone(d, generators=np.eye(d), facets=np.eye(d))


def _lemke(M: np.ndarray, q: np.ndarray, maxiter: int | None = None) -> np.ndarray:
    """Solve the LCP w = q + M z, w,z >= 0, w'z = 0 for PSD M.

    Covering-vector variant with lexicographic tie-breaking in the ratio
    test, which prevents cycling under degeneracy. The basis system is
    re-solved from scratch every pivot (revised form) because projection
    LCPs with redundant generators make M rank-deficient, and an updated
    tableau accumulates error fast enough there to produce spurious rays.
    Returns z.
    """
    k = q.size
    if k == 0:
        return np.zeros(0)
    if np.all(q >= 0):
        return np.zeros(k)
    if maxiter is None:
        maxiter = 100 * k + 200
    # Column j is: w_j for j < k, z_{j-k} for k <= j < 2k, the covering z0
    # for j = 2k.
    C = np.hstack([np.eye(k), -M, -np.ones((k, 1))])
    basis = np.arange(k)
    basis[int(np.argmin(q))] = 2 * k
    entering = int(np.argmin(q)) + k  # complement of the w that just left
    for _ in range(maxiter):
        B = C[:, basis]
        try:
            sol = np.linalg.solve(B, np.column_stack([q, C[:, entering], np.eye(k)]))
        except np.linalg.LinAlgError as exc:
            raise SolverError("Lemke basis became singular") from exc
        rhs = np.maximum(sol[:, 0], 0.0)  # clamp roundoff in a feasible basis
        col = sol[:, 1]
        binv = sol[:, 2:]
        candidates = np.flatnonzero(col > LEMKE_PIVOT_TOL)
        if candidates.size == 0:
            raise SolverError("Lemke ray termination on a PSD system")
        ratios = rhs[candidates] / col[candidates]
        best = ratios.min()
        tied = candidates[ratios <= best + LEMKE_PIVOT_TOL * (1.0 + abs(best))]
        if tied.size > 1:
            lex = binv[tied] / col[tied, None]
            order = np.lexsort(lex.T[::-1])
            leave = int(tied[order[0]])
        else:
            leave = int(tied[0])
        exiting = basis[leave]
        basis[leave] = entering
        if exiting == 2 * k:
            B = C[:, basis]
            try:
                vals = np.maximum(np.linalg.solve(B, q), 0.0)
            except np.linalg.LinAlgError as exc:
                raise SolverError("Lemke final basis is singular") from exc
            z = np.zeros(k)
            in_z = (basis >= k) & (basis < 2 * k)
            z[basis[in_z] - k] = vals[in_z]
            return z
        entering = exiting + k if exiting < k else exiting - k
    raise SolverError("Lemke iteration limit")


def _lcp_descent(M: np.ndarray, q: np.ndarray, maxiter: int = 200_000) -> np.ndarray:
    """Accelerated projected gradient on min 0.5 lam'M lam + q'lam, lam >= 0.

    Fallback for the rare rank-deficient LCPs where finite-precision
    complementary pivoting stalls on a spurious ray. Stops on the
    complementarity residual, with a stagnation exit for the degenerate
    tail (callers polish the active set afterwards).
    """
    k = q.size
    L = max(float(np.linalg.eigvalsh(M)[-1]), 1e-30)
    scale = 1.0 + float(np.abs(q).max())
    lam = np.maximum(-q / max(np.diag(M).max(), 1e-30), 0.0)
    v = lam.copy()
    t = 1.0
    f_prev = np.inf
    f_mark = np.inf
    best = lam
    for it in range(maxiter):
        grad = M @ v + q
        lam_new = np.maximum(v - grad / L, 0.0)
        f = 0.5 * lam_new @ M @ lam_new + q @ lam_new
        if f > f_prev:  # restart momentum
            v = lam_new.copy()
            t = 1.0
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            v = lam_new + ((t - 1.0) / t_new) * (lam_new - lam)
            t = t_new
        lam = lam_new
        if f < f_prev:
            best = lam
        f_prev = min(f_prev, f)
        if it % 50 == 0:
            w = M @ lam + q
            if np.abs(np.minimum(lam, w)).max() <= 1e-10 * scale:
                return lam
        if it % 5000 == 4999:
            if f_mark - f_prev <= 1e-16 * scale * scale:
                return best
            f_mark = f_prev
    return best


def solve_psd_lcp(M: np.ndarray, q: np.ndarray) -> np.ndarray:
    """z with M z + q >= 0, z >= 0, z'(Mz + q) = 0 for PSD M.

    Lemke complementary pivoting first; a graded perturbation of q breaks
    the degenerate ties that rank-deficient M produces (callers polish the
    support afterwards, so the 1e-10-scale shift washes out); the convex-QP
    descent is the last resort.
    """
    try:
        return _lemke(M, q)
    except SolverError:
        pass
    eps = 1e-10 * (1.0 + float(np.abs(q).max())) * np.arange(1, q.size + 1)
    try:
        return _lemke(M, q + eps)
    except SolverError:
        return _lcp_descent(M, q)


class ConeProjector:
    """Reusable projection engine for one cone.

    Precomputes the generator matrix (the cone's own, or the polar cone's
    negated facet rows for the Moreau route) and its Gram matrix once, so
    batch classification does not rebuild them per point. The LCP support
    found by the solver is polished with one least-squares solve, which
    pins the orthogonality residual (x0 - p)'p near machine precision.
    """

    def __init__(self, cone: Cone, prefer: str | None = None):
        if prefer is None:
            prefer = "generators" if cone.generators is not None else "facets"
        if prefer == "generators":
            if cone.generators is None:
                raise ConfigError("cone has no generator form")
            self.via_polar = False
            self.G = cone.generators
        else:
            if cone.facets is None:
                raise ConfigError("cone has no facet form")
            self.via_polar = True
            self.G = _clean_generators(-cone.facets)
        self.d = cone.d
        self.M = self.G @ self.G.T

    def _cone_point(self, x0: np.ndarray) -> np.ndarray:
        """Nearest point of cone{rows of G} to x0."""
        G = self.G
        if G.shape[0] == 0:
            return np.zeros(self.d)
        lam = solve_psd_lcp(self.M, -G @ x0)
        support = np.flatnonzero(lam > 0)
        if support.size:
            lam_s, *_ = np.linalg.lstsq(G[support].T, x0, rcond=None)
            if np.all(lam_s >= -1e-9):
                return G[support].T @ np.maximum(lam_s, 0.0)
        return G.T @ lam

    def project(self, x0) -> np.ndarray:
        x0 = np.asarray(x0, dtype=float)
        if not np.all(np.isfinite(x0)):
            raise ConfigError("cannot project a non-finite point")
        p = self._cone_point(x0)
        return x0 - p if self.via_polar else p


def project_generators(cone: Cone, x0) -> np.ndarray:
    """Project x0 onto a finitely generated cone via the Lemke LCP.

    With generators as rows of G, the nearest point is G' lam* where lam
    solves the LCP with M = G G' and q = -G x0.
    """
    return ConeProjector(cone, prefer="generators").project(x0)


def project_polyhedral(cone: Cone, x0) -> np.ndarray:
    """Project x0 onto {x : B x >= 0} through the polar cone.

    The polar of the facet cone is generated by the negated facet rows, so
    p_K(x0) = x0 - p_polar(x0) by the Moreau decomposition. Reuses the same
    Lemke core; no facet enumeration of the primal cone is ever needed.
    """
    return ConeProjector(cone, prefer="facets").project(x0)


def project(cone: Cone, x0) -> np.ndarray:
    """Project onto the cone using whichever representation is present."""
    return ConeProjector(cone).project(x0)


def cone_member(cone: Cone, x, tol: float = MEMBER_TOL) -> bool:
    """Membership test: facet inequalities when available, projection residual otherwise."""
    x = np.asarray(x, dtype=float)
    if cone.facets is not None:
        if cone.facets.shape[0] == 0:
            return True
        return bool(np.min(cone.facets @ x) >= -tol)
    return bool(np.linalg.norm(x - project_generators(cone, x)) <= tol)


def project_polytope(y, G: np.ndarray, h: np.ndarray, gram: np.ndarray | None = None) -> np.ndarray:
    """Euclidean projection onto {x : G x <= h} via the KKT LCP.

    With multipliers lam, the projection is y - G' lam where lam solves the
    LCP with M = G G' and q = h - G y (the same PSD class as cone
    projection, so the same solver core applies). Equalities enter as
    opposing row pairs. A least-squares polish on the active rows tightens
    the result when it stays feasible.
    """
    y = np.asarray(y, dtype=float)
    q = h - G @ y
    if np.all(q >= 0):
        return y.copy()
    M = G @ G.T if gram is None else gram
    lam = solve_psd_lcp(M, q)
    x = y - G.T @ lam
    active = np.flatnonzero(lam > 1e-12)
    if active.size:
        Ga, ha = G[active], h[active]
        shift = Ga @ y - ha
        x_pol = y - Ga.T @ np.linalg.lstsq(Ga @ Ga.T, shift, rcond=None)[0]
        scale = 1.0 + float(np.abs(h).max())
        if np.all(G @ x_pol <= h + 1e-9 * scale):
            return x_pol
    return x


def transform(cone: Cone, P: np.ndarray) -> Cone:
    """The image cone P K for a nonsingular matrix P.

    Generator rows map through P; facet rows become B P^{-1}.
    """
    gens = cone.generators @ P.T if cone.generators is not None else None
    facets = None
    if cone.facets is not None:
        facets = np.linalg.solve(P.T, cone.facets.T).T  # B P^{-1}
    return Cone(cone.d, gens, facets)
