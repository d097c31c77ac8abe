"""Dense two-phase simplex solver.

Scenario CVaR programs at desk scale stay small (a few thousand rows), so a
dense tableau simplex with an explicit basis is enough and keeps the package
dependency-free. Entering variable: most negative reduced cost, ratio ties
broken by largest pivot element; after a sustained run of degenerate pivots
(10x the row count) the solver falls back to Bland's rule, which cannot
cycle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverError

FEAS_TOL = 1e-9
OPT_TOL = 1e-9


@dataclass(frozen=True)
class LpResult:
    status: str  # optimal | infeasible | unbounded | iteration-limit
    x: np.ndarray | None
    objective: float | None
    iterations: int


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])
    T[:, col] = 0.0
    T[row, col] = 1.0


def _run_simplex(T, basis, c, maxiter, bland_after):
    """Pivot until optimal/unbounded. T is m x (n+1) with rhs last; T[:,basis]=I."""
    m, n1 = T.shape
    n = n1 - 1
    degen_run = 0
    bland = False
    for it in range(maxiter):
        r = c - c[basis] @ T[:, :n]
        r[basis] = 0.0
        if bland:
            neg = np.flatnonzero(r < -OPT_TOL)
            if neg.size == 0:
                return "optimal", it
            enter = int(neg[0])
        else:
            enter = int(np.argmin(r))
            if r[enter] >= -OPT_TOL:
                return "optimal", it
        col = T[:, enter]
        pos = col > FEAS_TOL
        if not pos.any():
            return "unbounded", it
        ratios = np.full(m, np.inf)
        ratios[pos] = T[pos, n] / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + FEAS_TOL * (1.0 + abs(best)))
        if bland:
            leave = int(ties[np.argmin(basis[ties])])
        else:
            leave = int(ties[np.argmax(col[ties])])
        if best <= FEAS_TOL:
            degen_run += 1
            if degen_run > bland_after:
                bland = True
        else:
            degen_run = 0
            bland = False
        _pivot(T, leave, enter)
        basis[leave] = enter
    return "iteration-limit", maxiter


def solve(
    c,
    A_ub=None,
    b_ub=None,
    A_eq=None,
    b_eq=None,
    bounds=None,
    maxiter: int | None = None,
) -> LpResult:
    """Minimize c @ x subject to A_ub x <= b_ub, A_eq x = b_eq and box bounds.

    `bounds` is a per-variable list of (lo, hi); None means unbounded on that
    side; default (0, inf). Free variables are split, finite lower bounds are
    shifted out, finite upper bounds become rows.
    """
    c = np.asarray(c, dtype=float)
    nvar = c.size
    A_ub = np.zeros((0, nvar)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.atleast_1d(np.asarray(b_ub, dtype=float))
    A_eq = np.zeros((0, nvar)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(np.asarray(b_eq, dtype=float))
    if bounds is None:
        bounds = [(0.0, None)] * nvar
    if len(bounds) != nvar:
        raise ValueError("bounds length must match the number of variables")

    # Rewrite every variable as a nonnegative one: shift finite lower bounds,
    # mirror (-inf, hi] variables, split free ones. cols[j] = list of
    # (shifted column index, sign); offset[j] restores the original value.
    lo = np.array([-np.inf if b[0] is None else float(b[0]) for b in bounds])
    hi = np.array([np.inf if b[1] is None else float(b[1]) for b in bounds])
    if np.any(lo > hi):
        return LpResult("infeasible", None, None, 0)

    col_of = []
    offsets = []
    signs = []
    split_extra = []
    ncols = 0
    ub_rows = []  # (col index, residual upper bound)
    for j in range(nvar):
        if np.isfinite(lo[j]):
            col_of.append(ncols)
            offsets.append(lo[j])
            signs.append(1.0)
            if np.isfinite(hi[j]):
                ub_rows.append((ncols, hi[j] - lo[j]))
            ncols += 1
        elif np.isfinite(hi[j]):
            col_of.append(ncols)
            offsets.append(hi[j])
            signs.append(-1.0)
            ncols += 1
        else:
            col_of.append(ncols)
            offsets.append(0.0)
            signs.append(1.0)
            split_extra.append((j, ncols + 1))
            ncols += 2

    def expand(A):
        out = np.zeros((A.shape[0], ncols))
        for j in range(nvar):
            out[:, col_of[j]] = signs[j] * A[:, j]
        for j, extra in split_extra:
            out[:, extra] = -A[:, j]
        return out

    offset_vec = np.asarray(offsets)
    Aub_x = expand(A_ub)
    bub_x = b_ub - A_ub @ offset_vec
    Aeq_x = expand(A_eq)
    beq_x = b_eq - A_eq @ offset_vec
    if ub_rows:
        extra = np.zeros((len(ub_rows), ncols))
        extra_b = np.zeros(len(ub_rows))
        for i, (col, ub) in enumerate(ub_rows):
            extra[i, col] = 1.0
            extra_b[i] = ub
        Aub_x = np.vstack([Aub_x, extra])
        bub_x = np.concatenate([bub_x, extra_b])

    m_ub, m_eq = Aub_x.shape[0], Aeq_x.shape[0]
    m = m_ub + m_eq
    nslack = m_ub
    c_x = np.zeros(ncols)
    for j in range(nvar):
        c_x[col_of[j]] += signs[j] * c[j]
    for j, extra in split_extra:
        c_x[extra] -= c[j]

    # Rows: [A_ub | slack I] then [A_eq | 0]; flip rows to rhs >= 0.
    A = np.zeros((m, ncols + nslack))
    rhs = np.zeros(m)
    A[:m_ub, :ncols] = Aub_x
    A[:m_ub, ncols : ncols + nslack] = np.eye(nslack)
    rhs[:m_ub] = bub_x
    A[m_ub:, :ncols] = Aeq_x
    rhs[m_ub:] = beq_x
    flip = rhs < 0
    A[flip] *= -1.0
    rhs[flip] *= -1.0

    # Starting basis: own slack where it still has coefficient +1, else an
    # artificial column (flipped inequality rows and all equality rows).
    needs_art = np.ones(m, dtype=bool)
    basis = np.zeros(m, dtype=int)
    for i in range(m_ub):
        if not flip[i]:
            basis[i] = ncols + i
            needs_art[i] = False
    art_rows = np.flatnonzero(needs_art)
    nart = art_rows.size
    ntot = ncols + nslack + nart
    T = np.zeros((m, ntot + 1))
    T[:, : ncols + nslack] = A
    for k, i in enumerate(art_rows):
        T[i, ncols + nslack + k] = 1.0
        basis[i] = ncols + nslack + k
    T[:, ntot] = rhs

    if maxiter is None:
        maxiter = 10000 + 25 * (m + ncols)
    bland_after = 10 * max(m, 1)
    iters = 0

    if nart:
        c1 = np.zeros(ntot)
        c1[ncols + nslack :] = 1.0
        # Make the dictionary consistent: eliminate basic columns from rows
        # already holds (identity), run phase 1.
        status, it1 = _run_simplex(T, basis, c1, maxiter, bland_after)
        iters += it1
        if status == "iteration-limit":
            return LpResult("iteration-limit", None, None, iters)
        phase1_obj = c1[basis] @ T[:, ntot]
        if phase1_obj > 1e-7:
            return LpResult("infeasible", None, None, iters)
        # Drive leftover artificials out of the basis or drop redundant rows.
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if basis[i] >= ncols + nslack:
                row = T[i, : ncols + nslack]
                cand = np.flatnonzero(np.abs(row) > 1e-9)
                if cand.size:
                    _pivot(T, i, int(cand[0]))
                    basis[i] = int(cand[0])
                else:
                    keep[i] = False
        T = T[keep]
        basis = basis[keep]
        m = T.shape[0]
    T = np.hstack([T[:, : ncols + nslack], T[:, [ntot]]])

    c2 = np.concatenate([c_x, np.zeros(nslack)])
    status, it2 = _run_simplex(T, basis, c2, maxiter, bland_after)
    iters += it2
    if status != "optimal":
        return LpResult(status, None, None, iters)

    full = np.zeros(ncols + nslack)
    full[basis] = T[:, -1]
    x = offset_vec + np.array([signs[j] * full[col_of[j]] for j in range(nvar)])
    for j, extra in split_extra:
        x[j] -= full[extra]
    return LpResult("optimal", x, float(c @ x), iters)


def find_feasible_point(A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None):
    """Phase-1 probe: a feasible point, or None when the system is infeasible."""
    nvar = None
    for mat in (A_ub, A_eq):
        if mat is not None:
            nvar = np.atleast_2d(np.asarray(mat)).shape[1]
            break
    if nvar is None:
        nvar = len(bounds)
    res = solve(np.zeros(nvar), A_ub, b_ub, A_eq, b_eq, bounds)
    if res.status == "optimal":
        return res.x
    if res.status == "infeasible":
        return None
    raise SolverError(f"feasibility probe failed: {res.status}")
