"""Dense numerical primitives: monotone roots, a small LP solver, bases, finite differences."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Callable, Sequence

import numpy as np

from .errors import Infeasible, NoBracket, OutOfRange, Unbounded

_EPS = np.finfo(float).eps

__all__ = [
    "Tolerances",
    "DEFAULT_TOL",
    "LpProblem",
    "LpResult",
    "solve_decreasing_root",
    "decreasing_root_in",
    "invert_increasing",
    "lp_solve",
    "orthocomplement_basis",
    "fd_gradient",
]


@dataclass(frozen=True)
class Tolerances:
    root_abs: float = 1e-12
    grad_norm: float = 1e-9
    lp_feas: float = 1e-9
    fd_step: float = 1e-6
    cluster_tv: float = 1e-5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ValueError(f"tolerance {f.name} must be strictly positive, got {v!r}")

    def with_overrides(self, **overrides) -> "Tolerances":
        unknown = set(overrides) - {f.name for f in fields(self)}
        if unknown:
            raise ValueError(f"unknown tolerance(s): {sorted(unknown)}")
        return replace(self, **{k: float(v) for k, v in overrides.items()})


DEFAULT_TOL = Tolerances()


# ---------------------------------------------------------------------------
# Monotone scalar roots
# ---------------------------------------------------------------------------

def decreasing_root_in(
    h: Callable[[float], float],
    lo: float,
    hi: float,
    abs_tol: float = 1e-12,
    dh: Callable[[float], float] | None = None,
    x0: float | None = None,
    max_iter: int = 400,
) -> float:
    """Root of a decreasing ``h`` known to change sign on the open interval (lo, hi).

    Newton steps are taken when ``dh`` is given and the step stays inside the
    current bracket and halves the residual; otherwise the bracket is bisected.
    The endpoints are never evaluated, so ``h`` may diverge there.
    """
    x = 0.5 * (lo + hi) if x0 is None or not lo < x0 < hi else float(x0)
    best_x, best_abs = x, math.inf
    prev_abs = math.inf
    for _ in range(max_iter):
        hx = h(x)
        if math.isnan(hx):
            raise ValueError(f"function returned NaN at {x!r}")
        ahx = abs(hx)
        if ahx < best_abs:
            best_x, best_abs = x, ahx
        if ahx <= abs_tol:
            return x
        if hx > 0:
            lo = x
        else:
            hi = x
        if hi - lo <= 4 * _EPS * max(1.0, abs(x)):
            break
        x_new = None
        if dh is not None and math.isfinite(hx) and ahx <= 0.5 * prev_abs:
            d = dh(x)
            if d < 0 and math.isfinite(d):
                cand = x - hx / d
                if lo < cand < hi:
                    x_new = cand
        if x_new is None:
            x_new = 0.5 * (lo + hi)
        if x_new == x:
            break
        prev_abs = ahx
        x = x_new
    return best_x


def solve_decreasing_root(
    g: Callable[[float], float],
    target: float,
    hint: float = 0.0,
    tol: Tolerances = DEFAULT_TOL,
    dg: Callable[[float], float] | None = None,
    max_width: float = 1e9,
) -> float:
    """Solve ``g(r) = target`` for a strictly decreasing continuous ``g``.

    A bracket is grown geometrically (width 1, 2, 4, ...) from ``hint`` in the
    direction of the root; the root is then polished by safeguarded Newton.

    >>> round(solve_decreasing_root(lambda r: 2 * math.exp(-r), 1.0), 9)
    0.693147181
    """
    h = lambda r: g(r) - target
    dh = dg
    h0 = h(hint)
    if abs(h0) <= tol.root_abs:
        return float(hint)
    width = 1.0
    if h0 > 0:
        lo = float(hint)
        while True:
            hi = hint + width
            if h(hi) <= 0:
                break
            lo = hi
            width *= 2.0
            if width > max_width:
                raise NoBracket(f"no sign change within {max_width:g} right of {hint:g}")
    else:
        hi = float(hint)
        while True:
            lo = hint - width
            if h(lo) >= 0:
                break
            hi = lo
            width *= 2.0
            if width > max_width:
                raise NoBracket(f"no sign change within {max_width:g} left of {hint:g}")
    # endpoints were evaluated: accept an exact hit
    for end in (lo, hi):
        if abs(h(end)) <= tol.root_abs:
            return float(end)
    x0 = hint if lo < hint < hi else None
    return decreasing_root_in(h, lo, hi, tol.root_abs, dh, x0)


def invert_increasing(
    h: Callable[[float], float],
    y: float,
    tol: Tolerances = DEFAULT_TOL,
    domain: str = "positive",
    dh: Callable[[float], float] | None = None,
    bounds: tuple[float, float] = (1e-300, 1e300),
) -> float:
    """Return ``x`` with ``h(x) = y`` for ``h`` strictly increasing on its domain.

    ``domain="positive"`` searches ``x`` in ``bounds`` on a log scale;
    ``domain="real"`` searches all of R by bracket expansion.
    """
    if domain == "real":
        try:
            dneg = None if dh is None else (lambda r: -dh(r))
            return solve_decreasing_root(lambda r: -h(r), -y, 0.0, tol, dneg)
        except NoBracket as exc:
            raise OutOfRange(f"{y!r} outside the range of the function") from exc
    if domain != "positive":
        raise ValueError(f"unknown domain {domain!r}")
    a, b = bounds
    if not h(a) <= y <= h(b):
        raise OutOfRange(f"{y!r} outside [{h(a)!r}, {h(b)!r}]")
    ht = lambda t: y - h(math.exp(t))
    dht = None if dh is None else (lambda t: -math.exp(t) * dh(math.exp(t)))
    t = decreasing_root_in(ht, math.log(a), math.log(b), tol.root_abs, dht, x0=0.0)
    return math.exp(t)


# ---------------------------------------------------------------------------
# Linear programming (dense two-phase simplex, Bland's rule)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LpProblem:
    """Maximize ``objective @ x`` subject to ``eq_matrix @ x = eq_rhs`` and ``x >= lower_bounds``."""

    objective: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    lower_bounds: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        A = np.asarray(self.eq_matrix, dtype=float).reshape(-1, c.size)
        b = np.asarray(self.eq_rhs, dtype=float).ravel()
        if A.shape[0] != b.size:
            raise ValueError("eq_matrix row count must equal eq_rhs length")
        lb = np.zeros(c.size) if self.lower_bounds is None else np.asarray(self.lower_bounds, dtype=float).ravel()
        if lb.size != c.size:
            raise ValueError("lower_bounds length must equal objective length")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "eq_matrix", A)
        object.__setattr__(self, "eq_rhs", b)
        object.__setattr__(self, "lower_bounds", lb)


@dataclass(frozen=True)
class LpResult:
    status: str
    x: np.ndarray
    value: float


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    colv = T[:, col].copy()
    colv[row] = 0.0
    T -= np.outer(colv, T[row])


def _simplex_phase(T, basis, cost, ncols, max_iter=10_000, piv_tol=1e-12, rc_tol=1e-11):
    """Run Bland-rule pivots on tableau ``T`` (rows ``[B^-1 A | B^-1 b]``) to maximize ``cost``."""
    m = T.shape[0]
    for _ in range(max_iter):
        cb = cost[basis]
        reduced = cost[:ncols] - cb @ T[:, :ncols]
        entering = next((j for j in range(ncols) if reduced[j] > rc_tol), None)
        if entering is None:
            return
        colv = T[:, entering]
        best_row, best_ratio = None, math.inf
        for i in range(m):
            if colv[i] > piv_tol:
                ratio = T[i, -1] / colv[i]
                if ratio < best_ratio - 1e-14 or (
                    abs(ratio - best_ratio) <= 1e-14 and basis[i] < basis[best_row]
                ):
                    best_row, best_ratio = i, ratio
        if best_row is None:
            raise Unbounded("objective unbounded above on the feasible set")
        _pivot(T, best_row, entering)
        basis[best_row] = entering
    raise RuntimeError("simplex iteration limit reached")


def lp_solve(p: LpProblem, tol: Tolerances = DEFAULT_TOL) -> LpResult:
    """Solve a small dense LP to optimality with a deterministic pivot sequence."""
    c, A, lb = p.objective, p.eq_matrix, p.lower_bounds
    n = c.size
    b = p.eq_rhs - A @ lb
    A = A.copy()
    neg = b < 0
    A[neg] *= -1.0
    b = np.where(neg, -b, b)
    m = A.shape[0]
    if m == 0:
        if np.any(c > 0):
            raise Unbounded("no constraints and a positive objective coefficient")
        return LpResult("optimal", lb.copy(), float(c @ lb))

    T = np.zeros((m, n + m + 1))
    T[:, :n] = A
    T[:, n:n + m] = np.eye(m)
    T[:, -1] = b
    basis = list(range(n, n + m))
    phase1_cost = np.concatenate([np.zeros(n), -np.ones(m), [0.0]])
    _simplex_phase(T, basis, phase1_cost, n + m)
    infeas = float(T[:, -1] @ (np.array(basis) >= n))
    if infeas > tol.lp_feas * max(1.0, float(np.abs(b).max())):
        raise Infeasible(f"phase-one residual {infeas:.3e}")

    # drive artificial variables out of the basis; drop redundant rows
    keep = []
    for i in range(m):
        if basis[i] >= n:
            j = next((j for j in range(n) if abs(T[i, j]) > 1e-9), None)
            if j is None:
                continue
            _pivot(T, i, j)
            basis[i] = j
        keep.append(i)
    T = np.hstack([T[keep, :n], T[keep, -1:]])
    basis = [basis[i] for i in keep]
    if not basis:
        if np.any(c > 0):
            raise Unbounded("redundant constraints leave a positive objective direction free")
        return LpResult("optimal", lb.copy(), float(c @ lb))
    cost = np.concatenate([c, [0.0]])
    _simplex_phase(T, basis, cost, n)
    y = np.zeros(n)
    y[basis] = T[:, -1]
    y = np.maximum(y, 0.0)
    x = y + lb
    return LpResult("optimal", x, float(c @ x))


# ---------------------------------------------------------------------------
# Linear algebra and finite differences
# ---------------------------------------------------------------------------

def orthocomplement_basis(
    vectors: Sequence[Sequence[float]] | np.ndarray,
    dim: int | None = None,
    rank_tol: float = 1e-10,
) -> np.ndarray:
    """Orthonormal rows spanning the orthogonal complement of ``span(vectors)``."""
    M = np.asarray(vectors, dtype=float)
    if M.size == 0:
        if dim is None:
            raise ValueError("dim is required when no vectors are given")
        return np.eye(dim)
    M = np.atleast_2d(M)
    n = M.shape[1]
    if dim is not None and dim != n:
        raise ValueError(f"vectors have length {n}, expected {dim}")
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    rank = int(np.sum(s > rank_tol * max(1.0, s[0]))) if s.size else 0
    return Vt[rank:].copy()


def fd_gradient(fn: Callable[[np.ndarray], float], x, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (fn(x + e) - fn(x - e)) / (2 * step)
    return grad
