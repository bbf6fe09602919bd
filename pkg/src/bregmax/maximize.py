"""Maximizing the divergence from a family over the probability simplex."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ViolatedNecessaryCondition
from .family import SUPPORT_EPS, Instance, Pm, as_weights, support_of
from .numerics import orthocomplement_basis, solve_decreasing_root
from .projection import _project, h_energy

log = logging.getLogger(__name__)

ENUMERATION_CAP = 8
CRITICAL_TOL = 1e-6
TIE_TOL = 1e-9
ZERO_VALUE = 1e-10  # divergences at or below this are numerically zero (P in the closure)
ARMIJO = 1e-4
_ROUNDING = 8 * np.finfo(float).eps


# ---------------------------------------------------------------------------
# Generic ascent on the simplex
# ---------------------------------------------------------------------------

@dataclass
class AscentResult:
    p: np.ndarray
    value: float
    residual: float
    iterations: int
    converged: bool


_TANGENT: dict[int, np.ndarray] = {}


def _tangent_basis(m: int) -> np.ndarray:
    T = _TANGENT.get(m)
    if T is None:
        T = orthocomplement_basis(np.ones((1, m)))
        _TANGENT[m] = T
    return T


def simplex_ascent(
    evaluate: Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    value: Callable[[np.ndarray], float],
    p0,
    grad_tol: float = 1e-10,
    max_iter: int = 500,
    expand: bool = False,
    expand_eps: float = 1e-6,
) -> AscentResult:
    """Maximize a function on the probability simplex by saddle-free Newton steps.

    ``evaluate(p, S)`` returns the value, the gradient on the support ``S`` and
    the Hessian on ``S``; ``value(p)`` returns the value alone.  Steps stay in
    the tangent space of the face spanned by ``S``; a step that reaches the
    boundary zeroes the blocking coordinates, so the support only shrinks.
    With ``expand``, a converged point is probed for ascent into zero
    coordinates and the search resumes from the best improving probe.
    """
    p = np.array(as_weights(p0), dtype=float)
    p[p <= SUPPORT_EPS] = 0.0
    p /= p.sum()
    it = 0
    expansions = 0
    while True:
        res = _ascend_on_faces(evaluate, value, p, grad_tol, max_iter - it)
        it += res.iterations
        if not (expand and res.converged) or expansions >= p.size or it >= max_iter:
            return AscentResult(res.p, res.value, res.residual, it, res.converged)
        probe = _expansion_probe(value, res.p, res.value, expand_eps)
        if probe is None:
            return AscentResult(res.p, res.value, res.residual, it, res.converged)
        p = probe
        expansions += 1


def _expansion_probe(value, p, val, eps):
    best, best_val = None, val + 1e-12 * max(1.0, abs(val))
    for y in np.flatnonzero(p == 0):
        q = (1 - eps) * p
        q[y] += eps
        v = value(q)
        if v > best_val:
            best, best_val = q, v
    return best


def _ascend_on_faces(evaluate, value, p, grad_tol, max_iter):
    residual = math.inf
    val = None
    for it in range(max_iter):
        S = np.flatnonzero(p > 0)
        if S.size == 1:
            return AscentResult(p, value(p), 0.0, it, True)
        val, g, Hm = evaluate(p, S)
        gc = g - g.mean()
        residual = float(np.abs(gc).max())
        T = _tangent_basis(S.size)
        gt = T @ g
        Ht = T @ Hm @ T.T
        lam, V = np.linalg.eigh(0.5 * (Ht + Ht.T))
        scale = max(1.0, float(np.abs(lam).max()))
        directions = []
        if residual <= grad_tol:
            if lam[-1] <= 1e-9 * scale:
                return AscentResult(p, val, residual, it, True)
            v = T.T @ V[:, -1]
            directions = [v, -v]
        else:
            coef = (V.T @ gt) / np.maximum(np.abs(lam), 1e-8 * scale)
            directions = [T.T @ (V @ coef)]
        moved = False
        for w in directions:
            slope = float(g @ w)
            neg = w < 0
            t_bound = float(np.min(p[S][neg] / -w[neg])) if np.any(neg) else math.inf
            t = min(1.0, t_bound)
            while t > 1e-16:
                q = p.copy()
                q[S] += t * w
                if t == t_bound:
                    blocking = S[neg][np.isclose(p[S][neg] / -w[neg], t_bound, rtol=1e-12, atol=0)]
                    q[blocking] = 0.0
                q = np.maximum(q, 0.0)
                q[q <= SUPPORT_EPS] = 0.0
                q /= q.sum()
                vq = value(q)
                gain_needed = ARMIJO * t * max(slope, 0.0) - _ROUNDING * max(1.0, abs(val))
                if vq >= val + gain_needed and (vq > val or slope > 0):
                    p = q
                    moved = True
                    break
                t *= 0.5
            if moved:
                break
        if not moved:
            return AscentResult(p, val, residual, it, residual <= grad_tol)
    return AscentResult(p, val if val is not None else value(p), residual, max_iter, False)


# ---------------------------------------------------------------------------
# The divergence objective
# ---------------------------------------------------------------------------

class _DivergenceObjective:
    """``P -> B(P, E)`` with derivatives on the support of ``P``.

    The value is ``H(P)`` minus the dual optimum ``sup_theta <theta, mu(P)> -
    Upsilon(theta)``; its error is quadratic in the dual residual, whereas
    ``H(P) - H(Pi_P)`` carries a first-order error ``theta * (moment mismatch)``
    that a line search would otherwise climb.  The gradient on the support is
    ``l(P) - l(Pi_P)``; the Hessian is ``diag(beta''(P)) - F^T J^{-1} F`` with
    ``F`` the reduced statistic on the support and ``J`` the Hessian of the
    potential at the projection.
    """

    def __init__(self, inst: Instance):
        self.inst = inst
        self.warm: dict = {}

    def value(self, p) -> float:
        proj = _project(self.inst, p, self.warm)
        return h_energy(self.inst.beta, p) - proj.dual_obj

    def evaluate(self, p, S):
        inst = self.inst
        proj = _project(inst, p, self.warm)
        val = h_energy(inst.beta, p) - proj.dual_obj
        pos = np.searchsorted(proj.dual.idx, S)
        g = inst.beta.dbeta(p)[S] - proj.r[pos]
        H = np.diag(inst.beta.d2beta(np.where(p > 0, p, 1.0))[S])
        if proj.dual.k:
            Fs = proj.dual.ftil[:, pos]
            H = H - Fs.T @ np.linalg.solve(proj.hess, Fs)
        return val, g, H


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LocalOptimum:
    pm: Pm
    value: float
    residual: float


@dataclass(frozen=True)
class MaxReport:
    global_value: float
    global_argmax: Pm
    local_optima: list[LocalOptimum]
    starts: int
    seed: int
    enumeration_value: float | None = None
    multistart_value: float | None = None
    discarded: int = 0


def criticality_residual(inst: Instance, p) -> float:
    """Spread of ``l(P(z)) - l(Pi_P(z))`` over ``supp(P)``; 0 for members of the closure."""
    w = as_weights(p)
    proj = _project(inst, w)
    if 0.5 * np.abs(w - proj.pi).sum() <= 1e-12:
        return 0.0
    S = np.array(support_of(w))
    pos = np.searchsorted(proj.dual.idx, S)
    diff = inst.beta.dbeta(w)[S] - proj.r[pos]
    return float(np.abs(diff - diff.mean()).max())


def check_positive_gap(inst: Instance, p, raise_on_failure: bool = True) -> tuple[bool, float]:
    """Check ``supp((P - Pi_P)^+) = supp(P)`` and solve for the positive gap ``c``.

    ``c`` solves ``sum_{z in supp P} e_z(l_z(Pi_P(z)) + c) = 1``.
    """
    w = as_weights(p)
    proj = _project(inst, w)
    u = w - proj.pi
    if 0.5 * np.abs(u).sum() <= 1e-12:
        return True, 0.0
    S = np.array(support_of(w))
    plus = set(np.flatnonzero(u > SUPPORT_EPS).tolist())
    ok = plus == set(S.tolist())
    pos = np.searchsorted(proj.dual.idx, S)
    base = proj.r[pos]
    sub = inst.beta.restrict(S)
    g = lambda c: -float(sub.link(base + c).sum())
    dg = lambda c: -float(sub.dlink(base + c).sum())
    c = solve_decreasing_root(g, -1.0, 0.0, inst.tol, dg)
    ok = ok and c > 0
    if not ok and raise_on_failure:
        raise ViolatedNecessaryCondition(
            f"support condition {'holds' if plus == set(S.tolist()) else 'fails'}, c = {c:.3e}"
        )
    return ok, c


def _dedupe(cands, cluster_tv):
    """Cluster by total variation; keep the best value per cluster; sort deterministically.

    Optima whose values tie with the best (within ``TIE_TOL``, relative) come
    first, ordered by descending weights, so the reported global argmax does
    not depend on rounding noise among symmetric maximizers.
    """
    cands = sorted(cands, key=lambda c: (-c[1], tuple(c[0])))
    kept = []
    for p, v, r in cands:
        if all(0.5 * np.abs(p - q).sum() > cluster_tv for q, _, _ in kept):
            kept.append((p, v, r))
    if kept:
        best = kept[0][1]
        tied = [c for c in kept if c[1] >= best - TIE_TOL * max(1.0, abs(best))]
        rest = kept[len(tied):]
        tied.sort(key=lambda c: tuple(-c[0]))
        kept = tied + rest
    return kept


def maximize_divergence(
    inst: Instance,
    starts: int = 16,
    seed: int = 0,
    enumeration_cap: int = ENUMERATION_CAP,
) -> MaxReport:
    """Multistart local ascent for ``max_P B(P, E)`` plus support enumeration.

    Starts: ``starts`` Dirichlet(1, ..., 1) points, every vertex, and every
    midpoint of two vertices.  When ``|Z| <= enumeration_cap`` the uniform pm
    on every support of size at most ``dim(E) + 1`` is also ascended from, and
    that independent estimate is reported as ``enumeration_value``.
    """
    if starts < 1:
        raise ValueError("starts must be at least 1")
    n = inst.n
    rng = np.random.default_rng(seed)
    obj = _DivergenceObjective(inst)
    tol = inst.tol

    def run(p0):
        obj.warm.clear()
        res = simplex_ascent(obj.evaluate, obj.value, p0, expand=True)
        resid = criticality_residual(inst, res.p) if res.value > ZERO_VALUE else 0.0
        return res.p, res.value, resid

    multistart = [rng.dirichlet(np.ones(n)) for _ in range(starts)]
    multistart += [np.eye(n)[z] for z in range(n)]
    multistart += [0.5 * (np.eye(n)[a] + np.eye(n)[b]) for a, b in itertools.combinations(range(n), 2)]
    results = [run(p0) for p0 in multistart]
    ms_value = max(v for _, v, _ in results)

    enum_value = None
    if n <= enumeration_cap:
        enum_results = []
        for size in range(1, min(inst.dim + 1, n) + 1):
            for S in itertools.combinations(range(n), size):
                p0 = np.zeros(n)
                p0[list(S)] = 1.0 / size
                enum_results.append(run(p0))
        enum_value = max(v for _, v, _ in enum_results)
        results += enum_results

    global_value = max(v for _, v, _ in results)
    floor = max(ZERO_VALUE, 1e-12 * global_value)
    cands = [(p, v, r) for p, v, r in results if r <= CRITICAL_TOL and (v > floor or global_value <= floor)]
    discarded = len([1 for _, _, r in results if r > CRITICAL_TOL])
    if discarded:
        log.info("discarded %d unconverged ascent endpoints", discarded)
    kept = _dedupe(cands, tol.cluster_tv)
    optima = [LocalOptimum(Pm.normalized(p), float(v), float(r)) for p, v, r in kept]
    best = optima[0]
    return MaxReport(
        global_value=max(o.value for o in optima),
        global_argmax=best.pm,
        local_optima=optima,
        starts=starts,
        seed=seed,
        enumeration_value=enum_value,
        multistart_value=ms_value,
        discarded=discarded,
    )
