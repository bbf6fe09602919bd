"""Kernel directions, codimension-one families, and the auxiliary maximum B-bar.

For a direction ``u`` (``sum u = 0``) the family ``F_u`` is the Bregman family
whose kernel space is the line through ``u``.  Two facts drive the evaluation
of ``Bbar(u) = max { B(P, F_u) : P on the closed positive side }``:

* the pms with the same ``F_u``-moments as ``P`` form the segment
  ``(P + R u)`` inside the simplex, so the projection onto ``F_u`` is the
  minimizer of the energy ``H`` on that segment, a one-dimensional monotone
  root ``sum_z u(z) l_z(P(z) - lam u(z)) = 0``;
* every maximizer is supported exactly on ``supp(u+)``, and on the boundary
  of that face the objective vanishes.

Hence ``Bbar(u)`` is a smooth maximization over the open simplex on
``supp(u+)`` with a cheap scalar projection inside.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .beta import CLASSICAL, ENTROPY_QUADRATIC, BetaSystem, make_classical, make_entropy_quadratic
from .errors import MemberOfClosure, NonClassicalSystem, NonKernelDirection, NonKernelSum, TrivialKernel, ZeroDirection
from .family import Instance, Pm, as_weights, kernel_basis
from .maximize import simplex_ascent
from .numerics import DEFAULT_TOL, Tolerances, decreasing_root_in, orthocomplement_basis
from .projection import rb_project

SIDE_THRESHOLD = 1e-10
NOISE_REL = 1e-10  # direction entries below this fraction of max|u| are treated as zero


class AmbiguousMaximizer(UserWarning):
    """More than one local maximizer was found where uniqueness is conjectured."""


@dataclass(frozen=True, eq=False)
class Direction:
    """A nonzero ``u`` with ``sum u = 0``, normalized so ``sum u+ = sum u- = 1``."""

    u: np.ndarray
    u_plus: np.ndarray
    u_minus: np.ndarray

    @property
    def plus_support(self) -> tuple[int, ...]:
        return tuple(np.flatnonzero(self.u > 0).tolist())

    @property
    def minus_support(self) -> tuple[int, ...]:
        return tuple(np.flatnonzero(self.u < 0).tolist())

    def __len__(self) -> int:
        return self.u.size


def normalize_direction(u_raw, sum_tol: float = 1e-10) -> Direction:
    if isinstance(u_raw, Direction):
        return u_raw
    u = np.asarray(u_raw, dtype=float).ravel()
    if u.size == 0 or not np.all(np.isfinite(u)):
        raise ValueError("direction must be a nonempty finite vector")
    if not np.any(u != 0):
        raise ZeroDirection("direction is zero")
    l1 = float(np.abs(u).sum())
    if abs(float(u.sum())) > sum_tol * max(1.0, l1):
        raise NonKernelSum(f"direction entries sum to {u.sum()!r}, not 0")
    # entries at rounding level (e.g. from kernel-basis products) are zero: a
    # spurious 1e-16 coordinate in supp(u+) would make the fiber problem degenerate
    u = np.where(np.abs(u) <= NOISE_REL * float(np.abs(u).max()), 0.0, u)
    plus = np.where(u > 0, u, 0.0)
    minus = np.where(u < 0, -u, 0.0)
    if not (plus.any() and minus.any()):
        raise ZeroDirection("direction is zero up to rounding")
    plus = plus / plus.sum()
    minus = minus / minus.sum()
    for a in (plus, minus):
        a.setflags(write=False)
    un = plus - minus
    un.setflags(write=False)
    return Direction(un, plus, minus)


def family_from_direction(beta: BetaSystem, u, basis_rotation: np.ndarray | None = None) -> Instance:
    """Instance whose kernel space is ``R u``: the statistic spans ``{u, 1}``-perp.

    ``basis_rotation`` (an orthogonal matrix) selects a different orthonormal
    basis of the same statistic space.
    """
    d = normalize_direction(u)
    n = d.u.size
    if n < 2:
        raise ValueError("|Z| must be at least 2")
    f = orthocomplement_basis(np.vstack([d.u, np.ones(n)]))
    if basis_rotation is not None:
        f = np.asarray(basis_rotation, dtype=float) @ f
    inst = Instance(tuple(str(i) for i in range(n)), f, beta)
    K = kernel_basis(inst)
    if K.shape[0] != 1 or abs(abs(float(K[0] @ d.u)) - np.linalg.norm(d.u)) > 1e-8:
        raise ArithmeticError("constructed statistic does not have kernel R u")
    return inst


def classify_side(inst_u: Instance, p, u) -> str:
    """``'plus'``, ``'boundary'`` or ``'minus'`` by the sign of ``<P - Pi_{F_u,P}, u>``."""
    d = normalize_direction(u)
    w = as_weights(p)
    proj = rb_project(inst_u, w)
    s = float((w - proj.pi.weights) @ d.u)
    if s > SIDE_THRESHOLD:
        return "plus"
    if s < -SIDE_THRESHOLD:
        return "minus"
    return "boundary"


# ---------------------------------------------------------------------------
# One-dimensional projection along u and the fiber objective
# ---------------------------------------------------------------------------

class _FiberObjective:
    """``x -> B(P, F_u)`` for ``P`` supported on ``supp(u+)`` with weights ``x``."""

    def __init__(self, beta: BetaSystem, d: Direction, tol: Tolerances = DEFAULT_TOL):
        self.d = d
        self.tol = tol
        self.n = d.u.size
        self.nz = np.flatnonzero(d.u != 0)
        self.plus = np.flatnonzero(d.u > 0)
        self.uz = d.u[self.nz]
        self.beta = beta.restrict(self.nz)
        # positions of the plus coordinates inside nz
        self.plus_in_nz = np.searchsorted(self.nz, self.plus)
        self.pos_mask = self.uz > 0
        self.neg_mask = self.uz < 0
        self._last_lam = None  # warm start for the next line projection

    def embed(self, x) -> np.ndarray:
        p = np.zeros(self.n)
        p[self.plus] = x
        return p

    def line_projection(self, pz: np.ndarray) -> tuple[float, np.ndarray]:
        """``(lam, Pi)`` on the nonzero coordinates of ``u`` for weights ``pz``."""
        u = self.uz
        lo = float(np.max(-pz[self.neg_mask] / -u[self.neg_mask]))
        hi = float(np.min(pz[self.pos_mask] / u[self.pos_mask]))
        if not hi > lo:
            lam = lo
        else:
            beta = self.beta
            h = lambda t: float(u @ beta.dbeta(pz - t * u))
            dh = lambda t: -float((u * u) @ beta.d2beta(pz - t * u))
            lam = decreasing_root_in(h, lo, hi, self.tol.root_abs, dh, x0=self._last_lam)
            self._last_lam = lam
        return lam, np.maximum(pz - lam * u, 0.0)

    def _pz(self, x) -> np.ndarray:
        pz = np.zeros(self.nz.size)
        pz[self.plus_in_nz] = x
        return pz

    def value(self, x) -> float:
        pz = self._pz(x)
        _, pi = self.line_projection(pz)
        return float(self.beta.beta(pz).sum() - self.beta.beta(pi).sum())

    def evaluate(self, x, S):
        pz = self._pz(x)
        _, pi = self.line_projection(pz)
        val = float(self.beta.beta(pz).sum() - self.beta.beta(pi).sum())
        idx = self.plus_in_nz[S]
        lpi = self.beta.dbeta(pi)
        g = self.beta.dbeta(pz)[idx] - lpi[idx]
        D = self.beta.d2beta(pi)
        w = D * self.uz
        s = float(self.uz @ w)
        # When the exact root would put a coordinate of Pi below the smallest
        # float, lam stops at the bracket edge with h(lam) != 0; the term
        # h(lam) * dlam/dP restores the derivative of the computed value.
        resid = float(self.uz @ lpi)
        if math.isfinite(resid) and math.isfinite(s) and s > 0:
            g = g + resid * w[idx] / s
        H = np.diag(self.beta.d2beta(np.where(pz > 0, pz, 1.0))[idx] - D[idx]) + np.outer(w[idx], w[idx]) / s
        return val, g, H


@dataclass(frozen=True)
class BbarResult:
    value: float
    argmax: Pm
    base: Pm
    n_local: int
    optima: tuple[tuple[Pm, float], ...] = ()


def bbar_eval(
    beta: BetaSystem,
    u,
    starts: int = 8,
    seed: int = 0,
    tol: Tolerances = DEFAULT_TOL,
    extra_starts=(),
) -> BbarResult:
    """Evaluate ``Bbar(u)`` by multistart ascent over the simplex on ``supp(u+)``.

    Starts: the uniform pm on ``supp(u+)`` and ``starts - 1`` Dirichlet draws
    on it, plus any ``extra_starts`` (weights on ``supp(u+)``).
    """
    d = normalize_direction(u)
    if d.u.size != beta.size:
        raise ValueError(f"direction has {d.u.size} entries, generator system {beta.size}")
    obj = _FiberObjective(beta, d, tol)
    m = obj.plus.size
    if m == 1:
        x = np.ones(1)
        pz = obj._pz(x)
        _, pi = obj.line_projection(pz)
        base = np.zeros(obj.n)
        base[obj.nz] = pi
        val = obj.value(x)
        P = Pm(obj.embed(x))
        return BbarResult(val, P, Pm.normalized(base), 1, ((P, val),))
    rng = np.random.default_rng(seed)
    x0s = [np.full(m, 1.0 / m)] + [rng.dirichlet(np.ones(m)) for _ in range(max(starts, 1) - 1)]
    x0s += [np.asarray(x, dtype=float) for x in extra_starts]
    ends = []
    for x0 in x0s:
        res = simplex_ascent(obj.evaluate, obj.value, x0, grad_tol=1e-10)
        if res.converged and res.value > 0:
            ends.append((res.p, res.value))
    if not ends:
        # fall back to the best endpoint regardless of the residual
        res = simplex_ascent(obj.evaluate, obj.value, x0s[0], grad_tol=1e-10, max_iter=5000)
        ends.append((res.p, res.value))
    ends.sort(key=lambda e: (-e[1], tuple(e[0])))
    clusters = []
    for x, v in ends:
        if all(0.5 * np.abs(x - y).sum() > tol.cluster_tv for y, _ in clusters):
            clusters.append((x, v))
    xbest, vbest = clusters[0]
    pz = obj._pz(xbest)
    _, pi = obj.line_projection(pz)
    base = np.zeros(obj.n)
    base[obj.nz] = pi
    optima = tuple((Pm(obj.embed(x)), float(v)) for x, v in clusters)
    return BbarResult(float(vbest), Pm(obj.embed(xbest)), Pm.normalized(base), len(clusters), optima)


def fiber_point(beta: BetaSystem, u, p) -> tuple[float, Pm]:
    """Projection of ``p`` onto ``F_u`` by the line search along ``u``: ``(lam, Pi)``."""
    d = normalize_direction(u)
    obj = _FiberObjective(beta, d)
    w = as_weights(p)
    lam, pi = obj.line_projection(w[obj.nz])
    out = w.copy()
    out[obj.nz] = pi
    return lam, Pm.normalized(out)


def bbar_classical(nu, u) -> float:
    """Closed form ``ln(1 + exp(sum_z u(z) ln(|u(z)| / nu(z))))`` on normalized ``u``.

    For a constant reference measure this is ``ln(1 + exp(sum_z u ln|u|))``.
    """
    if isinstance(nu, BetaSystem):
        if not nu.is_classical:
            raise NonClassicalSystem("closed form exists only for classical generators")
        nu = nu.params
    nu = np.asarray(nu, dtype=float).ravel()
    d = normalize_direction(u)
    nz = d.u != 0
    dbar = float(d.u[nz] @ np.log(np.abs(d.u[nz]) / nu[nz]))
    return float(np.logaddexp(0.0, dbar))


def dbar(u) -> float:
    """``sum_z u(z) ln|u(z)|`` on the normalized direction."""
    d = normalize_direction(u)
    nz = d.u != 0
    return float(d.u[nz] @ np.log(np.abs(d.u[nz])))


# ---------------------------------------------------------------------------
# Maximizing B-bar over the kernel space
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BbarMaxResult:
    direction: Direction
    value: float
    detail: BbarResult
    evaluations: int
    candidates: tuple[tuple[Direction, float], ...] = ()


def maximize_bbar(
    inst: Instance,
    starts: int = 16,
    seed: int = 0,
    inner_starts: int = 1,
    refine: int = 4,
) -> BbarMaxResult:
    """Multistart Nelder-Mead for ``max Bbar(u)`` over nonzero ``u`` in the kernel space.

    Coordinates are taken in an orthonormal kernel basis; the objective is
    scale invariant, so only the direction of the coordinate vector matters.
    All candidate starts (``starts`` Gaussian draws and the kernel projections
    of ``+-delta_z``) are screened, the ``refine`` best are polished by
    Nelder-Mead, and the winner is re-evaluated with ``starts`` inner starts.
    """
    K = kernel_basis(inst)
    k = K.shape[0]
    if k == 0:
        raise TrivialKernel("kernel space is {0}")
    rng = np.random.default_rng(seed)
    inner_seed = int(rng.integers(2**31))
    cache: dict[bytes, float] = {}
    warm: dict[tuple, np.ndarray] = {}

    def direction_of(x):
        u = np.asarray(x, dtype=float) @ K
        if np.abs(u).max() <= 1e-12 * max(1.0, float(np.abs(x).max())):
            return None
        try:
            return normalize_direction(u, sum_tol=1e-8)
        except (ZeroDirection, NonKernelSum):
            return None

    def score(x) -> float:
        d = direction_of(x)
        if d is None:
            return 0.0
        key = np.round(d.u, 14).tobytes()
        v = cache.get(key)
        if v is None:
            sup = d.plus_support
            extra = [warm[sup]] if sup in warm else []
            res = bbar_eval(inst.beta, d, inner_starts, inner_seed, inst.tol, extra)
            warm[sup] = res.argmax.weights[list(sup)]
            v = res.value
            cache[key] = v
        return v

    x0s = []
    if k == 1:
        x0s = [np.ones(1), -np.ones(1)]
    else:
        for z in range(inst.n):
            col = K[:, z]
            if np.linalg.norm(col) > 1e-9:
                x0s += [col / np.linalg.norm(col), -col / np.linalg.norm(col)]
        for _ in range(starts):
            x = rng.standard_normal(k)
            x0s.append(x / np.linalg.norm(x))
    screened = sorted(((score(x), i) for i, x in enumerate(x0s)), key=lambda t: (-t[0], t[1]))
    finals = []
    if k == 1:
        finals = [(v, x0s[i]) for v, i in screened]
    else:
        for v, i in screened[:refine]:
            x = _nelder_mead_sphere(score, x0s[i])
            finals.append((score(x), x))
    finals.sort(key=lambda t: (-t[0], tuple(np.round(t[1], 12))))
    best_v, best_x = finals[0]
    d = direction_of(best_x)
    detail = bbar_eval(inst.beta, d, starts, seed, inst.tol)
    cands = tuple((direction_of(x), float(v)) for v, x in finals if direction_of(x) is not None)
    return BbarMaxResult(d, detail.value, detail, len(cache), cands)


def _nelder_mead_sphere(score, x0, rounds: int = 3) -> np.ndarray:
    """Nelder-Mead on ``-score`` restarted from its own optimum with shrinking simplices."""
    x = np.asarray(x0, dtype=float)
    x = x / np.linalg.norm(x)
    k = x.size
    step = 0.25
    for _ in range(rounds):
        simplex = [x] + [x + step * e for e in np.eye(k)]
        res = minimize(
            lambda y: -score(y),
            x,
            method="Nelder-Mead",
            options={"initial_simplex": np.array(simplex), "xatol": 1e-6, "fatol": 1e-12, "maxiter": 400 * k},
        )
        y = res.x / np.linalg.norm(res.x)
        if score(y) >= score(x):
            x = y
        step *= 0.1
    return x


# ---------------------------------------------------------------------------
# The maps between the two problems
# ---------------------------------------------------------------------------

def psi(inst: Instance, p) -> Direction:
    """Normalized ``P - Pi_P``."""
    w = as_weights(p)
    proj = rb_project(inst, w)
    diff = w - proj.pi.weights
    if 0.5 * np.abs(diff).sum() <= 1e-12:
        raise MemberOfClosure("P lies in the closure of the family")
    return normalize_direction(diff, sum_tol=1e-8)


def phi(inst: Instance, u, starts: int = 8, seed: int = 0) -> Pm:
    """Global maximizer of ``B(., F_u)`` on the positive side of ``u``.

    Warns with :class:`AmbiguousMaximizer` when several local maximizers exist.
    """
    d = normalize_direction(u)
    if inst.d and np.abs(inst.f @ d.u).max() > 1e-8 * max(1.0, float(np.abs(inst.f).max())):
        raise NonKernelDirection("u is not in the kernel space of the statistic")
    res = bbar_eval(inst.beta, d, starts, seed, inst.tol)
    if res.n_local > 1:
        warnings.warn(f"{res.n_local} distinct local maximizers; returning the global one", AmbiguousMaximizer)
    return res.argmax


# ---------------------------------------------------------------------------
# Evidence on uniqueness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialRecord:
    trial: int
    seed: int
    kind: str
    params: tuple[float, ...]
    u: tuple[float, ...]
    n_local: int
    value: float
    optima: tuple[tuple[tuple[float, ...], float], ...]


@dataclass(frozen=True)
class ScanReport:
    zsize: int
    trials: tuple[TrialRecord, ...]
    starts: int
    seed: int

    @property
    def counterexamples(self) -> tuple[TrialRecord, ...]:
        return tuple(t for t in self.trials if t.n_local > 1)

    def n_local_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for t in self.trials:
            hist[t.n_local] = hist.get(t.n_local, 0) + 1
        return dict(sorted(hist.items()))


def random_direction(n: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian direction with zero sum; half of the draws get random zero entries."""
    while True:
        u = rng.standard_normal(n)
        if n > 2 and rng.random() < 0.5:
            u[rng.random(n) < 0.3] = 0.0
        nz = np.flatnonzero(u)
        if nz.size < 2:
            continue
        u[nz] -= u[nz].mean()
        if np.any(u > 1e-6) and np.any(u < -1e-6):
            return u


def random_beta(kind: str, n: int, rng: np.random.Generator) -> BetaSystem:
    if kind == CLASSICAL:
        return make_classical(np.exp(rng.normal(0.0, 1.0, n)))
    if kind == ENTROPY_QUADRATIC:
        return make_entropy_quadratic(np.exp(rng.uniform(-3.0, 3.0, n)))
    raise ValueError(f"unknown builtin kind {kind!r}")


def conjecture_scan(
    beta: BetaSystem | str,
    zsize: int | None = None,
    trials: int = 200,
    starts: int = 32,
    seed: int = 0,
) -> ScanReport:
    """Count distinct local maximizers of ``B(., F_u)`` on the positive side for random ``u``.

    ``beta`` is a fixed generator system or a builtin kind name, in which case
    fresh random parameters are drawn for every trial.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if isinstance(beta, BetaSystem):
        if zsize is not None and zsize != beta.size:
            raise ValueError("zsize does not match the generator system")
        zsize = beta.size
    elif zsize is None:
        raise ValueError("zsize is required with a generator kind")
    if zsize < 2:
        raise ValueError("zsize must be at least 2")
    children = np.random.SeedSequence(seed).spawn(trials)
    records = []
    for t, child in enumerate(children):
        trial_seed = int(child.generate_state(1)[0])
        rng = np.random.default_rng(trial_seed)
        sys = beta if isinstance(beta, BetaSystem) else random_beta(beta, zsize, rng)
        u = random_direction(zsize, rng)
        res = bbar_eval(sys, u, starts, trial_seed)
        records.append(
            TrialRecord(
                trial=t,
                seed=trial_seed,
                kind=sys.kind or "mixed",
                params=tuple(float(x) for x in sys.params),
                u=tuple(float(x) for x in normalize_direction(u).u),
                n_local=res.n_local,
                value=res.value,
                optima=tuple((tuple(float(x) for x in p.weights), float(v)) for p, v in res.optima),
            )
        )
    return ScanReport(zsize, tuple(records), starts, seed)
