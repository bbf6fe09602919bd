"""Bregman divergence, the energy H, and reverse Bregman projections onto a family closure."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .beta import BetaSystem
from .errors import NegativeInput, NoBracket, NonConvergence
from .family import FacialSet, Instance, Pm, _lambda_from_scores, as_weights, facial_set, kernel_basis, support_of

MAX_NEWTON = 200
ARMIJO = 1e-4
HESS_REG = 1e-10
POLISH_STEPS = 40
DECREMENT_TOL = 1e-32
MAX_SCORE_STEP = 20.0  # largest change of any score <theta, f(z)> in one Newton step


@dataclass(frozen=True)
class ProjectionResult:
    """Outcome of :func:`rb_project`.

    ``theta`` parametrizes ``pi`` as a member of the family restricted to
    ``face``; it equals the full-family parameter when ``face`` is all of ``Z``.
    ``dual_gap`` compares ``value`` with the dual (sup over theta) evaluation.
    """

    pi: Pm
    theta: np.ndarray
    face: FacialSet
    value: float
    dual_gap: float


def bregman_div(sys: BetaSystem, u, v) -> float:
    """``sum_z beta(u) - beta(v) - l(v) (u - v)``; ``inf`` when ``v(z) = 0 < u(z)``."""
    u = as_weights(u)
    v = as_weights(v)
    if u.shape != v.shape or u.size != sys.size:
        raise ValueError("u and v must both have one entry per point")
    if np.any(u < 0) or np.any(v < 0):
        raise NegativeInput("Bregman divergence needs nonnegative arguments")
    if np.any((v == 0) & (u > 0)):
        return math.inf
    pos = v > 0
    lv = np.zeros_like(v)
    lv[pos] = sys.dbeta(np.where(pos, v, 1.0))[pos]
    terms = sys.beta(u) - sys.beta(v) - lv * (u - v)
    return float(terms.sum())


def h_energy(sys: BetaSystem, p) -> float:
    """``H(P) = sum_z beta_z(P(z))``."""
    return float(sys.beta(as_weights(p)).sum())


# ---------------------------------------------------------------------------
# Dual Newton on a facial subfamily
# ---------------------------------------------------------------------------

class _FaceDual:
    """The family restricted to a facial set, in reduced affine coordinates.

    With ``W`` an orthonormal basis of the span of ``f(z) - fbar`` (``z`` in the
    face), ``theta = W eta`` and the reduced statistic ``ftil = W^T (f - fbar)``
    has full row rank, so the dual is strictly concave in ``eta``.
    """

    def __init__(self, inst: Instance, face: FacialSet):
        self.inst = inst
        self.face = face
        self.idx = np.array(face.members, dtype=int)
        self.beta = inst.beta.restrict(self.idx)
        fF = inst.f[:, self.idx]
        self.fbar = fF.mean(axis=1) if inst.d else np.zeros(0)
        centered = fF - self.fbar[:, None]
        if inst.d and self.idx.size > 1:
            U, s, _ = np.linalg.svd(centered, full_matrices=False)
            k = int(np.sum(s > 1e-10 * max(1.0, s[0])))
            self.W = U[:, :k]
        else:
            self.W = np.zeros((inst.d, 0))
        self.ftil = self.W.T @ centered
        self.k = self.W.shape[1]

    def evaluate(self, eta, mt, lam_hint=None, want_hess=True):
        s = eta @ self.ftil if self.k else np.zeros(self.idx.size)
        lam = _lambda_from_scores(self.beta, s, lam_hint, self.inst.tol)
        r = s - lam
        e, de = self.beta.link_and_derivative(r)
        obj = float(eta @ mt) - lam - float(self.beta.conj(r).sum())
        grad = mt - self.ftil @ e
        hess = None
        if want_hess:
            mbar = self.ftil @ de / de.sum()
            c = self.ftil - mbar[:, None]
            hess = (c * de) @ c.T
        return obj, grad, hess, lam, r, e

    def _polish(self, mt, eta, state):
        # Extra full Newton steps until the Newton decrement (the predicted dual
        # gain) is negligible.  The gradient test alone is too weak when a point
        # has tiny mass: its moment error can be small in absolute terms while the
        # value still carries an error of order |theta| times that moment error.
        obj, g, H, lam, r, e = state
        previous = math.inf
        for _ in range(POLISH_STEPS):
            if not g.size or not np.abs(g).max() > 0:
                break
            try:
                step = np.linalg.solve(H, g)
                decrement = float(g @ step)
                # stop at the tolerance or once rounding noise stalls the decrease
                if not DECREMENT_TOL * max(1.0, abs(obj)) < decrement < 0.25 * previous:
                    break
                previous = decrement
                cand = self.evaluate(eta + step, mt, lam)
            except (np.linalg.LinAlgError, NoBracket, ValueError):
                break
            if not np.abs(cand[1]).max() < np.abs(g).max():
                break
            eta = eta + step
            obj, g, H, lam, r, e = cand
        return eta, obj, g, H, lam, r, e

    def solve(self, mt, eta0=None, lam0=None):
        tol = self.inst.tol
        eta = np.zeros(self.k) if eta0 is None else np.array(eta0, dtype=float)
        obj, g, H, lam, r, e = self.evaluate(eta, mt, lam0)
        for _ in range(MAX_NEWTON):
            gmax = float(np.abs(g).max()) if g.size else 0.0
            if gmax <= tol.grad_norm:
                return self._polish(mt, eta, (obj, g, H, lam, r, e))
            reg = HESS_REG * max(1.0, float(np.abs(H).max()))
            try:
                step = np.linalg.solve(H, g)
                if not np.all(np.isfinite(step)) or np.linalg.cond(H) > 1e14:
                    raise np.linalg.LinAlgError
            except np.linalg.LinAlgError:
                step = np.linalg.solve(H + reg * np.eye(self.k), g)
            # a trust cap: far from the optimum the potential is nearly flat and
            # a full Newton step can overshoot into saturation
            reach = float(np.abs(step @ self.ftil).max())
            if reach > MAX_SCORE_STEP:
                step *= MAX_SCORE_STEP / reach
            slope = float(g @ step)
            t = 1.0
            while True:
                cand = None
                try:
                    with np.errstate(over="ignore", invalid="ignore"):
                        cand = self.evaluate(eta + t * step, mt, lam)
                    if not (math.isfinite(cand[0]) and np.all(np.isfinite(cand[1]))):
                        cand = None
                except (NoBracket, ValueError, FloatingPointError):
                    cand = None
                if cand is not None:
                    armijo = cand[0] >= obj + ARMIJO * t * slope
                    newton_regime = t == 1.0 and slope <= 1e-12 * max(1.0, abs(obj)) and np.abs(cand[1]).max() < gmax
                    if armijo or newton_regime:
                        break
                t *= 0.5
                if t < 1e-20:
                    raise NonConvergence("line search failed in the dual Newton iteration")
            eta = eta + t * step
            obj, g, H, lam, r, e = cand
        raise NonConvergence(f"dual Newton did not converge in {MAX_NEWTON} steps")


def _face_dual(inst: Instance, face: FacialSet) -> _FaceDual:
    key = ("dual", face.members)
    fd = inst._face_cache.get(key)
    if fd is None:
        fd = _FaceDual(inst, face)
        inst._face_cache[key] = fd
    return fd


@dataclass
class _Projection:
    """Internal projection record with the quantities derivative formulas need."""

    pi: np.ndarray
    face: FacialSet
    dual: _FaceDual
    eta: np.ndarray
    lam: float
    r: np.ndarray  # l_z(pi(z)) on the face
    hess: np.ndarray
    dual_obj: float
    h_pi: float

    @property
    def theta(self) -> np.ndarray:
        return self.dual.W @ self.eta


def _project(inst: Instance, p: np.ndarray, warm: dict | None = None) -> _Projection:
    S = support_of(p)
    face = facial_set(inst, S)
    fd = _face_dual(inst, face)
    m = inst.f @ p
    mt = fd.W.T @ (m - fd.fbar) if inst.d else np.zeros(0)
    eta0 = lam0 = None
    if warm is not None and face.members in warm:
        eta0, lam0 = warm[face.members]
    eta, obj, _, H, lam, r, e = fd.solve(mt, eta0, lam0)
    if warm is not None:
        warm[face.members] = (eta, lam)
    pi = np.zeros(inst.n)
    pi[fd.idx] = e / e.sum()
    h_pi = float(fd.beta.beta(pi[fd.idx]).sum())
    return _Projection(pi, face, fd, eta, lam, r, H, obj, h_pi)


def rb_project(inst: Instance, p, warm: dict | None = None) -> ProjectionResult:
    """Reverse Bregman projection of ``p`` onto the closure of the family.

    The facial set of ``supp(p)`` is fixed first; the concave dual
    ``eta -> <eta, mu(p)> - Upsilon(eta)`` of the restricted family is then
    maximized by damped Newton.  ``warm`` is an optional per-caller dict of
    previous dual solutions keyed by face, used as starting points.
    """
    w = as_weights(p)
    if w.size != inst.n:
        raise ValueError(f"pm has {w.size} entries, expected {inst.n}")
    if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-9:
        raise ValueError("p must be a probability vector")
    w = w / w.sum()
    proj = _project(inst, w, warm)
    hp = h_energy(inst.beta, w)
    value = hp - proj.h_pi
    dual_value = hp - proj.dual_obj
    return ProjectionResult(
        Pm(proj.pi),
        proj.theta,
        proj.face,
        max(value, 0.0) if value > -1e-12 else value,
        abs(value - dual_value),
    )


def div_from_family(inst: Instance, p) -> float:
    """``B(P, E)``."""
    return rb_project(inst, p).value


def sample_moment_fiber(inst: Instance, p, count: int, rng: np.random.Generator, scale: float = 1.0):
    """Random pms with the same mean as ``p``: ``p + t v``, ``v`` in the kernel space, ``t`` feasible.

    For each random kernel direction the feasible interval of ``t`` is computed
    exactly and ``t`` is drawn uniformly from it (scaled by ``scale``).
    """
    w = as_weights(p)
    K = kernel_basis(inst)
    out = []
    if K.shape[0] == 0:
        return [w.copy() for _ in range(count)]
    for _ in range(count):
        v = rng.standard_normal(K.shape[0]) @ K
        lo, hi = -math.inf, math.inf
        neg, pos = v < -1e-15, v > 1e-15
        if np.any(pos):
            lo = max(lo, float(np.max(-w[pos] / v[pos])))
        if np.any(neg):
            hi = min(hi, float(np.min(-w[neg] / v[neg])))
        t = rng.uniform(lo, hi) * scale if hi > lo else 0.0
        q = np.maximum(w + t * v, 0.0)
        out.append(q / q.sum())
    return out
