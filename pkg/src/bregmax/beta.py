"""Per-coordinate generator systems.

A :class:`BetaSystem` assigns to each point ``z`` of a finite set a convex
generator ``beta_z`` on ``(0, inf)`` whose derivative ``l_z`` runs from
``-inf`` to ``+inf``.  All evaluations are vectorized over ``z``: arrays passed
to the methods are aligned with the points of the system.

Two builtin kinds have closed forms:

``classical``
    ``beta(x) = x ln(x/nu) - x``, ``l(x) = ln(x/nu)``, ``e(r) = beta*(r) = nu e^r``.
``entropy_quadratic``
    ``beta(x) = x ln x - x + alpha x^2 / 2``, ``l(x) = ln x + alpha x``.
    The link is ``e(r) = W(alpha e^r) / alpha`` (Lambert W), evaluated through
    the Wright omega function so that large ``r`` cannot overflow.

Generators without closed forms are supplied as :class:`CustomGenerator` and
are inverted numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import wrightomega, xlogy

from .errors import MalformedGenerator, NegativeAlpha, NonPositiveArgument, NonPositiveReference, OutOfRange
from .numerics import DEFAULT_TOL, invert_increasing

CLASSICAL = "classical"
ENTROPY_QUADRATIC = "entropy_quadratic"
CUSTOM = "custom"
BUILTIN_KINDS = (CLASSICAL, ENTROPY_QUADRATIC)

# search window for numeric inversion of a custom derivative
_X_BOUNDS = (1e-300, 1e300)


@dataclass(frozen=True)
class CustomGenerator:
    """A generator given by callables.

    ``conjugate`` is optional; when absent the conjugate is evaluated through
    ``beta*(r) = r e(r) - beta(e(r))`` with ``e`` the numeric inverse of ``dbeta``.
    """

    beta: Callable[[float], float]
    dbeta: Callable[[float], float]
    conjugate: Callable[[float], float] | None = None
    beta_at_zero: float | None = None

    def link(self, r: float) -> float:
        try:
            return invert_increasing(self.dbeta, r, DEFAULT_TOL, bounds=_X_BOUNDS)
        except OutOfRange as exc:
            raise MalformedGenerator(f"derivative does not reach {r!r} on {_X_BOUNDS}") from exc

    def dlink(self, r: float) -> float:
        h = 1e-6 * max(1.0, abs(r))
        return (self.link(r + h) - self.link(r - h)) / (2 * h)

    def conj(self, r: float) -> float:
        if self.conjugate is not None:
            return float(self.conjugate(r))
        x = self.link(r)
        return r * x - self.beta(x)

    def zero_value(self) -> float:
        if self.beta_at_zero is not None:
            return float(self.beta_at_zero)
        return float(self.beta(_X_BOUNDS[0]))


@dataclass(frozen=True, eq=False)
class BetaSystem:
    """Immutable collection of generators, one per point of ``Z``."""

    kinds: tuple[str, ...]
    params: np.ndarray
    custom: tuple[CustomGenerator | None, ...] = ()

    def __post_init__(self):
        kinds = tuple(self.kinds)
        n = len(kinds)
        params = np.asarray(self.params, dtype=float).reshape(n)
        custom = tuple(self.custom) if self.custom else (None,) * n
        if len(custom) != n:
            raise ValueError("custom must have one entry per point")
        for k, c in zip(kinds, custom):
            if k not in (CLASSICAL, ENTROPY_QUADRATIC, CUSTOM):
                raise ValueError(f"unknown generator kind {k!r}")
            if (k == CUSTOM) != (c is not None):
                raise ValueError("custom generators must be given exactly for kind 'custom'")
        params.setflags(write=False)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "custom", custom)
        karr = np.array(kinds, dtype=object)
        object.__setattr__(self, "_cls", np.flatnonzero(karr == CLASSICAL))
        object.__setattr__(self, "_eq", np.flatnonzero(karr == ENTROPY_QUADRATIC))
        object.__setattr__(self, "_cus", np.flatnonzero(karr == CUSTOM))
        ks = set(kinds)
        object.__setattr__(self, "_only", ks.pop() if len(ks) == 1 else None)

    # -- structure ---------------------------------------------------------

    @property
    def size(self) -> int:
        return len(self.kinds)

    def __len__(self) -> int:
        return len(self.kinds)

    @property
    def kind(self) -> str | None:
        """Common kind of all generators, or ``None`` for a mixed system."""
        ks = set(self.kinds)
        return ks.pop() if len(ks) == 1 else None

    @property
    def is_classical(self) -> bool:
        return self.kind == CLASSICAL

    def restrict(self, idx) -> "BetaSystem":
        idx = np.asarray(idx, dtype=int)
        return BetaSystem(
            tuple(self.kinds[i] for i in idx),
            self.params[idx],
            tuple(self.custom[i] for i in idx),
        )

    def __eq__(self, other):
        if not isinstance(other, BetaSystem):
            return NotImplemented
        return (
            self.kinds == other.kinds
            and np.array_equal(self.params, other.params, equal_nan=True)
            and self.custom == other.custom
        )

    __hash__ = None

    # -- vectorized evaluation ---------------------------------------------

    def _map_custom(self, method: str, arr: np.ndarray, out: np.ndarray) -> None:
        for i in self._cus:
            out[i] = getattr(self.custom[i], method)(float(arr[i]))

    def beta(self, x) -> np.ndarray:
        """Generator values; ``x = 0`` uses the continuous extension."""
        x = np.asarray(x, dtype=float)
        if self._only == CLASSICAL:
            return xlogy(x, x / self.params) - x
        if self._only == ENTROPY_QUADRATIC:
            return xlogy(x, x) - x + 0.5 * self.params * x * x
        out = np.empty(self.size)
        c, q = self._cls, self._eq
        out[c] = xlogy(x[c], x[c] / self.params[c]) - x[c]
        out[q] = xlogy(x[q], x[q]) - x[q] + 0.5 * self.params[q] * x[q] ** 2
        for i in self._cus:
            g = self.custom[i]
            out[i] = g.zero_value() if x[i] == 0 else g.beta(float(x[i]))
        return out

    def dbeta(self, x) -> np.ndarray:
        """Inverse link ``l(x) = beta'(x)``; ``-inf`` at ``x = 0``."""
        x = np.asarray(x, dtype=float)
        if self._only == CLASSICAL:
            with np.errstate(divide="ignore"):
                return np.log(x / self.params)
        if self._only == ENTROPY_QUADRATIC:
            with np.errstate(divide="ignore"):
                return np.log(x) + self.params * x
        out = np.empty(self.size)
        c, q = self._cls, self._eq
        with np.errstate(divide="ignore"):
            out[c] = np.log(x[c] / self.params[c])
            out[q] = np.log(x[q]) + self.params[q] * x[q]
        for i in self._cus:
            out[i] = -math.inf if x[i] == 0 else self.custom[i].dbeta(float(x[i]))
        return out

    def d2beta(self, x) -> np.ndarray:
        """Second derivative of the generator (``+inf`` at ``x = 0``)."""
        x = np.asarray(x, dtype=float)
        if self._only == CLASSICAL:
            with np.errstate(divide="ignore"):
                return 1.0 / x
        if self._only == ENTROPY_QUADRATIC:
            with np.errstate(divide="ignore"):
                return 1.0 / x + self.params
        out = np.empty(self.size)
        c, q = self._cls, self._eq
        with np.errstate(divide="ignore"):
            out[c] = 1.0 / x[c]
            out[q] = 1.0 / x[q] + self.params[q]
        for i in self._cus:
            xi = float(x[i])
            out[i] = math.inf if xi == 0 else 1.0 / self.custom[i].dlink(self.custom[i].dbeta(xi))
        return out

    def link(self, r) -> np.ndarray:
        """Link ``e(r) = beta*'(r)``, positive and increasing."""
        r = np.asarray(r, dtype=float)
        if self._only == CLASSICAL:
            with np.errstate(over="ignore"):
                return self.params * np.exp(r)
        out = np.empty(self.size)
        c, q = self._cls, self._eq
        with np.errstate(over="ignore"):
            out[c] = self.params[c] * np.exp(r[c])
        if q.size:
            out[q] = _eq_link(r[q], self.params[q])
        self._map_custom("link", r, out)
        return out

    def dlink(self, r) -> np.ndarray:
        """Derivative of the link, i.e. the second derivative of the conjugate."""
        r = np.asarray(r, dtype=float)
        out = np.empty(self.size)
        c, q = self._cls, self._eq
        with np.errstate(over="ignore"):
            out[c] = self.params[c] * np.exp(r[c])
        if q.size:
            x = _eq_link(r[q], self.params[q])
            out[q] = x / (1.0 + self.params[q] * x)
        self._map_custom("dlink", r, out)
        return out

    def conj(self, r) -> np.ndarray:
        """Convex conjugate ``beta*(r)``."""
        r = np.asarray(r, dtype=float)
        out = np.empty(self.size)
        c, q = self._cls, self._eq
        with np.errstate(over="ignore"):
            out[c] = self.params[c] * np.exp(r[c])
        if q.size:
            x = _eq_link(r[q], self.params[q])
            out[q] = x + 0.5 * self.params[q] * x * x
        self._map_custom("conj", r, out)
        return out

    def link_and_derivative(self, r) -> tuple[np.ndarray, np.ndarray]:
        """``(e(r), e'(r))`` sharing one link evaluation."""
        r = np.asarray(r, dtype=float)
        if self._only == CLASSICAL:
            with np.errstate(over="ignore"):
                e = self.params * np.exp(r)
            return e, e.copy()
        e = np.empty(self.size)
        de = np.empty(self.size)
        c, q = self._cls, self._eq
        with np.errstate(over="ignore"):
            e[c] = self.params[c] * np.exp(r[c])
        de[c] = e[c]
        if q.size:
            x = _eq_link(r[q], self.params[q])
            e[q] = x
            de[q] = x / (1.0 + self.params[q] * x)
        self._map_custom("link", r, e)
        self._map_custom("dlink", r, de)
        return e, de

    def zero_values(self) -> np.ndarray:
        return self.beta(np.zeros(self.size))


def _eq_link(r: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Solve ``ln x + alpha x = r`` elementwise."""
    x = np.empty_like(r)
    pos = alpha > 0
    with np.errstate(over="ignore"):
        x[~pos] = np.exp(r[~pos])
    if np.any(pos):
        a = alpha[pos]
        rr = r[pos]
        w = np.real(wrightomega(rr + np.log(a)))
        xp = w / a
        # one Newton step on y = ln x polishes the last bits
        ok = xp > 0
        y = np.log(xp[ok])
        y -= (y + a[ok] * xp[ok] - rr[ok]) / (1.0 + a[ok] * xp[ok])
        xp[ok] = np.exp(y)
        x[pos] = xp
    return x


# ---------------------------------------------------------------------------
# Constructors and scalar accessors
# ---------------------------------------------------------------------------

def make_classical(nu) -> BetaSystem:
    nu = np.asarray(nu, dtype=float).ravel()
    if nu.size == 0 or not np.all(np.isfinite(nu)) or np.any(nu <= 0):
        raise NonPositiveReference("reference measure must be strictly positive and finite")
    return BetaSystem((CLASSICAL,) * nu.size, nu)


def make_entropy_quadratic(alpha) -> BetaSystem:
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size == 0 or not np.all(np.isfinite(alpha)) or np.any(alpha < 0):
        raise NegativeAlpha("alpha must be nonnegative and finite")
    return BetaSystem((ENTROPY_QUADRATIC,) * alpha.size, alpha)


def make_custom(generators: Sequence[CustomGenerator], check: bool = True) -> BetaSystem:
    gens = tuple(generators)
    sys = BetaSystem((CUSTOM,) * len(gens), np.full(len(gens), np.nan), gens)
    if check:
        check_generator_limits(sys)
    return sys


def check_generator_limits(sys: BetaSystem, samples=(0.1, 1.0, 10.0)) -> None:
    """Sample the monotonicity, limit, and inverse-pair conditions; raise on violation."""
    lo = sys.dbeta(np.full(sys.size, 1e-8))
    hi = sys.dbeta(np.full(sys.size, 1e8))
    if not np.all(lo < hi):
        raise MalformedGenerator("derivative is not increasing between 1e-8 and 1e8")
    # divergence at both ends, sampled: the derivative must keep growing by at
    # least one unit over the last four decades (a logarithm grows by 9.2)
    if not np.all(lo + 1.0 <= sys.dbeta(np.full(sys.size, 1e-4))):
        raise MalformedGenerator("derivative does not diverge to -inf at 0+")
    if not np.all(sys.dbeta(np.full(sys.size, 1e4)) + 1.0 <= hi):
        raise MalformedGenerator("derivative does not diverge to +inf at infinity")
    for x in samples:
        xs = np.full(sys.size, x)
        back = sys.link(sys.dbeta(xs))
        if not np.allclose(back, xs, rtol=1e-8, atol=0):
            raise MalformedGenerator(f"link and derivative are not inverse at x={x}")


def _scalar(sys: BetaSystem, method: str, z: int, v: float) -> float:
    sub = sys.restrict([z])
    return float(getattr(sub, method)(np.array([v], dtype=float))[0])


def conjugate_eval(sys: BetaSystem, z: int, r: float) -> float:
    """``beta*_z(r)``."""
    return _scalar(sys, "conj", z, r)


def link_eval(sys: BetaSystem, z: int, r: float) -> float:
    """``e_z(r)``."""
    return _scalar(sys, "link", z, r)


def inverse_link_eval(sys: BetaSystem, z: int, y: float) -> float:
    """``l_z(y)`` for ``y > 0``."""
    if not y > 0:
        raise NonPositiveArgument(f"inverse link needs a positive argument, got {y!r}")
    return _scalar(sys, "dbeta", z, y)


def beta_eval(sys: BetaSystem, z: int, x: float) -> float:
    return _scalar(sys, "beta", z, x)
