"""Bregman families over a finite set: partition value, members, potential, faces."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .beta import BetaSystem
from .numerics import DEFAULT_TOL, LpProblem, Tolerances, lp_solve, orthocomplement_basis, solve_decreasing_root

SUPPORT_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class Instance:
    """Finite set ``Z`` with statistic ``f`` (a ``d x |Z|`` design matrix) and generators.

    Facial sets are memoized per instance; the cache holds pure functions of
    the (immutable) instance data.
    """

    z_labels: tuple[str, ...]
    f: np.ndarray
    beta: BetaSystem
    tol: Tolerances = DEFAULT_TOL
    _face_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = tuple(str(z) for z in self.z_labels)
        n = len(labels)
        if n < 1:
            raise ValueError("Z must have at least one point")
        if len(set(labels)) != n:
            raise ValueError("z labels must be distinct")
        f = np.asarray(self.f, dtype=float)
        if f.size == 0:
            f = np.zeros((0, n))
        f = np.atleast_2d(f)
        if f.shape[1] != n:
            raise ValueError(f"design matrix has {f.shape[1]} columns, expected {n}")
        if not np.all(np.isfinite(f)):
            raise ValueError("design matrix must be finite")
        if self.beta.size != n:
            raise ValueError(f"generator system has {self.beta.size} entries, expected {n}")
        f.setflags(write=False)
        object.__setattr__(self, "z_labels", labels)
        object.__setattr__(self, "f", f)

    @property
    def n(self) -> int:
        return len(self.z_labels)

    @property
    def d(self) -> int:
        return self.f.shape[0]

    @property
    def dim(self) -> int:
        """Dimension of the family (affine dimension of the convex support)."""
        if self.n == 1 or self.d == 0:
            return 0
        centered = self.f - self.f.mean(axis=1, keepdims=True)
        s = np.linalg.svd(centered, compute_uv=False)
        return int(np.sum(s > 1e-10 * max(1.0, s[0])))

    def restrict(self, idx) -> "Instance":
        idx = np.asarray(idx, dtype=int)
        return Instance(
            tuple(self.z_labels[i] for i in idx), self.f[:, idx], self.beta.restrict(idx), self.tol
        )

    def with_tol(self, tol: Tolerances) -> "Instance":
        return Instance(self.z_labels, self.f, self.beta, tol)


@dataclass(frozen=True, eq=False)
class Pm:
    """A probability measure on ``Z`` stored as a weight vector."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        if w.size == 0 or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a nonempty finite vector")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def normalized(cls, w) -> "Pm":
        w = np.maximum(np.asarray(w, dtype=float).ravel(), 0.0)
        return cls(w / w.sum())

    @classmethod
    def delta(cls, n: int, z: int) -> "Pm":
        w = np.zeros(n)
        w[z] = 1.0
        return cls(w)

    @classmethod
    def uniform(cls, n: int, on: Iterable[int] | None = None) -> "Pm":
        w = np.zeros(n)
        idx = list(range(n)) if on is None else list(on)
        w[idx] = 1.0 / len(idx)
        return cls(w)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(np.flatnonzero(self.weights > SUPPORT_EPS).tolist())

    def __len__(self) -> int:
        return self.weights.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)

    def tv(self, other) -> float:
        return 0.5 * float(np.abs(self.weights - as_weights(other)).sum())


@dataclass(frozen=True)
class FacialSet:
    members: tuple[int, ...]

    def __contains__(self, z) -> bool:
        return z in self.members

    def __len__(self) -> int:
        return len(self.members)


def as_weights(p) -> np.ndarray:
    if isinstance(p, Pm):
        return p.weights
    return np.asarray(p, dtype=float).ravel()


def support_of(p, eps: float = SUPPORT_EPS) -> tuple[int, ...]:
    return tuple(np.flatnonzero(as_weights(p) > eps).tolist())


# ---------------------------------------------------------------------------
# Partition value, members and the potential
# ---------------------------------------------------------------------------

def lambda_of_theta(inst: Instance, theta, hint: float | None = None) -> float:
    """Unique ``r`` with ``sum_z e_z(<theta, f(z)> - r) = 1``."""
    s = _scores(inst, theta)
    return _lambda_from_scores(inst.beta, s, hint, inst.tol)


def _scores(inst: Instance, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != inst.d:
        raise ValueError(f"theta has length {theta.size}, expected {inst.d}")
    return theta @ inst.f if inst.d else np.zeros(inst.n)


def _lambda_from_scores(beta: BetaSystem, s: np.ndarray, hint: float | None, tol: Tolerances) -> float:
    g = lambda r: float(beta.link(s - r).sum())
    dg = lambda r: -float(beta.dlink(s - r).sum())
    h = float(s.max()) if hint is None else hint
    return solve_decreasing_root(g, 1.0, h, tol, dg)


def pm_of_theta(inst: Instance, theta, hint: float | None = None) -> Pm:
    s = _scores(inst, theta)
    lam = _lambda_from_scores(inst.beta, s, hint, inst.tol)
    w = inst.beta.link(s - lam)
    # the defining equation holds to root_abs; absorb the last rounding
    return Pm(w / w.sum())


def moment_map(inst: Instance, p) -> np.ndarray:
    return inst.f @ as_weights(p)


def upsilon(inst: Instance, theta) -> float:
    s = _scores(inst, theta)
    lam = _lambda_from_scores(inst.beta, s, None, inst.tol)
    return lam + float(inst.beta.conj(s - lam).sum())


def upsilon_grad(inst: Instance, theta) -> np.ndarray:
    s = _scores(inst, theta)
    lam = _lambda_from_scores(inst.beta, s, None, inst.tol)
    return inst.f @ inst.beta.link(s - lam)


def upsilon_hess(inst: Instance, theta) -> np.ndarray:
    s = _scores(inst, theta)
    lam = _lambda_from_scores(inst.beta, s, None, inst.tol)
    de = inst.beta.dlink(s - lam)
    grad_lambda = inst.f @ de / de.sum()
    centered = inst.f - grad_lambda[:, None]
    return (centered * de) @ centered.T


def kernel_basis(inst: Instance) -> np.ndarray:
    """Orthonormal rows spanning ``{u : f u = 0, sum u = 0}``."""
    rows = np.vstack([inst.f, np.ones((1, inst.n))])
    return orthocomplement_basis(rows)


# ---------------------------------------------------------------------------
# Facial sets
# ---------------------------------------------------------------------------

def facial_set(inst: Instance, S: Sequence[int]) -> FacialSet:
    """Smallest facial set containing ``S``.

    ``z`` belongs to it iff some pm with the same mean as the uniform pm on ``S``
    puts positive mass on ``z``; one LP per undecided candidate decides this,
    and every LP solution also certifies the points it charges.
    """
    key = tuple(sorted(set(int(z) for z in S)))
    if not key:
        raise ValueError("S must be nonempty")
    cached = inst._face_cache.get(key)
    if cached is not None:
        return cached
    n = inst.n
    members = set(key)
    if inst.d == 0:
        members = set(range(n))
    else:
        q0 = np.zeros(n)
        q0[list(key)] = 1.0 / len(key)
        A = np.vstack([inst.f, np.ones((1, n))])
        rhs = A @ q0
        for z in range(n):
            if z in members:
                continue
            c = np.zeros(n)
            c[z] = 1.0
            res = lp_solve(LpProblem(c, A, rhs), inst.tol)
            members.update(np.flatnonzero(res.x > inst.tol.lp_feas).tolist())
    face = FacialSet(tuple(sorted(members)))
    inst._face_cache[key] = face
    return face


def brute_force_faces(points: np.ndarray, tol: float = 1e-9) -> list[frozenset[int]]:
    """All faces of ``conv(points)`` (columns) as sets of point indices, by facet enumeration.

    Works in affine-hull coordinates; facets are hyperplanes through affinely
    independent point subsets with every point on one side, and faces are all
    intersections of facets together with the whole polytope.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[1]
    everything = frozenset(range(n))
    if pts.shape[0] == 0 or n == 1:
        return [everything]
    centered = pts - pts.mean(axis=1, keepdims=True)
    U, s, _ = np.linalg.svd(centered, full_matrices=False)
    k = int(np.sum(s > 1e-10 * max(1.0, s[0])))
    if k == 0:
        return [everything]
    X = (U[:, :k].T @ centered).T  # n x k
    facets = set()
    for combo in itertools.combinations(range(n), k):
        base = X[list(combo)]
        diffs = base[1:] - base[0]
        if k > 1 and np.linalg.matrix_rank(diffs, tol=1e-10) < k - 1:
            continue
        normal = orthocomplement_basis(diffs, dim=k) if k > 1 else np.ones((1, 1))
        if normal.shape[0] != 1:
            continue
        a = normal[0]
        vals = X @ a - base[0] @ a
        scale = max(1.0, float(np.abs(X).max()))
        for sign in (1.0, -1.0):
            v = sign * vals
            if np.all(v <= tol * scale):
                facets.add(frozenset(np.flatnonzero(np.abs(v) <= tol * scale).tolist()))
    faces = {everything}
    frontier = set(facets)
    faces |= frontier
    while frontier:
        new = set()
        for a in frontier:
            for b in facets:
                c = a & b
                if c and c not in faces:
                    new.add(c)
        faces |= new
        frontier = new
    return sorted(faces, key=lambda s: (len(s), sorted(s)))


def smallest_face_brute(points: np.ndarray, S: Iterable[int]) -> frozenset[int]:
    S = frozenset(S)
    best = None
    for face in brute_force_faces(points):
        if S <= face and (best is None or len(face) < len(best)):
            best = face
    return best
