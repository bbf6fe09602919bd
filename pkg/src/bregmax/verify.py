"""Executable checks: the equivalence and inequality theorems plus every module invariant.

:func:`cmd_verify` runs all checks on one instance and returns a
:class:`VerifyReport`.  Every check records the number of cases it tested,
the largest violation found, its tolerance and the seed that reproduces it.
Failures are report entries, never exceptions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .bbar import (
    AmbiguousMaximizer,
    bbar_classical,
    bbar_eval,
    classify_side,
    family_from_direction,
    fiber_point,
    maximize_bbar,
    normalize_direction,
    phi,
    psi,
    random_direction,
)
from .beta import CLASSICAL, ENTROPY_QUADRATIC, BetaSystem, make_classical, make_entropy_quadratic
from .errors import BregmaxError, MemberOfClosure, TrivialKernel
from .family import (
    Instance,
    _scores,
    facial_set,
    kernel_basis,
    lambda_of_theta,
    pm_of_theta,
    smallest_face_brute,
    support_of,
    upsilon,
    upsilon_grad,
    upsilon_hess,
)
from .maximize import CRITICAL_TOL, ZERO_VALUE, check_positive_gap, maximize_divergence
from .numerics import fd_gradient
from .projection import bregman_div, h_energy, rb_project, sample_moment_fiber

BRUTE_FORCE_CAP = 8


@dataclass
class CheckRecord:
    name: str
    instances: int
    max_violation: float
    tolerance: float
    passed: bool
    seed: int
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "instances": self.instances,
            "max_violation": self.max_violation,
            "tolerance": self.tolerance,
            "pass": self.passed,
            "seed": self.seed,
            "note": self.note,
        }


@dataclass
class VerifyReport:
    seed: int
    budget: int
    checks: list[CheckRecord] = field(default_factory=list)
    values: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.checks]

    def check(self, name: str) -> CheckRecord:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "budget": self.budget,
            "passed": self.passed,
            "values": self.values,
            "checks": [c.to_dict() for c in self.checks],
        }


CHECK_NAMES = (
    "beta.inverse_pair",
    "beta.conjugate_identity",
    "beta.legendre_oracle",
    "beta.link_monotone",
    "family.lambda_residual",
    "family.pm_normalization",
    "family.upsilon_gradient",
    "family.upsilon_hessian_psd",
    "family.facial_idempotent",
    "family.facial_brute_force",
    "projection.moment_match",
    "projection.h_minimality",
    "projection.idempotence",
    "projection.support_law",
    "projection.pythagorean",
    "maximize.criticality",
    "maximize.positive_gap",
    "maximize.enumeration_agreement",
    "maximize.support_bound",
    "bbar.positivity",
    "bbar.argmax_plus_side",
    "bbar.fiber_identity",
    "bbar.basis_independence",
    "bbar.classical_oracle",
    "bbar.argmax_support",
    "theorem.equivalence",
    "theorem.inequality_psi",
    "theorem.inequality_phi",
    "theorem.roundtrip_phi_psi",
    "theorem.roundtrip_psi_phi",
)

TOLERANCES = {
    "beta.inverse_pair": 1e-8,
    "beta.conjugate_identity": 1e-9,
    "beta.legendre_oracle": 1e-6,
    "beta.link_monotone": 0.0,
    "family.lambda_residual": 1e-10,
    "family.pm_normalization": 1e-10,
    "family.upsilon_gradient": 1e-5,
    "family.upsilon_hessian_psd": 1e-8,
    "family.facial_idempotent": 0.0,
    "family.facial_brute_force": 0.0,
    "projection.moment_match": 1e-8,
    "projection.h_minimality": 1e-8,
    "projection.idempotence": 1e-8,
    "projection.support_law": 0.0,
    "projection.pythagorean": 1e-7,
    "maximize.criticality": CRITICAL_TOL,
    "maximize.positive_gap": 0.0,
    "maximize.enumeration_agreement": 1e-5,
    "maximize.support_bound": 0.0,
    "bbar.positivity": 0.0,
    "bbar.argmax_plus_side": 0.0,
    "bbar.fiber_identity": 1e-8,
    "bbar.basis_independence": 1e-7,
    "bbar.classical_oracle": 1e-4,
    "bbar.argmax_support": 0.0,
    "theorem.equivalence": 1e-3,
    "theorem.inequality_psi": 1e-7,
    "theorem.inequality_phi": 1e-7,
    "theorem.roundtrip_phi_psi": 1e-6,
    "theorem.roundtrip_psi_phi": 1e-4,
}


# ---------------------------------------------------------------------------
# Oracles and random inputs shared with the test-suite
# ---------------------------------------------------------------------------

def legendre_grid_sup(beta_fn: Callable[[np.ndarray], np.ndarray], r: float, lo: float = 1e-14, hi: float = 1e8) -> float:
    """``sup_{x > 0} (r x - beta(x))`` by a log-spaced grid refined with bounded Brent."""
    xs = np.geomspace(lo, hi, 4001)
    vals = r * xs - beta_fn(xs)
    i = int(np.argmax(vals))
    a, b = xs[max(i - 1, 0)], xs[min(i + 1, xs.size - 1)]
    res = minimize_scalar(
        lambda x: -(r * x - float(beta_fn(np.array([x]))[0])),
        bounds=(a, b),
        method="bounded",
        options={"xatol": 1e-14 * max(1.0, b)},
    )
    return max(float(vals[i]), -float(res.fun))


def generator_fn(sys: BetaSystem, z: int) -> Callable[[np.ndarray], np.ndarray]:
    """``beta_z`` as a function vectorized over an array of arguments."""
    sub = sys.restrict([z])

    def fn(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        rep = BetaSystem(sub.kinds * x.size, np.full(x.size, sub.params[0]), sub.custom * x.size)
        return rep.beta(x)

    return fn


def random_beta_system(kind: str, n: int, rng: np.random.Generator) -> BetaSystem:
    """Classical with ``nu = exp(N(0, 1))`` or entropy-quadratic with ``alpha = exp(U(-2, 2))``."""
    if kind == CLASSICAL:
        return make_classical(np.exp(rng.normal(0.0, 1.0, n)))
    if kind == ENTROPY_QUADRATIC:
        return make_entropy_quadratic(np.exp(rng.uniform(-2.0, 2.0, n)))
    raise ValueError(f"unknown builtin kind {kind!r}")


def random_instance(rng: np.random.Generator, kind: str, n: int, d: int, spread: int = 2) -> Instance:
    """Integer design matrix with entries in ``[-spread, spread]`` and random generator parameters."""
    f = rng.integers(-spread, spread + 1, size=(d, n)).astype(float)
    return Instance(tuple(str(i) for i in range(n)), f, random_beta_system(kind, n, rng))


def random_pm(rng: np.random.Generator, n: int, sparse: float = 0.3) -> np.ndarray:
    """Dirichlet(1) draw; with probability ``sparse`` a random subset of coordinates is zeroed."""
    w = rng.dirichlet(np.ones(n))
    if n > 1 and rng.random() < sparse:
        keep = rng.random(n) < 0.6
        if keep.any():
            w = np.where(keep, w, 0.0)
            w /= w.sum()
    return w


def random_kernel_direction(inst: Instance, rng: np.random.Generator) -> np.ndarray | None:
    K = kernel_basis(inst)
    if K.shape[0] == 0:
        return None
    return rng.standard_normal(K.shape[0]) @ K


def independence_instance() -> Instance:
    """Two bits with uniform reference measure; statistic = the two bit indicators."""
    f = np.array([[0.0, 0.0, 1.0, 1.0], [0.0, 1.0, 0.0, 1.0]])
    return Instance(("00", "01", "10", "11"), f, make_classical(np.ones(4)))


def point_family_instance(n: int = 3) -> Instance:
    return Instance(tuple(str(i) for i in range(n)), np.zeros((0, n)), make_classical(np.ones(n)))


# ---------------------------------------------------------------------------
# Check runner
# ---------------------------------------------------------------------------

class _Recorder:
    def __init__(self, report: VerifyReport, seed: int):
        self.report = report
        self.seed = seed
        self.index = {name: i for i, name in enumerate(CHECK_NAMES)}

    def seed_for(self, name: str) -> int:
        return int(np.random.SeedSequence([self.seed, self.index[name]]).generate_state(1)[0])

    def rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng(self.seed_for(name))

    def add(self, name: str, count: int, violation: float, passed: bool | None = None, note: str = ""):
        tol = TOLERANCES[name]
        violation = float(violation)
        if passed is None:
            passed = violation <= tol
        self.report.checks.append(CheckRecord(name, int(count), violation, tol, bool(passed), self.seed_for(name), note))

    def run(self, name: str, fn: Callable[[np.random.Generator], tuple]):
        """``fn(rng)`` returns ``(count, violation)`` or ``(count, violation, note)``."""
        try:
            out = fn(self.rng(name))
        except BregmaxError as exc:
            self.add(name, 0, math.inf, False, f"{type(exc).__name__}: {exc}")
            return
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            self.add(name, 0, math.inf, False, f"{type(exc).__name__}: {exc}")
            return
        count, violation, *rest = out
        self.add(name, count, violation, note=rest[0] if rest else "")


def _worst(values) -> float:
    values = list(values)
    return max(values) if values else 0.0


# -- beta ---------------------------------------------------------------------

def _beta_checks(rec: _Recorder, inst: Instance, samples: int) -> None:
    sys = inst.beta
    n = inst.n

    def inverse_pair(rng):
        r = rng.uniform(-20.0, 20.0, (samples, n))
        back = np.array([sys.dbeta(sys.link(row)) for row in r])
        return r.size, float(np.max(np.abs(back - r)))

    def conjugate_identity(rng):
        r = rng.uniform(-20.0, 20.0, (samples, n))
        worst = 0.0
        for row in r:
            e = sys.link(row)
            lhs = sys.beta(e)
            rhs = row * e - sys.conj(row)
            worst = max(worst, float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(row * e)))))
        return r.size, worst

    def legendre(rng):
        r = rng.uniform(-5.0, 5.0, (max(samples // 10, 5), n))
        worst = 0.0
        for row in r:
            conj = sys.conj(row)
            for z in range(n):
                oracle = legendre_grid_sup(generator_fn(sys, z), float(row[z]))
                worst = max(worst, abs(oracle - conj[z]) / max(1.0, abs(conj[z])))
        return r.size, worst

    def monotone(rng):
        x = np.sort(np.exp(rng.uniform(-20.0, 10.0, (samples, 2))), axis=1)
        x = x[x[:, 0] < x[:, 1]]
        bad = 0
        for x1, x2 in x:
            bad += int(np.sum(sys.dbeta(np.full(n, x1)) >= sys.dbeta(np.full(n, x2))))
        return x.shape[0] * n, float(bad)

    rec.run("beta.inverse_pair", inverse_pair)
    rec.run("beta.conjugate_identity", conjugate_identity)
    rec.run("beta.legendre_oracle", legendre)
    rec.run("beta.link_monotone", monotone)


# -- family -------------------------------------------------------------------

def _random_theta(inst: Instance, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(0.0, 1.5, inst.d)


def _family_checks(rec: _Recorder, inst: Instance, samples: int) -> None:
    sys = inst.beta

    def lambda_residual(rng):
        worst = 0.0
        for _ in range(samples):
            theta = _random_theta(inst, rng)
            lam = lambda_of_theta(inst, theta)
            worst = max(worst, abs(float(sys.link(_scores(inst, theta) - lam).sum()) - 1.0))
        return samples, worst

    def normalization(rng):
        worst = 0.0
        for _ in range(samples):
            w = pm_of_theta(inst, _random_theta(inst, rng)).weights
            if np.any(w <= 0):
                return samples, math.inf, "nonpositive weight"
            worst = max(worst, abs(float(w.sum()) - 1.0))
        return samples, worst

    def gradient(rng):
        if inst.d == 0:
            return 0, 0.0, "no parameters"
        worst = 0.0
        count = max(samples // 5, 10)
        for _ in range(count):
            theta = _random_theta(inst, rng)
            g = upsilon_grad(inst, theta)
            fd = fd_gradient(lambda t: upsilon(inst, t), theta, inst.tol.fd_step)
            worst = max(worst, float(np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(g))))
        return count, worst

    def hessian(rng):
        if inst.d == 0:
            return 0, 0.0, "no parameters"
        worst = 0.0
        for _ in range(samples):
            H = upsilon_hess(inst, _random_theta(inst, rng))
            worst = max(worst, -float(np.linalg.eigvalsh(0.5 * (H + H.T)).min()))
        return samples, max(worst, 0.0)

    def idempotent(rng):
        bad = 0
        subsets = _random_subsets(inst.n, rng, samples)
        for S in subsets:
            F = facial_set(inst, S).members
            if not set(S) <= set(F) or facial_set(inst, F).members != F:
                bad += 1
        return len(subsets), float(bad)

    def brute(rng):
        if inst.n > BRUTE_FORCE_CAP:
            return 0, 0.0, f"|Z| > {BRUTE_FORCE_CAP}: skipped"
        bad = 0
        subsets = _random_subsets(inst.n, rng, samples)
        for S in subsets:
            if set(facial_set(inst, S).members) != set(smallest_face_brute(inst.f, S)):
                bad += 1
        return len(subsets), float(bad)

    rec.run("family.lambda_residual", lambda_residual)
    rec.run("family.pm_normalization", normalization)
    rec.run("family.upsilon_gradient", gradient)
    rec.run("family.upsilon_hessian_psd", hessian)
    rec.run("family.facial_idempotent", idempotent)
    rec.run("family.facial_brute_force", brute)


def _random_subsets(n: int, rng: np.random.Generator, count: int) -> list[tuple[int, ...]]:
    out = []
    for _ in range(count):
        mask = rng.random(n) < rng.uniform(0.1, 0.9)
        if not mask.any():
            mask[rng.integers(n)] = True
        out.append(tuple(np.flatnonzero(mask).tolist()))
    return out


# -- projection ---------------------------------------------------------------

def _projection_checks(rec: _Recorder, inst: Instance, samples: int, fiber: int) -> None:
    sys = inst.beta

    def moment(rng):
        worst = 0.0
        for _ in range(samples):
            p = random_pm(rng, inst.n)
            pi = rb_project(inst, p).pi.weights
            worst = max(worst, float(np.abs(inst.f @ (pi - p)).max()) if inst.d else 0.0)
        return samples, worst

    def h_min(rng):
        worst = 0.0
        count = 0
        for _ in range(max(samples // 10, 3)):
            p = random_pm(rng, inst.n, sparse=0.0)
            hp = rb_project(inst, p).pi.weights
            h_pi = h_energy(sys, hp)
            for q in sample_moment_fiber(inst, p, fiber, rng):
                worst = max(worst, h_pi - h_energy(sys, q))
                count += 1
        return count, max(worst, 0.0)

    def idempotence(rng):
        worst = 0.0
        for _ in range(samples):
            pi = rb_project(inst, random_pm(rng, inst.n)).pi
            again = rb_project(inst, pi)
            worst = max(worst, again.value, pi.tv(again.pi))
        return samples, worst

    def support(rng):
        bad = 0
        for _ in range(samples):
            p = random_pm(rng, inst.n, sparse=0.6)
            pi = rb_project(inst, p).pi
            if support_of(pi.weights, 1e-14) != facial_set(inst, support_of(p)).members:
                bad += 1
        return samples, float(bad)

    def pythagorean(rng):
        worst = 0.0
        for _ in range(samples):
            p = random_pm(rng, inst.n)
            res = rb_project(inst, p)
            direct = bregman_div(sys, p, res.pi)
            worst = max(worst, abs(res.value - direct), res.dual_gap)
        return samples, worst

    rec.run("projection.moment_match", moment)
    rec.run("projection.h_minimality", h_min)
    rec.run("projection.idempotence", idempotence)
    rec.run("projection.support_law", support)
    rec.run("projection.pythagorean", pythagorean)


# -- maximize -----------------------------------------------------------------

def _maximize_checks(rec: _Recorder, inst: Instance, report) -> None:
    optima = [o for o in report.local_optima if o.value > ZERO_VALUE]

    rec.add("maximize.criticality", len(optima), _worst(o.residual for o in optima))

    def gap(_rng):
        failures = sum(not check_positive_gap(inst, o.pm, raise_on_failure=False)[0] for o in optima)
        return len(optima), float(failures)

    rec.run("maximize.positive_gap", gap)
    if report.enumeration_value is None:
        rec.add("maximize.enumeration_agreement", 0, 0.0, note="|Z| above the enumeration cap")
    else:
        rec.add("maximize.enumeration_agreement", 1, abs(report.enumeration_value - report.multistart_value))
    excess = len(report.global_argmax.support) - (inst.dim + 1)
    rec.add("maximize.support_bound", 1, max(float(excess), 0.0))


# -- bbar ---------------------------------------------------------------------

def _bbar_checks(rec: _Recorder, inst: Instance, samples: int) -> None:
    sys = inst.beta
    n = inst.n
    count = max(samples // 4, 5)

    def directions(rng):
        return [random_direction(n, rng) for _ in range(count)]

    def positivity(rng):
        worst = 0.0
        for u in directions(rng):
            v = bbar_eval(sys, u, 4, int(rng.integers(2**31))).value
            worst = max(worst, 0.0 if v > 0 else 1.0 - v)
        return count, worst

    def plus_side(rng):
        bad = 0
        for u in directions(rng)[: max(count // 2, 3)]:
            res = bbar_eval(sys, u, 4, int(rng.integers(2**31)))
            inst_u = family_from_direction(sys, u)
            if classify_side(inst_u, res.argmax, u) != "plus":
                bad += 1
        return max(count // 2, 3), float(bad)

    def fiber_identity(rng):
        worst = 0.0
        tested = 0
        for u in directions(rng):
            d = normalize_direction(u)
            q = random_pm(rng, n, sparse=0.0)
            _, q = fiber_point(sys, d, q)  # a member of F_u
            q = q.weights
            neg = d.u < 0
            t_max = float(np.min(q[neg] / -d.u[neg]))
            for t in (0.0, 0.5 * t_max, 0.999 * t_max):
                _, back = fiber_point(sys, d, q + t * d.u)
                worst = max(worst, float(np.abs(back.weights - q).max()))
                tested += 1
        return tested, worst

    def basis_independence(rng):
        worst = 0.0
        m = max(count // 3, 3)
        for u in directions(rng)[:m]:
            k = n - 2
            if k < 1:
                continue
            Q, _ = np.linalg.qr(rng.standard_normal((k, k)))
            a = family_from_direction(sys, u)
            b = family_from_direction(sys, u, basis_rotation=Q)
            p = random_pm(rng, n, sparse=0.0)
            worst = max(worst, abs(rb_project(a, p).value - rb_project(b, p).value))
        return m, worst

    def classical(rng):
        if not sys.is_classical:
            return 0, 0.0, "not a classical system"
        worst = 0.0
        for u in directions(rng):
            v = bbar_eval(sys, u, 4, int(rng.integers(2**31))).value
            worst = max(worst, abs(v - bbar_classical(sys, u)))
        return count, worst

    def argmax_support(rng):
        bad = 0
        for u in directions(rng):
            res = bbar_eval(sys, u, 4, int(rng.integers(2**31)))
            diff = res.argmax.weights - res.base.weights
            if support_of(np.maximum(diff, 0.0)) != res.argmax.support:
                bad += 1
        return count, float(bad)

    rec.run("bbar.positivity", positivity)
    rec.run("bbar.argmax_plus_side", plus_side)
    rec.run("bbar.fiber_identity", fiber_identity)
    rec.run("bbar.basis_independence", basis_independence)
    rec.run("bbar.classical_oracle", classical)
    rec.run("bbar.argmax_support", argmax_support)


# -- theorems -----------------------------------------------------------------

def _theorem_checks(rec: _Recorder, inst: Instance, max_report, bbar_report, pairs: int) -> None:
    sys = inst.beta
    max_b = max_report.global_value
    max_bbar = 0.0 if bbar_report is None else bbar_report.value
    note = "kernel space is {0}; max Bbar taken as 0" if bbar_report is None else ""
    rec.add("theorem.equivalence", 1, abs(max_b - max_bbar), note=note)

    def ineq_psi(rng):
        worst = 0.0
        tested = 0
        for _ in range(pairs):
            p = random_pm(rng, inst.n)
            try:
                u = psi(inst, p)
            except MemberOfClosure:
                continue
            b = rb_project(inst, p).value
            worst = max(worst, b - bbar_eval(sys, u, 4, int(rng.integers(2**31))).value)
            tested += 1
        return tested, max(worst, 0.0)

    def ineq_phi(rng):
        if bbar_report is None:
            return 0, 0.0, "kernel space is {0}"
        worst = 0.0
        for _ in range(pairs):
            u = random_kernel_direction(inst, rng)
            res = bbar_eval(sys, u, 4, int(rng.integers(2**31)))
            worst = max(worst, res.value - rb_project(inst, res.argmax).value)
        return pairs, max(worst, 0.0)

    def roundtrip_phi_psi(_rng):
        worst = 0.0
        tested = 0
        for o in max_report.local_optima:
            if o.value <= ZERO_VALUE:
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", AmbiguousMaximizer)
                back = phi(inst, psi(inst, o.pm))
            worst = max(worst, o.pm.tv(back))
            tested += 1
        return tested, worst

    def roundtrip_psi_phi(_rng):
        if bbar_report is None:
            return 0, 0.0, "kernel space is {0}"
        worst = 0.0
        tested = 0
        for d, v in bbar_report.candidates:
            if v < bbar_report.value - 1e-6:
                continue  # only directions attaining the maximum are known maximizers
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", AmbiguousMaximizer)
                back = psi(inst, phi(inst, d))
            worst = max(worst, float(np.abs(back.u - d.u).max()))
            tested += 1
        return tested, worst

    rec.run("theorem.inequality_psi", ineq_psi)
    rec.run("theorem.inequality_phi", ineq_phi)
    rec.run("theorem.roundtrip_phi_psi", roundtrip_phi_psi)
    rec.run("theorem.roundtrip_psi_phi", roundtrip_psi_phi)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def cmd_verify(inst: Instance, seed: int = 0, budget: int = 64, pairs: int | None = None) -> VerifyReport:
    """Run every check on ``inst``; ``budget`` sets multistart sizes and sample counts.

    ``pairs`` (default ``budget``) is the number of random ``(P, u)`` draws for
    the inequality checks.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    report = VerifyReport(seed=seed, budget=budget)
    rec = _Recorder(report, seed)
    samples = max(budget, 10)

    _beta_checks(rec, inst, samples)
    _family_checks(rec, inst, samples)
    _projection_checks(rec, inst, samples, fiber=1000)

    max_report = maximize_divergence(inst, budget, rec.seed_for("theorem.equivalence"))
    try:
        bbar_report = maximize_bbar(inst, budget, rec.seed_for("theorem.equivalence"))
    except TrivialKernel:
        bbar_report = None
    report.values = {
        "max_B": max_report.global_value,
        "argmax_B": max_report.global_argmax.weights,
        "max_Bbar": 0.0 if bbar_report is None else bbar_report.value,
        "argmax_Bbar": None if bbar_report is None else bbar_report.direction.u,
    }
    _maximize_checks(rec, inst, max_report)
    _bbar_checks(rec, inst, samples)
    _theorem_checks(rec, inst, max_report, bbar_report, budget if pairs is None else pairs)
    return report
