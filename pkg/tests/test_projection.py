import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import null_space
from scipy.optimize import minimize

from bregmax import (
    Instance,
    Pm,
    bregman_div,
    div_from_family,
    facial_set,
    h_energy,
    make_classical,
    make_entropy_quadratic,
    moment_map,
    pm_of_theta,
    rb_project,
    upsilon,
)
from bregmax.errors import NegativeInput
from conftest import random_instance
from oracles import independence_projection, kl


def random_pm(rng, n, sparse=True):
    w = rng.dirichlet(np.ones(n))
    if sparse and rng.random() < 0.4:
        keep = rng.random(n) < 0.6
        keep[rng.integers(n)] = True
        w = np.where(keep, w, 0.0)
        w /= w.sum()
    return w


def fiber_samples(inst, anchor, face, count, rng):
    """Pms with the moments of ``anchor``, drawn on chords through it along kernel
    directions of the statistic restricted to ``face`` (scipy null space).

    ``anchor`` must be strictly positive on ``face``.
    """
    face = list(face)
    K = null_space(np.vstack([inst.f[:, face], np.ones(len(face))]))
    out = []
    if K.shape[1] == 0:
        return out
    a = anchor[face]
    for _ in range(count):
        v = K @ rng.normal(size=K.shape[1])
        lo = np.max(-a[v > 0] / v[v > 0])
        hi = np.min(-a[v < 0] / v[v < 0])
        q = np.zeros(inst.n)
        q[face] = np.clip(a + rng.uniform(lo, hi) * v, 0.0, None)
        out.append(q / q.sum())
    return out


class TestBregmanDiv:
    def test_identity(self):
        rng = np.random.default_rng(1)
        for sys in (make_classical(np.exp(rng.normal(size=4))), make_entropy_quadratic([0.1, 1, 2, 3])):
            p = rng.dirichlet(np.ones(4))
            assert bregman_div(sys, p, p) == pytest.approx(0.0, abs=1e-15)

    def test_classical_kl_value(self):
        assert bregman_div(make_classical([1, 1]), [1, 0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)

    def test_classical_generalized_kl(self):
        rng = np.random.default_rng(2)
        sys = make_classical(np.exp(rng.normal(size=5)))
        for _ in range(20):
            u, v = rng.exponential(size=5), rng.exponential(size=5)
            oracle = float(np.sum(u * np.log(u / v) - u + v))
            assert bregman_div(sys, u, v) == pytest.approx(oracle, rel=1e-12, abs=1e-13)

    def test_entropy_quadratic_strictly_positive(self):
        rng = np.random.default_rng(3)
        sys = make_entropy_quadratic(rng.uniform(0, 3, size=4))
        for _ in range(100):
            u, v = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
            assert bregman_div(sys, u, v) > 0

    def test_infinite_where_support_missing(self):
        assert bregman_div(make_classical([1, 1]), [0.5, 0.5], [1.0, 0.0]) == math.inf

    def test_zero_zero_terms(self):
        assert bregman_div(make_classical([1, 1, 1]), [0.5, 0.5, 0], [0.25, 0.75, 0]) == pytest.approx(
            kl([0.5, 0.5], [0.25, 0.75]), abs=1e-15
        )

    def test_negative_input(self):
        with pytest.raises(NegativeInput):
            bregman_div(make_classical([1, 1]), [1.5, -0.5], [0.5, 0.5])


class TestEnergy:
    @pytest.mark.parametrize("n", [2, 3, 7])
    def test_uniform_reference_uniform_pm(self, n):
        assert h_energy(make_classical(np.full(n, 1 / n)), Pm.uniform(n)) == pytest.approx(-1.0, abs=1e-14)

    @pytest.mark.parametrize("n", [2, 3, 7])
    def test_uniform_reference_vertex(self, n):
        assert h_energy(make_classical(np.full(n, 1 / n)), Pm.delta(n, 0)) == pytest.approx(math.log(n) - 1, abs=1e-14)

    def test_single_point(self):
        assert h_energy(make_entropy_quadratic([3.0]), [1.0]) == pytest.approx(-1 + 1.5)


class TestRbProject:
    def test_member_is_fixed(self):
        rng = np.random.default_rng(4)
        for kind in ("classical", "eq"):
            inst = random_instance(rng, kind, 5, 2)
            p = pm_of_theta(inst, rng.normal(size=2))
            res = rb_project(inst, p)
            np.testing.assert_allclose(res.pi.weights, p.weights, atol=1e-10)
            assert res.value <= 1e-12

    def test_point_family_projects_to_reference(self):
        nu = np.array([0.2, 0.5, 0.3])
        inst = Instance(("a", "b", "c"), [], make_classical(nu))
        rng = np.random.default_rng(5)
        for _ in range(10):
            res = rb_project(inst, random_pm(rng, 3))
            np.testing.assert_allclose(res.pi.weights, nu, atol=1e-12)

    def test_independence_diagonal(self, indep):
        res = rb_project(indep, [0.5, 0, 0, 0.5])
        np.testing.assert_allclose(res.pi.weights, np.full(4, 0.25), atol=1e-12)
        assert res.value == pytest.approx(math.log(2), abs=1e-12)
        assert res.face.members == (0, 1, 2, 3)

    def test_independence_product_of_marginals(self, indep):
        rng = np.random.default_rng(6)
        for _ in range(50):
            p = random_pm(rng, 4)
            oracle = independence_projection(p)
            res = rb_project(indep, p)
            np.testing.assert_allclose(res.pi.weights, oracle, atol=1e-9)
            assert res.value == pytest.approx(kl(p, oracle), abs=1e-9)

    def test_boundary_face(self, indep):
        res = rb_project(indep, [0.3, 0.7, 0, 0])
        assert res.face.members == (0, 1)
        np.testing.assert_allclose(res.pi.weights, [0.3, 0.7, 0, 0], atol=1e-12)
        assert res.value <= 1e-12

    def test_rejects_non_pm(self, indep):
        with pytest.raises(ValueError):
            rb_project(indep, [0.5, 0.5, 0.5, 0])

    def test_point_family_vertex_value(self, point3):
        assert div_from_family(point3, Pm.delta(3, 2)) == pytest.approx(math.log(3), abs=1e-13)

    @pytest.mark.parametrize("kind", ["classical", "eq"])
    def test_infimum_over_sampled_members(self, kind):
        rng = np.random.default_rng(7)
        inst = random_instance(rng, kind, 5, 2)
        for _ in range(5):
            p = rng.dirichlet(np.ones(5))
            v = div_from_family(inst, p)
            for _ in range(100):
                q = pm_of_theta(inst, rng.normal(scale=2, size=2))
                assert v <= bregman_div(inst.beta, p, q) + 1e-12


class TestProjectionLaws:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["classical", "eq"]))
    def test_laws(self, seed, kind):
        rng = np.random.default_rng(seed)
        inst = random_instance(rng, kind, int(rng.integers(2, 7)), int(rng.integers(0, 3)))
        p = random_pm(rng, inst.n)
        res = rb_project(inst, p)
        pi = res.pi.weights
        # moment match
        assert np.abs(moment_map(inst, pi) - moment_map(inst, p)).max(initial=0.0) <= 1e-8
        # support law
        assert res.pi.support == facial_set(inst, Pm(p).support).members == res.face.members
        # Pythagorean identity: B(P, E) = B(P, Pi) = H(P) - H(Pi)
        assert res.value >= 0
        assert res.value == pytest.approx(bregman_div(inst.beta, p, pi), abs=1e-9)
        # idempotence
        again = rb_project(inst, pi)
        np.testing.assert_allclose(again.pi.weights, pi, atol=1e-8)
        assert again.value <= 1e-8
        # H-minimality on the moment fiber
        h_pi = h_energy(inst.beta, pi)
        for q in fiber_samples(inst, 0.5 * (p + pi), res.face.members, 200, rng):
            assert h_energy(inst.beta, q) >= h_pi - 1e-8

    def test_dual_formula_agrees(self):
        """For interior pms: H(P) - sup_theta (<theta, mu(P)> - Upsilon(theta)), the sup computed by BFGS."""
        rng = np.random.default_rng(8)
        for kind in ("classical", "eq"):
            for _ in range(5):
                inst = random_instance(rng, kind, 5, 2)
                p = rng.dirichlet(np.ones(5))
                m = moment_map(inst, p)
                if facial_set(inst, Pm(p).support).members != tuple(range(5)):
                    continue
                opt = minimize(lambda t: upsilon(inst, t) - t @ m, np.zeros(2), method="BFGS", options={"gtol": 1e-11})
                dual = h_energy(inst.beta, p) + opt.fun
                assert rb_project(inst, p).value == pytest.approx(dual, abs=1e-7)

    def test_reported_dual_gap_small(self):
        rng = np.random.default_rng(9)
        for kind in ("classical", "eq"):
            inst = random_instance(rng, kind, 6, 2)
            for _ in range(20):
                assert rb_project(inst, random_pm(rng, 6)).dual_gap <= 1e-7
