"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one ``criterion N: PASS/FAIL`` line (shown even without
``-s``) and then asserts.  Criterion 9 is an evidence report: it passes when
the scan completes and records every trial; counterexamples are printed with
their reproduction data and written to a JSON file.
"""

import json
import math
import time
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize

from bregmax import (
    AmbiguousMaximizer,
    Instance,
    Pm,
    bbar_classical,
    bbar_eval,
    check_positive_gap,
    conjecture_scan,
    criticality_residual,
    facial_set,
    h_energy,
    kernel_basis,
    lambda_of_theta,
    make_classical,
    maximize_bbar,
    maximize_divergence,
    moment_map,
    normalize_direction,
    psi,
    rb_project,
    upsilon,
    upsilon_grad,
    upsilon_hess,
)
from bregmax.errors import TrivialKernel
from bregmax.io import dumps_report
from bregmax.numerics import fd_gradient
from conftest import independence, point_family, random_instance
from oracles import grid_legendre, is_exposed_face, kl, simplex_grid

LN2, LN3 = math.log(2), math.log(3)
KINDS = ("classical", "eq")


@pytest.fixture
def announce(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")

    return emit


def random_pm(rng, n):
    w = rng.dirichlet(np.ones(n))
    if rng.random() < 0.4:
        keep = rng.random(n) < 0.6
        keep[rng.integers(n)] = True
        w = np.where(keep, w, 0.0)
        w /= w.sum()
    return w


def zero_sum_direction(rng, n):
    while True:
        u = rng.normal(size=n)
        if n > 2 and rng.random() < 0.3:
            u[rng.integers(n)] = 0.0
        nz = u != 0
        u[nz] -= u[nz].mean()
        if np.any(u > 0) and np.any(u < 0):
            return u


# ---------------------------------------------------------------------------
# Criteria 1-3 as report builders (re-run by criterion 10)
# ---------------------------------------------------------------------------

def criterion1_report(seed=2024):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(50):
        n = 2 + i % 5
        nu = np.exp(rng.normal(size=n))
        d = normalize_direction(zero_sum_direction(rng, n))
        value = bbar_eval(make_classical(nu), d, 8, i).value
        closed = bbar_classical(nu, d)
        rows.append({"n": n, "nu": nu, "u": d.u, "bbar": value, "closed_form": closed, "error": abs(value - closed)})
    return {"criterion": 1, "seed": seed, "rows": rows, "max_error": max(r["error"] for r in rows)}


def grid_max_point_family(step=0.01):
    uniform = np.full(3, 1 / 3)
    best = max(((kl(p, uniform), tuple(p)) for p in simplex_grid(3, step)), key=lambda t: t[0])
    return best


def grid_max_independence(step=0.01):
    grid = np.array(list(simplex_grid(4, step)))
    a1 = grid[:, 2] + grid[:, 3]
    b1 = grid[:, 1] + grid[:, 3]
    pi = np.stack([(1 - a1) * (1 - b1), (1 - a1) * b1, a1 * (1 - b1), a1 * b1], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(grid > 0, grid * np.log(grid / pi), 0.0).sum(axis=1)
    i = int(np.argmax(vals))
    return float(vals[i]), tuple(grid[i])


def criterion3_report(seed=7):
    point = maximize_divergence(point_family(3), 64, seed)
    indep = maximize_divergence(independence(), 64, seed)
    pg, pg_at = grid_max_point_family()
    ig, ig_at = grid_max_independence()
    return {
        "criterion": 3,
        "seed": seed,
        "point_family": {"value": point.global_value, "argmax": point.global_argmax, "grid": pg, "grid_argmax": pg_at},
        "independence": {"value": indep.global_value, "argmax": indep.global_argmax, "grid": ig, "grid_argmax": ig_at},
    }


def equivalence_instances(seed=77):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(20):
        n = int(rng.integers(3, 7))
        d = int(rng.integers(1, 3))
        out.append(random_instance(rng, KINDS[i % 2], n, d))
    return out


def criterion2_report(seed=77):
    rows = []
    for i, inst in enumerate(equivalence_instances(seed)):
        t0 = time.perf_counter()
        rep = maximize_divergence(inst, 64, seed + i)
        try:
            bb = maximize_bbar(inst, 64, seed + i).value
        except TrivialKernel:
            bb = 0.0
        rows.append(
            {
                "instance": i,
                "kind": KINDS[i % 2],
                "n": inst.n,
                "d": inst.d,
                "max_B": rep.global_value,
                "max_Bbar": bb,
                "gap": abs(rep.global_value - bb),
                "seconds": time.perf_counter() - t0,
                "report": rep,
            }
        )
    return rows


@pytest.fixture(scope="module")
def reports():
    return {}


@pytest.fixture(scope="module")
def equivalence_rows():
    t0 = time.perf_counter()
    rows = criterion2_report()
    return rows, time.perf_counter() - t0


class TestAcceptance:
    def test_criterion_01_classical_closed_form(self, announce, reports):
        t0 = time.perf_counter()
        rep = criterion1_report()
        elapsed = time.perf_counter() - t0
        reports[1] = dumps_report(rep)
        ok = rep["max_error"] <= 1e-4 and elapsed <= 120
        announce(1, ok, f"50 directions, max |Bbar - ln(1+exp(Dbar))| = {rep['max_error']:.2e} (tol 1e-4), {elapsed:.1f}s (limit 120s)")
        assert rep["max_error"] <= 1e-4
        assert elapsed <= 120

    def test_criterion_02_global_equivalence(self, announce, reports, equivalence_rows):
        rows, elapsed = equivalence_rows
        worst = max(r["gap"] for r in rows)
        kinds = {r["kind"] for r in rows}
        ok = worst <= 1e-3 and elapsed <= 600 and kinds == set(KINDS) and all(r["n"] <= 6 and r["d"] <= 2 for r in rows)
        announce(2, ok, f"20 instances, max |max B - max Bbar| = {worst:.2e} (tol 1e-3), {elapsed:.1f}s (limit 600s)")
        assert worst <= 1e-3
        assert elapsed <= 600
        assert kinds == set(KINDS)

    def test_criterion_03_named_values(self, announce, reports):
        rep = criterion3_report()
        reports[3] = dumps_report(rep)
        pf, ind = rep["point_family"], rep["independence"]
        pw, iw = pf["argmax"].weights, ind["argmax"].weights
        checks = {
            "point value": abs(pf["value"] - LN3) <= 1e-6,
            "point at vertex": np.isclose(pw.max(), 1.0, atol=1e-9),
            "point grid": abs(pf["grid"] - LN3) <= 1e-6 and pf["value"] >= pf["grid"] - 1e-9,
            "indep value": abs(ind["value"] - LN2) <= 1e-5,
            "indep argmax": np.abs(iw - [0.5, 0, 0, 0.5]).max() <= 1e-5,
            "indep grid": ind["value"] >= ind["grid"] - 1e-9 and abs(ind["grid"] - LN2) <= 1e-5,
        }
        ok = all(checks.values())
        announce(
            3,
            ok,
            f"point family max B = {pf['value']:.10f} (ln 3 = {LN3:.10f}, grid {pf['grid']:.10f}); "
            f"independence max B = {ind['value']:.10f} at {np.round(iw, 6).tolist()} (grid {ind['grid']:.10f})",
        )
        assert checks == {k: True for k in checks}

    def test_criterion_04_projection_laws(self, announce):
        rng = np.random.default_rng(404)
        worst = {"moment": 0.0, "h_min": 0.0, "support": 0, "dual": 0.0}
        sampled = 0
        for i in range(200):
            inst = random_instance(rng, KINDS[i % 2], int(rng.integers(2, 7)), int(rng.integers(0, 3)))
            p = random_pm(rng, inst.n)
            res = rb_project(inst, p)
            pi = res.pi.weights
            worst["moment"] = max(worst["moment"], float(np.abs(moment_map(inst, pi) - moment_map(inst, p)).max(initial=0)))
            worst["support"] += int(res.pi.support != facial_set(inst, Pm(p).support).members)
            h_pi = h_energy(inst.beta, pi)
            samples = fiber_samples(inst, 0.5 * (p + pi), res.face.members, 1000, rng)
            sampled += len(samples)
            for q in samples:
                worst["h_min"] = max(worst["h_min"], h_pi - h_energy(inst.beta, q))
            worst["dual"] = max(worst["dual"], abs(res.value - dual_value(inst, p)))
        ok = worst["moment"] <= 1e-8 and worst["h_min"] <= 1e-8 and worst["support"] == 0 and worst["dual"] <= 1e-7
        announce(
            4,
            ok,
            f"200 pairs: moment {worst['moment']:.1e} (1e-8), H-minimality violation {worst['h_min']:.1e} (1e-8) "
            f"over {sampled} fiber samples, "
            f"support mismatches {worst['support']}, H-difference vs dual form {worst['dual']:.1e} (1e-7)",
        )
        assert worst["moment"] <= 1e-8
        assert worst["h_min"] <= 1e-8
        assert sampled >= 100_000
        assert worst["support"] == 0
        assert worst["dual"] <= 1e-7

    def test_criterion_05_dual_analytics(self, announce):
        rng = np.random.default_rng(505)
        worst = {"grad": 0.0, "eig": 0.0, "lam": 0.0, "lemma": 0.0, "legendre": 0.0}
        for i in range(4):
            inst = random_instance(rng, KINDS[i % 2], int(rng.integers(3, 7)), 2)
            for _ in range(100):
                theta = rng.normal(scale=1.5, size=inst.d)
                g = upsilon_grad(inst, theta)
                fd = fd_gradient(lambda t: upsilon(inst, t), theta, 1e-5)
                worst["grad"] = max(worst["grad"], float(np.abs(g - fd).max() / max(1.0, np.abs(g).max())))
                worst["eig"] = max(worst["eig"], -float(np.linalg.eigvalsh(upsilon_hess(inst, theta)).min()))
                lam = lambda_of_theta(inst, theta)
                worst["lam"] = max(worst["lam"], abs(float(inst.beta.link(theta @ inst.f - lam).sum()) - 1))
        for _ in range(2):
            nu = np.exp(rng.normal(size=5))
            sys = make_classical(nu)
            for _ in range(100):
                r = rng.uniform(-10, 10, size=5)
                x = sys.link(r)
                worst["lemma"] = max(worst["lemma"], float(np.abs(sys.beta(x) - (r * x - sys.conj(r))).max()))
        from bregmax import make_entropy_quadratic

        for _ in range(2):
            alpha = np.exp(rng.uniform(-2, 2, size=5))
            sys = make_entropy_quadratic(alpha)
            for r in rng.uniform(-4, 4, size=10):
                conj = sys.conj(np.full(5, r))
                for z in range(5):
                    beta = lambda x, a=alpha[z]: x * np.log(x) - x + 0.5 * a * x * x
                    worst["legendre"] = max(worst["legendre"], abs(conj[z] - grid_legendre(beta, r)))
        ok = (
            worst["grad"] <= 1e-5
            and worst["eig"] <= 1e-8
            and worst["lam"] <= 1e-10
            and worst["lemma"] <= 1e-9
            and worst["legendre"] <= 1e-6
        )
        announce(
            5,
            ok,
            f"gradient rel err {worst['grad']:.1e} (1e-5), -min eig {worst['eig']:.1e} (1e-8), "
            f"Lambda residual {worst['lam']:.1e} (1e-10), conjugate identity {worst['lemma']:.1e} (1e-9), "
            f"grid Legendre {worst['legendre']:.1e} (1e-6)",
        )
        assert worst["grad"] <= 1e-5
        assert worst["eig"] <= 1e-8
        assert worst["lam"] <= 1e-10
        assert worst["lemma"] <= 1e-9
        assert worst["legendre"] <= 1e-6

    def test_criterion_06_criticality(self, announce, equivalence_rows):
        rows, _ = equivalence_rows
        count, worst, bad = 0, 0.0, []
        instances = equivalence_instances()
        for row, inst in zip(rows, instances):
            for o in row["report"].local_optima:
                if o.value <= 1e-10:
                    continue  # members of the closure: the conditions are vacuous
                count += 1
                r = criticality_residual(inst, o.pm)
                worst = max(worst, r)
                ok_gap, c = check_positive_gap(inst, o.pm, raise_on_failure=False)
                if not (r <= 1e-6 and ok_gap and c > 0):
                    bad.append((row["instance"], o.pm.weights.tolist(), r, c))
        ok = not bad and count > 0
        announce(6, ok, f"{count} local maximizers from criterion 2: max residual {worst:.1e} (1e-6), failures {len(bad)}")
        assert count > 0
        assert bad == []

    def test_criterion_07_inequalities(self, announce):
        rng = np.random.default_rng(707)
        instances = [independence()]
        while len(instances) < 5:
            inst = random_instance(rng, KINDS[len(instances) % 2], int(rng.integers(4, 6)), int(rng.integers(1, 3)))
            if kernel_basis(inst).shape[0]:
                instances.append(inst)
        worst_psi = worst_phi = -math.inf
        pairs = 0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AmbiguousMaximizer)
            for inst in instances:
                K = kernel_basis(inst)
                done = 0
                while done < 500:
                    p = rng.dirichlet(np.ones(inst.n))
                    b = rb_project(inst, p).value
                    if b <= 1e-9:
                        continue
                    worst_psi = max(worst_psi, b - bbar_eval(inst.beta, psi(inst, p), 8, done).value)
                    u = rng.normal(size=K.shape[0]) @ K
                    res = bbar_eval(inst.beta, u, 8, done)
                    worst_phi = max(worst_phi, res.value - rb_project(inst, res.argmax).value)
                    done += 1
                pairs += done
        ok = worst_psi <= 1e-7 and worst_phi <= 1e-7
        announce(
            7,
            ok,
            f"{pairs} (P, u) pairs on {len(instances)} instances: max B(P,E) - Bbar(Psi(P)) = {worst_psi:.1e}, "
            f"max Bbar(u) - B(Phi(u),E) = {worst_phi:.1e} (tol 1e-7)",
        )
        assert worst_psi <= 1e-7
        assert worst_phi <= 1e-7

    def test_criterion_08_facial_sets(self, announce):
        rng = np.random.default_rng(808)
        mismatches, compared = [], 0
        for k in range(50):
            n = int(rng.integers(3, 7))
            inst = Instance(
                tuple(str(i) for i in range(n)),
                rng.integers(-1, 2, size=(int(rng.integers(1, 4)), n)),
                make_classical(np.ones(n)),
            )
            faces = exhaustive_faces(inst.f)
            for size in range(1, n + 1):
                for S in _subsets(n, size):
                    expected = min((F for F in faces if S <= F), key=len)
                    got = frozenset(facial_set(inst, sorted(S)).members)
                    compared += 1
                    if got != expected:
                        mismatches.append((k, sorted(S), sorted(got), sorted(expected)))
        ok = not mismatches
        announce(8, ok, f"50 polytopes, {compared} subsets compared with exhaustive face enumeration, {len(mismatches)} mismatches")
        assert mismatches == []

    def test_criterion_09_conjecture_scan(self, announce, tmp_path_factory):
        out = {}
        lines = []
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AmbiguousMaximizer)
            for kind in ("classical", "entropy_quadratic"):
                for z in (3, 4, 5):
                    rep = conjecture_scan(kind, z, trials=200, starts=32, seed=9000 + z)
                    assert len(rep.trials) == 200 and all(t.n_local >= 1 for t in rep.trials)
                    out[f"{kind}/{z}"] = {
                        "histogram": rep.n_local_histogram(),
                        "counterexamples": [
                            {"trial": t.trial, "seed": t.seed, "params": t.params, "u": t.u, "optima": t.optima}
                            for t in rep.counterexamples
                        ],
                    }
                    lines.append(f"{kind} |Z|={z}: n_local histogram {rep.n_local_histogram()}")
        path = tmp_path_factory.mktemp("scan") / "conjecture_scan.json"
        path.write_text(json.dumps(out, indent=2))
        total_ce = sum(len(v["counterexamples"]) for v in out.values())
        announce(
            9,
            True,
            f"evidence report ({time.perf_counter() - t0:.0f}s, non-blocking): " + "; ".join(lines)
            + f"; {total_ce} potential counterexamples; full data in {path}",
        )
        for key, v in out.items():
            for ce in v["counterexamples"]:
                print(f"counterexample {key}: {json.dumps(ce)}")

    def test_criterion_10_determinism(self, announce, reports):
        first = {1: reports.get(1) or dumps_report(criterion1_report()), 3: reports.get(3) or dumps_report(criterion3_report())}
        second = {1: dumps_report(criterion1_report()), 3: dumps_report(criterion3_report())}
        rows_a = [{k: v for k, v in r.items() if k not in ("seconds", "report")} for r in criterion2_subset()]
        rows_b = [{k: v for k, v in r.items() if k not in ("seconds", "report")} for r in criterion2_subset()]
        same = {1: first[1] == second[1], 2: dumps_report({"rows": rows_a}) == dumps_report({"rows": rows_b}), 3: first[3] == second[3]}
        ok = all(same.values())
        announce(10, ok, "byte-identical reruns: " + ", ".join(f"criterion {k}: {'yes' if v else 'NO'}" for k, v in same.items()))
        assert same == {1: True, 2: True, 3: True}


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def criterion2_subset():
    """Criterion 2 restricted to its first four instances, for the determinism rerun."""
    rows = []
    for i, inst in enumerate(equivalence_instances()[:4]):
        rep = maximize_divergence(inst, 64, 77 + i)
        try:
            bb = maximize_bbar(inst, 64, 77 + i)
            bbar = {"value": bb.value, "u": bb.direction.u}
        except TrivialKernel:
            bbar = {"value": 0.0}
        rows.append({"max_B": rep.global_value, "argmax": rep.global_argmax, "bbar": bbar})
    return rows


def _subsets(n, size):
    import itertools

    return [frozenset(c) for c in itertools.combinations(range(n), size)]


def exhaustive_faces(points):
    """Every face of conv(points) as a set of point indices, by testing all subsets."""
    n = points.shape[1]
    faces = [frozenset(range(n))]
    for size in range(1, n):
        for T in _subsets(n, size):
            if is_exposed_face(points, T):
                faces.append(T)
    return faces


def fiber_samples(inst, anchor, face, count, rng):
    """Pms with the moments of ``anchor``, drawn uniformly on chords through it.

    Every pm with these moments is supported on ``face``, so directions are
    kernel vectors of the statistic restricted to the face; ``anchor`` must be
    strictly positive there so every chord has positive length.
    """
    from scipy.linalg import null_space

    face = list(face)
    K = null_space(np.vstack([inst.f[:, face], np.ones(len(face))]))
    out = []
    if K.shape[1] == 0:
        return out
    a = anchor[face]
    for _ in range(count):
        v = K @ rng.normal(size=K.shape[1])
        pos, neg = v > 0, v < 0
        lo = np.max(-a[pos] / v[pos])
        hi = np.min(-a[neg] / v[neg])
        q = np.zeros(inst.n)
        q[face] = np.clip(a + rng.uniform(lo, hi) * v, 0.0, None)
        out.append(q / q.sum())
    return out


def dual_value(inst, p):
    """``H(P) - sup_theta (<theta, mu(P)> - Upsilon(theta))`` on the smallest face, by trust-region Newton.

    The face is found by exhaustive search; the statistic is reduced to affine
    coordinates of the face so the dual is strictly concave.
    """
    S = Pm(p).support
    n = inst.n
    face = None
    others = [z for z in range(n) if z not in S]
    import itertools

    if inst.d == 0:
        face = list(range(n))
    else:
        for extra in range(len(others) + 1):
            for add in itertools.combinations(others, extra):
                T = sorted(set(S) | set(add))
                if is_exposed_face(inst.f, T):
                    face = T
                    break
            if face is not None:
                break
    sub_f = inst.f[:, face]
    centered = sub_f - sub_f.mean(axis=1, keepdims=True)
    U, s, _ = np.linalg.svd(centered, full_matrices=False) if sub_f.size else (None, np.zeros(0), None)
    k = int(np.sum(s > 1e-10 * max(1.0, s[0]))) if s.size else 0
    hp = h_energy(inst.beta, p)
    beta = inst.beta.restrict(face)
    if k == 0:
        sub = Instance(tuple(str(z) for z in face), np.zeros((0, len(face))), beta)
        return hp + upsilon(sub, np.zeros(0))
    g = U[:, :k].T @ sub_f
    m = U[:, :k].T @ (inst.f @ p)
    sub = Instance(tuple(str(z) for z in face), g, beta)
    res = minimize(
        lambda t: upsilon(sub, t) - t @ m,
        np.zeros(k),
        jac=lambda t: upsilon_grad(sub, t) - m,
        hess=lambda t: upsilon_hess(sub, t),
        method="trust-exact",
        options={"gtol": 1e-12},
    )
    return hp + float(res.fun)
