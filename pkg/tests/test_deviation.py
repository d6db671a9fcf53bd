import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from htdev.algebra import AlgebraError, j_matrix
from htdev.deviation import (
    OuterOptions,
    SolverOptions,
    deviation_from_witness,
    deviation_given_metric,
    deviation_given_semimetric,
    optimize_metric,
    product_lemma_stats,
)
from htdev.sphere import QuarticObjective, maximize_on_sphere, sphere_starts
from htdev.zoo import (
    FamilyDescriptor,
    anisotropic_heisenberg,
    free_step2,
    heisenberg,
    product,
    quaternionic_h1,
    random_algebra,
)
from sphere_grid import grid_max

QUICK = OuterOptions(outer_iters=150, restarts=1)


def _pd(rng, p, s=0.5):
    A = rng.standard_normal((p, p)) * s + np.eye(p)
    return A @ A.T


# ---------------------------------------------------------------- quartic objective
@pytest.mark.parametrize("backend", ["tensor", "matrix"])
def test_quartic_value_grad_hessian(backend, rng):
    G = random_algebra(5, 3, 11)
    F = np.linalg.cholesky(_pd(rng, 3))
    obj = QuarticObjective(G, F, backend=backend)
    u = rng.standard_normal(3)
    K = np.einsum("ab,aij,b->ij", F, -np.moveaxis(G.c, 2, 0), u)
    M = K @ K + np.eye(5)
    f, g = obj.value_grad(u[None])
    assert abs(f[0] - np.sum(M * M)) < 1e-10
    h = 1e-6
    num = np.array([(obj.value_grad((u + h * e)[None])[0][0] - obj.value_grad((u - h * e)[None])[0][0]) / (2 * h)
                    for e in np.eye(3)])
    assert np.allclose(g[0], num, atol=1e-5)
    Hn = np.array([(obj.value_grad((u + h * e)[None])[1][0] - obj.value_grad((u - h * e)[None])[1][0]) / (2 * h)
                   for e in np.eye(3)])
    assert np.allclose(obj.hessian(u), Hn, atol=1e-4)


def test_backends_agree(rng):
    G = random_algebra(6, 4, 3)
    F = np.linalg.cholesky(_pd(rng, 4))
    a, b = QuarticObjective(G, F, "tensor"), QuarticObjective(G, F, "matrix")
    U = rng.standard_normal((7, 4))
    fa, ga = a.value_grad(U)
    fb, gb = b.value_grad(U)
    assert np.allclose(fa, fb) and np.allclose(ga, gb)


def test_sphere_starts_deterministic():
    a, b = sphere_starts(4, 16, 3), sphere_starts(4, 16, 3)
    assert np.array_equal(a, b) and a.shape == (20, 4)
    assert np.allclose(np.linalg.norm(a, axis=1), 1)
    assert np.array_equal(a[:4], np.eye(4))


def test_maximize_on_sphere_simple_quadratic():
    # f(u) = tr(K^4) + 2 tr(K^2) + m for H^1 x H^1 at Q = Id: maxima on the axes
    G = product([heisenberg(1), heisenberg(1)])
    res = maximize_on_sphere(QuarticObjective(G, np.eye(2)), sphere_starts(2, 8, 0))
    assert abs(res.f - 2.0) < 1e-12
    assert min(abs(res.u[0]), abs(res.u[1])) < 1e-8


# ---------------------------------------------------------------- fixed metric
def test_examples_fixed_metric():
    assert deviation_given_metric(heisenberg(2), [[1.0]]).value < 1e-12
    r = deviation_given_metric(quaternionic_h1(), np.diag([1, 1, 0.25]))
    assert abs(r.value - 0.75) < 1e-9
    assert abs(abs(r.witness_t[2]) - 2.0) < 1e-8 and np.allclose(r.witness_t[:2], 0, atol=1e-8)


def test_product_h1_h1_at_identity():
    G = product([heisenberg(1), heisenberg(1)])
    r = deviation_given_metric(G, np.eye(2))
    # sup over the unit circle of (1/2)(1 - u1^2)^2 + (1/2)(1 - u2^2)^2 is 1/2
    assert abs(r.value - 1 / math.sqrt(2)) < 1e-12
    assert abs(r.value - grid_max(G.c, np.eye(2))) < 1e-9


def test_non_pd_metric_points_to_semimetric():
    with pytest.raises(AlgebraError, match="semimetric"):
        deviation_given_metric(quaternionic_h1(), np.diag([1, 1, 0]))


@pytest.mark.parametrize("s", [0.3, 0.7, 1.0, 1.5, 3.0])
def test_scaling_witness_h1(s):
    assert abs(deviation_given_metric(heisenberg(1), [[s * s]]).value - abs(1 - s * s)) < 1e-12


@given(seed=st.integers(0, 2**31 - 1))
def test_result_invariants(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(3, 7))
    p = int(rng.integers(1, min(5, m * (m - 1) // 2) + 1))
    G = random_algebra(m, p, seed)
    Q = _pd(rng, p)
    r = deviation_given_metric(G, Q, SolverOptions(n_starts=16, seed=seed))
    t = r.witness_t
    assert r.value >= 0
    assert abs(t @ Q @ t - 1) <= 1e-10
    J = j_matrix(G, Q, t).J
    assert abs(r.value - np.linalg.norm(J @ J + np.eye(m)) / math.sqrt(m)) <= 1e-9
    assert r.value == deviation_from_witness(G, Q, t)


ZOO_SMALL_P = [heisenberg(1), anisotropic_heisenberg([1, 2]), free_step2(3), quaternionic_h1(),
               product([heisenberg(1), heisenberg(2)]), product([heisenberg(1)] * 3)]


@pytest.mark.parametrize("G", ZOO_SMALL_P, ids=lambda G: G.name)
def test_lower_bound_soundness_against_grid(G, rng):
    for _ in range(3):
        Q = _pd(rng, G.p, 0.2)
        val = deviation_given_metric(G, Q).value
        ref = grid_max(G.c, Q, n=10_000, seed=1)
        assert val >= ref - 1e-12
        assert val <= ref + 1e-3


@given(seed=st.integers(0, 2**31 - 1))
def test_gauge_invariance(seed):
    rng = np.random.default_rng(seed)
    G = random_algebra(5, 3, seed)
    Q = _pd(rng, 3)
    base = deviation_given_metric(G, Q).value
    # vertical change of basis T' = T P
    P = rng.standard_normal((3, 3)) + 2 * np.eye(3)
    c2 = np.einsum("ba,jka->jkb", np.linalg.inv(P), G.c)
    from htdev.algebra import StepTwoAlgebra

    G2 = StepTwoAlgebra(c2)
    assert abs(deviation_given_metric(G2, P.T @ Q @ P).value - base) <= 1e-9
    # orthogonal change of horizontal basis
    R, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    G3 = StepTwoAlgebra(np.einsum("ja,kb,jkr->abr", R, R, G.c))
    assert abs(deviation_given_metric(G3, Q).value - base) <= 1e-9


# ---------------------------------------------------------------- semimetric
def test_semimetric_examples():
    G = quaternionic_h1()
    assert deviation_given_semimetric(G, np.diag([1, 1, 0])).value < 1e-12
    for j in (2, 4, 8):
        v = deviation_given_semimetric(G, np.diag([1, 1, 1 / j**2])).value
        assert abs(v - (1 - 1 / j**2)) < 1e-9
    with pytest.raises(AlgebraError, match="null"):
        deviation_given_semimetric(G, np.zeros((3, 3)))


@given(seed=st.integers(0, 2**31 - 1))
def test_semimetric_matches_metric_when_pd(seed):
    rng = np.random.default_rng(seed)
    G = random_algebra(4, 3, seed)
    Q = _pd(rng, 3)
    a = deviation_given_metric(G, Q).value
    b = deviation_given_semimetric(G, Q).value
    assert abs(a - b) <= 1e-9


def test_semimetric_reduces_dimension():
    G = random_algebra(5, 4, 2)
    v = np.array([1.0, 2.0, 0.0, 1.0])
    Q = np.outer(v, v) + np.diag([0, 0, 1.0, 0])
    r = deviation_given_semimetric(G, Q)
    t = r.witness_t
    assert abs(t @ Q @ t - 1) < 1e-10
    from htdev.algebra import VerticalSemimetric

    assert VerticalSemimetric(Q).factor().shape[1] == 2


# ---------------------------------------------------------------- optimize
def test_optimize_heisenberg_zero():
    r = optimize_metric(heisenberg(3))
    assert r.value <= 1e-6 and np.allclose(r.Q_best, [[1.0]])


def test_optimize_free3():
    d = FamilyDescriptor.parse("free:3")
    r = optimize_metric(d.build(), QUICK, family=d)
    assert abs(r.value - 1 / math.sqrt(3)) < 1e-3


def test_optimize_without_family_hint():
    r = optimize_metric(product([heisenberg(1), heisenberg(2)]), QUICK)
    assert abs(r.value - math.sqrt(2 / 3)) < 1e-3
    assert np.all(np.linalg.eigvalsh(r.Q_best) > 0)


def test_optimize_trace_monotone_and_consistent():
    r = optimize_metric(random_algebra(4, 2, 3), QUICK)
    assert all(a >= b for a, b in zip(r.trace, r.trace[1:]))
    assert r.value == r.inner.value
    assert r.value <= 1 + 1e-2


# ---------------------------------------------------------------- product lemmas
def test_product_lemma_examples():
    s = product_lemma_stats([1, 1], np.eye(2), [1, 0])
    assert (s.G2, s.G4, s.F) == (1, 1, 0.5)
    s = product_lemma_stats([1, 2], np.diag([1, math.sqrt(0.5)]), [0, 1])
    assert np.allclose(s.B, np.eye(2)) and abs(s.G2 - 1) < 1e-15
    s = product_lemma_stats([1], [[1.0]], [1.0])
    assert s.G2 == s.G4 == 1 and s.F == 0
    with pytest.raises(AlgebraError):
        product_lemma_stats([1, 1], np.ones((2, 2)), [1, 0])


def _random_lemma_instance(rng):
    ell = int(rng.integers(1, 5))
    k = np.sort(rng.integers(1, 6, ell))
    M = rng.standard_normal((ell, ell)) + 1.5 * np.eye(ell)
    u = rng.standard_normal(ell)
    return k, M, u / np.linalg.norm(u)


@given(seed=st.integers(0, 2**31 - 1))
def test_lemma_sandwich(seed):
    k, M, u = _random_lemma_instance(np.random.default_rng(seed))
    s = product_lemma_stats(k, M, u)
    n = k.sum()
    assert k[0] * s.G4 <= s.G2**2 * (1 + 1e-10)
    assert s.G2**2 <= n * s.G4 * (1 + 1e-10)
    assert np.allclose(s.B, M.T @ np.diag(k) @ M)
    assert abs(s.F - (1 - 2 * s.G2 / n + s.G4 / n)) < 1e-12
