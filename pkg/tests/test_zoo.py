import math

import numpy as np
import pytest

from htdev.algebra import AlgebraError, validate_algebra
from htdev.deviation import OuterOptions, deviation_given_metric, optimize_metric
from htdev.zoo import (
    DERIVED,
    PAPER,
    FamilyDescriptor,
    anisotropic_heisenberg,
    closed_form_delta,
    free_step2,
    heisenberg,
    product,
    quaternionic_h1,
    random_algebra,
    with_euclidean_factor,
)

QUICK = OuterOptions(outer_iters=150, restarts=1)


def test_heisenberg_shapes():
    G = heisenberg(1)
    assert (G.m, G.p) == (2, 1) and G.c[0, 1, 0] == 1
    G = heisenberg(2)
    assert (G.m, G.p) == (4, 1)
    assert G.c[0, 2, 0] == G.c[1, 3, 0] == 1 and np.count_nonzero(G.c) == 4
    with pytest.raises(AlgebraError):
        heisenberg(0)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_heisenberg_is_htype(k):
    assert deviation_given_metric(heisenberg(k), [[1.0]]).value < 1e-12


def test_anisotropic():
    assert np.array_equal(anisotropic_heisenberg([1, 1]).c, heisenberg(2).c)
    G = anisotropic_heisenberg([1, 2])
    assert G.c[1, 3, 0] == 2
    with pytest.raises(AlgebraError):
        anisotropic_heisenberg([1, 0])
    assert closed_form_delta(FamilyDescriptor("anisotropic", b=(1, 1, 1)))[0] == 0


def test_free():
    assert np.array_equal(free_step2(2).c, heisenberg(1).c)
    G = free_step2(3)
    assert G.p == 3
    with pytest.raises(AlgebraError):
        free_step2(1)


def test_quaternionic_fixed_metrics():
    G = quaternionic_h1()
    assert deviation_given_metric(G, np.eye(3)).value < 1e-12
    assert abs(deviation_given_metric(G, np.diag([1, 1, 0.25])).value - 0.75) < 1e-9
    assert abs(deviation_given_metric(G, np.diag([4.0, 1, 1])).value - 3.0) < 1e-9


def test_quaternionic_has_exactly_six_brackets():
    G = quaternionic_h1()
    pairs = [(j, k) for j in range(4) for k in range(j + 1, 4) if np.any(G.c[j, k])]
    assert len(pairs) == 6
    assert all(np.count_nonzero(G.c[j, k]) == 1 for j, k in pairs)


def test_product_blocks():
    G = product([heisenberg(1), heisenberg(1)])
    assert (G.m, G.p) == (4, 2)
    assert G.c[0, 1, 0] == 1 and G.c[2, 3, 1] == 1
    assert np.array_equal(product([heisenberg(2)]).c, heisenberg(2).c)
    with pytest.raises(AlgebraError):
        product([])


def test_product_associative_up_to_basis():
    A, B, C = heisenberg(1), heisenberg(1), heisenberg(2)
    d1 = optimize_metric(product([product([A, B]), C]), QUICK).value
    d2 = optimize_metric(product([A, product([B, C])]), QUICK).value
    assert abs(d1 - d2) <= 1e-6


def test_with_euclidean_factor():
    G = with_euclidean_factor(heisenberg(1), 0)
    assert np.array_equal(G.c, heisenberg(1).c)
    G = with_euclidean_factor(heisenberg(1), 2)
    assert (G.m, G.p) == (4, 1) and validate_algebra(G.c).ok
    with pytest.raises(AlgebraError):
        with_euclidean_factor(heisenberg(1), -1)


def test_random_algebra():
    G = random_algebra(2, 1, 5)
    assert G.c[0, 1, 0] != 0 and np.allclose(G.c / G.c[0, 1, 0], heisenberg(1).c)
    assert validate_algebra(random_algebra(4, 2, 42).c).ok
    assert np.array_equal(random_algebra(5, 3, 7).c, random_algebra(5, 3, 7).c)
    with pytest.raises(AlgebraError):
        random_algebra(3, 4, 0)


@pytest.mark.parametrize(
    "text",
    ["heisenberg:3", "anisotropic:1.0,2.0", "free:4", "quaternionic", "product:1,2,2",
     "product_with_euclidean:1,1:2", "random:5,3,7"],
)
def test_descriptor_roundtrip(text):
    d = FamilyDescriptor.parse(text)
    assert FamilyDescriptor.parse(d.to_text()) == d
    assert validate_algebra(d.build().c).ok


@pytest.mark.parametrize("text", ["nope:1", "free", "product:2,1", "random:5,3", "heisenberg:x"])
def test_descriptor_rejects(text):
    with pytest.raises(AlgebraError):
        FamilyDescriptor.parse(text)


def test_closed_forms():
    assert closed_form_delta(FamilyDescriptor("free", m=5)) == (math.sqrt(3 / 5), PAPER)
    assert closed_form_delta(FamilyDescriptor("product", klist=(2, 3))) == (math.sqrt(1 - 2 / 5), PAPER)
    v, tag = closed_form_delta(FamilyDescriptor("anisotropic", b=(1.0, 2.0)))
    assert tag == DERIVED and abs(v - 3 / math.sqrt(34)) < 1e-15
    v, tag = closed_form_delta(FamilyDescriptor("product_with_euclidean", klist=(1,), nu=2))
    assert tag == DERIVED and abs(v - math.sqrt(0.5)) < 1e-15
    v, _ = closed_form_delta(FamilyDescriptor("product_with_euclidean", klist=(1, 1), nu=1))
    assert abs(v**2 - (1 - 2 / 5)) < 1e-15
    with pytest.raises(AlgebraError):
        closed_form_delta(FamilyDescriptor("random", m=4, p=2, seed=1))


def test_two_factor_euclidean_against_engine():
    d = FamilyDescriptor("product_with_euclidean", klist=(1, 1), nu=1)
    res = optimize_metric(d.build(), QUICK, family=d)
    assert abs(res.value - closed_form_delta(d)[0]) < 1e-3


def test_optimal_metrics_attain_closed_forms():
    for text in ["free:3", "product:1,2", "product:2,3", "anisotropic:1,2",
                 "product_with_euclidean:1,2:1", "quaternionic", "heisenberg:2"]:
        d = FamilyDescriptor.parse(text)
        Q = d.optimal_metric()
        val = deviation_given_metric(d.build(), Q).value
        ref = 0.0 if d.tag == "quaternionic" else closed_form_delta(d)[0]
        assert abs(val - ref) < 1e-9, text
