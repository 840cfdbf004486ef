import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isskit.exceptions import DegenerateRange, EmptyList, NegativeArgument, NotInvertibleOnRange, OutOfTableRange
from isskit.kfun import (IDENTITY, ExpEnvelope, PowerLaw, ProductKL, Tabulated, compose, invert,
                         kfun_from_json, less_than_id, pointwise_max)

coeffs = st.floats(0.05, 20.0)
expos = st.floats(0.25, 4.0)
power_laws = st.builds(PowerLaw, coeffs, expos)
R_CHECK = np.array([1e-3, 0.1, 0.5, 1.0, 2.0, 10.0, 1e3])


# eval

def test_eval_identity_at_zero():
    assert IDENTITY(0.0) == 0.0


def test_eval_sqrt_law():
    assert PowerLaw(2, 0.5)(9) == pytest.approx(6.0, abs=1e-14)


def test_eval_semilinear_gain_at_unit_exponent():
    a, m = 2.0, 1.0
    chi = PowerLaw(a * math.pi ** ((1 - m) / 2), m)
    assert chi(3.0) == pytest.approx(6.0, abs=1e-14)


def test_eval_rejects_negative():
    with pytest.raises(NegativeArgument):
        PowerLaw(1, 1)(-1e-9)


def test_eval_vectorized_returns_array():
    out = PowerLaw(3, 2)(np.array([0.0, 1.0, 2.0]))
    np.testing.assert_allclose(out, [0, 3, 12])


def test_powerlaw_rejects_nonpositive_parameters():
    with pytest.raises(ValueError):
        PowerLaw(0, 1)
    with pytest.raises(ValueError):
        PowerLaw(1, -1)


def test_table_out_of_range():
    f = Tabulated.from_function(lambda r: 2 * r, np.linspace(0.1, 1, 10))
    with pytest.raises(OutOfTableRange):
        f(2.0)


def test_table_interpolates_power_law_exactly():
    f = Tabulated.from_function(lambda r: 3 * r ** 1.5, np.logspace(-2, 2, 20))
    rs = np.array([0.003, 0.02, 0.7, 13.0, 99.0])
    np.testing.assert_allclose(f(rs), 3 * rs ** 1.5, rtol=1e-12)


def test_table_validation():
    with pytest.raises(ValueError):
        Tabulated([0, 1, 1], [0, 1, 2])
    with pytest.raises(ValueError):
        Tabulated([0.1, 1, 2], [0, 1, 2])


# compose

def test_compose_linear():
    assert compose(PowerLaw(2, 1), PowerLaw(3, 1)) == PowerLaw(6, 1)


def test_compose_mixed_exponents():
    h = compose(PowerLaw(2, 2), PowerLaw(3, 0.5))
    assert h == PowerLaw(18, 1)
    for r in (0.1, 1.0, 10.0):
        assert h(r) == pytest.approx(PowerLaw(2, 2)(PowerLaw(3, 0.5)(r)), rel=1e-12)


def test_compose_identity():
    f = PowerLaw(1.7, 0.3)
    assert compose(f, IDENTITY) == f


def test_compose_with_table_is_pointwise():
    g = Tabulated.from_function(lambda r: r ** 2)
    h = compose(PowerLaw(2, 1), g)
    assert isinstance(h, Tabulated)
    np.testing.assert_allclose(h([0.5, 2.0]), [0.5, 8.0], rtol=1e-9)


# invert

def test_invert_square_law():
    f = PowerLaw(4, 2)
    g = invert(f)
    assert g.coeff == pytest.approx(0.5) and g.expo == pytest.approx(0.5)
    for r in (0.5, 2.0, 7.0):
        assert g(f(r)) == pytest.approx(r, rel=1e-12)


def test_invert_identity():
    assert invert(IDENTITY) == IDENTITY


def test_invert_linear():
    assert invert(PowerLaw(2, 1)) == PowerLaw(0.5, 1)


def test_invert_bounded_table():
    f = Tabulated.from_function(lambda r: r, np.linspace(0.1, 1, 10))
    g = invert(f)
    assert g(0.5) == pytest.approx(0.5)
    with pytest.raises(NotInvertibleOnRange):
        g(5.0)


# pointwise_max

def test_max_same_exponent():
    assert pointwise_max([PowerLaw(2, 1), PowerLaw(3, 1)]) == PowerLaw(3, 1)


def test_max_mixed_exponents():
    f = pointwise_max([PowerLaw(1, 1), PowerLaw(1, 2)])
    assert f(0.5) == pytest.approx(0.5, rel=1e-12)
    assert f(2.0) == pytest.approx(4.0, rel=1e-12)


def test_max_singleton():
    f = PowerLaw(5, 0.7)
    assert pointwise_max([f]) is f


def test_max_empty():
    with pytest.raises(EmptyList):
        pointwise_max([])


# less_than_id

def test_less_than_id_examples():
    assert less_than_id(PowerLaw(0.81, 1))
    assert not less_than_id(PowerLaw(1.0, 1))
    assert not less_than_id(PowerLaw(0.5, 2))


def test_less_than_id_bounded_range():
    assert less_than_id(PowerLaw(0.5, 2), (1e-3, 1.0))
    assert not less_than_id(PowerLaw(0.5, 2), (1e-3, 4.0))


def test_less_than_id_degenerate_range():
    with pytest.raises(DegenerateRange):
        less_than_id(PowerLaw(0.5, 1), (1.0, 1.0))
    with pytest.raises(DegenerateRange):
        less_than_id(PowerLaw(0.5, 1), (0.0, 1.0))


# serialization and KL functions

def test_json_roundtrip():
    for f in (PowerLaw(2.5, 0.5), Tabulated.from_function(lambda r: r ** 3, np.logspace(-1, 1, 5))):
        assert kfun_from_json(f.to_json()) == f


def test_exp_envelope():
    beta = ExpEnvelope(2.0, 0.5)
    assert beta(3.0, 0.0) == pytest.approx(6.0)
    assert beta(3.0, 2.0) == pytest.approx(6.0 * math.exp(-1.0))


def test_product_kl():
    beta = ProductKL([0, 1, 2], [1.0, 0.5, 0.0], PowerLaw(2, 1))
    assert beta(1.0, 0.5) == pytest.approx(1.5)
    assert beta(1.0, 5.0) == 0.0


# properties

@settings(max_examples=100, deadline=None)
@given(power_laws, power_laws, power_laws)
def test_compose_associative(f, g, h):
    left = compose(compose(f, g), h)
    right = compose(f, compose(g, h))
    rs = np.logspace(-3, 3, 13)
    np.testing.assert_allclose(left(rs), right(rs), rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(power_laws, power_laws)
def test_inverse_of_composition(f, g):
    lhs = invert(compose(f, g))
    rhs = compose(invert(g), invert(f))
    rs = np.logspace(-2, 2, 9)
    np.testing.assert_allclose(lhs(rs), rhs(rs), rtol=1e-10)


@settings(max_examples=50, deadline=None)
@given(power_laws, st.integers(0, 2 ** 32 - 1))
def test_monotone_on_random_pairs(f, seed):
    rng = np.random.default_rng(seed)
    a = 10 ** rng.uniform(-3, 3, 1000)
    b = a * (1 + 10 ** rng.uniform(-6, 0, 1000))
    assert np.all(f(a) < f(b))
    t = Tabulated.from_function(f, np.logspace(-4, 4, 64))
    assert np.all(t(a) < t(b))


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(1e-3, 1e3))
def test_less_than_id_implies_iteration_decay(c, r0):
    f = PowerLaw(c, 1.0)
    assert less_than_id(f)
    r = r0
    for _ in range(10_000):
        r = f(r)
        if r < 1e-6 * r0:
            break
    assert r < 1e-6 * r0


@settings(max_examples=50, deadline=None)
@given(power_laws, power_laws)
def test_pointwise_max_dominates(f, g):
    h = pointwise_max([f, g])
    rs = np.logspace(-3, 3, 25)
    assert np.all(h(rs) >= np.maximum(f(rs), g(rs)) * (1 - 1e-12))
