import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gen import random_gain_matrix, split_instances
from isskit.certificate import dumps
from isskit.exceptions import DimensionMismatch, SmallGainViolated
from isskit.gains import (GainMatrix, OmegaPath, gain_cycles, gamma_apply, iteration_oracle, mark_verified,
                          omega_path_build, omega_path_verify, small_gain_check)
from isskit.kfun import IDENTITY, PowerLaw, Tabulated, compose, less_than_id


def two_node(c12, c21, e12=1.0, e21=1.0):
    return GainMatrix(2, {(0, 1): PowerLaw(c12, e12), (1, 0): PowerLaw(c21, e21)})


# gamma_apply

def test_gamma_of_zero_is_zero():
    G = two_node(3.0, 0.5, 2.0, 0.5)
    assert np.array_equal(gamma_apply(G, [0.0, 0.0]), [0.0, 0.0])


def test_gamma_direct_evaluation():
    np.testing.assert_allclose(gamma_apply(two_node(0.5, 2.0), [1.0, 1.0]), [0.5, 2.0])


def test_gamma_nonlinear_interconnection_gain():
    c1, d, eps1 = 1.0, np.pi, 0.0
    k12 = 1.0 / (c1 ** 2 * (np.pi / d) ** 4 * (1 - eps1) ** 2)
    G = GainMatrix(2, {(0, 1): PowerLaw(k12, 1.0)})
    assert gamma_apply(G, [0.0, 1.0])[0] == pytest.approx(1.0, abs=1e-15)


def test_gamma_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        gamma_apply(two_node(1, 1), [1.0, 2.0, 3.0])


def test_self_gain_rejected():
    with pytest.raises(ValueError):
        GainMatrix(2, {(0, 0): PowerLaw(0.5, 1)})


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_gamma_monotone(seed):
    rng = np.random.default_rng(seed)
    G = random_gain_matrix(rng)
    for _ in range(35):
        s = 10 ** rng.uniform(-3, 3, G.n)
        t = s * (1 + rng.uniform(0, 1, G.n))
        assert np.all(gamma_apply(G, s) <= gamma_apply(G, t))


# small_gain_check

def test_small_gain_holds_for_linear_threshold_case():
    G = two_node(0.9, 0.9)
    cert = small_gain_check(G)
    assert cert.verdict
    (cyc,) = cert.details["cycles"]
    assert cyc["nodes"] == [1, 2]
    assert cyc["coeff"] == pytest.approx(0.81) and cyc["expo"] == 1.0
    assert cert.details["oracle_agrees"]


def test_small_gain_empty_matrix():
    cert = small_gain_check(GainMatrix(3))
    assert cert.verdict and cert.details["cycles"] == []


def test_small_gain_ring_fails_with_witness():
    G = GainMatrix(3, {(0, 1): PowerLaw(2, 1), (1, 2): IDENTITY, (2, 0): IDENTITY})
    cert = small_gain_check(G)
    assert not cert.verdict
    assert cert.details["cycles"][0]["coeff"] == pytest.approx(2.0)
    s = np.array(cert.witnesses[0]["s"])
    assert np.all(gamma_apply(G, s) >= s) and np.any(s > 0)
    assert not iteration_oracle(G, rng=0)


def test_small_gain_nonunit_exponent_reports_bounded_range():
    G = two_node(0.5, 0.5, 2.0, 1.0)
    cert = small_gain_check(G)
    assert not cert.verdict
    cyc = cert.details["cycles"][0]
    assert cyc["expo"] == 2.0
    # 0.25 r^2 < r on [1e-3, 1e3] fails only above r = 4
    assert not cyc["bounded_range_verdict"]
    local = small_gain_check(G, bounded_range=(1e-3, 1.0))
    assert local.details["bounded_range_verdict"]


def test_two_node_reduces_to_less_than_id():
    rng = np.random.default_rng(7)
    for _ in range(100):
        c = 10 ** rng.uniform(-1, 0.5, 2)
        e = rng.choice([0.5, 1.0, 2.0], 2)
        G = two_node(c[0], c[1], e[0], e[1])
        expected = less_than_id(compose(G.gain(0, 1), G.gain(1, 0)))
        assert small_gain_check(G, cross_check=False).verdict == expected


def test_cycles_listed_as_gain_chains():
    G = GainMatrix(3, {(0, 1): IDENTITY, (1, 2): IDENTITY, (2, 0): IDENTITY, (1, 0): IDENTITY})
    assert gain_cycles(G) == [[0, 1], [0, 1, 2]]


def test_cycle_method_agrees_with_oracle_small_sample():
    rng = np.random.default_rng(3)
    for _ in range(40):
        G = random_gain_matrix(rng)
        cert = small_gain_check(G, seed=int(rng.integers(1 << 31)))
        assert cert.details["oracle_agrees"], G


def test_certificate_json_layout():
    cert = small_gain_check(two_node(0.9, 0.9))
    obj = json.loads(dumps(cert))
    assert obj["check"] == "small_gain" and obj["verdict"] is True
    assert obj["cycles"][0]["nodes"] == [1, 2]
    assert "worst_margin" in obj


def test_gain_matrix_json_roundtrip():
    G = GainMatrix(2, {(0, 1): PowerLaw(2, 1)}, (PowerLaw(1, 0.5), None))
    obj = G.to_json()
    assert obj["edges"] == [{"from": 2, "to": 1, "gain": {"kind": "power", "coeff": 2.0, "expo": 1.0}}]
    assert GainMatrix.from_json(json.loads(json.dumps(obj))) == G


# Omega-paths

def test_path_for_weak_gains_is_identity():
    path = omega_path_build(two_node(0.5, 0.5))
    assert path.sigmas == (IDENTITY, IDENTITY)
    assert path.verified and path.provenance == "Constructed"


def test_path_with_strong_forward_gain():
    path = omega_path_build(two_node(2.0, 0.25))
    assert path.sigmas == (PowerLaw(2.0, 1.0), IDENTITY)


def test_path_single_system():
    path = omega_path_build(GainMatrix(1), a=[3.0])
    assert path.sigmas == (PowerLaw(3.0, 1.0),)


def test_path_mixed_exponents_is_tabulated_and_verified():
    G = GainMatrix(2, {(0, 1): PowerLaw(0.5, 2.0), (1, 0): PowerLaw(0.8, 0.5)})
    assert small_gain_check(G).verdict
    path = omega_path_build(G)
    assert any(isinstance(s, Tabulated) for s in path.sigmas)
    assert omega_path_verify(G, path).verdict


def test_build_refuses_when_condition_fails():
    with pytest.raises(SmallGainViolated):
        omega_path_build(two_node(1.0, 1.0))


def test_identity_path_fails_for_strong_gain():
    G = GainMatrix(2, {(0, 1): PowerLaw(2, 1)})
    cert = omega_path_verify(G, OmegaPath((IDENTITY, IDENTITY)))
    assert not cert.verdict
    assert cert.worst_margin == pytest.approx(-1.0)
    with pytest.raises(SmallGainViolated):
        mark_verified(G, OmegaPath((IDENTITY, IDENTITY)))


def test_zero_gains_accept_any_path():
    path = OmegaPath((PowerLaw(3, 2), PowerLaw(0.1, 0.5)))
    assert omega_path_verify(GainMatrix(2), path).verdict
    assert mark_verified(GainMatrix(2), path).verified


def test_constructed_paths_verify_on_random_instances():
    passing, failing = split_instances(np.random.default_rng(11), 25, 25)
    for G in passing:
        assert omega_path_verify(G, omega_path_build(G)).verdict
    for G in failing:
        with pytest.raises(SmallGainViolated):
            omega_path_build(G)


def test_path_json():
    obj = omega_path_build(two_node(2.0, 0.25)).to_json()
    assert obj["verified"] is True
    assert obj["sigmas"][0] == {"kind": "power", "coeff": 2.0, "expo": 1.0}
