import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isskit import pde
from isskit.exceptions import RegistryUnknown, ShapeMismatch
from isskit.lyapunov import FourierSampler

PI = math.pi


def single(bc=pde.DIRICHLET, c=1.0, reactions=(), inputs=(), R=None):
    return pde.SystemSpec((c,), (bc,), R, reactions, inputs)


# grid and operators

def test_grid_spacing():
    g = pde.Grid1D(4.0, 3)
    assert g.h == 1.0
    np.testing.assert_allclose(g.x, [1, 2, 3])
    with pytest.raises(ValueError):
        pde.Grid1D(1.0, 2)


def test_dirichlet_stencil():
    L = pde.laplacian_matrix(pde.Grid1D(4.0, 3), pde.DIRICHLET, 1.0).toarray()
    np.testing.assert_array_equal(L, [[-2, 1, 0], [1, -2, 1], [0, 1, -2]])


def test_neumann_stencil_rows_sum_to_zero():
    L = pde.laplacian_matrix(pde.Grid1D(4.0, 3), pde.NEUMANN, 2.0).toarray()
    np.testing.assert_array_equal(L, [[-2, 2, 0], [2, -4, 2], [0, 2, -2]])
    np.testing.assert_allclose(L.sum(axis=1), 0)
    assert np.array_equal(L, L.T)


@pytest.mark.parametrize("n,c,d", [(10, 1.0, PI), (57, 0.3, 2.0), (200, 2.0, 5.0)])
def test_dirichlet_spectrum_closed_form(n, c, d):
    grid = pde.Grid1D(d, n)
    ev = np.sort(pde.spectrum(single(c=c), grid).real)
    exact = np.sort(pde.dirichlet_eigenvalues(grid, c))
    np.testing.assert_allclose(ev, exact, rtol=1e-10, atol=1e-10 * abs(exact).max())


def test_first_eigenvalue_near_continuum():
    grid = pde.Grid1D(PI, 200)
    lam1 = pde.max_real_eigenvalue(single(), grid)
    assert abs(lam1 + 1.0) < grid.h ** 2


def test_first_eigenvalue_error_ratio():
    errs = []
    for n in (100, 200, 400):
        errs.append(abs(pde.dirichlet_eigenvalues(pde.Grid1D(PI, n))[0] + 1.0))
    for a, b in zip(errs, errs[1:]):
        assert 3.5 <= a / b <= 4.5


def test_coupled_spectrum_matches_per_mode_oracle():
    grid = pde.Grid1D(PI, 40)
    g = 1.1
    spec = pde.SystemSpec((1.0, 1.0), (pde.DIRICHLET,) * 2, [[0, g], [g, 0]])
    kappa = -pde.dirichlet_eigenvalues(grid)
    oracle = np.sort(np.concatenate([-kappa + g, -kappa - g]))
    np.testing.assert_allclose(np.sort(pde.spectrum(spec, grid).real), oracle, atol=1e-9)
    assert pde.max_real_eigenvalue(spec, grid) == pytest.approx(0.1, abs=1e-3)


def test_zero_coupling_is_union_of_spectra():
    grid = pde.Grid1D(PI, 20)
    spec = pde.SystemSpec((1.0, 3.0), (pde.DIRICHLET,) * 2)
    union = np.concatenate([pde.dirichlet_eigenvalues(grid, 1.0), pde.dirichlet_eigenvalues(grid, 3.0)])
    np.testing.assert_allclose(np.sort(pde.spectrum(spec, grid).real), np.sort(union), rtol=1e-10)


def test_neumann_spectrum_has_simple_zero():
    ev = pde.spectrum(single(pde.NEUMANN), pde.Grid1D(PI, 50)).real
    assert abs(ev[0]) < 1e-10 and ev[1] < -1e-3
    assert np.all(ev <= 1e-10)


# right-hand side

def test_rhs_zero_equilibrium():
    spec = pde.SystemSpec((1.0, 1.0), (pde.DIRICHLET,) * 2, [[0, 0], [0, -1.5]],
                          (pde.ReactionTerm(0, 1, "square"), pde.ReactionTerm(1, 0, "sqrt_abs")))
    grid = pde.Grid1D(PI, 30)
    assert np.all(pde.rhs(spec, pde.Field.zeros(grid, 2)).values == 0)


def test_rhs_eigenfunction():
    grid = pde.Grid1D(PI, 200)
    state = pde.Field.from_functions(grid, [np.sin])
    out = pde.rhs(single(), state).values[0]
    np.testing.assert_allclose(out, -np.sin(grid.x), atol=grid.h ** 2)


def test_rhs_second_species_of_nonlinear_pair(rng):
    grid = pde.Grid1D(PI, 60)
    b, c2 = 1.5, 0.7
    spec = pde.SystemSpec((1.0, c2), (pde.DIRICHLET,) * 2, [[0, 0], [0, -b]],
                          (pde.ReactionTerm(0, 1, "square"), pde.ReactionTerm(1, 0, "sqrt_abs")))
    for _ in range(5):
        vals = rng.standard_normal((2, grid.n_interior))
        s1, s2 = vals
        pad = np.concatenate([[0.0], s2, [0.0]])
        lap = (pad[:-2] - 2 * pad[1:-1] + pad[2:]) / grid.h ** 2
        expected = c2 * lap - b * s2 + np.sqrt(np.abs(s1))
        got = pde.rhs(spec, pde.Field(grid, vals)).values[1]
        np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-12 * np.abs(expected).max())


def test_rhs_input_maps():
    grid = pde.Grid1D(PI, 10)
    spec = single(inputs=(pde.InputTerm(0, 0, "power_m", 2.0, 0.5),))
    u = np.full((1, 10), 4.0)
    np.testing.assert_allclose(pde.rhs(spec, pde.Field.zeros(grid), u).values[0], 4.0)
    with pytest.raises(ShapeMismatch):
        pde.rhs(spec, pde.Field.zeros(grid))


def test_unknown_registry_id():
    with pytest.raises(RegistryUnknown):
        single(reactions=(pde.ReactionTerm(0, 0, "quartic"),))


def test_shape_mismatch():
    spec = pde.SystemSpec((1.0, 1.0))
    with pytest.raises(ShapeMismatch):
        pde.rhs(spec, pde.Field.zeros(pde.Grid1D(PI, 10), 1))
    with pytest.raises(ShapeMismatch):
        pde.SystemSpec((1.0,), linear_coupling=[[1, 2], [3, 4]])


def test_spec_json_roundtrip():
    spec = pde.SystemSpec((1.0, 2.0), (pde.DIRICHLET, pde.NEUMANN), [[0, 1], [2, 0]],
                          (pde.ReactionTerm(0, 1, "square", -1.0),),
                          (pde.InputTerm(1, 0, "power_m", 1.0, 0.5),))
    back = pde.SystemSpec.from_json(spec.to_json())
    assert back.to_json() == spec.to_json()
    assert back.reactions == spec.reactions and back.inputs == spec.inputs


# time stepping

def test_step_diffusion_mode_factor():
    grid = pde.Grid1D(2.0, 200)
    c, dt = 0.5, 1e-2
    state = pde.Field.from_functions(grid, [lambda x: np.sin(PI * x / 2.0)])
    out = pde.step(single(c=c), state, dt=dt)
    lam = -pde.dirichlet_eigenvalues(grid, c)[0]
    np.testing.assert_allclose(out.values, state.values / (1 + dt * lam), rtol=1e-10, atol=1e-14)
    assert lam == pytest.approx(c * (PI / 2.0) ** 2, rel=1e-4)


def test_step_preserves_zero():
    spec = single(reactions=(pde.ReactionTerm(0, 0, "cubic_odd", -1.0),))
    grid = pde.Grid1D(PI, 20)
    assert np.all(pde.step(spec, pde.Field.zeros(grid)).values == 0)


def test_scalar_ode_limit():
    # spatially constant Neumann mode: s' = lam s exactly
    lam, dt = -0.7, 0.05
    spec = single(pde.NEUMANN, R=[[lam]])
    grid = pde.Grid1D(1.0, 5)
    traj = pde.simulate(spec, pde.Field(grid, np.ones((1, 5))), t_end=1.0, dt=dt)
    k = np.arange(len(traj.times))
    np.testing.assert_allclose([s.values[0, 2] for s in traj.states], (1 - dt * lam) ** (-k), rtol=1e-12)


def test_imex_linear_update_is_contractive():
    grid = pde.Grid1D(PI, 30)
    spec = pde.SystemSpec((1.0, 0.1), (pde.DIRICHLET, pde.NEUMANN), [[-0.5, 0.2], [0.0, -0.1]])
    L = pde.linear_operator(spec, grid).toarray()
    for dt in (1e-4, 1e-1, 10.0, 1e4):
        A = np.linalg.inv(np.eye(L.shape[0]) - dt * L)
        assert np.max(np.abs(np.linalg.eigvals(A))) <= 1 + 1e-12


def test_semigroup_and_determinism():
    spec = single(reactions=(pde.ReactionTerm(0, 0, "cubic_odd", -1.0),),
                  inputs=(pde.InputTerm(0, 0),))
    grid = pde.Grid1D(PI, 40)
    x0 = pde.Field.from_functions(grid, [lambda x: 2 * np.sin(x)])
    u = pde.InputSignal.from_expressions(["0.3*cos(t)*sin(2*x)"], PI)
    dt = 1e-3
    full = pde.simulate(spec, x0, u, 0.2, dt)
    half = pde.simulate(spec, x0, u, 0.1, dt)
    rest = pde.simulate(spec, half.final, u, 0.2, dt, t_start=0.1)
    again = pde.simulate(spec, x0, u, 0.2, dt)
    assert np.array_equal(full.final.values, again.final.values)
    np.testing.assert_allclose(rest.final.values, full.final.values, rtol=0, atol=1e-13)


def test_pure_diffusion_decays_and_keeps_sign():
    grid = pde.Grid1D(PI, 50)
    x0 = pde.Field.from_functions(grid, [lambda x: x * (PI - x)])
    traj = pde.simulate(single(), x0, t_end=1.0)
    norms = traj.norms("L2", 0)
    assert np.all(np.diff(norms) < 0)
    assert all(np.all(s.values >= 0) for s in traj.states)


def test_neumann_conserves_mean():
    grid = pde.Grid1D(2.0, 64)
    x0 = pde.Field.from_functions(grid, [lambda x: np.exp(-10 * (x - 0.6) ** 2)])
    traj = pde.simulate(single(pde.NEUMANN, c=0.8), x0, t_end=1.0, dt=1e-3)
    means = [s.values.mean() for s in traj.states]
    assert max(abs(m - means[0]) for m in means) < 1e-10


def test_hurwitz_neumann_sup_decays():
    grid = pde.Grid1D(PI, 40)
    spec = pde.SystemSpec((1.0, 1.0), (pde.NEUMANN,) * 2, [[-1, 0.5], [0, -2]])
    x0 = FourierSampler(spec, grid, rng=1).state()
    sup = pde.simulate(spec, x0, t_end=5.0, record_every=50).norms("Sup", None)
    late = sup[len(sup) // 5:]
    assert np.all(np.diff(late) <= 0) and late[-1] < 0.05 * sup[0]


def test_blowup_flag():
    spec = single(pde.NEUMANN, reactions=(pde.ReactionTerm(0, 0, "square"),))
    grid = pde.Grid1D(1.0, 5)
    traj = pde.simulate(spec, pde.Field(grid, np.full((1, 5), 2.0)), t_end=5.0, dt=1e-3, M_max=1e6)
    assert traj.blowup is not None and traj.blowup < 0.6
    assert np.max(np.abs(traj.final.values)) > 1e6


def test_above_threshold_grows():
    grid = pde.Grid1D(PI, 60)
    spec = pde.SystemSpec((1.0, 1.0), (pde.DIRICHLET,) * 2, [[0, 1.1], [1.1, 0]])
    x0 = pde.Field.from_functions(grid, [np.sin, np.sin])
    traj = pde.simulate(spec, x0, t_end=5.0, record_every=100)
    n = traj.norms("L2", None)
    rate = np.polyfit(traj.times, np.log(n), 1)[0]
    assert rate == pytest.approx(pde.max_real_eigenvalue(spec, grid), rel=0.05)


def test_piecewise_input_is_right_continuous():
    u = pde.InputSignal.piecewise_constant([0.0, 1.0], [[1.0], [3.0]])
    grid = pde.Grid1D(1.0, 4)
    assert u(grid, 0.999)[0, 0] == 1.0 and u(grid, 1.0)[0, 0] == 3.0


def test_expression_compiler_rejects_names():
    with pytest.raises(ValueError):
        pde.compile_expression("__import__('os')")
    with pytest.raises(ValueError):
        pde.compile_expression("y + 1")


# norms

def test_norms_of_zero():
    f = pde.Field.zeros(pde.Grid1D(PI, 10), 2)
    for which in pde.NORMS:
        assert pde.norm(f, which, None) == 0.0


def test_l2_of_sine():
    d = 3.0
    grid = pde.Grid1D(d, 200)
    f = pde.Field.from_functions(grid, [lambda x: np.sin(PI * x / d)])
    assert pde.norm(f, "L2") == pytest.approx(math.sqrt(d / 2), abs=grid.h ** 2)
    assert pde.norm(f, "H10") == pytest.approx(PI / d * math.sqrt(d / 2), rel=grid.h ** 2)
    assert pde.norm(f, "Sup") == pytest.approx(1.0, abs=grid.h ** 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.5, 6.0))
def test_friedrichs_inequality(seed, d):
    grid = pde.Grid1D(d, 80)
    f = FourierSampler(single(), grid, rng=seed).state()
    l2, h10 = pde.norm(f, "L2"), pde.norm(f, "H10")
    kappa1 = -pde.dirichlet_eigenvalues(grid)[0]
    assert l2 <= h10 / math.sqrt(kappa1) * (1 + 1e-12)
    # the discrete constant exceeds d/pi by a relative O(h^2)
    assert l2 <= d / PI * h10 * (1 + (PI * grid.h / d) ** 2 / 12)


def test_csv_writers(tmp_path):
    grid = pde.Grid1D(PI, 4)
    traj = pde.simulate(single(), pde.Field.from_functions(grid, [np.sin]), t_end=2e-3, dt=1e-3)
    lines = traj.write_csv(tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,species,i,x,value" and len(lines) == 1 + 3 * 4
    assert lines[1].startswith("0,1,1,0.62831853071795862,")
    norms = traj.write_norms_csv(tmp_path / "n.csv").read_text().splitlines()
    assert norms[0] == "t,species,L2,L4,H10,Sup" and len(norms) == 4
