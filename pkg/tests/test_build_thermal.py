import numpy as np
import pytest
from hypothesis import given, strategies as st

from amtopo import build_thermal as bt
from amtopo import fem
from amtopo import overhang as oh
from amtopo.mesh import build_grid, partition_layers
from shapes import boxes_indicator

C_ERSATZ = 1e-3


def _setup(width, height, nx, ny, m):
    mesh = build_grid(width, height, nx, ny, {"base": "bottom"})
    return mesh, partition_layers(mesh, (0.0, 1.0), m)


def _psi(mesh, chi, a=5e-3, L=None):
    return oh.helmholtz_filter(mesh, chi, a, L or max(mesh.width, mesh.height))


def _gt(mesh, part, chi, params=None, psi=None):
    params = params or bt.ThermalBuildParams(layer_count=part.layer_count)
    psi = _psi(mesh, chi) if psi is None else psi
    scale = C_ERSATZ + (1 - C_ERSATZ) * chi
    return bt.evaluate(mesh, part, scale, psi, params, mesh.nodes_of("base"), sensitivities=False).value


def test_constant_filter_has_no_flux():
    mesh = build_grid(4, 4, 4, 4)
    assert np.all(bt.overhang_flux_weight(mesh, np.full(mesh.n_nodes, 0.7)) == 0)


@pytest.mark.parametrize("n", [40, 80])
def test_weight_integrates_to_interface_length(n):
    mesh = build_grid(40, 40, n, n)
    chi = boxes_indicator(mesh, [(0, 40, 20, 40)])
    w = bt.overhang_flux_weight(mesh, _psi(mesh, chi, a=1e-3, L=40))
    length = fem.integrate_gauss(mesh, w).sum()
    assert length == pytest.approx(40.0, rel=0.05)


def test_upward_facing_top_has_no_weight():
    mesh = build_grid(40, 40, 40, 40)
    chi = boxes_indicator(mesh, [(0, 40, 0, 20)])
    w = bt.overhang_flux_weight(mesh, _psi(mesh, chi, a=1e-3, L=40))
    assert np.all(w == 0)


def test_vertical_column_stays_at_ambient():
    mesh, part = _setup(20, 20, 20, 20, 5)
    chi = boxes_indicator(mesh, [(8, 12, 0, 20)])
    params = bt.ThermalBuildParams(layer_count=5)
    res = bt.evaluate(mesh, part, C_ERSATZ + (1 - C_ERSATZ) * chi, _psi(mesh, chi), params, mesh.nodes_of("base"))
    assert all(np.all(s.temperature == 0) for s in res.states)
    assert res.value <= 1e-12 * mesh.area
    assert np.all(res.topo_derivative == 0)


def test_column_with_heated_top_slab_matches_one_dimensional_conduction():
    # uniform flux q per unit width spread over the newest slab of thickness t:
    # T(H) = q (H - t/2) / k
    H, W, m, q, k = 20.0, 4.0, 10, 3.0, 2.0
    mesh, part = _setup(W, H, 4, 40, m)
    t = H / m
    weight = np.full((mesh.n_elements, 4), 1.0 / t)
    params = bt.ThermalBuildParams(conductivity=k, flux=q, layer_count=m)
    state = bt.solve_layer_temperature(mesh, part, m, 1.0, params, weight, mesh.nodes_of("base"))
    top = mesh.side_nodes("top")
    assert np.allclose(state.temperature[top], q * (H - t / 2) / k, rtol=0.05)
    # nodes above the build front at an earlier step stay at ambient
    early = bt.solve_layer_temperature(mesh, part, 3, 1.0, params, weight, mesh.nodes_of("base"))
    assert np.all(early.temperature[top] == 0)
    # sign sanity: along a column T and its adjoint rise together
    adj = bt.thermal_adjoint(mesh, part, state)
    d = bt.thermal_topo_derivative(mesh, part, state.temperature, adj, k, m)
    assert np.all(d <= 0)


def _overhang_case():
    mesh, part = _setup(16, 16, 16, 16, 4)
    chi = boxes_indicator(mesh, [(2, 7, 0, 9), (2, 14, 9, 14)])
    return mesh, part, chi


def test_doubling_flux_doubles_temperature_and_quadruples_constraint():
    mesh, part, chi = _overhang_case()
    psi = _psi(mesh, chi)
    scale = C_ERSATZ + (1 - C_ERSATZ) * chi
    base = mesh.nodes_of("base")
    r1 = bt.evaluate(mesh, part, scale, psi, bt.ThermalBuildParams(flux=1.0, layer_count=4), base, sensitivities=False)
    r2 = bt.evaluate(mesh, part, scale, psi, bt.ThermalBuildParams(flux=2.0, layer_count=4), base, sensitivities=False)
    assert r1.value > 0
    assert r2.value == pytest.approx(4 * r1.value, rel=1e-10)
    for s1, s2 in zip(r1.states, r2.states):
        assert np.allclose(s2.temperature, 2 * s1.temperature, rtol=1e-10, atol=1e-300)


def test_uniform_excess_closed_form():
    mesh, part = _setup(6, 3, 6, 3, 1)
    state = bt.LayerState(1, np.full(mesh.n_nodes, 2.5), None)
    assert bt.layer_term(mesh, part, state, 0.0) == pytest.approx(2.5**2 * mesh.area, rel=1e-12)
    assert bt.thermal_constraint(mesh, part, [bt.LayerState(1, np.zeros(mesh.n_nodes), None)]) == 0


def test_constraint_is_additive_over_steps():
    mesh, part, chi = _overhang_case()
    res = bt.evaluate(mesh, part, 1.0, _psi(mesh, chi), bt.ThermalBuildParams(layer_count=4), mesh.nodes_of("base"), sensitivities=False)
    terms = [bt.layer_term(mesh, part, s, 0.0) for s in res.states]
    assert res.value == pytest.approx(sum(terms), rel=1e-12)
    assert bt.thermal_constraint(mesh, part, res.states) == pytest.approx(res.value, rel=1e-12)


def test_adjoint_matches_central_differences_with_frozen_weight():
    mesh, part, chi = _overhang_case()
    params = bt.ThermalBuildParams(layer_count=4)
    base = mesh.nodes_of("base")
    weight = bt.overhang_flux_weight(mesh, _psi(mesh, chi))
    rng = np.random.default_rng(3)
    scale = 0.2 + 0.8 * rng.random(mesh.n_elements)

    def G(s):
        return bt.evaluate(mesh, part, s, None, params, base, weight=weight, sensitivities=False).value

    pred = bt.evaluate(mesh, part, scale, None, params, base, weight=weight).density_sensitivity
    h = 1e-5
    for e in rng.choice(mesh.n_elements, 10, replace=False):
        sp_, sm = scale.copy(), scale.copy()
        sp_[e] += h
        sm[e] -= h
        fd = (G(sp_) - G(sm)) / (2 * h)
        assert pred[e] == pytest.approx(fd, rel=1e-3, abs=1e-8 * np.abs(pred).max())


def test_supporting_column_lowers_constraint():
    mesh, part = _setup(40, 40, 40, 40, 10)
    bare = boxes_indicator(mesh, [(4, 14, 0, 24), (4, 36, 24, 32)])
    supported = boxes_indicator(mesh, [(4, 14, 0, 24), (4, 36, 24, 32), (28, 34, 0, 24)])
    assert _gt(mesh, part, supported) < _gt(mesh, part, bare)


def test_evaluation_is_independent_of_worker_count():
    mesh, part, chi = _overhang_case()
    params = bt.ThermalBuildParams(layer_count=4)
    psi = _psi(mesh, chi)
    base = mesh.nodes_of("base")
    r1 = bt.evaluate(mesh, part, 1.0, psi, params, base, workers=1)
    r2 = bt.evaluate(mesh, part, 1.0, psi, params, base, workers=3)
    assert r1.value == r2.value
    assert np.array_equal(r1.topo_derivative, r2.topo_derivative)


@given(st.floats(0.1, 10), st.floats(0.1, 10))
def test_scaling_in_flux_and_conductivity(q, k):
    mesh, part, chi = _overhang_case()
    psi = _psi(mesh, chi)
    base = mesh.nodes_of("base")
    ref = bt.evaluate(mesh, part, 1.0, psi, bt.ThermalBuildParams(layer_count=4), base, sensitivities=False).value
    val = bt.evaluate(mesh, part, 1.0, psi, bt.ThermalBuildParams(k, q, 0.0, 4), base, sensitivities=False).value
    assert val == pytest.approx(ref * (q / k) ** 2, rel=1e-9)


def test_parameter_validation():
    with pytest.raises(ValueError):
        bt.ThermalBuildParams(conductivity=0.0)
    with pytest.raises(ValueError):
        bt.ThermalBuildParams(layer_count=0)
    with pytest.raises(ValueError):
        bt.overhang_flux_weight(build_grid(1, 1, 1, 1), np.zeros(4), w=0)
