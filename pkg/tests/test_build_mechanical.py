import numpy as np
import pytest
from hypothesis import given, strategies as st

from amtopo import build_mechanical as bm
from amtopo import fem
from amtopo.mesh import build_grid, partition_layers

MAT = fem.MaterialParams(75.0, 0.34)


def _setup(nx=16, ny=16, n=4, w=16.0, h=16.0):
    mesh = build_grid(w, h, nx, ny, {"base": "bottom"})
    return mesh, partition_layers(mesh, (0.0, 1.0), n)


def test_amat_closed_form_values():
    A = bm.amat_tensor(1.0, 0.3)
    assert A.prefactor == pytest.approx(0.1468531, abs=1e-7)
    assert A.prefactor == pytest.approx(2.1 / 14.3, rel=1e-14)
    assert A.lam == pytest.approx(11.5625, rel=1e-12)
    assert A.mu == 5.0


def test_amat_symmetries_and_linearity():
    T = bm.amat_tensor(3.0, 0.25).tensor()
    assert np.allclose(T, T.transpose(1, 0, 2, 3))
    assert np.allclose(T, T.transpose(0, 1, 3, 2))
    assert np.allclose(T, T.transpose(2, 3, 0, 1))
    assert T[0, 1, 0, 1] == T[1, 0, 0, 1]
    T2 = bm.amat_tensor(6.0, 0.25).tensor()
    assert np.allclose(T2, 2 * T)
    with pytest.raises(ValueError):
        bm.amat_tensor(1.0, 0.5)


def test_contract_agrees_with_full_tensor():
    A = bm.amat_tensor(75.0, 0.34)
    T = A.tensor()
    e1 = np.array([1e-3, -2e-3, 4e-4])
    e2 = np.array([-5e-4, 3e-3, -1e-3])

    def full(e):
        return np.array([[e[0], e[2] / 2], [e[2] / 2, e[1]]])

    assert A.contract(e1, e2) == pytest.approx(np.einsum("ij,ijkl,kl->", full(e1), T, full(e2)), rel=1e-12)


@given(
    st.floats(0.0, 0.45),
    st.floats(0.1, 200),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: max(map(abs, v)) > 1e-3),
)
def test_amat_energy_positive(nu, E, e):
    assert bm.amat_tensor(E, nu).contract(np.array(e), np.array(e)) > 0


def _dense_single_element(E, nu, eps0):
    # independent bilinear element: unit square, 2x2 Gauss, nodes bottom-left CCW
    g = 1 / np.sqrt(3)
    xi_n = np.array([-1, 1, 1, -1])
    eta_n = np.array([-1, -1, 1, 1])
    D = E / (1 - nu**2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    K = np.zeros((8, 8))
    f = np.zeros(8)
    for xi in (-g, g):
        for eta in (-g, g):
            dNx = xi_n * (1 + eta_n * eta) / 4 * 2  # d/dx with x = (xi + 1) / 2
            dNy = eta_n * (1 + xi_n * xi) / 4 * 2
            B = np.zeros((3, 8))
            B[0, 0::2] = dNx
            B[1, 1::2] = dNy
            B[2, 0::2] = dNy
            B[2, 1::2] = dNx
            w = 0.25  # Gauss weight 1 times det J = 1/4
            K += w * B.T @ D @ B
            f += w * B.T @ D @ eps0
    free = [4, 5, 6, 7]
    u = np.zeros(8)
    u[free] = np.linalg.solve(K[np.ix_(free, free)], f[free])
    return u.reshape(4, 2)


def test_single_element_matches_dense_oracle():
    mesh, part = _setup(1, 1, 1, 1.0, 1.0)
    strain = bm.InherentStrainParams(-0.0025, -0.0025, 1)
    inc = bm.solve_layer_increment(mesh, part, 1, 1.0, MAT, strain, mesh.nodes_of("base"))
    local = _dense_single_element(75.0, 0.34, strain.voigt)
    ref = np.zeros((4, 2))
    ref[mesh.elements[0]] = local
    assert np.allclose(inc.displacement, ref, atol=1e-12, rtol=0)


def test_zero_strain_gives_zero_everything():
    mesh, part = _setup(8, 8, 2)
    res = bm.evaluate(mesh, part, 1.0, MAT, bm.InherentStrainParams(0.0, 0.0, 2), mesh.nodes_of("base"))
    assert res.value == 0
    assert np.all(res.displacement == 0)
    assert all(np.all(a == 0) for a in res.adjoints)
    assert np.all(res.topo_derivative == 0)


def test_increments_vanish_above_build_front():
    mesh, part = _setup(8, 8, 4)
    res = bm.evaluate(mesh, part, 1.0, MAT, bm.InherentStrainParams(layer_count=4), mesh.nodes_of("base"), sensitivities=False)
    y = mesh.node_coords[:, 1]
    for inc in res.increments:
        above = y > 16.0 * inc.step / 4 + 1e-9
        assert np.all(inc.displacement[above] == 0)
        assert np.any(inc.displacement[~above] != 0)


def test_accumulate():
    mesh, part = _setup(8, 8, 4)
    res = bm.evaluate(mesh, part, 1.0, MAT, bm.InherentStrainParams(layer_count=4), mesh.nodes_of("base"), sensitivities=False)
    u1, _ = bm.accumulate(res.increments[:1])
    assert np.array_equal(u1, res.increments[0].displacement)
    u_rev, s_rev = bm.accumulate(res.increments[::-1])
    assert np.allclose(u_rev, res.displacement, rtol=0, atol=1e-12 * np.abs(res.displacement).max())
    assert np.allclose(s_rev, res.stress, rtol=0, atol=1e-12 * np.abs(res.stress).max())
    with pytest.raises(ValueError):
        bm.accumulate([])


def _constant_increment(mesh, u0):
    return bm.Increment(1, np.tile(u0, (mesh.n_nodes, 1)), None, None)


def test_pnorm_of_uniform_field():
    mesh, part = _setup(6, 4, 1, 6.0, 4.0)
    u0 = np.array([3e-3, -4e-3])
    val = bm.distortion_constraint(mesh, part, [_constant_increment(mesh, u0)], b=5)
    assert val == pytest.approx(5e-3 * 24.0 ** (1 / 5), rel=1e-12)
    zero = bm.distortion_constraint(mesh, part, [_constant_increment(mesh, np.zeros(2))], b=5)
    assert zero == 0


@given(st.lists(st.floats(-1, 1), min_size=50, max_size=50), st.floats(2, 8))
def test_pnorm_bounded_by_peak(values, b):
    mesh, part = _setup(4, 4, 1, 4.0, 4.0)
    u = np.array(values).reshape(25, 2)
    inc = bm.Increment(1, u, None, None)
    peak = np.abs(np.linalg.norm(u, axis=1)).max()
    assert bm.layer_pnorm(mesh, part, inc, b) <= peak * mesh.area ** (1 / b) * (1 + 1e-12)


def test_pnorm_load_is_gradient_along_displacement():
    mesh, part = _setup(4, 4, 1, 4.0, 4.0)
    rng = np.random.default_rng(5)
    u = rng.normal(size=(25, 2))
    inc = bm.Increment(1, u, None, None)
    g = bm.pnorm_load(mesh, part, inc, 5.0)
    h = 1e-6
    for k in rng.choice(50, 8, replace=False):
        up, um = u.copy().ravel(), u.copy().ravel()
        up[k] += h
        um[k] -= h
        fd = (bm.layer_pnorm(mesh, part, bm.Increment(1, up.reshape(-1, 2), None, None), 5.0)
              - bm.layer_pnorm(mesh, part, bm.Increment(1, um.reshape(-1, 2), None, None), 5.0)) / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-6)
    # on a uniform field the load points along u everywhere
    u0 = np.array([1.0, -2.0])
    load = bm.pnorm_load(mesh, part, _constant_increment(mesh, u0), 5.0).reshape(-1, 2)
    assert np.all(load @ u0 > 0)
    assert np.allclose(load[:, 0] * u0[1] - load[:, 1] * u0[0], 0.0, atol=1e-15)


def test_adjoint_matches_central_differences():
    mesh, part = _setup()
    strain = bm.InherentStrainParams(layer_count=4)
    base = mesh.nodes_of("base")
    rng = np.random.default_rng(11)
    scale = 0.2 + 0.8 * rng.random(mesh.n_elements)

    def G(s):
        return bm.evaluate(mesh, part, s, MAT, strain, base, sensitivities=False).value

    pred = bm.evaluate(mesh, part, scale, MAT, strain, base).density_sensitivity
    h = 1e-5
    for e in rng.choice(mesh.n_elements, 10, replace=False):
        sp_, sm = scale.copy(), scale.copy()
        sp_[e] += h
        sm[e] -= h
        fd = (G(sp_) - G(sm)) / (2 * h)
        assert pred[e] == pytest.approx(fd, rel=1e-3, abs=1e-8 * np.abs(pred).max())


@given(st.floats(-3, 3).filter(lambda x: abs(x) > 1e-3))
def test_homogeneity_in_inherent_strain(lam):
    mesh, part = _setup(6, 6, 3, 6.0, 6.0)
    base = mesh.nodes_of("base")
    r1 = bm.evaluate(mesh, part, 1.0, MAT, bm.InherentStrainParams(-2e-3, -1e-3, 3), base, sensitivities=False)
    r2 = bm.evaluate(mesh, part, 1.0, MAT, bm.InherentStrainParams(-2e-3 * lam, -1e-3 * lam, 3), base, sensitivities=False)
    assert np.allclose(r2.displacement, lam * r1.displacement, rtol=1e-9, atol=1e-15)
    assert r2.value == pytest.approx(abs(lam) * r1.value, rel=1e-9)


def test_worker_count_does_not_change_result():
    mesh, part = _setup(8, 8, 4)
    args = (mesh, part, 1.0, MAT, bm.InherentStrainParams(layer_count=4), mesh.nodes_of("base"))
    r1 = bm.evaluate(*args, workers=1)
    r2 = bm.evaluate(*args, workers=2)
    assert r1.value == r2.value
    assert np.array_equal(r1.topo_derivative, r2.topo_derivative)


def test_parameter_validation():
    with pytest.raises(ValueError):
        bm.InherentStrainParams(pnorm_exponent=1.5)
    with pytest.raises(ValueError):
        bm.InherentStrainParams(layer_count=0)
