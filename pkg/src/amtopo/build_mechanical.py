"""Inherent-strain build simulation and the P-norm distortion constraint.

Each newly built slab contracts by a prescribed inherent strain while the
slabs below it and the clamped base plate resist. Displacement increments
of all steps add up to the final distortion.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .mesh import LayerPartition, Mesh, active_elements, added_elements
from .parallel import map_ordered

U_FLOOR = 1e-12


@dataclass(frozen=True)
class InherentStrainParams:
    strain_x: float = -0.0025
    strain_y: float = -0.0025
    layer_count: int = 50
    pnorm_exponent: float = 5.0

    def __post_init__(self):
        if self.pnorm_exponent < 2:
            raise ValueError("P-norm exponent must be at least 2")
        if int(self.layer_count) < 1:
            raise ValueError("layer count must be at least 1")

    @property
    def voigt(self) -> np.ndarray:
        return np.array([self.strain_x, self.strain_y, 0.0])


@dataclass(frozen=True)
class AMatTensor:
    """Isotropic fourth-order tensor ``p (lam d_ij d_kl + mu (d_ik d_jl + d_il d_jk))``."""

    prefactor: float
    lam: float
    mu: float

    def tensor(self, dim: int = 2) -> np.ndarray:
        d = np.eye(dim)
        return self.prefactor * (
            self.lam * np.einsum("ij,kl->ijkl", d, d)
            + self.mu * (np.einsum("ik,jl->ijkl", d, d) + np.einsum("il,jk->ijkl", d, d))
        )

    def contract(self, e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
        """``e1 : A : e2`` for in-plane Voigt strains ``[exx, eyy, gxy]``."""
        e1 = np.asarray(e1)
        e2 = np.asarray(e2)
        tr = (e1[..., 0] + e1[..., 1]) * (e2[..., 0] + e2[..., 1])
        dd = e1[..., 0] * e2[..., 0] + e1[..., 1] * e2[..., 1] + 0.5 * e1[..., 2] * e2[..., 2]
        return self.prefactor * (self.lam * tr + 2.0 * self.mu * dd)


def amat_tensor(E: float, nu: float) -> AMatTensor:
    if not 0.0 <= nu < 0.5:
        raise ValueError("Poisson's ratio must lie in [0, 0.5)")
    pre = 3.0 * (1.0 - nu) / (2.0 * (1.0 + nu) * (7.0 - 5.0 * nu))
    lam = -(1.0 - 14.0 * nu + 15.0 * nu**2) * E / (1.0 - 2.0 * nu) ** 2
    return AMatTensor(pre, lam, 5.0 * E)


@dataclass
class Increment:
    step: int
    displacement: np.ndarray  # (n_nodes, 2), zero above the build front
    stress: np.ndarray  # (n_el, gp, 3), zero on inactive elements
    factorized: fem.Factorized | None


def _strain_field(mesh: Mesh, partition: LayerPartition, step: int, strain: np.ndarray) -> np.ndarray:
    eps = np.zeros((mesh.n_elements, 3))
    eps[added_elements(partition, step)] = strain
    return eps


def solve_layer_increment(
    mesh: Mesh,
    partition: LayerPartition,
    step: int,
    stiffness_scale,
    material: fem.MaterialParams,
    strain: InherentStrainParams,
    base_nodes: np.ndarray,
) -> Increment:
    """Displacement and stress increment caused by the slab added at ``step``."""
    elements = active_elements(partition, step)
    scale = np.asarray(stiffness_scale, dtype=float)
    scale = np.broadcast_to(scale, (mesh.n_elements,)) if scale.ndim == 0 else scale
    eps0 = _strain_field(mesh, partition, step, strain.voigt)
    system = fem.assemble_elasticity(
        mesh,
        elements,
        stiffness_scale=scale,
        material=material,
        initial_strain=eps0,
        dirichlet=(base_nodes, (0, 1), 0.0),
    )
    f = fem.Factorized(system)
    u = f.solve().reshape(-1, 2)
    D = material.plane_stress()
    eps = fem.gauss_strains(mesh, u) - eps0[:, None, :]
    sigma = scale[:, None, None] * (eps @ D.T)
    inactive = np.ones(mesh.n_elements, dtype=bool)
    inactive[elements] = False
    sigma[inactive] = 0.0
    return Increment(step, u, sigma, f)


def accumulate(increments) -> tuple[np.ndarray, np.ndarray]:
    """Fieldwise sums of the displacement and stress increments."""
    increments = list(increments)
    if not increments:
        raise ValueError("no increments to accumulate")
    u = np.zeros_like(increments[0].displacement)
    s = np.zeros_like(increments[0].stress)
    for inc in increments:
        u += inc.displacement
        s += inc.stress
    return u, s


def _pnorm_parts(mesh: Mesh, partition: LayerPartition, inc: Increment, b: float):
    act = active_elements(partition, inc.step)
    ug = fem.gauss_values(mesh, inc.displacement)  # (n_el, gp, 2)
    mag = np.linalg.norm(ug, axis=-1)
    mask = np.zeros(mesh.n_elements, dtype=bool)
    mask[act] = True
    ref = fem.layout(mesh).ref
    P = float(((mag[mask] ** b) @ ref.wdet).sum())
    return ug, mag, mask, P


def layer_pnorm(mesh: Mesh, partition: LayerPartition, inc: Increment, b: float) -> float:
    return _pnorm_parts(mesh, partition, inc, b)[3] ** (1.0 / b)


def distortion_constraint(mesh: Mesh, partition: LayerPartition, increments, b: float = 5.0) -> float:
    """``sum_j (int_{active(j)} |u_j|^b)^(1/b)``."""
    return float(sum(layer_pnorm(mesh, partition, inc, b) for inc in increments))


def pnorm_load(mesh: Mesh, partition: LayerPartition, inc: Increment, b: float) -> np.ndarray:
    """Derivative of one step's P-norm with respect to the nodal displacements."""
    ug, mag, mask, P = _pnorm_parts(mesh, partition, inc, b)
    if P <= 0:
        return np.zeros(2 * mesh.n_nodes)
    ref = fem.layout(mesh).ref
    m = np.maximum(mag, U_FLOOR)
    coef = P ** (1.0 / b - 1.0) * m ** (b - 2.0) * mask[:, None]
    vec = coef[..., None] * ug  # (n_el, gp, 2)
    fe = np.einsum("g,egc,gk->ekc", ref.wdet, vec, ref.N)
    out = np.zeros((mesh.n_nodes, 2))
    np.add.at(out, mesh.elements, fe)
    return out.reshape(-1)


def distortion_adjoint(mesh: Mesh, partition: LayerPartition, inc: Increment, b: float) -> np.ndarray:
    """Adjoint displacement for one step, loaded by the P-norm derivative.

    With this sign convention the topological derivative reads
    ``-eps(u):A:eps(ua) + eps_inh:A:eps(ua)``.
    """
    load = pnorm_load(mesh, partition, inc, b)
    return inc.factorized.solve(load, homogeneous=True).reshape(-1, 2)


def distortion_topo_derivative(
    mesh: Mesh,
    partition: LayerPartition,
    inc: Increment,
    u_adj: np.ndarray,
    strain: InherentStrainParams,
    amat: AMatTensor,
) -> np.ndarray:
    """Per-element (Gauss-averaged) derivative field of one step."""
    eu = fem.gauss_strains(mesh, inc.displacement)
    ea = fem.gauss_strains(mesh, u_adj)
    eps0 = _strain_field(mesh, partition, inc.step, strain.voigt)
    val = (-amat.contract(eu, ea) + amat.contract(eps0[:, None, :], ea)).mean(axis=1)
    out = np.zeros(mesh.n_elements)
    act = active_elements(partition, inc.step)
    out[act] = val[act]
    return out


def density_sensitivity(
    mesh: Mesh,
    partition: LayerPartition,
    inc: Increment,
    u_adj: np.ndarray,
    strain: InherentStrainParams,
    material: fem.MaterialParams,
) -> np.ndarray:
    """Exact derivative of one step's P-norm with respect to each element's stiffness scale."""
    lay = fem.layout(mesh)
    Ke, Fe = fem.elasticity_matrices(mesh, material)
    act = active_elements(partition, inc.step)
    dofs = lay.vdofs[act]
    ue = inc.displacement.reshape(-1)[dofs]
    ae = u_adj.reshape(-1)[dofs]
    eps0 = _strain_field(mesh, partition, inc.step, strain.voigt)[act]
    out = np.zeros(mesh.n_elements)
    out[act] = np.einsum("ek,ek->e", ae, eps0 @ Fe.T) - np.einsum("ek,kl,el->e", ae, Ke, ue)
    return out


@dataclass
class MechanicalResult:
    value: float
    increments: list
    displacement: np.ndarray
    stress: np.ndarray
    adjoints: list
    topo_derivative: np.ndarray
    density_sensitivity: np.ndarray


def evaluate(
    mesh: Mesh,
    partition: LayerPartition,
    stiffness_scale,
    material: fem.MaterialParams,
    strain: InherentStrainParams,
    base_nodes: np.ndarray,
    workers: int = 1,
    sensitivities: bool = True,
) -> MechanicalResult:
    b = strain.pnorm_exponent
    amat = amat_tensor(material.young_modulus, material.poisson_ratio)

    def run(step):
        inc = solve_layer_increment(mesh, partition, step, stiffness_scale, material, strain, base_nodes)
        term = layer_pnorm(mesh, partition, inc, b)
        if not sensitivities:
            inc.factorized = None
            return inc, term, None, None, None
        adj = distortion_adjoint(mesh, partition, inc, b)
        topo = distortion_topo_derivative(mesh, partition, inc, adj, strain, amat)
        dens = density_sensitivity(mesh, partition, inc, adj, strain, material)
        inc.factorized = None
        return inc, term, adj, topo, dens

    results = map_ordered(run, range(1, partition.layer_count + 1), workers)
    incs = [r[0] for r in results]
    value = float(sum(r[1] for r in results))
    u, s = accumulate(incs)
    topo = np.zeros(mesh.n_elements)
    dens = np.zeros(mesh.n_elements)
    adjs = []
    if sensitivities:
        for r in results:
            topo += r[3]
            dens += r[4]
            adjs.append(r[2])
    return MechanicalResult(value, incs, u, s, adjs, topo, dens)
