"""Bilinear quadrilateral finite elements on the structured grid.

Scalar problems (conduction, Helmholtz filtering) carry one unknown per node;
plane-stress elasticity carries two, ordered ``[ux0, uy0, ux1, uy1, ...]``.
All elements of a :class:`~amtopo.mesh.Mesh` are congruent rectangles, so the
reference element matrices are integrated once (2 x 2 Gauss) and scaled per
element.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import Mesh

GP = np.array([-1.0, 1.0]) / np.sqrt(3.0)
# reference node positions, counter-clockwise from lower-left
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])
RESIDUAL_TOL = 1e-8


class SolverError(RuntimeError):
    """Raised when a linear system cannot be solved reliably."""


class SingularSystemError(SolverError):
    pass


@dataclass(frozen=True)
class MaterialParams:
    young_modulus: float = 75.0  # GPa
    poisson_ratio: float = 0.34
    conductivity: float = 119.0  # W/mK

    def __post_init__(self):
        if not self.young_modulus > 0:
            raise ValueError("Young's modulus must be positive")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValueError("Poisson's ratio must lie in [0, 0.5)")
        if not self.conductivity > 0:
            raise ValueError("conductivity must be positive")

    def plane_stress(self) -> np.ndarray:
        """Voigt elasticity matrix for ``[exx, eyy, gxy]``."""
        E, nu = self.young_modulus, self.poisson_ratio
        return E / (1.0 - nu**2) * np.array(
            [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]]
        )


@dataclass(frozen=True)
class Reference:
    """Shape data for one rectangular element of size ``hx x hy``."""

    N: np.ndarray  # (gp, 4)
    dN: np.ndarray  # (gp, 2, 4) physical gradients
    wdet: np.ndarray  # (gp,)
    B: np.ndarray  # (gp, 3, 8) strain-displacement, engineering shear
    stiffness: np.ndarray  # (4, 4)  int grad N . grad N
    mass: np.ndarray  # (4, 4)  int N N
    load: np.ndarray  # (4,)    int N


def reference_element(hx: float, hy: float) -> Reference:
    xi, eta = np.meshgrid(GP, GP)
    xi, eta = xi.ravel(), eta.ravel()
    N = 0.25 * (1 + np.outer(xi, _XI)) * (1 + np.outer(eta, _ETA))
    dNdxi = 0.25 * _XI[None, :] * (1 + np.outer(eta, _ETA))
    dNdeta = 0.25 * _ETA[None, :] * (1 + np.outer(xi, _XI))
    dN = np.stack([dNdxi * 2.0 / hx, dNdeta * 2.0 / hy], axis=1)
    wdet = np.full(4, hx * hy / 4.0)

    B = np.zeros((4, 3, 8))
    B[:, 0, 0::2] = dN[:, 0]
    B[:, 1, 1::2] = dN[:, 1]
    B[:, 2, 0::2] = dN[:, 1]
    B[:, 2, 1::2] = dN[:, 0]

    K = np.einsum("g,gik,gil->kl", wdet, dN, dN)
    M = np.einsum("g,gk,gl->kl", wdet, N, N)
    f = np.einsum("g,gk->k", wdet, N)
    return Reference(N, dN, wdet, B, K, M, f)


class _Layout:
    """Cached sparsity index arrays and reference element for one mesh."""

    def __init__(self, mesh: Mesh):
        self.ref = reference_element(mesh.hx, mesh.hy)
        conn = mesh.elements
        self.scalar_rows = np.repeat(conn, 4, axis=1)
        self.scalar_cols = np.tile(conn, (1, 4))
        vdofs = np.empty((conn.shape[0], 8), dtype=np.int64)
        vdofs[:, 0::2] = 2 * conn
        vdofs[:, 1::2] = 2 * conn + 1
        self.vdofs = vdofs
        self.vector_rows = np.repeat(vdofs, 8, axis=1)
        self.vector_cols = np.tile(vdofs, (1, 8))


_LAYOUTS: "weakref.WeakKeyDictionary[Mesh, _Layout]" = weakref.WeakKeyDictionary()


def layout(mesh: Mesh) -> _Layout:
    lay = _LAYOUTS.get(mesh)
    if lay is None:
        lay = _LAYOUTS[mesh] = _Layout(mesh)
    return lay


def vector_dofs(mesh: Mesh) -> np.ndarray:
    return layout(mesh).vdofs


@dataclass
class LinearSystem:
    """Assembled system with Dirichlet constraints still to be eliminated.

    ``active`` marks the unknowns touched by at least one assembled element;
    the rest belong to inactive (not yet built) regions and are fixed at zero.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    fixed: np.ndarray  # constrained unknown indices
    fixed_values: np.ndarray
    active: np.ndarray  # bool mask
    components: int = 1

    @property
    def inactive(self) -> np.ndarray:
        return np.flatnonzero(~self.active)


def _per_element(values, n_elements: int, elements: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim == 0:
        return np.full(elements.size, float(v))
    if v.shape[0] == n_elements:
        return v[elements]
    if v.shape[0] == elements.size:
        return v
    raise ValueError(f"{name} has {v.shape[0]} entries; expected 1, {elements.size} or {n_elements}")


def _dirichlet_list(dirichlet, components: int):
    """Normalize Dirichlet specs into (unknown indices, values)."""
    if dirichlet is None:
        return np.empty(0, dtype=np.int64), np.empty(0)
    if isinstance(dirichlet, tuple):
        dirichlet = [dirichlet]
    idx, vals = [], []
    for spec in dirichlet:
        nodes = np.asarray(spec[0], dtype=np.int64)
        if components == 1:
            value = spec[1]
            dofs = nodes
        else:
            comps = spec[1] if len(spec) > 2 else (0, 1)
            value = spec[-1] if len(spec) > 2 else 0.0
            comps = np.atleast_1d(comps)
            dofs = (2 * nodes[:, None] + comps[None, :]).ravel()
        idx.append(dofs)
        vals.append(np.broadcast_to(np.asarray(value, dtype=float), dofs.shape))
    idx = np.concatenate(idx)
    vals = np.concatenate(vals)
    idx, first = np.unique(idx, return_index=True)
    return idx, vals[first]


def _elements_or_all(mesh: Mesh, elements) -> np.ndarray:
    if elements is None:
        return np.arange(mesh.n_elements)
    elements = np.asarray(elements, dtype=np.int64)
    if elements.size == 0:
        raise ValueError("element set is empty")
    return elements


def assemble_scalar(
    mesh: Mesh,
    elements=None,
    diffusivity=1.0,
    mass_coeff=0.0,
    source=None,
    flux_load=None,
    dirichlet=None,
    element_source=None,
) -> LinearSystem:
    """Galerkin system for ``-div(diffusivity grad u) + mass_coeff u = source``.

    ``source`` is a nodal field interpolated with the shape functions,
    ``element_source`` a per-element constant, and ``flux_load`` an already
    integrated nodal load (natural boundary fluxes). ``dirichlet`` is
    ``(nodes, value)`` or a list of them.
    """
    lay = layout(mesh)
    ref = lay.ref
    elements = _elements_or_all(mesh, elements)
    kd = _per_element(diffusivity, mesh.n_elements, elements, "diffusivity")
    km = _per_element(mass_coeff, mesh.n_elements, elements, "mass_coeff")
    if np.any(kd < 0) or np.any(km < 0):
        raise ValueError("diffusivity and mass coefficient must be nonnegative")

    n = mesh.n_nodes
    data = kd[:, None, None] * ref.stiffness + km[:, None, None] * ref.mass
    A = sp.csr_matrix(
        (data.reshape(-1), (lay.scalar_rows[elements].ravel(), lay.scalar_cols[elements].ravel())),
        shape=(n, n),
    )
    b = np.zeros(n)
    conn = mesh.elements[elements]
    if source is not None:
        s = np.asarray(source, dtype=float)
        s = np.full(n, float(s)) if s.ndim == 0 else s
        np.add.at(b, conn, s[conn] @ ref.mass)
    if element_source is not None:
        es = _per_element(element_source, mesh.n_elements, elements, "element_source")
        np.add.at(b, conn, es[:, None] * ref.load[None, :])
    if flux_load is not None:
        b += np.asarray(flux_load, dtype=float)

    active = np.zeros(n, dtype=bool)
    active[conn.ravel()] = True
    fixed, values = _dirichlet_list(dirichlet, 1)
    keep = active[fixed]
    fixed, values = fixed[keep], values[keep]
    if fixed.size == 0 and not np.any(km > 0):
        raise SingularSystemError("pure diffusion problem without Dirichlet data is singular")
    return LinearSystem(A, b, fixed, values, active, 1)


def elasticity_matrices(mesh: Mesh, material: MaterialParams):
    """Element stiffness ``(8, 8)`` and initial-strain load operator ``(8, 3)``."""
    ref = layout(mesh).ref
    D = material.plane_stress()
    Ke = np.einsum("g,gik,ij,gjl->kl", ref.wdet, ref.B, D, ref.B)
    Fe = np.einsum("g,gik,ij->kj", ref.wdet, ref.B, D)
    return Ke, Fe


def edge_load(mesh: Mesh, edges: np.ndarray, value) -> np.ndarray:
    """Consistent nodal load of a constant per-length value on boundary edges."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    value = np.atleast_1d(np.asarray(value, dtype=float))
    comps = value.size
    f = np.zeros(mesh.n_nodes * comps)
    lengths = np.linalg.norm(
        mesh.node_coords[edges[:, 1]] - mesh.node_coords[edges[:, 0]], axis=1
    )
    for c in range(comps):
        for k in range(2):
            np.add.at(f, comps * edges[:, k] + c, 0.5 * lengths * value[c])
    return f


def assemble_elasticity(
    mesh: Mesh,
    elements=None,
    stiffness_scale=1.0,
    material: MaterialParams | None = None,
    traction=None,
    initial_strain=None,
    dirichlet=None,
) -> LinearSystem:
    """Plane-stress system with scaled stiffness ``stiffness_scale * C``.

    ``traction`` is ``(edges, vector)`` or a list of them. ``initial_strain``
    is a Voigt strain ``[exx, eyy, gxy]`` per element (or one row for all
    assembled elements); it enters as the load ``int eps0 : C~ : eps(test)``.
    ``dirichlet`` entries are ``(nodes, components, value)`` or ``(nodes, value)``.
    """
    material = material or MaterialParams()
    lay = layout(mesh)
    elements = _elements_or_all(mesh, elements)
    scale = _per_element(stiffness_scale, mesh.n_elements, elements, "stiffness_scale")
    Ke, Fe = elasticity_matrices(mesh, material)

    n = 2 * mesh.n_nodes
    data = scale[:, None, None] * Ke
    A = sp.csr_matrix(
        (data.reshape(-1), (lay.vector_rows[elements].ravel(), lay.vector_cols[elements].ravel())),
        shape=(n, n),
    )
    b = np.zeros(n)
    if traction is not None:
        if isinstance(traction, tuple):
            traction = [traction]
        for edges, vec in traction:
            b += edge_load(mesh, edges, vec)
    if initial_strain is not None:
        eps = np.asarray(initial_strain, dtype=float)
        if eps.ndim == 1:
            eps = np.broadcast_to(eps, (elements.size, 3))
        elif eps.shape[0] == mesh.n_elements:
            eps = eps[elements]
        fe = scale[:, None] * (eps @ Fe.T)
        np.add.at(b, lay.vdofs[elements], fe)

    active = np.zeros(n, dtype=bool)
    active[lay.vdofs[elements].ravel()] = True
    fixed, values = _dirichlet_list(dirichlet, 2)
    keep = active[fixed]
    fixed, values = fixed[keep], values[keep]
    if fixed.size == 0:
        raise SingularSystemError("elasticity problem without supports has rigid-body modes")
    return LinearSystem(A, b, fixed, values, active, 2)


class Factorized:
    """Factorization of a constrained system, reusable for adjoint solves.

    Right-hand sides passed to :meth:`solve` are full-length; constrained and
    inactive unknowns are set to the Dirichlet values (or zero, for
    homogeneous solves).
    """

    def __init__(self, system: LinearSystem):
        self.system = system
        n = system.rhs.shape[0]
        free = system.active.copy()
        free[system.fixed] = False
        self.free = np.flatnonzero(free)
        self.n = n
        if self.free.size == 0:
            self.lu = None
            return
        A = system.matrix.tocsc()
        self.A_ff = A[self.free][:, self.free].tocsc()
        self.A_fd = A[self.free][:, system.fixed]
        diag = self.A_ff.diagonal()
        if np.any(diag <= 0):
            raise SolverError("system matrix has non-positive diagonal entries; not positive definite")
        try:
            self.lu = spla.splu(
                self.A_ff,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise SingularSystemError(f"factorization failed: {exc}") from exc
        u = self.lu.U.diagonal()
        if np.any(u <= 0):
            raise SolverError("system matrix is not positive definite")
        if u.min() < 1e-14 * u.max():
            raise SingularSystemError(
                f"system is numerically singular (pivot ratio {u.min() / u.max():.2e})"
            )

    def solve(self, rhs=None, homogeneous: bool = False) -> np.ndarray:
        sys_ = self.system
        b = sys_.rhs if rhs is None else np.asarray(rhs, dtype=float)
        x = np.zeros(self.n)
        if not homogeneous:
            x[sys_.fixed] = sys_.fixed_values
        if self.lu is None:
            return x
        bf = b[self.free]
        if not homogeneous and sys_.fixed.size:
            bf = bf - self.A_fd @ sys_.fixed_values
        xf = self.lu.solve(bf)
        r = self.A_ff @ xf - bf
        nb = np.linalg.norm(bf)
        if nb > 0 and np.linalg.norm(r) > RESIDUAL_TOL * nb:
            xf = xf - self.lu.solve(r)
            r = self.A_ff @ xf - bf
            if np.linalg.norm(r) > RESIDUAL_TOL * nb:
                raise SolverError(
                    f"relative residual {np.linalg.norm(r) / nb:.2e} exceeds {RESIDUAL_TOL:g}"
                )
        x[self.free] = xf
        return x

    def shape(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(-1, 2) if self.system.components == 2 else x


def solve(system: LinearSystem) -> np.ndarray:
    """Solve a constrained system; vector problems come back as ``(n_nodes, 2)``."""
    f = Factorized(system)
    return f.shape(f.solve())


# --------------------------------------------------------------------------- field evaluation


def gauss_gradients(mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
    """Gradient of a nodal scalar at every Gauss point, shape ``(n_el, gp, 2)``."""
    ref = layout(mesh).ref
    ue = np.asarray(nodal)[mesh.elements]
    return np.einsum("gdk,ek->egd", ref.dN, ue)


def gauss_values(mesh: Mesh, nodal: np.ndarray) -> np.ndarray:
    """Values of a nodal scalar (or vector, last axis) at the Gauss points."""
    ref = layout(mesh).ref
    ue = np.asarray(nodal)[mesh.elements]
    return np.einsum("gk,ek...->eg...", ref.N, ue)


def gauss_strains(mesh: Mesh, u: np.ndarray) -> np.ndarray:
    """Voigt strains ``(n_el, gp, 3)`` of a nodal displacement ``(n_nodes, 2)``."""
    lay = layout(mesh)
    ue = np.asarray(u).reshape(-1)[lay.vdofs]
    return np.einsum("gik,ek->egi", lay.ref.B, ue)


def scatter_gauss(mesh: Mesh, integrand: np.ndarray) -> np.ndarray:
    """Nodal load ``int f N`` from Gauss-point values ``(n_el, gp)``."""
    ref = layout(mesh).ref
    fe = np.einsum("g,eg,gk->ek", ref.wdet, integrand, ref.N)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elements, fe)
    return out


def scatter_gauss_gradient(mesh: Mesh, vec: np.ndarray) -> np.ndarray:
    """Nodal load ``int v . grad N`` from Gauss-point vectors ``(n_el, gp, 2)``."""
    ref = layout(mesh).ref
    fe = np.einsum("g,egd,gdk->ek", ref.wdet, vec, ref.dN)
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elements, fe)
    return out


def integrate_gauss(mesh: Mesh, integrand: np.ndarray) -> np.ndarray:
    """Per-element integrals of Gauss-point values ``(n_el, gp)``."""
    ref = layout(mesh).ref
    return integrand @ ref.wdet
