"""Overhang-angle detection on a Helmholtz-filtered material indicator.

The material indicator is smoothed by ``-a L^2 lap(psi) + psi = chi`` with
zero-flux walls. Along the material boundary the gradient of ``1 - psi``
follows the outward normal, and a surface overhangs when that normal lies
inside the downward cone spanned by the two threshold vectors. Both inner
products are then positive, so the product of their ramps is nonzero only on
overhanging surfaces.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from . import fem
from .mesh import Mesh


@dataclass(frozen=True)
class OverhangParams:
    a: float = 5e-4
    length: float = 25.0
    theta0: float = 45.0
    eps_s: float = 1e-4
    build_direction: tuple = (0.0, 1.0)

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("diffusion coefficient a must be positive")
        if not self.length > 0:
            raise ValueError("representative length must be positive")
        if not 0.0 < self.theta0 < 90.0:
            raise ValueError("threshold angle must lie in (0, 90) degrees")
        if not self.eps_s >= 0:
            raise ValueError("ramp smoothing must be nonnegative")

    @property
    def scale(self) -> float:
        """``sqrt(a) * L``, the filter transition length."""
        return float(np.sqrt(self.a) * self.length)


def ramp_smooth(s, eps_s: float):
    """``(s + sqrt(s^2 + eps_s)) / 2``; the exact ramp when ``eps_s == 0``."""
    s = np.asarray(s, dtype=float)
    return 0.5 * (s + np.sqrt(s * s + eps_s))


def ramp_derivative(s, eps_s: float):
    s = np.asarray(s, dtype=float)
    if eps_s == 0:
        return np.where(s > 0, 1.0, 0.0)
    return 0.5 * (1.0 + s / np.sqrt(s * s + eps_s))


def threshold_vectors(theta0: float, dim: int = 2, build_direction=None) -> list[np.ndarray]:
    """Unit vectors bounding the downward cone of overhanging normals.

    In 2D with building along ``+y`` these are ``(-cos, -sin)`` and
    ``(cos, -sin)``. Other axis-aligned build directions rotate the pair. In
    3D the build axis is ``+z`` and the second pair lies in the y-z plane.
    """
    if not 0.0 < theta0 < 90.0:
        raise ValueError("threshold angle must lie in (0, 90) degrees")
    c, s = np.cos(np.radians(theta0)), np.sin(np.radians(theta0))
    if dim == 2:
        b = np.array([0.0, 1.0] if build_direction is None else build_direction, dtype=float)
        b = b / np.linalg.norm(b)
        perp = np.array([b[1], -b[0]])
        return [-c * perp - s * b, c * perp - s * b]
    if dim == 3:
        return [
            np.array([-c, 0.0, -s]),
            np.array([c, 0.0, -s]),
            np.array([0.0, -c, -s]),
            np.array([0.0, c, -s]),
        ]
    raise ValueError("dimension must be 2 or 3")


# --------------------------------------------------------------------------- filter

_FILTERS: "weakref.WeakKeyDictionary[Mesh, dict]" = weakref.WeakKeyDictionary()


def _filter_operator(mesh: Mesh, a: float, length: float) -> fem.Factorized:
    cache = _FILTERS.setdefault(mesh, {})
    key = (float(a), float(length))
    if key not in cache:
        system = fem.assemble_scalar(mesh, diffusivity=a * length**2, mass_coeff=1.0)
        cache[key] = fem.Factorized(system)
    return cache[key]


def helmholtz_filter(mesh: Mesh, chi, a: float, length: float) -> np.ndarray:
    """Solve the filter equation over the whole grid with zero-flux walls.

    ``chi`` may be nodal (interpolated source) or elemental (piecewise constant).
    """
    if not (a > 0 and length > 0):
        raise ValueError("a and L must be positive")
    op = _filter_operator(mesh, a, length)
    return op.solve(_source(mesh, chi))


def _source(mesh: Mesh, chi) -> np.ndarray:
    ref = fem.layout(mesh).ref
    chi = np.asarray(chi, dtype=float)
    b = np.zeros(mesh.n_nodes)
    if chi.shape[0] == mesh.n_elements:
        np.add.at(b, mesh.elements, chi[:, None] * ref.load[None, :])
    elif chi.shape[0] == mesh.n_nodes:
        np.add.at(b, mesh.elements, chi[mesh.elements] @ ref.mass)
    else:
        raise ValueError("chi must be a nodal or element field")
    return b


# --------------------------------------------------------------------------- constraint


def _products(grad: np.ndarray, params: OverhangParams, eps_s: float):
    d1, d2 = threshold_vectors(params.theta0, 2, params.build_direction)
    s1 = params.scale * grad @ d1
    s2 = params.scale * grad @ d2
    return d1, d2, s1, s2


def overhang_integrand(grad, params: OverhangParams, eps_s: float | None = None) -> np.ndarray:
    """``R(sqrt(a) L g.d1) R(sqrt(a) L g.d2)`` for gradient vectors ``g``.

    ``g`` must point from material toward void (the outward normal sense),
    e.g. ``(0, -1)`` under a horizontal overhang when building along ``+y``.
    """
    eps = params.eps_s if eps_s is None else eps_s
    _, _, s1, s2 = _products(np.asarray(grad, dtype=float), params, eps)
    return ramp_smooth(s1, eps) * ramp_smooth(s2, eps)


def outward_gradient(mesh: Mesh, psi) -> np.ndarray:
    """Gauss-point gradient of ``1 - psi`` (points out of the material)."""
    return -fem.gauss_gradients(mesh, psi)


def overhang_field(mesh: Mesh, psi, params: OverhangParams, eps_s: float | None = None) -> np.ndarray:
    """Integrand at the Gauss points, shape ``(n_el, 4)``."""
    return overhang_integrand(outward_gradient(mesh, psi), params, eps_s)


def overhang_constraint(mesh: Mesh, psi, params: OverhangParams, eps_s: float | None = None) -> float:
    integrand = overhang_field(mesh, psi, params, eps_s)
    return float(fem.integrate_gauss(mesh, integrand).sum())


def overhang_adjoint(mesh: Mesh, psi, params: OverhangParams) -> np.ndarray:
    """Adjoint filter variable; the constraint's derivative field is its negative.

    Solves the filter operator against minus the weak derivative of the
    constraint with respect to ``psi``, so that ``dG/dchi_e`` equals the
    element integral of ``-psi_adj``.
    """
    eps = params.eps_s
    g = outward_gradient(mesh, psi)
    d1, d2, s1, s2 = _products(g, params, eps)
    r1, r2 = ramp_smooth(s1, eps), ramp_smooth(s2, eps)
    h1, h2 = ramp_derivative(s1, eps), ramp_derivative(s2, eps)
    vec = params.scale * ((h1 * r2)[..., None] * d1 + (r1 * h2)[..., None] * d2)
    # d/dpsi of g = -grad(psi) flips the sign of the test-gradient load
    dG_dpsi = -fem.scatter_gauss_gradient(mesh, vec)
    op = _filter_operator(mesh, params.a, params.length)
    return -op.solve(dG_dpsi)


def overhang_topo_derivative(psi_adj) -> np.ndarray:
    return -np.asarray(psi_adj)


def element_integrals(mesh: Mesh, nodal) -> np.ndarray:
    """``int_e f dOmega`` of a bilinear nodal field, per element."""
    return np.asarray(nodal)[mesh.elements].mean(axis=1) * mesh.element_area


def detected_area(mesh: Mesh, psi, params: OverhangParams, fraction: float = 0.1, eps_s: float = 0.0) -> float:
    """Area of elements whose mean integrand exceeds ``fraction`` of the peak."""
    f = overhang_field(mesh, psi, params, eps_s).mean(axis=1)
    peak = f.max()
    if peak <= 0:
        return 0.0
    return float(np.count_nonzero(f > fraction * peak) * mesh.element_area)
