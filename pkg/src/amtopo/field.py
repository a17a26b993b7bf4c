"""Level-set fields, the smoothed Heaviside projection and ersatz interpolation."""
from __future__ import annotations

import numpy as np

from .mesh import Mesh

#: Defaults for the projection widths and the void stiffness ratio.
XI = 0.9
W = 0.5
C_ERSATZ = 1e-3


def heaviside_smoothed(phi, w: float):
    """Quintic smoothed Heaviside; 0 below ``-w``, 1 above ``w``, C1 at ``+-w``."""
    if w <= 0:
        raise ValueError("transition half-width must be positive")
    t = np.clip(np.asarray(phi, dtype=float) / w, -1.0, 1.0)
    return 0.5 + t * (15.0 / 16.0 - t**2 * (5.0 / 8.0 - 3.0 / 16.0 * t**2))


def heaviside_derivative(phi, w: float):
    """d/dphi of :func:`heaviside_smoothed`."""
    t = np.asarray(phi, dtype=float) / w
    inside = np.abs(t) <= 1.0
    d = (15.0 / 16.0) * (1.0 - t**2) ** 2 / w
    return np.where(inside, d, 0.0)


def characteristic(phi, xi: float = XI):
    return heaviside_smoothed(phi, xi)


def ersatz_factor(phi, w: float = W, c: float = C_ERSATZ):
    if not 0.0 < c < 1.0:
        raise ValueError("ersatz floor ratio must lie in (0, 1)")
    return (1.0 - c) * heaviside_smoothed(phi, w) + c


def to_elements(mesh: Mesh, nodal) -> np.ndarray:
    """Average a nodal field to element centroids."""
    return np.asarray(nodal)[mesh.elements].mean(axis=1)


def to_nodes(mesh: Mesh, elemental) -> np.ndarray:
    """Area-weighted average of an element field onto the nodes."""
    v = np.asarray(elemental, dtype=float)
    acc = np.zeros(mesh.n_nodes)
    cnt = np.zeros(mesh.n_nodes)
    for k in range(4):
        np.add.at(acc, mesh.elements[:, k], v)
        np.add.at(cnt, mesh.elements[:, k], 1.0)
    return acc / cnt


def initialize_levelset(mesh: Mesh, mode: str = "full", holes=None) -> np.ndarray:
    """Initial level-set values.

    ``full`` fills the design domain with material. ``pattern`` starts from
    full material and carves void circles; ``holes`` is a sequence of
    ``(x, y, radius)`` and defaults to a regular 6 x 3 lattice.
    """
    phi = np.ones(mesh.n_nodes)
    if mode == "full":
        return phi
    if mode != "pattern":
        raise ValueError(f"unknown initialization mode {mode!r}")
    if holes is None:
        r = 0.12 * min(mesh.width / 6, mesh.height / 3) * 2
        holes = [
            ((i + 0.5) * mesh.width / 6, (j + 0.5) * mesh.height / 3, r)
            for i in range(6)
            for j in range(3)
        ]
    xy = mesh.node_coords
    for x0, y0, r in holes:
        inside = (xy[:, 0] - x0) ** 2 + (xy[:, 1] - y0) ** 2 <= r**2
        phi[inside] = -1.0
    return phi


def clamp(phi) -> np.ndarray:
    return np.clip(phi, -1.0, 1.0)
