"""Geometric audits of a design's zero contour.

These measure printability directly on the level-set boundary, independent
of the penalty terms the optimizer sees.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import map_coordinates
from skimage.measure import find_contours

from .mesh import Mesh


def zero_contours(mesh: Mesh, phi) -> list[np.ndarray]:
    """Polylines of ``phi = 0`` in physical coordinates ``(x, y)``."""
    grid = mesh.node_grid(phi)
    out = []
    for c in find_contours(grid, 0.0):
        xy = np.column_stack([c[:, 1] * mesh.hx, c[:, 0] * mesh.hy])
        out.append(xy)
    return out


def _outward_normals(mesh: Mesh, phi, points: np.ndarray) -> np.ndarray:
    grid = mesh.node_grid(phi)
    gy, gx = np.gradient(grid, mesh.hy, mesh.hx)
    coords = np.vstack([points[:, 1] / mesh.hy, points[:, 0] / mesh.hx])
    nx = map_coordinates(gx, coords, order=1, mode="nearest")
    ny = map_coordinates(gy, coords, order=1, mode="nearest")
    n = -np.column_stack([nx, ny])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.maximum(norm, 1e-300)


def _segments(mesh: Mesh, phi):
    mids, vecs = [], []
    for c in zero_contours(mesh, phi):
        if len(c) < 2:
            continue
        mids.append(0.5 * (c[1:] + c[:-1]))
        vecs.append(c[1:] - c[:-1])
    if not mids:
        return np.empty((0, 2)), np.empty((0, 2))
    return np.vstack(mids), np.vstack(vecs)


def overhang_violation(mesh: Mesh, phi, build_direction=(0.0, 1.0), theta0: float = 45.0, slack: float = 2.0) -> float:
    """Fraction of boundary length that overhangs by more than allowed.

    A boundary segment violates when its outward normal points downward and
    the surface makes less than ``theta0 - slack`` degrees with the base plate.
    """
    mids, vecs = _segments(mesh, phi)
    if len(mids) == 0:
        return 0.0
    lengths = np.linalg.norm(vecs, axis=1)
    # outward normal from the segment direction, oriented by the phi gradient
    t = vecs / np.maximum(lengths[:, None], 1e-300)
    n = np.column_stack([t[:, 1], -t[:, 0]])
    ng = _outward_normals(mesh, phi, mids)
    n *= np.sign(np.sum(n * ng, axis=1, keepdims=True) + 1e-300)
    down = -(n @ np.asarray(build_direction, dtype=float))
    limit = np.cos(np.radians(theta0 - slack))
    bad = down > limit
    total = lengths.sum()
    return float(lengths[bad].sum() / total) if total > 0 else 0.0


def downward_minima(mesh: Mesh, phi, build_direction=(0.0, 1.0), prominence: float | None = None) -> int:
    """Count lowest points of material features that hang over void.

    A contour vertex counts when its height along the build direction is a
    local minimum (by at least ``prominence``, one element by default) and
    the material lies above it.
    """
    b = np.asarray(build_direction, dtype=float)
    base = _base_offset(mesh, b)
    prom = prominence if prominence is not None else max(mesh.hx, mesh.hy)
    count = 0
    for c in zero_contours(mesh, phi):
        if len(c) < 3:
            continue
        h = c @ b + base
        closed = np.allclose(c[0], c[-1])
        pts, hh = (c[:-1], h[:-1]) if closed else (c, h)
        n = len(hh)
        normals = _outward_normals(mesh, phi, pts)
        for i in range(n):
            if closed:
                left = np.concatenate([hh[i + 1:], hh[:i]])[::-1]
                right = np.concatenate([hh[i + 1:], hh[:i]])
            else:
                left = hh[:i][::-1]
                right = hh[i + 1:]
            if not (_rises(left, hh[i], prom) and _rises(right, hh[i], prom)):
                continue
            if normals[i] @ b < 0 and hh[i] > prom:
                # skip ties along flat bottoms: keep the first vertex of a plateau
                if i > 0 and abs(hh[i - 1] - hh[i]) < 1e-12:
                    continue
                count += 1
    return count


def _rises(seq: np.ndarray, h0: float, prom: float) -> bool:
    """True if walking along ``seq`` climbs ``prom`` above ``h0`` before dipping below it."""
    for h in seq:
        if h < h0 - 1e-12:
            return False
        if h >= h0 + prom:
            return True
    return False


def _base_offset(mesh: Mesh, b: np.ndarray) -> float:
    """Offset so that heights start at 0 on the base plate."""
    corners = np.array([[0, 0], [mesh.width, 0], [0, mesh.height], [mesh.width, mesh.height]])
    return -float((corners @ b).min())
