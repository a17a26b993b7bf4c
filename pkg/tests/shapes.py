"""Rasterized test geometries shared by several test modules."""
import numpy as np

from amtopo.mesh import build_grid


def boxes_indicator(mesh, boxes):
    """Element indicator of a union of axis-aligned boxes (x0, x1, y0, y1)."""
    c = mesh.centroids()
    chi = np.zeros(mesh.n_elements)
    for x0, x1, y0, y1 in boxes:
        chi[(c[:, 0] > x0) & (c[:, 0] < x1) & (c[:, 1] > y0) & (c[:, 1] < y1)] = 1.0
    return chi


def two_blocks(nx=200, ny=100):
    """Lower block on the base with a wider block resting on it.

    The upper block overhangs the lower one on 50 < x < 80 at y = 25.
    """
    mesh = build_grid(100.0, 50.0, nx, ny, {"base": "bottom"})
    chi = boxes_indicator(mesh, [(20, 50, 0, 25), (20, 80, 25, 40)])
    return mesh, chi


def bar_indicator(mesh, angle_deg, width, center):
    """Smooth nodal indicator of an infinite straight bar through ``center``."""
    t = np.radians(angle_deg)
    normal = np.array([-np.sin(t), np.cos(t)])
    dist = np.abs((mesh.node_coords - center) @ normal)
    h = max(mesh.hx, mesh.hy)
    return np.clip(0.5 - (dist - width / 2) / h, 0.0, 1.0)
