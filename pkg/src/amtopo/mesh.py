"""Structured quadrilateral grids and their partition into build layers."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

SIDES = ("bottom", "top", "left", "right")


class MeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform grid of 4-node bilinear quadrilaterals on ``[0, width] x [0, height]``.

    Nodes are numbered row by row starting at the bottom-left corner, so node
    ``(i, j)`` (column ``i``, row ``j``) has index ``j * (nx + 1) + i``.
    Element connectivity is counter-clockwise starting at the lower-left node.
    """

    width: float
    height: float
    nx: int
    ny: int
    node_coords: np.ndarray
    elements: np.ndarray
    boundary_tags: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    @property
    def hx(self) -> float:
        return self.width / self.nx

    @property
    def hy(self) -> float:
        return self.height / self.ny

    @property
    def element_area(self) -> float:
        return self.hx * self.hy

    @property
    def area(self) -> float:
        return self.width * self.height

    def centroids(self) -> np.ndarray:
        return self.node_coords[self.elements].mean(axis=1)

    def side_nodes(self, side: str) -> np.ndarray:
        """Node indices along one edge of the rectangle, ordered by coordinate."""
        nx, ny = self.nx, self.ny
        grid = np.arange(self.n_nodes).reshape(ny + 1, nx + 1)
        if side == "bottom":
            return grid[0, :].copy()
        if side == "top":
            return grid[-1, :].copy()
        if side == "left":
            return grid[:, 0].copy()
        if side == "right":
            return grid[:, -1].copy()
        raise MeshError(f"unknown side {side!r}; expected one of {SIDES}")

    def boundary_nodes(self) -> np.ndarray:
        return np.unique(np.concatenate([self.side_nodes(s) for s in SIDES]))

    def nodes_of(self, tag: str) -> np.ndarray:
        try:
            return self.boundary_tags[tag]["nodes"]
        except KeyError:
            raise MeshError(f"mesh has no boundary tag {tag!r}") from None

    def edges_of(self, tag: str) -> np.ndarray:
        try:
            return self.boundary_tags[tag]["edges"]
        except KeyError:
            raise MeshError(f"mesh has no boundary tag {tag!r}") from None

    def node_grid(self, values: np.ndarray) -> np.ndarray:
        """Reshape a nodal array to ``(ny + 1, nx + 1)``."""
        return np.asarray(values).reshape(self.ny + 1, self.nx + 1)

    def element_grid(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values).reshape(self.ny, self.nx)


def _resolve_tag(mesh_nodes: np.ndarray, coords: np.ndarray, spec, width, height):
    """Turn a tag spec into (nodes, edges).

    ``spec`` is either a side name or a dict ``{"side": ..., "range": (lo, hi)}``
    restricting the tag to a coordinate interval along that side.
    """
    if isinstance(spec, str):
        side, lo, hi = spec, -np.inf, np.inf
    else:
        side = spec["side"]
        lo, hi = spec.get("range", (-np.inf, np.inf))
    if side not in SIDES:
        raise MeshError(f"tag references nonexistent boundary {side!r}")
    along = 0 if side in ("bottom", "top") else 1
    t = coords[mesh_nodes, along]
    eps = 1e-9 * max(width, height)
    keep = (t >= lo - eps) & (t <= hi + eps)
    nodes = mesh_nodes[keep]
    # consecutive node pairs that both lie inside the range form the edges
    pairs = np.stack([mesh_nodes[:-1], mesh_nodes[1:]], axis=1)
    in_range = keep[:-1] & keep[1:]
    edges = pairs[in_range]
    if nodes.size == 0:
        raise MeshError(f"tag {spec!r} selects no boundary nodes")
    return nodes, edges


def build_grid(width: float, height: float, nx: int, ny: int, tags: dict | None = None) -> Mesh:
    """Build a uniform structured grid over ``[0, width] x [0, height]``.

    ``tags`` maps a tag name to a side name (``"bottom"``, ``"top"``, ``"left"``,
    ``"right"``) or to ``{"side": name, "range": (lo, hi)}``.
    """
    if not (width > 0 and height > 0):
        raise MeshError(f"domain dimensions must be positive, got {width} x {height}")
    if int(nx) != nx or int(ny) != ny or nx < 1 or ny < 1:
        raise MeshError(f"element counts must be positive integers, got nx={nx}, ny={ny}")
    nx, ny = int(nx), int(ny)
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    coords = np.column_stack([X.ravel(), Y.ravel()])

    grid = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    n0 = grid[:-1, :-1].ravel()
    n1 = grid[:-1, 1:].ravel()
    n2 = grid[1:, 1:].ravel()
    n3 = grid[1:, :-1].ravel()
    elements = np.stack([n0, n1, n2, n3], axis=1)

    mesh = Mesh(width, height, nx, ny, coords, elements, {})
    for name, spec in (tags or {}).items():
        side = spec if isinstance(spec, str) else spec.get("side")
        if side not in SIDES:
            raise MeshError(f"tag {name!r} references nonexistent boundary {side!r}")
        nodes, edges = _resolve_tag(mesh.side_nodes(side), coords, spec, width, height)
        mesh.boundary_tags[name] = {"side": side, "nodes": nodes, "edges": edges}
    return mesh


# --------------------------------------------------------------------------- layers

BUILD_DIRECTIONS = {
    "bottom": np.array([0.0, 1.0]),
    "top": np.array([0.0, -1.0]),
    "left": np.array([1.0, 0.0]),
    "right": np.array([-1.0, 0.0]),
}


@dataclass(frozen=True, eq=False)
class LayerPartition:
    layer_count: int
    layer_of_element: np.ndarray  # 1-based
    build_direction: np.ndarray

    def layer(self, k: int) -> np.ndarray:
        """Elements of layer ``k`` alone (the slab added at step ``k``)."""
        self._check(k)
        return np.flatnonzero(self.layer_of_element == k)

    def _check(self, step: int) -> None:
        if not 1 <= step <= self.layer_count:
            raise MeshError(f"step {step} outside 1..{self.layer_count}")


def partition_layers(mesh: Mesh, direction, count: int) -> LayerPartition:
    """Assign every element to one of ``count`` slabs stacked along ``direction``.

    The slab index is ``ceil(s / extent * count)`` clamped to ``[1, count]``,
    where ``s`` is the centroid's distance from the base plate.
    """
    count = int(count)
    if count < 1:
        raise MeshError("layer count must be at least 1")
    d = np.asarray(direction, dtype=float)
    if d.shape != (2,) or not np.isclose(np.linalg.norm(d), 1.0):
        raise MeshError(f"build direction must be a 2D unit vector, got {direction}")
    if np.count_nonzero(np.abs(d) > 1e-12) != 1:
        raise MeshError("build direction must be axis-aligned")
    axis = int(np.argmax(np.abs(d)))
    extent = mesh.width if axis == 0 else mesh.height
    c = mesh.centroids()[:, axis]
    s = c if d[axis] > 0 else extent - c
    rows = mesh.nx if axis == 0 else mesh.ny
    if count > rows:
        warnings.warn(f"{count} layers exceed the {rows} element rows along the build direction")
    layer = np.clip(np.ceil(s / extent * count - 1e-9), 1, count).astype(int)
    present = np.bincount(layer, minlength=count + 1)[1:]
    if np.any(present == 0):
        empty = np.flatnonzero(present == 0) + 1
        raise MeshError(f"layers {empty.tolist()} contain no elements")
    return LayerPartition(count, layer, d / np.linalg.norm(d))


def active_elements(partition: LayerPartition, step: int) -> np.ndarray:
    """Elements of layers ``1..step``."""
    partition._check(step)
    return np.flatnonzero(partition.layer_of_element <= step)


def added_elements(partition: LayerPartition, step: int) -> np.ndarray:
    return partition.layer(step)


def base_side(direction) -> str:
    d = np.asarray(direction, dtype=float)
    for side, v in BUILD_DIRECTIONS.items():
        if np.allclose(v, d):
            return side
    raise MeshError(f"no base side for build direction {direction}")
