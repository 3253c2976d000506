"""Periodic tensor-product grids on the torus [-1, 1]^d.

Cells are numbered lexicographically by multi-index (C order, first axis
slowest). Face ``cell * d + axis`` separates ``cell`` (owner) from its
periodic successor along ``axis`` (neighbor); its unit normal is ``+e_axis``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DOMAIN_LO = -1.0
DOMAIN_LENGTH = 2.0

_GAUSS3_NODES = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
_GAUSS3_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0  # normalised to sum 1


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class MeshSpec:
    cells_per_axis: tuple[int, ...]

    def __post_init__(self):
        n = tuple(int(v) for v in self.cells_per_axis)
        object.__setattr__(self, "cells_per_axis", n)
        if not 1 <= len(n) <= 3:
            raise MeshError(f"dimension must be 1, 2 or 3 (got {len(n)})")
        if any(v < 2 for v in n):
            raise MeshError(f"every axis needs at least 2 cells on the torus (got {n})")

    @property
    def dim(self) -> int:
        return len(self.cells_per_axis)

    @property
    def h_axis(self) -> tuple[float, ...]:
        return tuple(DOMAIN_LENGTH / n for n in self.cells_per_axis)

    @property
    def h(self) -> float:
        return max(self.h_axis)

    @property
    def anisotropy(self) -> float:
        return min(self.h_axis) / self.h

    def refined(self, factor: int = 2) -> "MeshSpec":
        return MeshSpec(tuple(n * factor for n in self.cells_per_axis))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable cell/face topology of a periodic structured grid."""

    spec: MeshSpec
    centers: np.ndarray  # (N, d)
    volumes: np.ndarray  # (N,)
    face_owner: np.ndarray  # (F,)
    face_neighbor: np.ndarray  # (F,)
    face_axis: np.ndarray  # (F,)
    face_area: np.ndarray  # (F,)
    cell_order: np.ndarray | None = field(default=None)

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.spec.cells_per_axis

    @property
    def h(self) -> float:
        return self.spec.h

    @property
    def n_cells(self) -> int:
        return self.volumes.shape[0]

    @property
    def n_faces(self) -> int:
        return self.face_owner.shape[0]

    @property
    def face_normals(self) -> np.ndarray:
        return np.eye(self.dim)[self.face_axis]

    @property
    def total_volume(self) -> float:
        return math.fsum(self.volumes)

    def cell_faces(self, cell: int) -> np.ndarray:
        """Indices of the 2d faces bounding ``cell``."""
        return np.flatnonzero((self.face_owner == cell) | (self.face_neighbor == cell))

    def relabel(self, perm) -> "Mesh":
        """Same geometry with cell ``perm[i]`` of this mesh renumbered as cell ``i``.

        Only meant for ordering-invariance checks; restriction and projection
        assume lexicographic numbering.
        """
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.size)
        return Mesh(
            spec=self.spec,
            centers=self.centers[perm],
            volumes=self.volumes[perm],
            face_owner=inverse[self.face_owner],
            face_neighbor=inverse[self.face_neighbor],
            face_axis=self.face_axis,
            face_area=self.face_area,
            cell_order=perm if self.cell_order is None else self.cell_order[perm],
        )


def build_mesh(spec: MeshSpec | tuple[int, ...] | int) -> Mesh:
    if isinstance(spec, int):
        spec = MeshSpec((spec,))
    elif not isinstance(spec, MeshSpec):
        spec = MeshSpec(tuple(spec))
    shape = spec.cells_per_axis
    d = spec.dim
    h = np.array(spec.h_axis)
    n_cells = int(np.prod(shape))

    index = np.indices(shape).reshape(d, -1).T  # lexicographic multi-indices
    centers = DOMAIN_LO + (index + 0.5) * h
    volumes = np.full(n_cells, float(np.prod(h)))

    cells = np.arange(n_cells)
    owner = np.repeat(cells, d)
    axis = np.tile(np.arange(d), n_cells)
    shifted = index[owner].copy()
    shifted[np.arange(owner.size), axis] += 1
    shifted[np.arange(owner.size), axis] %= np.array(shape)[axis]
    neighbor = np.ravel_multi_index(shifted.T, shape)
    area = np.array([float(np.prod(np.delete(h, a))) for a in range(d)])[axis]

    for arr in (centers, volumes, owner, neighbor, axis, area):
        arr.setflags(write=False)
    return Mesh(spec, centers, volumes, owner, neighbor, axis, area)


def project(f, mesh: Mesh) -> np.ndarray:
    """Cell averages of ``f`` by 3-point tensor Gauss quadrature per axis.

    ``f`` maps points of shape ``(..., d)`` to values of shape ``(...)`` or
    ``(..., k)``; the result has shape ``(N,)`` or ``(N, k)``.
    """
    d = mesh.dim
    h = np.array(mesh.spec.h_axis)
    nodes = np.stack(np.meshgrid(*([_GAUSS3_NODES] * d), indexing="ij"), axis=-1).reshape(-1, d)
    weights = np.prod(np.stack(np.meshgrid(*([_GAUSS3_WEIGHTS] * d), indexing="ij"), axis=-1).reshape(-1, d), axis=1)
    points = mesh.centers[:, None, :] + 0.5 * h * nodes[None, :, :]
    values = np.asarray(f(points), dtype=float)
    if values.ndim == 2:
        return values @ weights
    return np.einsum("nq...,q->n...", values, weights)


def _dyadic_block_mean(values: np.ndarray, axis: int, ratio: int) -> np.ndarray:
    shape = values.shape
    blocked = values.reshape(shape[:axis] + (shape[axis] // ratio, ratio) + shape[axis + 1 :])
    if ratio & (ratio - 1) == 0:
        # pairwise halving keeps restriction of injected fields bit-exact
        while blocked.shape[axis + 1] > 1:
            lo = np.take(blocked, np.arange(0, blocked.shape[axis + 1], 2), axis=axis + 1)
            hi = np.take(blocked, np.arange(1, blocked.shape[axis + 1], 2), axis=axis + 1)
            blocked = 0.5 * (lo + hi)
        return np.take(blocked, 0, axis=axis + 1)
    return blocked.mean(axis=axis + 1)


def refinement_ratios(fine: Mesh, coarse: Mesh) -> tuple[int, ...]:
    if fine.dim != coarse.dim:
        raise MeshError("meshes have different dimensions")
    ratios = []
    for nf, nc in zip(fine.shape, coarse.shape):
        if nf % nc != 0:
            raise MeshError(f"mesh with {fine.shape} cells is not nested in {coarse.shape}")
        ratios.append(nf // nc)
    return tuple(ratios)


def restrict(fine_values, fine: Mesh, coarse: Mesh) -> np.ndarray:
    """Volume-weighted average of a fine piecewise-constant field onto a nested coarse grid."""
    ratios = refinement_ratios(fine, coarse)
    values = np.asarray(fine_values, dtype=float)
    trailing = values.shape[1:]
    grid = values.reshape(fine.shape + trailing)
    for axis, r in enumerate(ratios):
        if r > 1:
            grid = _dyadic_block_mean(grid, axis, r)
    return grid.reshape((coarse.n_cells,) + trailing)


def inject(coarse_values, coarse: Mesh, fine: Mesh) -> np.ndarray:
    """Piecewise-constant prolongation of a coarse field onto a nested fine grid."""
    ratios = refinement_ratios(fine, coarse)
    values = np.asarray(coarse_values, dtype=float)
    trailing = values.shape[1:]
    grid = values.reshape(coarse.shape + trailing)
    for axis, r in enumerate(ratios):
        grid = np.repeat(grid, r, axis=axis)
    return grid.reshape((fine.n_cells,) + trailing)
