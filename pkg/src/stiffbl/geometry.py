"""Structured cell-centered grids on rectangular domains (1D / 2D).

Cells are stored flat in row-major order (x fastest). Interior faces carry
the pair of cells they join; boundary faces carry their owning cell, the
axis-aligned outward normal and the face centroid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.intp]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class FaceSet:
    """Interior- and boundary-face topology with measures.

    Interior faces: arrays aligned by face index. ``left``/``right`` are flat
    cell indices with ``right`` on the positive side of ``axis``. Boundary
    faces: ``bcell`` owns the face, ``bsign`` is the outward normal sign along
    ``baxis`` and ``bcentroid`` is the face midpoint. ``dual_volume`` is the
    quadrature weight for face-gradient integrals: area x distance, with the
    first and last face of each grid line absorbing the half cell at the
    domain edge so that gradient quadratures of affine fields are exact.
    """

    left: IntArray
    right: IntArray
    axis: IntArray
    area: FloatArray
    dist: FloatArray
    dual_volume: FloatArray
    bcell: IntArray
    baxis: IntArray
    bsign: IntArray
    barea: FloatArray
    bcentroid: FloatArray

    @property
    def n_interior(self) -> int:
        return self.left.size

    @property
    def n_boundary(self) -> int:
        return self.bcell.size


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered grid over [a_0,b_0] x ... with n_k cells per axis."""

    dim: int
    lo: FloatArray
    hi: FloatArray
    counts: tuple[int, ...]
    spacing: FloatArray
    faces: FaceSet = field(repr=False)

    @property
    def n_cells(self) -> int:
        n = 1
        for c in self.counts:
            n *= c
        return n

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def total_volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def axis_centers(self, k: int) -> FloatArray:
        n = self.counts[k]
        return self.lo[k] + (np.arange(n) + 0.5) * self.spacing[k]

    def cell_centers(self) -> FloatArray:
        """Centers of all cells, shape (n_cells, dim), row-major (x fastest)."""
        if self.dim == 1:
            return self.axis_centers(0)[:, None]
        x = self.axis_centers(0)
        y = self.axis_centers(1)
        xx, yy = np.meshgrid(x, y)  # shape (ny, nx)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def interior_mask(self) -> NDArray[np.bool_]:
        """Cells with a full neighbor stencil (not adjacent to the boundary)."""
        if self.dim == 1:
            m = np.zeros(self.counts[0], dtype=bool)
            m[1:-1] = True
            return m
        nx, ny = self.counts
        m = np.zeros((ny, nx), dtype=bool)
        m[1:-1, 1:-1] = True
        return m.ravel()

    def divergence(self, interior_flux: FloatArray,
                   boundary_flux: FloatArray | None = None) -> FloatArray:
        """Net flux into each cell from oriented face fluxes.

        ``interior_flux[f]`` is the flux through face f oriented from ``left``
        to ``right`` in the sense of increasing coordinate; a positive value
        adds to the left cell and subtracts from the right one, matching the
        outward-normal convention of the two-point scheme. Boundary fluxes are
        added to their owning cell (positive = mass in). The cell sums
        telescope exactly: sum(divergence) equals the boundary total.
        """
        f = self.faces
        net = np.bincount(f.left, weights=interior_flux, minlength=self.n_cells)
        net -= np.bincount(f.right, weights=interior_flux, minlength=self.n_cells)
        if boundary_flux is not None:
            net += np.bincount(f.bcell, weights=boundary_flux, minlength=self.n_cells)
        return net

    def face_gradient(self, field_values: FloatArray) -> FloatArray:
        """Two-point gradient on interior faces: (right - left)/distance."""
        f = self.faces
        return (field_values[f.right] - field_values[f.left]) / f.dist


def discrete_gradient(field_values: FloatArray, grid: Grid) -> FloatArray:
    """Per-interior-face two-point difference quotient of a cell field."""
    values = np.asarray(field_values, dtype=float)
    if values.shape != (grid.n_cells,):
        raise ValueError(f"field has shape {values.shape}, expected ({grid.n_cells},)")
    return grid.face_gradient(values)


def _dual_volumes(area: FloatArray, dist: FloatArray,
                  line_start: NDArray[np.bool_],
                  line_end: NDArray[np.bool_]) -> FloatArray:
    return area * dist * (1.0 + 0.5 * line_start + 0.5 * line_end)


def _build_faces_1d(n: int, h: float, lo: float, hi: float) -> FaceSet:
    idx = np.arange(n - 1)
    left = idx
    right = idx + 1
    axis = np.zeros(n - 1, dtype=np.intp)
    area = np.ones(n - 1)
    dist = np.full(n - 1, h)
    dual = _dual_volumes(area, dist, idx == 0, idx == n - 2)
    bcell = np.array([0, n - 1], dtype=np.intp)
    baxis = np.zeros(2, dtype=np.intp)
    bsign = np.array([-1, 1], dtype=np.intp)
    barea = np.ones(2)
    bcentroid = np.array([[lo], [hi]])
    return FaceSet(*(map(_readonly, (left, right, axis, area, dist, dual,
                                     bcell, baxis, bsign, barea, bcentroid))))


def _build_faces_2d(counts, h, lo, hi) -> FaceSet:
    nx, ny = counts
    hx, hy = h

    def flat(ix, iy):
        return ix + nx * iy

    # axis-0 (x-direction) interior faces
    iy, ix = np.meshgrid(np.arange(ny), np.arange(nx - 1), indexing="ij")
    l0 = flat(ix.ravel(), iy.ravel())
    r0 = flat(ix.ravel() + 1, iy.ravel())
    # axis-1 (y-direction) interior faces
    iy, ix = np.meshgrid(np.arange(ny - 1), np.arange(nx), indexing="ij")
    l1 = flat(ix.ravel(), iy.ravel())
    r1 = flat(ix.ravel(), iy.ravel() + 1)

    left = np.concatenate([l0, l1])
    right = np.concatenate([r0, r1])
    axis = np.concatenate([np.zeros(l0.size, dtype=np.intp),
                           np.ones(l1.size, dtype=np.intp)])
    area = np.concatenate([np.full(l0.size, hy), np.full(l1.size, hx)])
    dist = np.concatenate([np.full(l0.size, hx), np.full(l1.size, hy)])
    ix0 = np.tile(np.arange(nx - 1), ny)          # x index of the left cell, axis-0 faces
    iy1 = np.repeat(np.arange(ny - 1), nx)        # y index of the lower cell, axis-1 faces
    line_start = np.concatenate([ix0 == 0, iy1 == 0])
    line_end = np.concatenate([ix0 == nx - 2, iy1 == ny - 2])
    dual = _dual_volumes(area, dist, line_start, line_end)

    ys = lo[1] + (np.arange(ny) + 0.5) * hy
    xs = lo[0] + (np.arange(nx) + 0.5) * hx
    # order: x-low, x-high, y-low, y-high
    bcell = np.concatenate([
        flat(np.zeros(ny, dtype=np.intp), np.arange(ny)),
        flat(np.full(ny, nx - 1, dtype=np.intp), np.arange(ny)),
        flat(np.arange(nx), np.zeros(nx, dtype=np.intp)),
        flat(np.arange(nx), np.full(nx, ny - 1, dtype=np.intp)),
    ])
    baxis = np.concatenate([np.zeros(2 * ny, dtype=np.intp), np.ones(2 * nx, dtype=np.intp)])
    bsign = np.concatenate([np.full(ny, -1), np.full(ny, 1),
                            np.full(nx, -1), np.full(nx, 1)]).astype(np.intp)
    barea = np.concatenate([np.full(2 * ny, hy), np.full(2 * nx, hx)])
    bcentroid = np.concatenate([
        np.column_stack([np.full(ny, lo[0]), ys]),
        np.column_stack([np.full(ny, hi[0]), ys]),
        np.column_stack([xs, np.full(nx, lo[1])]),
        np.column_stack([xs, np.full(nx, hi[1])]),
    ])
    return FaceSet(*(map(_readonly, (left, right, axis, area, dist, dual,
                                     bcell, baxis, bsign, barea, bcentroid))))


def build_grid(dim: int, extents, counts) -> Grid:
    """Construct a uniform grid; rejects dim not in {1, 2}, counts < 3 and
    degenerate extents."""
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    ext = np.asarray(extents, dtype=float).reshape(dim, 2)
    cnt = tuple(int(c) for c in np.atleast_1d(counts))
    if len(cnt) != dim:
        raise ValueError(f"expected {dim} cell counts, got {len(cnt)}")
    for k, c in enumerate(cnt):
        if c < 3:
            raise ValueError(f"axis {k}: need at least 3 cells, got {c}")
        if not ext[k, 1] > ext[k, 0]:
            raise ValueError(f"axis {k}: degenerate extent {ext[k].tolist()}")
    lo = _readonly(ext[:, 0].copy())
    hi = _readonly(ext[:, 1].copy())
    h = _readonly((hi - lo) / np.array(cnt, dtype=float))
    if dim == 1:
        faces = _build_faces_1d(cnt[0], float(h[0]), float(lo[0]), float(hi[0]))
    else:
        faces = _build_faces_2d(cnt, h, lo, hi)
    return Grid(dim=dim, lo=lo, hi=hi, counts=cnt, spacing=h, faces=faces)
