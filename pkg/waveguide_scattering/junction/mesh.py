"""
Cell-centred mesh of a junction and its truncated arms.

Every cell is owned by the junction (0), by arm a (a + 1), or by nobody (-1).
Unknowns are the owned cells in row-major order. Two owned neighbours are
coupled when they have the same owner or when they straddle the attachment face
of an arm; every other face is a wall, except the outer face of the last arm
column, which is closed by the modal ghost column.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from ..modes.cross_section import BoundaryKind

logger = logging.getLogger(__name__)

DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))
NEUMANN_WALL = -1
DIRICHLET_WALL = -2
TRUNCATION = -3


@dataclass(frozen=True, eq=False)
class JunctionMesh:
    geometry: object
    h: float
    origin: tuple
    owner: np.ndarray = field(repr=False)
    index: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    arm_cells: tuple = field(repr=False)
    # links[d, c]: neighbour unknown in direction d, or one of the face codes
    links: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return self.owner.shape

    @property
    def n_cells(self):
        return len(self.cells)

    @property
    def centers(self):
        x = self.origin[0] + (self.cells[:, 1] + 0.5) * self.h
        y = self.origin[1] + (self.cells[:, 0] + 0.5) * self.h
        return x, y

    @property
    def cell_owner(self):
        return self.owner[self.cells[:, 0], self.cells[:, 1]]

    def face_midpoints(self, d):
        dx, dy = DIRECTIONS[d]
        x, y = self.centers
        return x + dx * self.h / 2, y + dy * self.h / 2


def _bounding_box(geometry, h):
    xs = [r.x0 for r in geometry.rectangles] + [r.x1 for r in geometry.rectangles]
    ys = [r.y0 for r in geometry.rectangles] + [r.y1 for r in geometry.rectangles]
    for arm in geometry.arms:
        cx, cy = arm.cell_centers(h)
        xs += [cx.min() - h / 2, cx.max() + h / 2]
        ys += [cy.min() - h / 2, cy.max() + h / 2]
    return min(xs), min(ys), max(xs), max(ys)


def build_mesh(geometry, h):
    geometry.validate_mesh(h)
    x0, y0, x1, y1 = _bounding_box(geometry, h)
    nx, ny = int(round((x1 - x0) / h)), int(round((y1 - y0) / h))
    xc = x0 + (np.arange(nx) + 0.5) * h
    yc = y0 + (np.arange(ny) + 0.5) * h
    X, Y = np.meshgrid(xc, yc)
    owner = np.where(geometry.inside(X, Y), 0, -1)

    arm_grid = []
    for a, arm in enumerate(geometry.arms):
        cx, cy = arm.cell_centers(h)
        ix = np.rint((cx - x0) / h - 0.5).astype(int)
        iy = np.rint((cy - y0) / h - 0.5).astype(int)
        if np.any(owner[iy, ix] != -1):
            raise ValueError(f"Arm {arm.arm_id} overlaps the junction or another arm")
        owner[iy, ix] = a + 1
        ox, oy = arm.edge.outward
        if np.any(owner[iy[:, 0] - oy, ix[:, 0] - ox] != 0):
            raise ValueError(f"Arm {arm.arm_id} does not attach to junction cells at mesh step {h}")
        arm_grid.append((iy, ix))

    active = owner >= 0
    index = np.full(owner.shape, -1)
    index[active] = np.arange(int(active.sum()))
    cells = np.argwhere(active)
    arm_cells = tuple(index[iy, ix] for iy, ix in arm_grid)

    n = len(cells)
    column = np.full(n, -1)
    for cell_ids in arm_cells:
        column[cell_ids] = np.arange(cell_ids.shape[1])[None, :]
    own = owner[cells[:, 0], cells[:, 1]]
    outward = np.array([(0, 0)] + [arm.edge.outward for arm in geometry.arms])
    last = np.array([0] + [ids.shape[1] - 1 for ids in arm_cells])
    kinds = [geometry.wall_kind] + [arm.section.boundary_kind for arm in geometry.arms]
    wall_code = np.array([DIRICHLET_WALL if kind is BoundaryKind.DIRICHLET else NEUMANN_WALL for kind in kinds])

    links = np.empty((4, n), dtype=int)
    for d, (dx, dy) in enumerate(DIRECTIONS):
        niy, nix = cells[:, 0] + dy, cells[:, 1] + dx
        inside = (niy >= 0) & (niy < ny) & (nix >= 0) & (nix < nx)
        nb_own = np.full(n, -1)
        nb_own[inside] = owner[niy[inside], nix[inside]]
        nb_idx = np.full(n, -1)
        nb_idx[inside] = index[niy[inside], nix[inside]]
        into_arm = (own == 0) & (nb_own > 0) & np.all(outward[np.maximum(nb_own, 0)] == (dx, dy), axis=1)
        out_of_arm = (own > 0) & (nb_own == 0) & np.all(outward[own] == (-dx, -dy), axis=1)
        coupled = (nb_own >= 0) & ((nb_own == own) | into_arm | out_of_arm)
        truncated = (own > 0) & (column == last[own]) & np.all(outward[own] == (dx, dy), axis=1)
        links[d] = np.where(coupled, nb_idx, np.where(truncated, TRUNCATION, wall_code[own]))

    logger.debug(f"Mesh of {geometry.name} at h={h}: {ny}x{nx} box, {n} unknown cells")
    return JunctionMesh(geometry, h, (x0, y0), owner, index, cells, arm_cells, links)
