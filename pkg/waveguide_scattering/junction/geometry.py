"""
Rectilinear branching waveguides: a junction made of axis-aligned rectangles with
semi-infinite arms attached flush to its edges, each arm truncated at t = R_a.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .. import _defaults
from ..model_problem.blending import ArmCoefficientProfile
from ..modes.cross_section import BoundaryKind, CrossSectionSpec

logger = logging.getLogger(__name__)


class Edge(str, Enum):
    PLUS_X = "+x"
    MINUS_X = "-x"
    PLUS_Y = "+y"
    MINUS_Y = "-y"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip())
        except ValueError:
            raise ValueError(f"edge must be one of +x, -x, +y, -y, not {value!r}") from None

    @property
    def outward(self):
        return {"+x": (1, 0), "-x": (-1, 0), "+y": (0, 1), "-y": (0, -1)}[self.value]

    @property
    def along_x(self):
        # arms on +-y edges have their cross-section running along x
        return self in (Edge.PLUS_Y, Edge.MINUS_Y)


@dataclass(frozen=True)
class Rectangle:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"Rectangle ({self.x0}, {self.y0})-({self.x1}, {self.y1}) is empty")

    def contains(self, x, y):
        return (self.x0 < x) & (x < self.x1) & (self.y0 < y) & (y < self.y1)


@dataclass(frozen=True, eq=False)
class ArmAttachment:
    section: CrossSectionSpec
    edge: Edge
    edge_position: float
    start: float
    truncation: float
    profile: ArmCoefficientProfile | None = None
    blending_T: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "edge", Edge.parse(self.edge))
        if not self.truncation > 0:
            raise ValueError(f"truncation of arm {self.arm_id} must be positive, got {self.truncation}")
        if self.profile is not None:
            if self.blending_T is None or self.blending_T < 1:
                raise ValueError(f"Arm {self.arm_id} has a coefficient profile but no blending T >= 1")
            if not self.truncation > self.blending_T + 3:
                raise ValueError(
                    f"truncation {self.truncation} of arm {self.arm_id} must lie beyond T + 3 = {self.blending_T + 3}"
                )

    @property
    def arm_id(self):
        return self.section.arm_id

    @property
    def width(self):
        return self.section.width

    def cell_centers(self, h):
        """
        Physical (x, y) of arm cells, as two (n_y, n_t) arrays indexed [m, j].
        """
        n_y = self.section.grid_points(h)
        n_t = int(round(self.truncation / h))
        s = self.start + (np.arange(n_y) + 0.5) * h
        t = (np.arange(n_t) + 0.5) * h
        ox, oy = self.edge.outward
        S, Tt = np.meshgrid(s, t, indexing="ij")
        if self.edge.along_x:
            return S, self.edge_position + oy * Tt
        return self.edge_position + ox * Tt, S


@dataclass(frozen=True, eq=False)
class JunctionGeometry:
    rectangles: tuple
    arms: tuple
    wall_kind: BoundaryKind = BoundaryKind.NEUMANN
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "wall_kind", BoundaryKind.parse(self.wall_kind))
        object.__setattr__(self, "rectangles", tuple(self.rectangles))
        object.__setattr__(self, "arms", tuple(self.arms))
        if not self.rectangles:
            raise ValueError("A junction needs at least one rectangle")
        if not self.arms:
            raise ValueError("A junction needs at least one arm")
        ids = [a.arm_id for a in self.arms]
        if len(set(ids)) != len(ids):
            raise ValueError(f"Arm ids must be unique, got {ids}")
        for arm in self.arms:
            self._check_flush(arm)

    def inside(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        return np.logical_or.reduce([r.contains(x, y) for r in self.rectangles])

    def _check_flush(self, arm):
        eps = 1e-6 * arm.width
        s = arm.start + np.linspace(0.02, 0.98, 33) * arm.width
        ox, oy = arm.edge.outward
        e = np.full_like(s, arm.edge_position)
        x, y = (s, e) if arm.edge.along_x else (e, s)
        inner = self.inside(x - ox * eps, y - oy * eps)
        outer = self.inside(x + ox * eps, y + oy * eps)
        if not inner.all() or outer.any():
            raise ValueError(f"Arm {arm.arm_id} does not attach flush to the junction edge {arm.edge.value}")

    def arm(self, arm_id):
        for a in self.arms:
            if a.arm_id == arm_id:
                return a
        raise KeyError(f"No arm with id {arm_id}")

    def default_step(self, divisions=None):
        return min(a.width for a in self.arms) / (divisions or _defaults.DIVISIONS)

    def validate_mesh(self, h):
        """
        h must divide every rectangle coordinate, arm offset, width and truncation.
        """
        lengths = [("width", a.width) for a in self.arms] + [("truncation", a.truncation) for a in self.arms]
        lengths += [("start", a.start) for a in self.arms] + [("edge_position", a.edge_position) for a in self.arms]
        for r in self.rectangles:
            lengths += [("rectangle x0", r.x0), ("rectangle y0", r.y0), ("rectangle x1", r.x1), ("rectangle y1", r.y1)]
        for name, value in lengths:
            n = value / h
            if abs(n - round(n)) > 1e-7 * max(1.0, abs(n)):
                raise ValueError(f"Mesh step {h} does not divide {name} = {value}")
        for arm in self.arms:
            if arm.profile is not None and arm.truncation - 6 * h <= arm.blending_T + 3:
                raise ValueError(f"Last columns of arm {arm.arm_id} lie inside the blending window")

    def with_truncation(self, truncation):
        arms = tuple(replace(a, truncation=truncation) for a in self.arms)
        return replace(self, arms=arms)


def _arm(arm_id, width, kind, edge, edge_position, start, truncation):
    return ArmAttachment(CrossSectionSpec(arm_id, width, kind), Edge.parse(edge), edge_position, start, truncation)


def straight_duct(width=1.0, length=None, kind=BoundaryKind.NEUMANN, truncation=None):
    """
    Two collinear arms joined by a short piece of the same duct.
    """
    length = length if length is not None else width / 4
    truncation = truncation or _defaults.TRUNCATION_LENGTH * width
    arms = (
        _arm(0, width, kind, "-x", 0.0, 0.0, truncation),
        _arm(1, width, kind, "+x", length, 0.0, truncation),
    )
    return JunctionGeometry((Rectangle(0.0, 0.0, length, width),), arms, kind, "straight_duct")


def t_junction(width=1.0, kind=BoundaryKind.NEUMANN, truncation=None):
    """
    Three arms on a square: two collinear arms along x and a stem going down.
    Symmetric under x -> width - x.
    """
    truncation = truncation or _defaults.TRUNCATION_LENGTH * width
    arms = (
        _arm(0, width, kind, "-x", 0.0, 0.0, truncation),
        _arm(1, width, kind, "+x", width, 0.0, truncation),
        _arm(2, width, kind, "-y", 0.0, 0.0, truncation),
    )
    return JunctionGeometry((Rectangle(0.0, 0.0, width, width),), arms, kind, "t_junction")


def cross_junction(width=1.0, kind=BoundaryKind.DIRICHLET, truncation=None):
    """
    Two crossing strips of equal width: a square with an arm on every side.
    """
    truncation = truncation or _defaults.TRUNCATION_LENGTH * width
    arms = (
        _arm(0, width, kind, "-x", 0.0, 0.0, truncation),
        _arm(1, width, kind, "+x", width, 0.0, truncation),
        _arm(2, width, kind, "-y", 0.0, 0.0, truncation),
        _arm(3, width, kind, "+y", width, 0.0, truncation),
    )
    return JunctionGeometry((Rectangle(0.0, 0.0, width, width),), arms, kind, "cross")


def bulge_duct(width=1.0, bulge_height=0.5, bulge_length=1.0, kind=BoundaryKind.NEUMANN, truncation=None):
    """
    A straight duct widened symmetrically by bulge_height on both walls over bulge_length.
    """
    truncation = truncation or _defaults.TRUNCATION_LENGTH * width
    arms = (
        _arm(0, width, kind, "-x", 0.0, 0.0, truncation),
        _arm(1, width, kind, "+x", bulge_length, 0.0, truncation),
    )
    rect = Rectangle(0.0, -bulge_height, bulge_length, width + bulge_height)
    return JunctionGeometry((rect,), arms, kind, "bulge_duct")


PRESETS = {
    "straight_duct": straight_duct,
    "t_junction": t_junction,
    "cross": cross_junction,
    "bulge_duct": bulge_duct,
}
