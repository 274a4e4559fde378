"""
Double-null grid and field-state containers.

The computational domain is a rectangle [u_min, u_max] x [v_min, v_max]
discretized uniformly. Grid point (i, j) carries the seven primary unknowns
of the spherically symmetric Einstein-scalar system in double-null gauge:

    r           area radius
    log_omega   log Omega, half the log of the conformal factor Omega^2
    phi         scalar field
    nu          partial_u r
    lam         partial_v r
    z           partial_u phi
    w           partial_v phi

Each point also carries a mask byte: UNSET (never computed), ACTIVE
(valid data), or EXCISED (inside the excision region, fields are NaN).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNSET = np.uint8(0)
ACTIVE = np.uint8(1)
EXCISED = np.uint8(2)

FIELD_NAMES = ("r", "log_omega", "phi", "nu", "lam", "z", "w")


class ConfigurationError(ValueError):
    """Raised for invalid grids, initial-data parameters, or run configs."""


@dataclass(frozen=True)
class DoubleNullGrid:
    """Uniform rectangular grid in the (u, v) plane.

    Point (i, j) sits at u = u_min + i*du, v = v_min + j*dv with
    0 <= i < n_u and 0 <= j < n_v. refinement_level counts how many
    times refine() has been applied to some base grid.
    """

    u_min: float
    u_max: float
    v_min: float
    v_max: float
    n_u: int
    n_v: int
    refinement_level: int = 0

    @property
    def du(self) -> float:
        return (self.u_max - self.u_min) / (self.n_u - 1)

    @property
    def dv(self) -> float:
        return (self.v_max - self.v_min) / (self.n_v - 1)

    @property
    def shape(self) -> tuple:
        return (self.n_u, self.n_v)

    def u_of(self, i):
        return self.u_min + np.asarray(i) * self.du

    def v_of(self, j):
        return self.v_min + np.asarray(j) * self.dv

    def u_coords(self) -> np.ndarray:
        return self.u_min + np.arange(self.n_u) * self.du

    def v_coords(self) -> np.ndarray:
        return self.v_min + np.arange(self.n_v) * self.dv

    def index_of(self, u: float, v: float) -> tuple:
        """Nearest grid indices to a coordinate pair."""
        i = int(round((u - self.u_min) / self.du))
        j = int(round((v - self.v_min) / self.dv))
        if not (0 <= i < self.n_u and 0 <= j < self.n_v):
            raise ConfigurationError(f"point (u={u}, v={v}) outside grid")
        return i, j


def build_grid(u_min: float, u_max: float, v_min: float, v_max: float,
               n_u: int, n_v: int) -> DoubleNullGrid:
    """Validate extents and construct a grid.

    Both extents must be positive and both point counts at least 2.
    """
    if not (np.isfinite(u_min) and np.isfinite(u_max)
            and np.isfinite(v_min) and np.isfinite(v_max)):
        raise ConfigurationError("grid extents must be finite")
    if u_max <= u_min:
        raise ConfigurationError(f"u_max={u_max} must exceed u_min={u_min}")
    if v_max <= v_min:
        raise ConfigurationError(f"v_max={v_max} must exceed v_min={v_min}")
    if n_u < 2 or n_v < 2:
        raise ConfigurationError(f"need n_u, n_v >= 2, got {n_u}, {n_v}")
    return DoubleNullGrid(float(u_min), float(u_max), float(v_min),
                          float(v_max), int(n_u), int(n_v))


def refine(grid: DoubleNullGrid) -> DoubleNullGrid:
    """Halve the spacing: n -> 2n - 1 in each direction.

    Coarse point (i, j) coincides bitwise with fine point (2i, 2j) because
    both coordinate maps evaluate u_min + k*(extent/(n-1)) with the fine
    numerator 2i/(2(n-1)) reducing exactly.
    """
    return DoubleNullGrid(grid.u_min, grid.u_max, grid.v_min, grid.v_max,
                          2 * grid.n_u - 1, 2 * grid.n_v - 1,
                          grid.refinement_level + 1)


@dataclass(frozen=True)
class Cell:
    """The diamond whose north-east corner is grid point (i, j).

    Requires i >= 1 and j >= 1; the other three corners are west (i-1, j),
    south (i, j-1), and south-west (i-1, j-1).
    """

    i: int
    j: int

    @property
    def ne_corner(self) -> tuple:
        return (self.i, self.j)

    @property
    def w_corner(self) -> tuple:
        return (self.i - 1, self.j)

    @property
    def s_corner(self) -> tuple:
        return (self.i, self.j - 1)

    @property
    def sw_corner(self) -> tuple:
        return (self.i - 1, self.j - 1)

    def updatable(self, mask: np.ndarray) -> bool:
        """A cell may be updated when all three past corners are ACTIVE
        and the north-east corner has not been touched yet."""
        return bool(mask[self.w_corner] == ACTIVE
                    and mask[self.s_corner] == ACTIVE
                    and mask[self.sw_corner] == ACTIVE
                    and mask[self.ne_corner] == UNSET)


@dataclass
class FieldState:
    """Plane storage for the seven unknowns plus the mask.

    Field arrays are float64 of shape grid.shape, NaN outside ACTIVE
    points. The mask is uint8 with the UNSET/ACTIVE/EXCISED codes.
    """

    r: np.ndarray
    log_omega: np.ndarray
    phi: np.ndarray
    nu: np.ndarray
    lam: np.ndarray
    z: np.ndarray
    w: np.ndarray
    mask: np.ndarray = field(repr=False)

    @classmethod
    def unset(cls, grid: DoubleNullGrid) -> "FieldState":
        planes = [np.full(grid.shape, np.nan) for _ in FIELD_NAMES]
        mask = np.zeros(grid.shape, dtype=np.uint8)
        return cls(*planes, mask=mask)

    def copy(self) -> "FieldState":
        return FieldState(*(getattr(self, name).copy() for name in FIELD_NAMES),
                          mask=self.mask.copy())

    def field_tuple(self) -> tuple:
        return tuple(getattr(self, name) for name in FIELD_NAMES)

    @property
    def omega_sq(self) -> np.ndarray:
        return np.exp(2.0 * self.log_omega)

    @property
    def active(self) -> np.ndarray:
        return self.mask == ACTIVE


def default_r_floor(state: FieldState) -> float:
    """Excision floor used when a config does not set one: a small fraction
    of the corner radius."""
    return 1e-3 * float(state.r[0, 0])
