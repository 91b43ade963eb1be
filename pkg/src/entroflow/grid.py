"""Uniform cell grids and density fields on them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid of ``n`` cells; cell i spans [x0 + i*dx, x0 + (i+1)*dx)."""

    x0: float
    dx: float
    n: int

    def __post_init__(self):
        if not self.dx > 0:
            raise ValueError(f"grid.dx > 0 violated (dx = {self.dx})")
        if int(self.n) != self.n or self.n < 3:
            raise ValueError(f"grid.n >= 3 violated (n = {self.n})")
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def spanning(cls, x0: float, x1: float, dx: float) -> "Grid1D":
        """Grid covering [x0, x1] with spacing dx (x1 - x0 must be a multiple of dx)."""
        n = round((x1 - x0) / dx)
        if abs(n * dx - (x1 - x0)) > 1e-9 * max(1.0, abs(x1 - x0)):
            raise ValueError(f"[{x0}, {x1}] is not a whole number of cells of width {dx}")
        return cls(float(x0), float(dx), int(n))

    @property
    def x1(self) -> float:
        return self.x0 + self.n * self.dx

    @property
    def edges(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.n + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.x0 + self.dx * (np.arange(self.n) + 0.5)

    def refined(self, factor: int) -> "Grid1D":
        return Grid1D(self.x0, self.dx / factor, self.n * factor)


@dataclass(frozen=True)
class DensityField:
    """Per-cell dimensionless densities on a grid.

    Cells outside the grid are taken to hold zero density.
    """

    grid: Grid1D
    rho: np.ndarray

    def __post_init__(self):
        rho = np.array(self.rho, dtype=float)
        if rho.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} cell values, got shape {rho.shape}")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def zeros(cls, grid: Grid1D) -> "DensityField":
        return cls(grid, np.zeros(grid.n))

    def with_rho(self, rho: np.ndarray) -> "DensityField":
        return DensityField(self.grid, rho)

    @property
    def dx(self) -> float:
        return self.grid.dx

    @property
    def max(self) -> float:
        return float(np.max(self.rho))

    @property
    def min(self) -> float:
        return float(np.min(self.rho))


def gauss_cell_averages(fn, grid: Grid1D, points: int = 5) -> np.ndarray:
    """Cell averages (1/dx) * int_cell fn by ``points``-point Gauss-Legendre per cell."""
    xg, wg = np.polynomial.legendre.leggauss(points)
    left = grid.edges[:-1]
    x = left[:, None] + 0.5 * grid.dx * (1.0 + xg[None, :])
    vals = np.asarray(fn(x), dtype=float)
    return 0.5 * (vals @ wg)
