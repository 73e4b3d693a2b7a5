from __future__ import annotations

import numpy as np
import scipy.fft

from multicac.errors import SolveError
from multicac.models import Grid, PhaseField, ScalarField


def _grid_axes(data: np.ndarray, grid: Grid) -> tuple[int, ...]:
    offset = data.ndim - grid.dim
    return tuple(range(offset, data.ndim))


def laplacian_data(data: np.ndarray, grid: Grid) -> np.ndarray:
    """Cell-centered Neumann Laplacian over the trailing grid axes.

    Leading axes (components) are carried along, so a whole (N, *shape) field
    is handled in one call. Ghost cells mirror the boundary cell.
    """
    data = np.asarray(data, dtype=float)
    out = np.zeros_like(data)
    for ax, h in zip(_grid_axes(data, grid), grid.spacing):
        pad = [(0, 0)] * data.ndim
        pad[ax] = (1, 1)
        out += np.diff(np.pad(data, pad, mode="edge"), n=2, axis=ax) / (h * h)
    return out


def laplacian(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, laplacian_data(f.data, f.grid))


def spatial_mean(f: ScalarField) -> float:
    return float(np.mean(f.data))


def component_means(data: np.ndarray, grid: Grid) -> np.ndarray:
    """Per-component spatial mean of an (N, *shape) array, keepdims for broadcasting."""
    return np.mean(data, axis=_grid_axes(data, grid), keepdims=True)


def l2_norm(data: np.ndarray, grid: Grid) -> float:
    """Discrete L2 norm, sqrt(sum |v|^2 * cell volume)."""
    return float(np.sqrt(np.sum(np.square(data)) * grid.cell_volume))


def inner(a: np.ndarray, b: np.ndarray, grid: Grid) -> float:
    return float(np.sum(a * b) * grid.cell_volume)


def gradient_energy(u: PhaseField, gamma: float) -> float:
    """(gamma/2) * sum over interior faces of ((u[i+1] - u[i]) / h)^2 * cell volume."""
    grid = u.grid
    total = 0.0
    for ax, h in zip(_grid_axes(u.data, grid), grid.spacing):
        total += float(np.sum(np.square(np.diff(u.data, axis=ax) / h)))
    return 0.5 * gamma * total * grid.cell_volume


def laplacian_symbol(grid: Grid) -> np.ndarray:
    """Eigenvalues of the Neumann Laplacian in the type-II cosine basis, shape == grid.shape."""
    symbol = np.zeros(grid.shape)
    for ax, (n, h) in enumerate(zip(grid.shape, grid.spacing)):
        k = np.arange(n)
        lam = (2.0 * np.cos(np.pi * k / n) - 2.0) / (h * h)
        shape = [1] * grid.dim
        shape[ax] = n
        symbol = symbol + lam.reshape(shape)
    return symbol


def helmholtz_data(rhs: np.ndarray, grid: Grid, a: float, b: float, check: bool = True) -> np.ndarray:
    """Solve (a*I - b*Delta_h) x = rhs over the trailing grid axes by cosine diagonalization."""
    if a < 0 or b < 0:
        raise SolveError(f"need a >= 0 and b >= 0, got a={a}, b={b}")
    if a == 0 and b == 0:
        raise SolveError("a = b = 0 gives the zero operator")
    rhs = np.asarray(rhs, dtype=float)
    axes = _grid_axes(rhs, grid)
    scale = 1.0 + float(np.max(np.abs(rhs), initial=0.0))

    if a == 0:
        mean = np.mean(rhs, axis=axes)
        if np.max(np.abs(mean), initial=0.0) > 1e-10 * scale:
            raise SolveError(f"pure diffusion needs a zero-mean right-hand side, mean = {np.max(np.abs(mean)):.3e}")

    symbol = a - b * laplacian_symbol(grid)
    coeffs = scipy.fft.dctn(rhs, type=2, axes=axes, norm="ortho")
    if a == 0:
        # zero mode of the singular operator; the solution is taken mean-free
        zero = (Ellipsis,) + (0,) * grid.dim
        coeffs[zero] = 0.0
        symbol = symbol.copy()
        symbol[(0,) * grid.dim] = 1.0
    x = scipy.fft.idctn(coeffs / symbol, type=2, axes=axes, norm="ortho")

    if check:
        lap = laplacian_data(x, grid)
        residual = a * x - b * lap - rhs
        if a == 0:
            residual -= np.mean(residual, axis=axes, keepdims=True)
        size = scale + a * np.max(np.abs(x)) + b * np.max(np.abs(lap))
        worst = float(np.max(np.abs(residual)))
        if not worst < 1e-10 * size:
            raise SolveError(f"cosine solve residual {worst:.3e} exceeds tolerance")
    return x


def neumann_helmholtz_solve(rhs: ScalarField, a: float, b: float) -> ScalarField:
    return ScalarField(rhs.grid, helmholtz_data(rhs.data, rhs.grid, a, b))


def _laplacian_matrix_1d(n: int, h: float) -> np.ndarray:
    m = -2.0 * np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)
    m[0, 0] = m[-1, -1] = -1.0
    return m / (h * h)


def dense_laplacian(grid: Grid) -> np.ndarray:
    """The Neumann Laplacian as an explicit (n_cells x n_cells) matrix, C-order cells."""
    mats = [_laplacian_matrix_1d(n, h) for n, h in zip(grid.shape, grid.spacing)]
    if grid.dim == 1:
        return mats[0]
    return np.kron(mats[0], np.eye(grid.shape[1])) + np.kron(np.eye(grid.shape[0]), mats[1])
