from __future__ import annotations

import numpy as np
import scipy.linalg

from multicac.errors import DimensionError
from multicac.models import Composition, MobilityMatrix, TangentVector


def project_tangent(data: np.ndarray, axis: int = 0) -> np.ndarray:
    """P applied pointwise along ``axis``: subtract the component average."""
    data = np.asarray(data, dtype=float)
    return data - data.mean(axis=axis, keepdims=True)


def apply_projector(v) -> TangentVector:
    return TangentVector(project_tangent(np.asarray(v, dtype=float)))


def mobility_action(m: MobilityMatrix, data: np.ndarray) -> np.ndarray:
    """alpha applied along axis 0 of an (N, ...) array."""
    data = np.asarray(data, dtype=float)
    if data.shape[0] != m.n_phases:
        raise DimensionError(f"mobility is {m.n_phases}x{m.n_phases}, vector has {data.shape[0]} components")
    if m.mode == "structured_M1":
        # alpha = xi*N*P
        return m.tangent_eigenvalue * project_tangent(data)
    return np.tensordot(m.entries, data, axes=(1, 0))


def apply_mobility(m: MobilityMatrix, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise DimensionError(f"expected an N-vector, got shape {v.shape}")
    return mobility_action(m, v)


def quadratic_form_lower_bound(m: MobilityMatrix, c, zeta) -> tuple[float, float]:
    """zeta^T (diag(c) alpha) zeta together with gamma_N * min(c_i alpha_ii) * |zeta|^2.

    gamma_N = xi*N/(N-1); the minimum runs over indices with c_i*alpha_ii > 0
    and the bound is 0 when there are none.
    """
    if m.mode != "structured_M1":
        raise ValueError("the quadratic-form bound is stated for structured mobility")
    c = np.asarray(c, dtype=float)
    z = zeta.values if isinstance(zeta, TangentVector) else np.asarray(zeta, dtype=float)
    if c.shape != (m.n_phases,) or z.shape != (m.n_phases,):
        raise DimensionError("weights and tangent vector must have N entries")
    if np.any(c < 0):
        raise ValueError(f"weights must be nonnegative, got {c.tolist()}")

    alpha = m.matrix
    value = float(z @ (c[:, None] * alpha) @ z)
    weighted = c * np.diag(alpha)
    active = weighted[weighted > 0]
    if active.size == 0:
        return value, 0.0
    gamma_n = m.xi * m.n_phases / (m.n_phases - 1)
    bound = float(gamma_n * active.min() * (z @ z))
    return value, bound


def project_to_simplex(v) -> Composition:
    """Euclidean projection onto the Gibbs simplex (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    if np.all(v >= 0) and abs(v.sum() - 1.0) <= 1e-15 * v.size:
        return Composition(v.copy())
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    out = np.maximum(v - tau, 0.0)
    # push the rounding residue of the sum into the largest entry
    out[np.argmax(out)] += 1.0 - out.sum()
    return Composition(out)


def tangent_basis(n_phases: int) -> np.ndarray:
    """Orthonormal N x (N-1) basis of the tangent space."""
    return scipy.linalg.null_space(np.ones((1, n_phases)))


def mobility_eigenvalues(m: MobilityMatrix) -> np.ndarray:
    return np.linalg.eigvalsh(m.matrix)


def tangent_coercivity(m: MobilityMatrix) -> float:
    """Smallest eigenvalue of alpha restricted to the tangent space (exact l0)."""
    q = tangent_basis(m.n_phases)
    return float(np.linalg.eigvalsh(q.T @ m.matrix @ q)[0])


def sampled_coercivity(m: MobilityMatrix, n_samples: int = 1000, seed: int = 0) -> float:
    """Empirical l0: min of eta^T alpha eta / |eta|^2 over random tangent eta."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    eta = project_tangent(rng.standard_normal((m.n_phases, n_samples)))
    num = np.einsum("is,is->s", eta, mobility_action(m, eta))
    den = np.einsum("is,is->s", eta, eta)
    return float(np.min(num / den))


def check_general_mobility(m: MobilityMatrix, n_samples: int = 1000, seed: int = 0) -> float:
    """Validate a general mobility: kernel span{1} and positive on the tangent space.

    Returns the sampled l0.
    """
    kernel = np.abs(m.matrix @ np.ones(m.n_phases)).max()
    if kernel > 1e-12 * max(1.0, np.abs(m.matrix).max()):
        raise ValueError(f"mobility must annihilate constants, |alpha 1| = {kernel:.3e}")
    l0 = sampled_coercivity(m, n_samples=n_samples, seed=seed)
    if not l0 > 0:
        raise ValueError(f"mobility is not positive on the tangent space (sampled l0 = {l0:.3e})")
    return l0
