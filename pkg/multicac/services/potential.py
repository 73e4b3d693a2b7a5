from __future__ import annotations

import logging
from typing import Union

import numpy as np
import scipy.linalg

from multicac.constants import (
    CERTIFY_DECADES,
    CERTIFY_SAMPLES,
    LOG_FLOOR,
    RESOLVENT_MAX_ITER,
    RESOLVENT_TOL,
)
from multicac.errors import CertificationError, EntropyDomainError, ResolventError, SeparationError
from multicac.models import (
    ArrayHook,
    Composition,
    EntropySpec,
    FreeEnergyDensity,
    InteractionMatrix,
    PhaseField,
    YosidaRegularization,
)
from multicac.services.simplex import tangent_basis

logger = logging.getLogger(__name__)

Scalar = Union[float, np.ndarray]


def _out(x: np.ndarray, scalar: bool) -> Scalar:
    return float(x) if scalar else x


def _extend(hook: ArrayHook, s: np.ndarray, below: float, above) -> np.ndarray:
    """Evaluate a custom hook on (0, 1]; ``below`` for s <= 0, ``above(s)`` for s > 1."""
    out = np.full(s.shape, below, dtype=float)
    inside = (s > 0) & (s <= 1)
    if inside.any():
        out[inside] = hook(s[inside])
    top = s > 1
    if top.any():
        out[top] = above(s[top])
    return out


def _at_one(hook: ArrayHook) -> float:
    return float(np.asarray(hook(np.array([1.0])))[0])


# --- Exact entropy ---
# Above s = 1, psi'' is held at psi''(1), so psi continues as its second-order
# Taylor polynomial at 1 and the extension is C^2.

def psi(e: EntropySpec, s: Scalar) -> Scalar:
    """psi normalized so psi >= 0 on [0, 1]; +inf below 0."""
    scalar = np.ndim(s) == 0
    s = np.asarray(s, dtype=float)
    if e.variant == "custom":
        top, slope, bend = _at_one(e.psi), _at_one(e.dpsi), _at_one(e.d2psi)
        out = _extend(e.psi, s, np.inf, lambda x: top + slope * (x - 1.0) + 0.5 * bend * (x - 1.0) ** 2)
        if np.any(s == 0):
            out[s == 0] = float(np.asarray(e.psi(np.array([np.finfo(float).tiny])))[0])
        return _out(out, scalar)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.clip(s, 0.0, 1.0)
        xlogx = np.where(c > 0, c * np.log(np.where(c > 0, c, 1.0)), 0.0)
        above = np.maximum(s - 1.0, 0.0)
        # min of s*ln(s) is -1/e
        out = e.theta * (xlogx + np.exp(-1.0) + above + 0.5 * above * above)
    out = np.where(s < 0, np.inf, out)
    return _out(out, scalar)


def dpsi(e: EntropySpec, s: Scalar) -> Scalar:
    scalar = np.ndim(s) == 0
    s = np.asarray(s, dtype=float)
    if e.variant == "custom":
        slope, bend = _at_one(e.dpsi), _at_one(e.d2psi)
        return _out(_extend(e.dpsi, s, -np.inf, lambda x: slope + bend * (x - 1.0)), scalar)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.minimum(s, 1.0)
        above = np.maximum(s - 1.0, 0.0)
        out = np.where(s > 0, e.theta * (np.log(np.where(s > 0, c, 1.0)) + 1.0 + above), -np.inf)
    return _out(out, scalar)


def d2psi(e: EntropySpec, s: Scalar) -> Scalar:
    scalar = np.ndim(s) == 0
    s = np.asarray(s, dtype=float)
    if e.variant == "custom":
        bend = _at_one(e.d2psi)
        return _out(_extend(e.d2psi, s, np.inf, lambda x: np.full(x.shape, bend)), scalar)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.minimum(s, 1.0)
        out = np.where(s > 0, e.theta / np.where(s > 0, c, 1.0), np.inf)
    return _out(out, scalar)


def separation_margin(e: EntropySpec, s: float) -> float:
    """psi'(s - 2s^2) - psi'(2s^2); for the logarithm this is theta*ln(1/(2s) - 1)."""
    if not 0 < s < 0.5:
        raise ValueError(f"separation margin is defined for 0 < s < 1/2, got {s!r}")
    return float(dpsi(e, s - 2 * s * s) - dpsi(e, 2 * s * s))


def certify_entropy(e: EntropySpec) -> None:
    """Sampled checks that a custom entropy belongs to the admissible class.

    Raises CertificationError naming the failed condition.
    """
    with np.errstate(all="ignore"):
        s = np.linspace(1.0 / CERTIFY_SAMPLES, 1.0, CERTIFY_SAMPLES)
        curvature = d2psi(e, s)
        if np.any(~(curvature >= e.zeta_floor)):
            worst = s[np.argmin(np.where(np.isnan(curvature), -np.inf, curvature))]
            raise CertificationError("convexity", f"psi'' < {e.zeta_floor} near s = {worst:.4g}")

        points = 10.0 ** -np.array(CERTIFY_DECADES, dtype=float)
        slope = dpsi(e, points)
        if not np.all(np.isfinite(slope)) or np.any(np.diff(slope) >= 0):
            raise CertificationError("singular_slope", "psi' does not decrease without bound towards 0")

        margin = np.array([separation_margin(e, p) for p in points])
        steps = np.diff(margin)
        if not np.all(np.isfinite(margin)) or np.any(steps <= 0) or steps[-1] < 0.5 * steps[0]:
            raise CertificationError(
                "separation_divergence",
                f"margin levels off ({margin[0]:.4g} -> {margin[-1]:.4g} over s = 1e-2 .. 1e-8)",
            )


def custom_entropy(
    psi_hook: ArrayHook,
    dpsi_hook: ArrayHook,
    d2psi_hook: ArrayHook,
    zeta_floor: float,
    theta: float = 1.0,
    certify: bool = True,
) -> EntropySpec:
    e = EntropySpec(
        theta=theta, variant="custom", psi=psi_hook, dpsi=dpsi_hook, d2psi=d2psi_hook, zeta_floor=zeta_floor
    )
    if certify:
        certify_entropy(e)
    return e


# --- Yosida regularization ---

def _resolvent_log(theta: float, eps: float, s: np.ndarray) -> np.ndarray:
    """Solve r + eps*theta*(ln r + 1) = s in x = ln r (safeguarded Newton)."""
    et = eps * theta
    r = np.empty_like(s)
    upper = s >= 1.0 + et
    # psi'(r) = theta*r above r = 1
    r[upper] = s[upper] / (1.0 + et)
    inner = ~upper
    if not inner.any():
        return r

    si = s[inner]
    lo = np.minimum((si - 1.0) / et - 1.0, 0.0)
    hi = np.zeros_like(si)
    x = hi.copy()
    tol = RESOLVENT_TOL * np.maximum(1.0, np.abs(si))
    g = np.exp(x) + et * (x + 1.0) - si
    for _ in range(RESOLVENT_MAX_ITER):
        done = (np.abs(g) < tol) | (hi - lo <= 4e-16 * np.maximum(1.0, np.abs(x)))
        if done.all():
            break
        neg = g < 0
        lo = np.where(neg, x, lo)
        hi = np.where(neg, hi, x)
        ex = np.exp(x)
        trial = x - g / (ex + et)
        outside = (trial <= lo) | (trial >= hi)
        x = np.where(done, x, np.where(outside, 0.5 * (lo + hi), trial))
        g = np.exp(x) + et * (x + 1.0) - si
    else:
        raise ResolventError("resolvent did not converge", float(np.max(np.abs(g))))
    # one Newton polish brings the residual to rounding level
    x = x - g / (np.exp(x) + et)
    r[inner] = np.exp(x)
    return r


def _resolvent_custom(e: EntropySpec, eps: float, s: np.ndarray) -> np.ndarray:
    top, bend = float(dpsi(e, 1.0)), float(d2psi(e, 1.0))
    r = np.empty_like(s)
    upper = s >= 1.0 + eps * top
    # psi'(r) = top + bend*(r - 1) above r = 1
    r[upper] = (s[upper] - eps * top + eps * bend) / (1.0 + eps * bend)
    inner = ~upper
    if not inner.any():
        return r

    si = s[inner]

    def g_of(x):
        return x + eps * dpsi(e, x) - si

    lo = np.full_like(si, 0.5)
    for _ in range(1100):
        g_lo = g_of(lo)
        pending = g_lo >= 0
        if not pending.any():
            break
        lo = np.where(pending, 0.5 * lo, lo)
    hi = np.ones_like(si)
    x = hi.copy()
    tol = RESOLVENT_TOL * np.maximum(1.0, np.abs(si))
    g = g_of(x)
    for _ in range(RESOLVENT_MAX_ITER):
        done = (np.abs(g) < tol) | (hi - lo <= 4e-16 * np.maximum(1.0, x))
        if done.all():
            break
        neg = g < 0
        lo = np.where(neg, x, lo)
        hi = np.where(neg, hi, x)
        trial = x - g / (1.0 + eps * d2psi(e, x))
        outside = (trial <= lo) | (trial >= hi) | ~np.isfinite(trial)
        x = np.where(done, x, np.where(outside, 0.5 * (lo + hi), trial))
        g = g_of(x)
    else:
        raise ResolventError("resolvent did not converge", float(np.max(np.abs(g))))
    r[inner] = x
    return r


def resolvent(y: YosidaRegularization, s: Scalar) -> Scalar:
    """J_eps(s): the unique r > 0 with r + eps*psi'(r) = s."""
    if not y.epsilon > 0:
        raise ValueError("the resolvent needs epsilon > 0")
    scalar = np.ndim(s) == 0
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if not np.all(np.isfinite(s)):
        raise EntropyDomainError("resolvent argument must be finite")
    if y.base.variant == "logarithmic":
        r = _resolvent_log(y.base.theta, y.epsilon, s)
    else:
        r = _resolvent_custom(y.base, y.epsilon, s)
    return float(r[0]) if scalar else r


def yosida_derivative(y: YosidaRegularization, s: Scalar) -> Scalar:
    """psi'_eps(s) = (s - J_eps(s)) / eps."""
    scalar = np.ndim(s) == 0
    s_arr = np.asarray(s, dtype=float)
    out = (s_arr - resolvent(y, s_arr)) / y.epsilon
    return _out(out, scalar)


def yosida_second_derivative(y: YosidaRegularization, s: Scalar) -> Scalar:
    scalar = np.ndim(s) == 0
    j = resolvent(y, np.asarray(s, dtype=float))
    with np.errstate(divide="ignore"):
        # 1/(1/psi'' + eps) stays finite when J underflows to 0
        out = 1.0 / (1.0 / d2psi(y.base, j) + y.epsilon)
    return _out(out, scalar)


def regularized_entropy(y: YosidaRegularization, s: Scalar) -> Scalar:
    """psi_eps(s) = eps/2 * A_eps(s)^2 + psi(J_eps(s))."""
    scalar = np.ndim(s) == 0
    s_arr = np.asarray(s, dtype=float)
    j = resolvent(y, s_arr)
    a = (s_arr - j) / y.epsilon
    return _out(0.5 * y.epsilon * a * a + psi(y.base, j), scalar)


def coercive_offset(y: YosidaRegularization, n_phases: int, eps0: float, r_max: float = 2.0,
                    n_grid: int = 40_001) -> float:
    """K such that sum_i psi_eps(r_i) >= N/(4 eps0) |r|^2 - K on the box |r_i| <= r_max."""
    c = n_phases / (4.0 * eps0)
    s = np.linspace(-r_max, r_max, n_grid)
    gap = c * s * s - regularized_entropy(y, s)
    slope = 2.0 * c * r_max + np.max(np.abs(yosida_derivative(y, s)))
    per_coordinate = float(np.max(gap)) + slope * (s[1] - s[0])
    return n_phases * max(per_coordinate, 0.0)


# --- Free energy density ---

def _components(u) -> tuple[np.ndarray, bool]:
    if isinstance(u, Composition):
        return u.values, True
    if isinstance(u, PhaseField):
        return u.data, False
    return np.asarray(u, dtype=float), False


def phi(f: FreeEnergyDensity, data: np.ndarray) -> np.ndarray:
    """psi' (or its regularization) applied to every concentration."""
    reg = f.regularization
    if reg is not None:
        return yosida_derivative(reg, data)
    low = data <= LOG_FLOOR
    if low.any():
        where = tuple(int(i) for i in np.argwhere(low)[0])
        raise SeparationError(
            f"component {where[0]} at cell {where[1:]} fell to {data[where]:.3e} "
            f"(floor {LOG_FLOOR:g}) with the unregularized entropy",
            component=where[0],
            index=where[1:],
        )
    return dpsi(f.base, data)


def _interaction_action(a: np.ndarray, data: np.ndarray) -> np.ndarray:
    return np.tensordot(a, data, axes=(1, 0))


def entropy_gradient(f: FreeEnergyDensity, u) -> np.ndarray:
    """phi(u) - A u, the chemical potential without capillarity."""
    data, _ = _components(u)
    if data.shape[0] != f.n_phases:
        raise ValueError(f"expected {f.n_phases} components, got {data.shape[0]}")
    return phi(f, data) - _interaction_action(f.interaction.entries, data)


def bulk_density(f: FreeEnergyDensity, u) -> np.ndarray:
    """Psi(u) = sum_i psi(u_i) - 1/2 u^T A u, one value per point."""
    data, _ = _components(u)
    reg = f.regularization
    if reg is not None:
        mixing = regularized_entropy(reg, data)
    else:
        mixing = psi(f.base, data)
    quad = np.einsum("i...,i...->...", data, _interaction_action(f.interaction.entries, data))
    out = np.sum(mixing, axis=0) - 0.5 * quad
    if not np.all(np.isfinite(out)):
        raise EntropyDomainError("free energy is infinite: a concentration left [0, 1]")
    return out


def coercivity_constant(f: FreeEnergyDensity, eps0: float) -> float:
    return f.n_phases / (4.0 * eps0) - 0.5 * f.interaction.lambda_max


def curvature(f: FreeEnergyDensity, s: Scalar) -> Scalar:
    reg = f.regularization
    if reg is not None:
        return yosida_second_derivative(reg, s)
    return d2psi(f.base, s)


def tangent_hessian(f: FreeEnergyDensity, m: Composition) -> np.ndarray:
    """Eigenvalues of the Hessian of Psi at m restricted to the tangent space."""
    h = np.diag(np.asarray(curvature(f, m.values))) - f.interaction.entries
    q = tangent_basis(m.n_phases)
    return np.linalg.eigvalsh(q.T @ h @ q)


def critical_temperature(interaction: InteractionMatrix, m: Composition) -> float:
    """theta below which the uniform mixture m is spinodally unstable (logarithmic entropy)."""
    q = tangent_basis(m.n_phases)
    a = q.T @ interaction.entries @ q
    d = q.T @ np.diag(1.0 / m.values) @ q
    return float(scipy.linalg.eigh(a, d, eigvals_only=True)[-1])


def is_spinodal(f: FreeEnergyDensity, m: Composition) -> bool:
    return bool(tangent_hessian(f, m)[0] < 0)
