"""Closed-form fundamental solutions and importance-sampling primitives.

Conventions used throughout:

* ``r_vec = y - x`` and ``r = |r_vec|``.
* ``green(d, x, y)`` is the free-space fundamental solution of the
  Laplacian, ``-(1/2pi) log r`` in 2D and ``1/(4 pi r)`` in 3D.
* ``grad_green(d, x, y)`` differentiates with respect to the *first*
  argument: ``(y - x) / (|dB| r^d)`` where ``|dB|`` is the surface area
  of the unit (d-1)-sphere.  Swapping the arguments differentiates at
  the other point (the function is antisymmetric under the swap).
* ``hessian_s`` is only the trace-free part S of the distributional
  Hessian; the Dirac part is handled analytically by the globally
  shifted projection integrand and never evaluated at runtime.

All operations accept arrays with a trailing axis of length d and
broadcast over leading axes.
"""

from __future__ import annotations

import numpy as np


class KernelSingularity(ValueError):
    """Raised when a kernel is evaluated at (or too close to) r = 0."""


def surface_area_unit_sphere(d: int) -> float:
    """|dB|: 2*pi for d=2, 4*pi for d=3."""
    if d == 2:
        return 2.0 * np.pi
    if d == 3:
        return 4.0 * np.pi
    raise ValueError(f"dimension must be 2 or 3, got {d}")


def _r_vec_r(x, y, eps):
    r_vec = np.asarray(y, float) - np.asarray(x, float)
    r = np.linalg.norm(r_vec, axis=-1)
    if np.any(r <= eps):
        raise KernelSingularity("singular evaluation")
    return r_vec, r


def green(d: int, x, y, eps: float = 0.0):
    """Fundamental solution of the Laplacian at separation ``|y - x|``."""
    _, r = _r_vec_r(x, y, eps)
    if d == 2:
        return -np.log(r) / (2.0 * np.pi)
    return 1.0 / (surface_area_unit_sphere(d) * r)


def grad_green(d: int, x, y, eps: float = 0.0):
    """Gradient of G with respect to x: (y - x) / (|dB| r^d)."""
    r_vec, r = _r_vec_r(x, y, eps)
    return r_vec / (surface_area_unit_sphere(d) * r[..., None] ** d)


def dgdn(d: int, x, y, n, eps: float = 0.0):
    """Normal derivative n . grad_green(d, x, y).

    The differentiated argument is x; pass (x, y) swapped to
    differentiate at y instead.
    """
    return np.sum(np.asarray(n, float) * grad_green(d, x, y, eps), axis=-1)


def hessian_s(d: int, x, y, eps: float = 0.0):
    """Trace-free Hessian part S = (d r r^T - r^2 I) / (|dB| r^{d+2})."""
    r_vec, r = _r_vec_r(x, y, eps)
    outer = r_vec[..., :, None] * r_vec[..., None, :]
    eye = np.eye(d)
    return (d * outer - (r**2)[..., None, None] * eye) / (
        surface_area_unit_sphere(d) * (r**(d + 2))[..., None, None]
    )


def apply_s_over_pv(d: int, r_vec, radius, delta_u):
    """(S(x,y) / P_V(y|x)) . delta_u for the 1/r^{d-1} radial-ball PDF.

    With P_V = 1/(|dB| R r^{d-1}) the ratio collapses to
    (R / r) * (d (rhat . delta_u) rhat - delta_u), which is the form
    evaluated here (numerically safe for small r as long as delta_u is
    Lipschitz).  ``r_vec`` has shape [..., d], ``delta_u`` likewise.
    """
    r = np.linalg.norm(r_vec, axis=-1)
    r = np.where(r == 0.0, np.finfo(float).tiny, r)
    rhat = r_vec / r[..., None]
    proj = np.sum(rhat * delta_u, axis=-1)
    return (radius / r)[..., None] * (d * proj[..., None] * rhat - delta_u)


def heat_kernel(d: int, x, s, y, tau):
    """Free-space heat kernel Z(x, s; y, tau) with Heaviside time cutoff."""
    r_vec = np.asarray(y, float) - np.asarray(x, float)
    r2 = np.sum(r_vec * r_vec, axis=-1)
    t = np.asarray(s, float) - np.asarray(tau, float)
    out = np.zeros(np.broadcast(r2, t).shape)
    pos = t > 0.0
    tp = np.where(pos, t, 1.0)
    val = (4.0 * np.pi * tp) ** (-d / 2.0) * np.exp(-r2 / (4.0 * tp))
    return np.where(pos, val, out)


def heat_kernel_dn_y(d: int, x, s, y, tau, n):
    """Normal derivative of Z at y: -(n . (y - x)) / (2 t') * Z."""
    r_vec = np.asarray(y, float) - np.asarray(x, float)
    t = np.asarray(s, float) - np.asarray(tau, float)
    z = heat_kernel(d, x, s, y, tau)
    pos = t > 0.0
    tp = np.where(pos, t, 1.0)
    c = np.sum(np.asarray(n, float) * r_vec, axis=-1)
    return np.where(pos, -c / (2.0 * tp) * z, 0.0)


def sample_gamma_half_d(d: int, rng: np.random.Generator, size=None):
    """Gamma(d/2, scale 1) samples: -log(alpha), plus xi^2/2 in 3D."""
    alpha = 1.0 - rng.random(size)  # in (0, 1]
    g = -np.log(alpha)
    if d == 3:
        xi = rng.standard_normal(size)
        g = g + 0.5 * xi * xi
    elif d != 2:
        raise ValueError(f"dimension must be 2 or 3, got {d}")
    return g


def sample_unit_directions(d: int, rng: np.random.Generator, n: int) -> np.ndarray:
    """n directions uniform on the unit (d-1)-sphere, shape [n, d]."""
    if d == 2:
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    v = rng.standard_normal((n, d))
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    # resample-free guard: zero-norm draws have probability zero
    norm = np.where(norm == 0.0, 1.0, norm)
    return v / norm


def sample_heat_initial(d: int, x, s: float, rng: np.random.Generator, n: int = 1):
    """Initial-condition points for the heat estimator; importance ratio 1.

    Draws y = x + sqrt(4 s gamma_{d/2}) * omega so that Z / P_I = 1
    exactly (and E[|y - x|^2] = 2 d s).  Returns (y[n, d], 1.0).
    """
    if s <= 0.0:
        raise ValueError("heat initial sampling requires s > 0")
    g = sample_gamma_half_d(d, rng, n)
    omega = sample_unit_directions(d, rng, n)
    y = np.asarray(x, float) + np.sqrt(4.0 * s * g)[:, None] * omega
    return y, 1.0


def sample_radial_ball(d: int, x, radius: float, rng: np.random.Generator, n: int = 1):
    """Points in the radius-R ball around x with PDF goes like 1/r^{d-1}.

    r ~ Uniform(0, R] and a uniform direction give
    pdf(y) = 1 / (|dB| R r^{d-1}).  Returns (y[n, d], pdf[n]).
    """
    if radius <= 0.0:
        raise ValueError("degenerate ball radius")
    r = radius * (1.0 - rng.random(n))  # (0, R], excludes exact coincidence
    omega = sample_unit_directions(d, rng, n)
    y = np.asarray(x, float) + r[:, None] * omega
    pdf = 1.0 / (surface_area_unit_sphere(d) * radius * r ** (d - 1))
    return y, pdf
