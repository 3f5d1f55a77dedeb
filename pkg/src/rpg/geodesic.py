"""Geodesic-corrected update directions and their brute-force oracles.

The production rule adds a single quadratic-form correction to the
regularized gradient J:

    T = J + kappa * G^-1 grad_theta( q ),   q(theta) = J0^T G(theta) J0

with J0 frozen ("no-grad") while q is differentiated over theta by central
finite differences.  ``geodesic_gradient`` computes this matrix form;
``geodesic_gradient_component`` rebuilds it from dense metric partials
(the component sum over g^{dr} dg_{mn}/dtheta_r J^m J^n); and the oracles
``christoffel_fd`` / ``geodesic_ode_direction`` integrate the actual geodesic
equation so the direction can be checked against differential geometry rather
than against a second copy of the same algebra.

kappa bundles the two step hyper-parameters as zeta2/(1+zeta1); the leftover
positive scale (1+zeta1) is absorbed by the caller's learning rate, so both
forms here return T/(1+zeta1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadDimensions
from .fields import default_fd_step, eval_points, require_finite
from .linalg import dense_inverse
from .metric import MetricPoint, bilinear_form, inverse_apply, metric_matrix


@dataclass(frozen=True)
class GeodesicConfig:
    """kappa >= 0 weights the correction; fd_step None = auto-scaled."""

    kappa: float = 0.1
    fd_step: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.kappa) or self.kappa < 0:
            raise ValueError(f"kappa must be finite and >= 0, got {self.kappa}")

    def step_at(self, theta: np.ndarray) -> float:
        return self.fd_step if self.fd_step is not None else default_fd_step(theta)


@dataclass(frozen=True)
class ChristoffelTensor:
    """gamma[d, m, n] — upper index first, symmetric in the lower pair."""

    gamma: np.ndarray

    def contract(self, w: np.ndarray) -> np.ndarray:
        """gamma[d, m, n] w^m w^n."""
        return np.einsum("dmn,m,n->d", self.gamma, w, w)


def _fd_points(theta: np.ndarray, step: float) -> np.ndarray:
    """Stack of theta +- step*e_mu: rows 0..n-1 are +, rows n..2n-1 are -."""
    n = theta.size
    eye = step * np.eye(n)
    return np.concatenate([theta + eye, theta - eye], axis=0)


def _metric_partials(u_field, theta: np.ndarray, step: float) -> np.ndarray:
    """partials[r, m, n] = d g_mn / d theta_r, by central FD on dense G."""
    n = theta.size
    us = eval_points(u_field, _fd_points(theta, step))
    require_finite(us, "metric factor field")
    partials = np.empty((n, n, n))
    for r in range(n):
        g_plus = metric_matrix(MetricPoint(us[r]))
        g_minus = metric_matrix(MetricPoint(us[n + r]))
        partials[r] = (g_plus - g_minus) / (2.0 * step)
    return partials


def christoffel_fd(u_field, theta: np.ndarray, fd_step: float | None = None
                   ) -> ChristoffelTensor:
    """Christoffel symbols of G = I + u u^T from finite-difference partials.

    gamma^d_mn = 1/2 sum_r g^{dr} (d_m g_nr + d_n g_mr - d_r g_mn)
    """
    theta = np.asarray(theta, dtype=np.float64)
    n = theta.size
    if n > 8:
        raise BadDimensions(f"christoffel_fd is an oracle (n <= 8), got n={n}")
    step = fd_step if fd_step is not None else default_fd_step(theta)
    partials = _metric_partials(u_field, theta, step)
    # lowered[m, n, r] = d_m g_nr + d_n g_mr - d_r g_mn
    lowered = (partials
               + np.transpose(partials, (1, 0, 2))
               - np.moveaxis(partials, 0, 2))
    g_inv = dense_inverse(metric_matrix(MetricPoint(
        np.asarray(eval_points(u_field, theta[None])[0]))))
    gamma = 0.5 * np.einsum("dr,mnr->dmn", g_inv, lowered)
    return ChristoffelTensor(gamma=gamma)


def geodesic_gradient(u_field, theta: np.ndarray, grad_j: np.ndarray,
                      cfg: GeodesicConfig) -> np.ndarray:
    """Matrix-form update direction T = J + kappa * G^-1 grad(J^T G J).

    grad_j is frozen inside the quadratic form: only the metric's
    theta-dependence is differentiated (2n field evaluations).
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad_j = np.asarray(grad_j, dtype=np.float64)
    if not np.all(np.isfinite(grad_j)):
        raise ValueError("geodesic_gradient requires a finite input direction")
    if cfg.kappa == 0.0:
        return grad_j.copy()
    n = theta.size
    step = cfg.step_at(theta)
    us = require_finite(eval_points(u_field, _fd_points(theta, step)),
                        "metric factor field")
    q = bilinear_form(MetricPoint(us), np.broadcast_to(grad_j, us.shape),
                      np.broadcast_to(grad_j, us.shape))
    grad_q = (q[:n] - q[n:]) / (2.0 * step)
    u0 = require_finite(eval_points(u_field, theta[None])[0],
                        "metric factor field")
    return grad_j + cfg.kappa * inverse_apply(MetricPoint(u0), grad_q)


def geodesic_gradient_component(u_field, theta: np.ndarray, grad_j: np.ndarray,
                                cfg: GeodesicConfig) -> np.ndarray:
    """Component-form rebuild of the same direction from dense metric partials.

    T^d = J^d + kappa * sum_r g^{dr} sum_mn (d g_mn / d theta_r) J^m J^n,
    normalized to the same (1+zeta1) scale as the matrix form.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad_j = np.asarray(grad_j, dtype=np.float64)
    n = theta.size
    if n > 16:
        raise BadDimensions(f"component form is dense FD (n <= 16), got n={n}")
    if cfg.kappa == 0.0:
        return grad_j.copy()
    step = cfg.step_at(theta)
    partials = _metric_partials(u_field, theta, step)
    contraction = np.einsum("rmn,m,n->r", partials, grad_j, grad_j)
    u0 = require_finite(eval_points(u_field, theta[None])[0],
                        "metric factor field")
    return grad_j + cfg.kappa * inverse_apply(MetricPoint(u0), contraction)


def geodesic_ode_direction(u_field, theta: np.ndarray, tangent: np.ndarray,
                           dt: float) -> np.ndarray:
    """Tangent after one midpoint-RK2 step of the geodesic equation.

    d theta/dt = w,  d w/dt = -gamma[w, w]; starting from (theta, tangent).
    The oracle against which the closed-form directions are checked at
    small dt.
    """
    theta = np.asarray(theta, dtype=np.float64)
    tangent = np.asarray(tangent, dtype=np.float64)
    if dt == 0.0:
        return tangent.copy()
    k1 = -christoffel_fd(u_field, theta).contract(tangent)
    theta_mid = theta + 0.5 * dt * tangent
    w_mid = tangent + 0.5 * dt * k1
    k2 = -christoffel_fd(u_field, theta_mid).contract(w_mid)
    return tangent + dt * k2


def covariant_metric_residual(u_field, theta: np.ndarray,
                              fd_step: float | None = None) -> float:
    """max | d_l g_mn - gamma^r_lm g_rn - gamma^r_ln g_mr |.

    Zero for a metric-compatible connection; ties the FD Christoffel symbols
    to the derivative operator they are supposed to induce.
    """
    theta = np.asarray(theta, dtype=np.float64)
    step = fd_step if fd_step is not None else default_fd_step(theta)
    partials = _metric_partials(u_field, theta, step)
    gamma = christoffel_fd(u_field, theta, step).gamma
    g = metric_matrix(MetricPoint(np.asarray(
        eval_points(u_field, theta[None])[0])))
    covariant = (partials
                 - np.einsum("rlm,rn->lmn", gamma, g)
                 - np.einsum("rln,mr->lmn", gamma, g))
    return float(np.max(np.abs(covariant)))
