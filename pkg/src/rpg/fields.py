"""Shared plumbing for evaluating vector fields over parameter space.

A "field" here is any callable mapping a parameter point to a vector of the
same dimension (the gradient field, or the metric factor field u).  Field
callables are expected to be batch-capable — given a (B, n) stack of row
points they return a (B, n) stack — because every finite-difference sweep and
probe sweep in the package evaluates many points in one call.  ``eval_points``
falls back to a row loop for callables that only understand single points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteField


def default_fd_step(theta: np.ndarray) -> float:
    """Central-difference step scaled to the point: 1e-4 * (1 + ||theta||_inf)."""
    norm = float(np.max(np.abs(theta))) if theta.size else 0.0
    return 1e-4 * (1.0 + norm)


def eval_points(fn, pts: np.ndarray) -> np.ndarray:
    """Evaluate a field at a (B, n) stack of points, tolerating scalar-only fns."""
    pts = np.asarray(pts, dtype=np.float64)
    try:
        out = np.asarray(fn(pts), dtype=np.float64)
        if out.shape == pts.shape:
            return out
    except Exception:
        pass
    return np.stack([np.asarray(fn(p), dtype=np.float64) for p in pts])


def require_finite(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NonFiniteField(f"{what} evaluation returned non-finite values")
    return values


@dataclass(frozen=True)
class FieldEvaluator:
    """The two maps that define the regularized gradient field.

    grad_fn: theta -> gradient of the objective (ascent convention)
    u_fn:    theta -> metric factor u(theta)
    Both must be deterministic for fixed inputs (sampling noise frozen by
    seed) and ideally batch-capable.
    """

    grad_fn: object
    u_fn: object
    n: int

    def gradients(self, pts: np.ndarray) -> np.ndarray:
        return require_finite(eval_points(self.grad_fn, pts), "gradient field")

    def factors(self, pts: np.ndarray) -> np.ndarray:
        return require_finite(eval_points(self.u_fn, pts), "metric factor field")


@dataclass(frozen=True)
class ProbeConfig:
    """Hutchinson probe settings: probe count, FD step (None = auto), seed."""

    probe_count: int = 64
    fd_step: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.probe_count < 1:
            raise ValueError(f"probe_count must be >= 1, got {self.probe_count}")
        if self.fd_step is not None and not self.fd_step > 0:
            raise ValueError(f"fd_step must be positive, got {self.fd_step}")

    def step_at(self, theta: np.ndarray) -> float:
        return self.fd_step if self.fd_step is not None else default_fd_step(theta)
