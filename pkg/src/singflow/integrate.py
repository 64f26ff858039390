"""Flow, tangent flow and lifted flows of a polynomial field.

The integrator is an adaptive explicit Runge-Kutta method of order 8 with an
embedded 5(3) error estimate (DOP853 tableau).  Dense output between accepted
steps uses cubic Hermite interpolation, which is accurate enough for
bracketing events; event times are then polished with the flow itself.

The lifted flows are integrated as ODEs for the displacement, w' = X(x+w) - X(x),
so that error control is relative to the size of the displacement rather than
to the size of the base point.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as K
from .errors import DomainError, EscapeError, NearSingularityError, StiffnessError
from .fields import VectorFieldSpec, _check_domain

__all__ = [
    "IntegratorConfig",
    "OrbitSegment",
    "orbit",
    "flow",
    "tangent_flow",
    "lifted_flow",
    "fiber_lifted_flow",
    "LIFT_RADIUS_FRACTION",
]

# r0 for the unrescaled lifted flows, as a fraction of domain_radius
LIFT_RADIUS_FRACTION = 0.1


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = np.inf
    event_tol: float = 1e-12
    max_steps: int = 1_000_000

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol", "max_step", "event_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.event_tol > self.rel_tol:
            raise ValueError("event_tol must not exceed rel_tol")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")

    def tightened(self, factor: float) -> "IntegratorConfig":
        return IntegratorConfig(self.rel_tol / factor, self.abs_tol / factor, self.max_step,
                                min(self.event_tol, self.rel_tol / factor), self.max_steps)


DEFAULT_CONFIG = IntegratorConfig()


def hermite(ts: np.ndarray, ys: np.ndarray, fs: np.ndarray, t) -> np.ndarray:
    """Cubic Hermite interpolation of recorded steps (ts increasing)."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    tt = np.atleast_1d(t)
    if tt.min() < ts[0] - 1e-12 * max(1.0, abs(ts[0])) or tt.max() > ts[-1] + 1e-12 * max(1.0, abs(ts[-1])):
        raise ValueError("dense output requested outside the integrated span")
    if ts.size == 1:
        out = np.repeat(ys[:1], tt.size, axis=0)
        return out[0] if scalar else out
    i = np.clip(np.searchsorted(ts, tt, side="right") - 1, 0, ts.size - 2)
    h = ts[i + 1] - ts[i]
    s = ((tt - ts[i]) / h)[:, None]
    h = h[:, None]
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    out = h00 * ys[i] + h10 * h * fs[i] + h01 * ys[i + 1] + h11 * h * fs[i + 1]
    return out[0] if scalar else out


@dataclass(frozen=True)
class OrbitSegment:
    """Accepted steps of an orbit, optionally with the fundamental matrix.

    ``times`` is increasing even for backward integrations.
    """

    times: np.ndarray
    points: np.ndarray
    fundamental: Optional[np.ndarray] = None
    velocities: Optional[np.ndarray] = None

    def __call__(self, t) -> np.ndarray:
        if self.velocities is None:
            raise ValueError("segment carries no dense output")
        return hermite(self.times, self.points, self.velocities, t)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])


def _locate_exit(ts, ys, fs, d, radius, anchor=None):
    """Bisect on the Hermite interpolant of the last step for |x(t)| = radius."""
    if ts.size < 2:
        return float(ts[-1])
    a, b = ts[-2], ts[-1]
    seg_t = ts[-2:]
    seg_y = ys[-2:, :d]
    seg_f = fs[-2:, :d]
    if seg_t[0] > seg_t[1]:
        seg_t, seg_y, seg_f = seg_t[::-1], seg_y[::-1], seg_f[::-1]
    off = np.zeros(d) if anchor is None else anchor
    lo, hi = a, b
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(off + hermite(seg_t, seg_y, seg_f, mid)) > radius:
            hi = mid
        else:
            lo = mid
    return float(0.5 * (lo + hi))


def _run(spec: VectorFieldSpec, mode: int, y0: np.ndarray, t0: float, t1: float,
         cfg: IntegratorConfig, *, m: int = 0, anchor=None, atol=None,
         sing_threshold: float = 0.0):
    d = spec.dim
    y0 = np.ascontiguousarray(y0, dtype=float)
    anc = np.zeros(d) if anchor is None else np.ascontiguousarray(anchor, dtype=float)
    if atol is None:
        atol = np.full(y0.size, cfg.abs_tol)
    else:
        atol = np.ascontiguousarray(np.broadcast_to(atol, y0.shape), dtype=float)
    status, ts, ys, fs = K.integrate(
        mode, spec.coef, spec.comp, spec.expo, d, m, anc, y0, float(t0), float(t1),
        cfg.rel_tol, atol, cfg.max_step, spec.domain_radius, sing_threshold,
        cfg.max_steps, K.A, K.B, K.C, K.E3, K.E5,
    )
    if status == K.OK:
        return ts, ys, fs
    if status == K.ESCAPED:
        te = _locate_exit(ts, ys, fs, d, spec.domain_radius, anc if mode == K.FIBER else None)
        raise EscapeError(f"orbit left the ball of radius {spec.domain_radius} at t = {te:.6g}", te)
    if status == K.NEAR_SINGULAR:
        raise NearSingularityError(
            f"|X| fell below {sing_threshold:.3g} at t = {ts[-1]:.6g}; "
            "use the blowup formulas near singularities", float(ts[-1]))
    if status == K.TOO_SMALL_STEP:
        raise StiffnessError(f"step size underflow at t = {ts[-1]:.6g}", float(ts[-1]))
    raise StiffnessError(f"step budget of {cfg.max_steps} exhausted at t = {ts[-1]:.6g}",
                         float(ts[-1]))


def _cfg(cfg):
    return DEFAULT_CONFIG if cfg is None else cfg


def orbit(spec: VectorFieldSpec, x, t: float, cfg: IntegratorConfig | None = None,
          fundamental: bool = False, sing_threshold: float = 0.0) -> OrbitSegment:
    """Integrate the orbit of x over [0, t] (or [t, 0]) keeping every accepted step."""
    cfg = _cfg(cfg)
    x = _check_domain(spec, x)
    d = spec.dim
    if fundamental:
        y0 = np.concatenate([x, np.eye(d).ravel(), [0.0]])
        ts, ys, fs = _run(spec, K.VARIATIONAL, y0, 0.0, t, cfg, m=d,
                          sing_threshold=sing_threshold)
        mats = ys[:, d:d + d * d].reshape(-1, d, d)
    else:
        ts, ys, fs = _run(spec, K.FLOW, x, 0.0, t, cfg, sing_threshold=sing_threshold)
        mats = None
    if t < 0:
        ts, ys, fs = ts[::-1], ys[::-1], fs[::-1]
        mats = None if mats is None else mats[::-1]
    pts = np.ascontiguousarray(ys[:, :d])
    vel = np.ascontiguousarray(fs[:, :d])
    return OrbitSegment(ts.copy(), pts, None if mats is None else mats.copy(), vel)


def flow(spec: VectorFieldSpec, x, t: float, cfg: IntegratorConfig | None = None) -> np.ndarray:
    x = _check_domain(spec, x)
    if t == 0:
        return x.copy()
    ts, ys, fs = _run(spec, K.FLOW, x, 0.0, t, _cfg(cfg))
    return ys[-1].copy()


def tangent_flow(spec: VectorFieldSpec, x, t: float, cfg: IntegratorConfig | None = None) -> np.ndarray:
    """D phi_t(x): fundamental matrix of the variational equation along the orbit of x."""
    x = _check_domain(spec, x)
    d = spec.dim
    if t == 0:
        return np.eye(d)
    y0 = np.concatenate([x, np.eye(d).ravel(), [0.0]])
    ts, ys, fs = _run(spec, K.VARIATIONAL, y0, 0.0, t, _cfg(cfg), m=d)
    return ys[-1, d:d + d * d].reshape(d, d).copy()


def _variational(spec, x, t, cfg, V, sing_threshold=0.0, atol=None):
    """Propagate the columns of V along the orbit of x; returns (x_t, D phi_t V, int_0^t div X)."""
    d = spec.dim
    m = V.shape[1]
    y0 = np.concatenate([x, np.ascontiguousarray(V, dtype=float).ravel(), [0.0]])
    ts, ys, fs = _run(spec, K.VARIATIONAL, y0, 0.0, t, cfg, m=m, atol=atol,
                      sing_threshold=sing_threshold)
    y = ys[-1]
    return y[:d].copy(), y[d:d + d * m].reshape(d, m).copy(), float(y[-1])


def _lifted(spec, x, w, t, cfg, scale, sing_threshold=0.0):
    """Integrate (x, w) with w' = X(x+w) - X(x); absolute tolerances scaled by `scale`."""
    d = spec.dim
    y0 = np.concatenate([x, w])
    atol = np.full(2 * d, cfg.abs_tol * scale)
    return _run(spec, K.LIFTED, y0, 0.0, t, cfg, atol=atol, sing_threshold=sing_threshold)


def _fiber(spec, anchor, z, t, cfg, scale):
    """Integrate z with z' = X(anchor + z), i.e. z(t) = phi_t(anchor + z0) - anchor."""
    atol = np.full(spec.dim, cfg.abs_tol * scale)
    return _run(spec, K.FIBER, np.asarray(z, dtype=float), 0.0, t, cfg, anchor=anchor, atol=atol)


def _lift_radius(spec: VectorFieldSpec) -> float:
    return LIFT_RADIUS_FRACTION * spec.domain_radius


def lifted_flow(spec: VectorFieldSpec, x, y, t: float, cfg: IntegratorConfig | None = None) -> np.ndarray:
    """exp^{-1}_{phi_t(x)} o phi_t o exp_x (y) = phi_t(x + y) - phi_t(x)."""
    x = _check_domain(spec, x)
    y = np.asarray(y, dtype=float)
    ny = float(np.linalg.norm(y))
    if ny >= _lift_radius(spec):
        raise DomainError(f"|y| = {ny:.3g} is not below r0 = {_lift_radius(spec):.3g}")
    if t == 0 or ny == 0.0:
        return y.copy()
    ts, ys, fs = _lifted(spec, x, y, t, _cfg(cfg), max(ny, 1e-300))
    return ys[-1, spec.dim:].copy()


def fiber_lifted_flow(spec: VectorFieldSpec, x, y, t: float, cfg: IntegratorConfig | None = None) -> np.ndarray:
    """exp^{-1}_x o phi_t o exp_x (y) = phi_t(x + y) - x, for |t| <= 1."""
    x = _check_domain(spec, x)
    y = np.asarray(y, dtype=float)
    ny = float(np.linalg.norm(y))
    if ny >= _lift_radius(spec):
        raise DomainError(f"|y| = {ny:.3g} is not below r0 = {_lift_radius(spec):.3g}")
    if abs(t) > 1:
        raise ValueError("the fiber-preserving lifted flow is only used for |t| <= 1")
    if t == 0:
        return y.copy()
    scale = max(ny, float(np.linalg.norm(spec._f(x))), 1e-300)
    ts, ys, fs = _fiber(spec, x, y, t, _cfg(cfg), scale)
    return ys[-1].copy()
