"""Normal bundle, linear Poincare flow and the holonomy (nonlinear Poincare) flow.

Conventions: the ambient space is R^d with exp_x(v) = x + v.  A normal vector
at a regular point x is a vector orthogonal to X(x).  "Rescaled" maps measure
normal vectors in units of |X| at their base point.

The holonomy map is computed as in the local-coordinate construction: the
perturbed point is carried along with the base orbit for the requested time
(lifted flow), then slid along its own orbit by a short time tau until it
lands on the hyperplane through phi_t(x) orthogonal to X(phi_t(x)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from . import integrate as _int
from .errors import (AmbiguousCrossingError, DomainError, EscapeError, NearSingularityError,
                     NoCrossingError, TubeEscapeError)
from .fields import VectorFieldSpec, _check_domain
from .integrate import IntegratorConfig, hermite

__all__ = [
    "SectionConfig",
    "NormalVector",
    "PoincareImage",
    "normal_project",
    "linear_poincare",
    "rescaled_linear_poincare",
    "crossing_time",
    "nonlinear_poincare",
    "rescaled_nonlinear_poincare",
    "normal_basis",
]


@dataclass(frozen=True)
class SectionConfig:
    """Radii and windows for section-based constructions.

    beta, delta, t0, rho, beta_prime are dimensionless stand-ins for the
    "small enough" constants of the holonomy lemmas; they are sweep
    parameters, not ground truth.
    """

    beta: float = 0.05
    delta: float = 0.1
    t0: float = 0.25
    rho: float = 0.1
    beta_prime: float = 0.05
    sing_threshold: float = 1e-10
    scan_steps: int = 16
    landing_radius: float = 0.1
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        for name in ("beta", "delta", "t0", "rho", "beta_prime", "landing_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.scan_steps < 8:
            raise ValueError("scan_steps must be at least 8 (sampling step <= t0/8)")

    def with_(self, **kw) -> "SectionConfig":
        return replace(self, **kw)


DEFAULT = SectionConfig()


@dataclass(frozen=True)
class NormalVector:
    base: np.ndarray
    vec: np.ndarray

    def is_normal(self, spec: VectorFieldSpec, tol: float = 1e-12) -> bool:
        X = spec._f(self.base)
        nx = np.linalg.norm(X)
        return nx > 0 and abs(self.vec @ X) <= tol * max(np.linalg.norm(self.vec), 1e-300) * nx


@dataclass(frozen=True)
class PoincareImage:
    image: NormalVector
    crossing_time: float
    requested_time: float
    ratio_bound: float


def _cfg(cfg):
    return DEFAULT if cfg is None else cfg


def _vec(u) -> np.ndarray:
    return np.asarray(u.vec if isinstance(u, NormalVector) else u, dtype=float)


def _regular(spec: VectorFieldSpec, x, cfg: SectionConfig) -> tuple[np.ndarray, np.ndarray, float]:
    x = _check_domain(spec, x)
    X = spec._f(x)
    nx = float(np.linalg.norm(X))
    if nx <= cfg.sing_threshold:
        raise NearSingularityError(
            f"|X(x)| = {nx:.3g} is below the singular threshold; use singflow.blowup", 0.0)
    return x, X, nx


def _project(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    return w - (w @ X) / (X @ X) * X


def _check_normal(u: np.ndarray, X: np.ndarray, nx: float, tol: float = 1e-8):
    nu = np.linalg.norm(u)
    if abs(u @ X) > tol * max(nu, 1e-300) * nx:
        raise ValueError("vector is not orthogonal to X at its base point")


def normal_basis(X: np.ndarray) -> np.ndarray:
    """Orthonormal basis (as columns) of the hyperplane orthogonal to X."""
    d = X.size
    n = X / np.linalg.norm(X)
    q, _ = np.linalg.qr(np.column_stack([n, np.eye(d)]))
    Q = q[:, 1:d]
    return Q - np.outer(n, n @ Q)


def normal_project(spec: VectorFieldSpec, x, w) -> NormalVector:
    """Orthogonal projection of w onto the normal space at the regular point x."""
    x = _check_domain(spec, x)
    X = spec._f(x)
    if not np.any(X):
        raise NearSingularityError("normal space is undefined at a singularity", 0.0)
    return NormalVector(x, _project(X, np.asarray(w, dtype=float)))


def _linear_images(spec, x, U, t, cfg):
    """(phi_t(x), X(phi_t x), D phi_t U) with the singular threshold enforced."""
    xt, W, _ = _int._variational(spec, x, t, cfg.integrator, U,
                                 sing_threshold=cfg.sing_threshold)
    return xt, spec._f(xt), W


def linear_poincare(spec: VectorFieldSpec, x, u, t: float, cfg: SectionConfig | None = None) -> NormalVector:
    cfg = _cfg(cfg)
    x, X, nx = _regular(spec, x, cfg)
    u = _vec(u)
    _check_normal(u, X, nx)
    if t == 0:
        return NormalVector(x, u.copy())
    xt, Xt, W = _linear_images(spec, x, u[:, None], t, cfg)
    return NormalVector(xt, _project(Xt, W[:, 0]))


def rescaled_linear_poincare(spec: VectorFieldSpec, x, u, t: float,
                             cfg: SectionConfig | None = None) -> NormalVector:
    cfg = _cfg(cfg)
    x, X, nx = _regular(spec, x, cfg)
    u = _vec(u)
    _check_normal(u, X, nx)
    if t == 0:
        return NormalVector(x, u.copy())
    xt, Xt, W = _linear_images(spec, x, u[:, None], t, cfg)
    return NormalVector(xt, nx / np.linalg.norm(Xt) * _project(Xt, W[:, 0]))


def _rescaled_linear_matrix(spec, x, U, t, cfg):
    """Rescaled linear Poincare flow applied to the columns of U, plus int div X."""
    X = spec._f(x)
    xt, W, div = _int._variational(spec, x, t, cfg.integrator, U,
                                   sing_threshold=cfg.sing_threshold)
    Xt = spec._f(xt)
    n = Xt / np.linalg.norm(Xt)
    W = W - np.outer(n, n @ W)
    return xt, np.linalg.norm(X) / np.linalg.norm(Xt) * W, div


# --- section crossings -----------------------------------------------------

def _scan(spec, anchor, z0, window, cfg, scale):
    """Dense fiber orbit z(tau) = phi_tau(anchor + z0) - anchor on [-window, window]."""
    parts = []
    for sgn in (-1.0, 1.0):
        w = window
        for _ in range(3):
            try:
                ts, ys, fs = _int._fiber(spec, anchor, z0, sgn * w, cfg.integrator, scale)
                break
            except EscapeError as exc:
                w = 0.9 * abs(exc.exit_time)
        else:
            ts, ys, fs = np.zeros(1), z0[None, :].copy(), spec._f(anchor + z0)[None, :]
        parts.append((ts, ys, fs, w))
    (tb, yb, fb, wb), (tf, yf, ff, wf) = parts
    ts = np.concatenate([tb[::-1], tf[1:]])
    ys = np.concatenate([yb[::-1], yf[1:]])
    fs = np.concatenate([fb[::-1], ff[1:]])
    return ts, ys, fs, wb, wf


def _polish(spec, anchor, n, z0, tau, cfg, scale):
    """Newton steps on g(tau) = <z(tau), n> using the flow itself."""
    tol = cfg.integrator.event_tol
    z = z0
    for _ in range(12):
        z = z0 if tau == 0 else _int._fiber(spec, anchor, z0, tau, cfg.integrator, scale)[1][-1]
        g = z @ n
        dg = spec._f(anchor + z) @ n
        if dg == 0:
            break
        step = g / dg
        tau -= step
        if abs(step) <= tol * max(1.0, abs(tau)):
            z = z0 if tau == 0 else _int._fiber(spec, anchor, z0, tau, cfg.integrator, scale)[1][-1]
            break
    return tau, z


def _land(spec, anchor, z0, cfg, scale, window, landing_radius):
    """Find the unique small tau with phi_tau(anchor + z0) on the normal hyperplane at anchor.

    Returns (tau, landing offset).  Raises NoCrossingError or AmbiguousCrossingError.
    """
    X = spec._f(anchor)
    nX = float(np.linalg.norm(X))
    n = X / nX
    z0 = np.asarray(z0, dtype=float)
    if z0 @ n == 0.0:
        return 0.0, z0.copy()
    ts, ys, fs, wb, wf = _scan(spec, anchor, z0, window, cfg, scale)
    grid = np.unique(np.concatenate([
        np.linspace(-wb, 0.0, cfg.scan_steps + 1), np.linspace(0.0, wf, cfg.scan_steps + 1)]))
    g = hermite(ts, ys, fs, grid) @ n
    roots = []
    for k in range(grid.size - 1):
        if g[k] == 0.0:
            roots.append(grid[k])
        elif g[k] * g[k + 1] < 0.0:
            a, b = grid[k], grid[k + 1]
            ends = {a: g[k], b: g[k + 1]}  # scanned signs, robust to rounding near zero
            roots.append(brentq(lambda s: ends[s] if s in ends else hermite(ts, ys, fs, s) @ n,
                                a, b, xtol=1e-15))
    if g[-1] == 0.0:
        roots.append(grid[-1])
    if not roots:
        raise NoCrossingError(
            f"no crossing of the section at {np.round(anchor, 6).tolist()} within |tau| < {window}")
    cands = [_polish(spec, anchor, n, z0, r, cfg, scale) for r in roots]
    if len(cands) > 1:
        # disc radius measured on the local time scale |X| / |DX|
        r = landing_radius * nX / max(1.0, np.linalg.norm(spec._df(anchor), 2))
        near = [c for c in cands if np.linalg.norm(c[1]) < r]
        if len(near) != 1:
            raise AmbiguousCrossingError(
                f"{len(cands)} crossings of the section within |tau| < {window}",
                [c[0] for c in cands])
        cands = near
    return cands[0]


def crossing_time(spec: VectorFieldSpec, x, y, t0: float | None = None, delta: float | None = None,
                  cfg: SectionConfig | None = None) -> float:
    """Unique t in (-t0, t0) with phi_t(y) on the normal disc of radius delta |X(x)| at x."""
    cfg = _cfg(cfg)
    t0 = cfg.t0 if t0 is None else t0
    delta = cfg.delta if delta is None else delta
    x, X, nx = _regular(spec, x, cfg)
    y = _check_domain(spec, y)
    if np.linalg.norm(y - x) > cfg.beta * nx * (1 + 1e-12):
        raise DomainError(f"d(x, y) = {np.linalg.norm(y - x):.3g} exceeds beta |X(x)| = {cfg.beta * nx:.3g}")
    tau, z = _land(spec, x, y - x, cfg, nx, t0, delta)
    if np.linalg.norm(z) >= delta * nx or abs(tau) >= t0:
        raise NoCrossingError(f"crossing at tau = {tau:.6g} lands outside the disc of radius delta |X(x)|")
    return float(tau)


# --- holonomy maps ------------------------------------------------------------

def _pieces(t: float) -> list[float]:
    n = int(math.floor(abs(t)))
    r = abs(t) - n
    out = [1.0] * n
    if r > 1e-14 or n == 0:
        out.append(r)
    return [math.copysign(p, t) for p in out if p != 0.0]


def _holonomy(spec, x, u, t, cfg):
    """Core of the nonlinear Poincare flow; returns (x_t, image, t', X(x_t))."""
    elapsed = 0.0
    t_prime = 0.0
    xk, uk = x, u
    for k, h in enumerate(_pieces(t)):
        Xk = spec._f(xk)
        nk = float(np.linalg.norm(Xk))
        if k > 0 and np.linalg.norm(uk) >= cfg.delta * nk:
            raise TubeEscapeError(
                f"|psi_s(u)| left the tube delta |X| at s = {elapsed:.6g}", elapsed)
        if np.any(uk):
            ts, ys, fs = _int._lifted(spec, xk, uk, h, cfg.integrator, nk, cfg.sing_threshold)
            x1 = ys[-1, :spec.dim].copy()
            w = ys[-1, spec.dim:].copy()
            n1 = float(np.linalg.norm(spec._f(x1)))
            tau, z = _land(spec, x1, w, cfg, n1, cfg.t0, cfg.landing_radius)
        else:
            ts, ys, fs = _int._run(spec, _int.K.FLOW, xk, 0.0, h, cfg.integrator,
                                   atol=cfg.integrator.abs_tol * nk,
                                   sing_threshold=cfg.sing_threshold)
            x1 = ys[-1].copy()
            tau, z = 0.0, np.zeros(spec.dim)
        elapsed += h
        t_prime += h + tau
        xk, uk = x1, z
    return xk, uk, t_prime, spec._f(xk)


def _ratio(t, tp):
    if t == 0:
        return 1.0
    if tp == 0 or (tp > 0) != (t > 0):
        return math.inf
    return max(t / tp, tp / t)


def nonlinear_poincare(spec: VectorFieldSpec, x, u, t: float,
                       cfg: SectionConfig | None = None) -> PoincareImage:
    """Holonomy map psi_t from the normal disc at x to the normal hyperplane at phi_t(x).

    |u| must not exceed beta |X(x)|.  Times beyond one are handled by composing
    unit-time maps.
    """
    cfg = _cfg(cfg)
    x, X, nx = _regular(spec, x, cfg)
    u = _vec(u)
    _check_normal(u, X, nx)
    if np.linalg.norm(u) > cfg.beta * nx * (1 + 1e-12):
        raise DomainError(f"|u| = {np.linalg.norm(u):.3g} exceeds beta |X(x)| = {cfg.beta * nx:.3g}")
    if t == 0:
        return PoincareImage(NormalVector(x, u.copy()), 0.0, 0.0, 1.0)
    xt, img, tp, _ = _holonomy(spec, x, u, t, cfg)
    return PoincareImage(NormalVector(xt, img), tp, t, _ratio(t, tp))


def rescaled_nonlinear_poincare(spec: VectorFieldSpec, x, v, t: float,
                                cfg: SectionConfig | None = None) -> PoincareImage:
    """psi*_t(v) = |X(phi_t x)|^{-1} psi_t(|X(x)| v), defined for |v| <= beta."""
    cfg = _cfg(cfg)
    x, X, nx = _regular(spec, x, cfg)
    v = _vec(v)
    _check_normal(v, X, nx)
    if np.linalg.norm(v) > cfg.beta * (1 + 1e-12):
        raise DomainError(f"|v| = {np.linalg.norm(v):.3g} exceeds beta = {cfg.beta}")
    if t == 0:
        return PoincareImage(NormalVector(x, v.copy()), 0.0, 0.0, 1.0)
    xt, img, tp, Xt = _holonomy(spec, x, nx * v, t, cfg)
    return PoincareImage(NormalVector(xt, img / np.linalg.norm(Xt)), tp, t, _ratio(t, tp))


def _psi_star(spec, x, v, t, cfg):
    """Unchecked rescaled holonomy returning only the image vector."""
    X = spec._f(x)
    nx = float(np.linalg.norm(X))
    if t == 0:
        return np.array(v, dtype=float)
    xt, img, tp, Xt = _holonomy(spec, x, nx * np.asarray(v, dtype=float), t, cfg)
    return img / np.linalg.norm(Xt)
