"""Polar blowup at nondegenerate singularities and the boundary values of the
rescaled flows.

A boundary point is a singularity together with a direction u, taken modulo
u ~ -u.  On the boundary every rescaled object is an explicit expression in
J = DX(sigma) and E_t = exp(tJ), so these functions never call the ODE
integrator.

The boundary flow and the rescaling ratio only depend on the line through u;
the flow is returned as a canonical representative.  The unit field and the
affine maps (fiber lifted flow, extended Poincare map) change sign with u,
f_{-u}(y) = -f_u(-y), so for those u is read as the side of approach
sigma + s u with s -> 0+ and is not canonicalized.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.linalg import expm

from .errors import DomainError, NeedsDirectionError, RootFindError
from .fields import SingularityRecord, VectorFieldSpec, _check_domain, find_singularities
from .poincare import DEFAULT, SectionConfig, rescaled_linear_poincare

__all__ = [
    "Regular",
    "Boundary",
    "BlowupPoint",
    "ChartCoords",
    "canonical",
    "default_chart_radius",
    "to_blowup",
    "chart_coords",
    "extended_flow_boundary",
    "extended_unit_field",
    "rescaling_ratio",
    "extended_lifted_boundary",
    "extended_fiber_lifted_boundary",
    "theta_functional",
    "extended_poincare_boundary",
    "extended_rescaled_linear_poincare",
    "check_boundary",
]


def canonical(u) -> np.ndarray:
    """Antipodal representative: the entry of largest magnitude is positive (lowest index on ties)."""
    u = np.asarray(u, dtype=float)
    k = int(np.argmax(np.abs(u)))
    return -u if u[k] < 0 else u.copy()


def _unit(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    n = np.linalg.norm(u)
    if not n > 0:
        raise ValueError("direction must be non-zero")
    return u / n


@dataclass(frozen=True)
class Regular:
    x: np.ndarray


@dataclass(frozen=True)
class Boundary:
    sing: SingularityRecord
    dir: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dir", canonical(_unit(self.dir)))

    def __eq__(self, other):
        return (isinstance(other, Boundary)
                and np.array_equal(self.sing.position, other.sing.position)
                and np.allclose(self.dir, other.dir, rtol=0, atol=1e-14))

    __hash__ = None


BlowupPoint = Union[Regular, Boundary]


@dataclass(frozen=True)
class ChartCoords:
    """(s, u) in the chart at sing; represents sigma + s u, with (s, u) ~ (-s, -u)."""

    sing: SingularityRecord
    s: float
    u: np.ndarray

    @property
    def point(self) -> np.ndarray:
        return self.sing.position + self.s * np.asarray(self.u, dtype=float)

    def blowup_point(self) -> BlowupPoint:
        if self.s == 0:
            return Boundary(self.sing, self.u)
        return Regular(self.point)


def default_chart_radius(spec: VectorFieldSpec) -> float:
    pos = [np.asarray(s, dtype=float) for s in spec.singularities]
    cap = spec.domain_radius / 10
    if len(pos) < 2:
        return cap
    dmin = min(np.linalg.norm(a - b) for i, a in enumerate(pos) for b in pos[i + 1:])
    return min(0.2 * dmin, cap)


def _nearest(spec, x):
    recs = find_singularities(spec)
    if not recs:
        return None, np.inf
    dist = [np.linalg.norm(x - r.position) for r in recs]
    k = int(np.argmin(dist))
    return recs[k], dist[k]


def to_blowup(spec: VectorFieldSpec, x, direction=None, chart_radius: float | None = None) -> BlowupPoint:
    """Lift an ambient point to the blowup; a singularity needs an explicit direction."""
    x = _check_domain(spec, x)
    rec, dist = _nearest(spec, x)
    if rec is not None and dist <= 1e-14 * max(1.0, np.linalg.norm(rec.position)):
        if direction is None:
            raise NeedsDirectionError(
                f"x coincides with the singularity at {rec.position.tolist()}; pass a direction")
        return Boundary(rec, direction)
    return Regular(x)


def chart_coords(spec: VectorFieldSpec, x, chart_radius: float | None = None) -> ChartCoords | None:
    """Chart coordinates (s > 0, unit u) when x lies within the chart radius of a singularity."""
    x = _check_domain(spec, x)
    eps = default_chart_radius(spec) if chart_radius is None else chart_radius
    rec, dist = _nearest(spec, x)
    if rec is None or dist >= eps or dist == 0:
        return None
    return ChartCoords(rec, float(dist), (x - rec.position) / dist)


# --- boundary formulas --------------------------------------------------------

def _J(sing: SingularityRecord) -> np.ndarray:
    return np.asarray(sing.jacobian, dtype=float)


def _E(sing, t) -> np.ndarray:
    return expm(t * _J(sing))


def extended_flow_boundary(sing: SingularityRecord, u, t: float) -> np.ndarray:
    u = _unit(u)
    w = _E(sing, t) @ u
    return canonical(w / np.linalg.norm(w))


def extended_unit_field(sing: SingularityRecord, u) -> np.ndarray:
    u = _unit(u)
    w = _J(sing) @ u
    return w / np.linalg.norm(w)


def _boundary_ratio(J, E, u):
    return np.linalg.norm(J @ u) / np.linalg.norm(J @ (E @ u))


def rescaling_ratio(spec: VectorFieldSpec, p: BlowupPoint, t: float,
                    cfg: SectionConfig | None = None) -> float:
    """|X(x)| / |X(phi_t x)|, extended to the boundary by |J u| / |J E_t u|."""
    cfg = DEFAULT if cfg is None else cfg
    if t == 0:
        return 1.0
    if isinstance(p, Boundary):
        u = _unit(p.dir)
        return float(_boundary_ratio(_J(p.sing), _E(p.sing, t), u))
    from .integrate import _run, K
    x = _check_domain(spec, p.x)
    nx = float(np.linalg.norm(spec._f(x)))
    if nx <= cfg.sing_threshold:
        from .errors import NearSingularityError
        raise NearSingularityError("regular point is below the singular threshold; pass a Boundary", 0.0)
    ts, ys, fs = _run(spec, K.FLOW, x, 0.0, t, cfg.integrator, atol=cfg.integrator.abs_tol * nx,
                      sing_threshold=cfg.sing_threshold)
    return nx / float(np.linalg.norm(fs[-1]))


def extended_lifted_boundary(sing: SingularityRecord, u, y, t: float) -> np.ndarray:
    """Boundary value of the rescaled lifted flow: (|Ju| / |J E_t u|) E_t y."""
    u = _unit(u)
    J, E = _J(sing), _E(sing, t)
    return _boundary_ratio(J, E, u) * (E @ np.asarray(y, dtype=float))


def extended_fiber_lifted_boundary(sing: SingularityRecord, u, y, t: float) -> np.ndarray:
    """Boundary value of the rescaled fiber-preserving lifted flow: E_t y + (E_t u - u) / |Ju|."""
    if not -1 <= t <= 1:
        raise ValueError("t must lie in [-1, 1]")
    u = _unit(u)
    J, E = _J(sing), _E(sing, t)
    return E @ np.asarray(y, dtype=float) + (E @ u - u) / np.linalg.norm(J @ u)


def _theta_boundary(J, Et, u, y, tau):
    """(Theta, dTheta/dtau, image) on the boundary for fixed t, at section time tau."""
    Etu = Et @ u
    JEtu = J @ Etu
    nJ = np.linalg.norm(JEtu)
    n = JEtu / nJ
    ratio = np.linalg.norm(J @ u) / nJ
    Etau = expm(tau * J)
    a = ratio * (Et @ y)
    img = Etau @ a + (Etau @ Etu - Etu) / nJ
    dimg = J @ (Etau @ (a + Etu / nJ))
    return float(img @ n), float(dimg @ n), img


def theta_functional(spec: VectorFieldSpec, p: BlowupPoint, t: float, y, tau: float,
                     cfg: SectionConfig | None = None) -> float:
    """Section functional whose zero in tau defines the rescaled holonomy map.

    On the boundary the lifted and fiber-lifted flows are replaced by their
    closed-form extensions; at regular points the flows are integrated.
    """
    cfg = DEFAULT if cfg is None else cfg
    if abs(tau) > cfg.t0 * (1 + 1e-12):
        raise DomainError(f"|tau| = {abs(tau):.3g} exceeds t0 = {cfg.t0}")
    y = np.asarray(y, dtype=float)
    if isinstance(p, Boundary):
        u = _unit(p.dir)
        J = _J(p.sing)
        return _theta_boundary(J, expm(t * J), u, y, tau)[0]
    from . import integrate as _int
    x = _check_domain(spec, p.x)
    nx = float(np.linalg.norm(spec._f(x)))
    if t == 0:
        xt, w = x, nx * y
    else:
        ts, ys, fs = _int._lifted(spec, x, nx * y, t, cfg.integrator, nx, cfg.sing_threshold)
        xt, w = ys[-1, :spec.dim], ys[-1, spec.dim:]
    Xt = spec._f(xt)
    nxt = float(np.linalg.norm(Xt))
    z = w if tau == 0 else _int._fiber(spec, xt, w, tau, cfg.integrator, nxt)[1][-1]
    return float(z @ Xt) / nxt ** 2


def extended_poincare_boundary(sing: SingularityRecord, u, y, t: float,
                               cfg: SectionConfig | None = None) -> tuple[np.ndarray, float]:
    """Boundary value of the rescaled holonomy map and its section time tau.

    Solves Theta(tau) = 0 by Newton from tau = 0 with the analytic derivative,
    falling back to bisection on [-t0, t0] whenever a step leaves the bracket.
    """
    cfg = DEFAULT if cfg is None else cfg
    u = _unit(u)
    y = np.asarray(y, dtype=float)
    if np.linalg.norm(y) > cfg.beta_prime * (1 + 1e-12):
        raise DomainError(f"|y| = {np.linalg.norm(y):.3g} exceeds beta' = {cfg.beta_prime}")
    J = _J(sing)
    Et = expm(t * J)
    if not np.any(y):
        return np.zeros_like(y), 0.0
    t0 = cfg.t0
    lo, hi = -t0, t0
    g_lo = _theta_boundary(J, Et, u, y, lo)[0]
    g_hi = _theta_boundary(J, Et, u, y, hi)[0]
    bracketed = g_lo * g_hi < 0
    tau = 0.0
    g, dg, img = _theta_boundary(J, Et, u, y, tau)
    # rounding floor of Theta: size of its two terms, the second independent of y
    Etu = Et @ u
    scale = max(np.linalg.norm(y), _boundary_ratio(J, Et, u) * np.linalg.norm(Et @ y)
                + np.linalg.norm(Etu) / np.linalg.norm(J @ Etu))
    for _ in range(50):
        if abs(g) <= 1e-15 * scale:
            return img, tau
        if bracketed:
            if (g < 0) == (g_lo < 0):
                lo, g_lo = tau, g
            else:
                hi = tau
        new = tau - g / dg if dg != 0 else np.nan
        if bracketed and not lo < new < hi:
            new = 0.5 * (lo + hi)
        elif not bracketed and not -t0 <= new <= t0:
            break
        done = abs(new - tau) <= 1e-16 * max(1.0, abs(tau))
        tau = new
        g, dg, img = _theta_boundary(J, Et, u, y, tau)
        if done:
            break
    if abs(g) <= 1e-13 * scale:
        return img, tau
    raise RootFindError(f"section time did not converge (|Theta| = {abs(g):.3g})", abs(g))


def extended_rescaled_linear_poincare(spec: VectorFieldSpec, p: BlowupPoint, v, t: float,
                                      cfg: SectionConfig | None = None) -> np.ndarray:
    """Rescaled linear Poincare flow on the blowup.

    On the boundary it is the projection of (|Ju| / |J E_t u|) E_t v onto the
    orthogonal complement of J E_t u.
    """
    v = np.asarray(v, dtype=float)
    if isinstance(p, Regular):
        return rescaled_linear_poincare(spec, p.x, v, t, cfg).vec
    u = _unit(p.dir)
    J = _J(p.sing)
    if abs(v @ (J @ u)) > 1e-8 * max(np.linalg.norm(v), 1e-300) * np.linalg.norm(J @ u):
        raise ValueError("v is not orthogonal to the extended unit field at p")
    if t == 0:
        return v.copy()
    E = expm(t * J)
    w = _boundary_ratio(J, E, u) * (E @ v)
    n = J @ (E @ u)
    n = n / np.linalg.norm(n)
    return w - (w @ n) * n


def check_boundary(spec: VectorFieldSpec, n_dirs: int = 6, seed: int = 0,
                   cfg: SectionConfig | None = None) -> dict:
    """Sampled consistency checks of the boundary formulas at every singularity.

    Antipodal symmetry, the boundary flow property, non-vanishing of
    dTheta/dtau at the zero section, the O(s) limit of the unit field and the
    s -> 0 limit of the rescaled holonomy.
    """
    from .errors import SingflowError
    from .poincare import _psi_star, normal_basis
    cfg = DEFAULT if cfg is None else cfg
    rng = np.random.default_rng(seed)
    worst = {"antipodal": 0.0, "flow_property": 0.0, "unit_field_limit": 0.0, "holonomy_limit": 0.0}
    min_dtheta = np.inf
    limit_monotone = True
    undefined = 0
    for rec in find_singularities(spec):
        J = _J(rec)
        for _ in range(n_dirs):
            u = rng.normal(size=rec.dim)
            u /= np.linalg.norm(u)
            Q = normal_basis(J @ u)
            y = 0.5 * cfg.beta_prime * Q[:, 0]
            t1, t2 = rng.uniform(0, 0.5, 2)
            a = max(np.linalg.norm(extended_flow_boundary(rec, u, 1.0) - extended_flow_boundary(rec, -u, 1.0)),
                    abs(rescaling_ratio(spec, Boundary(rec, u), 1.0) - rescaling_ratio(spec, Boundary(rec, -u), 1.0)),
                    np.linalg.norm(extended_fiber_lifted_boundary(rec, u, y, 1.0)
                                   + extended_fiber_lifted_boundary(rec, -u, -y, 1.0)))
            try:
                b1 = extended_poincare_boundary(rec, u, y, 1.0, cfg)[0]
                b2 = extended_poincare_boundary(rec, -u, -y, 1.0, cfg)[0]
                a = max(a, np.linalg.norm(b1 + b2))
            except RootFindError:
                b1 = None
            worst["antipodal"] = max(worst["antipodal"], float(a))
            two = extended_flow_boundary(rec, extended_flow_boundary(rec, u, t1), t2)
            worst["flow_property"] = max(worst["flow_property"], float(
                np.linalg.norm(two - extended_flow_boundary(rec, u, t1 + t2))))
            h = 1e-6
            Et = expm(J)
            dth = (_theta_boundary(J, Et, u, np.zeros(rec.dim), h)[0]
                   - _theta_boundary(J, Et, u, np.zeros(rec.dim), -h)[0]) / (2 * h)
            min_dtheta = min(min_dtheta, abs(dth))
            s = 1e-4
            x = rec.position + s * u
            X = spec._f(x)
            worst["unit_field_limit"] = max(worst["unit_field_limit"], float(
                np.linalg.norm(X / np.linalg.norm(X) - extended_unit_field(rec, u)) / s))
            if b1 is not None:
                errs = []
                for s in (1e-3, 1e-4):
                    x = rec.position + s * u
                    n = spec._f(x)
                    n = n / np.linalg.norm(n)
                    v = y - (y @ n) * n
                    v *= np.linalg.norm(y) / np.linalg.norm(v)
                    try:
                        errs.append(float(np.linalg.norm(_psi_star(spec, x, v, 1.0, cfg) - b1)))
                    except SingflowError:
                        # ambiguous or missing crossing: outside the regular domain
                        undefined += 1
                        break
                else:
                    limit_monotone &= errs[1] < errs[0] or errs[1] < 1e-10
                    worst["holonomy_limit"] = max(worst["holonomy_limit"], errs[1])
    checks = [
        {"name": "antipodal", "max_residual": worst["antipodal"], "threshold": 1e-10},
        {"name": "flow_property", "max_residual": worst["flow_property"], "threshold": 1e-12},
        {"name": "dtheta_nonzero", "min_abs": float(min_dtheta), "threshold": 1e-8},
        {"name": "unit_field_limit", "max_error_over_s": worst["unit_field_limit"],
         "threshold": 1e3},
        {"name": "holonomy_limit", "max_residual": worst["holonomy_limit"], "threshold": 1e-3,
         "decreasing": bool(limit_monotone), "undefined": undefined},
    ]
    checks[0]["passed"] = worst["antipodal"] <= 1e-10
    checks[1]["passed"] = worst["flow_property"] <= 1e-12
    checks[2]["passed"] = min_dtheta > 1e-8
    checks[3]["passed"] = worst["unit_field_limit"] <= 1e3
    checks[4]["passed"] = worst["holonomy_limit"] < 1e-3 and bool(limit_monotone)
    return {"check": "boundary", "directions": n_dirs, "seed": seed, "checks": checks,
            "passed": all(c["passed"] for c in checks)}
