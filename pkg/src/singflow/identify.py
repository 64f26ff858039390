"""Identification maps between nearby normal sections and numerical checks of
their compatibility with the rescaled holonomy flow.

h_{y,x}(u) slides the point y + |X(y)| u along its orbit by the unique small
time s that puts it on the affine section through x orthogonal to X(x), and
reads the landing point in units of |X(x)|.

All check_* functions return plain dicts (JSON-serializable) so sweeps can
merge and store them.  Distances called "rescaled" are divided by |X| at the
reference point; interval constants are in units of the time scale C.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import integrate as _int
from .errors import (AmbiguousCrossingError, DomainError, EscapeError, IdentificationDomainError,
                     NearSingularityError, NoCrossingError, SingflowError, TubeEscapeError)
from .fields import VectorFieldSpec, _check_domain
from .poincare import (DEFAULT, NormalVector, SectionConfig, _holonomy, _land, _regular,
                       normal_basis)

__all__ = [
    "Identified",
    "IdentificationMap",
    "ReparamTrace",
    "Region",
    "identification",
    "check_no_small_period",
    "check_local_injectivity",
    "check_local_invariance",
    "check_global_invariance",
    "check_no_shear",
]


@dataclass(frozen=True)
class Identified:
    vec: NormalVector
    section_time: float


def _cfg(cfg):
    return DEFAULT if cfg is None else cfg


def _identify(spec, y, x, u, cfg):
    """Unchecked h_{y,x}(u); returns (v, s)."""
    Xx = spec._f(x)
    nx = float(np.linalg.norm(Xx))
    ny = float(np.linalg.norm(spec._f(y)))
    z0 = y + ny * np.asarray(u, dtype=float) - x
    try:
        s, z = _land(spec, x, z0, cfg, nx, cfg.t0, cfg.landing_radius)
    except (NoCrossingError, AmbiguousCrossingError, EscapeError) as exc:
        raise IdentificationDomainError(f"no unique landing within |s| < {cfg.t0}: {exc}") from exc
    n = Xx / nx
    z = z - (z @ n) * n
    return z / nx, float(s)


def identification(spec: VectorFieldSpec, y, x, u, cfg: SectionConfig | None = None) -> Identified:
    """h_{y,x}(u) = |X(x)|^-1 (phi_s(y + |X(y)| u) - x) for the unique small s.

    Requires d(x, y) < r0 |X(x)| with r0 = cfg.beta and |u| <= cfg.beta.
    """
    cfg = _cfg(cfg)
    x, Xx, nx = _regular(spec, x, cfg)
    y, Xy, ny = _regular(spec, y, cfg)
    u = np.asarray(u.vec if isinstance(u, NormalVector) else u, dtype=float)
    if np.linalg.norm(x - y) >= cfg.beta * nx and np.any(x != y):
        raise DomainError(f"d(x, y) = {np.linalg.norm(x - y):.3g} is not below r0 |X(x)| = {cfg.beta * nx:.3g}")
    if np.linalg.norm(u) > cfg.beta * (1 + 1e-12):
        raise DomainError(f"|u| = {np.linalg.norm(u):.3g} exceeds beta0 = {cfg.beta}")
    if np.array_equal(x, y):
        return Identified(NormalVector(x, u.copy()), 0.0)
    v, s = _identify(spec, y, x, u, cfg)
    return Identified(NormalVector(x, v), s)


@dataclass(frozen=True)
class IdentificationMap:
    """h_{y,x} as a callable on normal vectors at y."""

    spec: VectorFieldSpec
    source: np.ndarray
    target: np.ndarray
    cfg: SectionConfig = field(default_factory=SectionConfig)

    @property
    def section_time(self) -> float:
        """Section time of the zero vector."""
        return identification(self.spec, self.source, self.target, np.zeros(self.spec.dim), self.cfg).section_time

    def __call__(self, u) -> NormalVector:
        return identification(self.spec, self.source, self.target, u, self.cfg).vec


@dataclass(frozen=True)
class ReparamTrace:
    sample_times: np.ndarray
    theta_values: np.ndarray
    lipschitz_bound: float

    def __post_init__(self):
        t = np.asarray(self.sample_times, dtype=float)
        th = np.asarray(self.theta_values, dtype=float)
        if t.shape != th.shape:
            raise ValueError("sample_times and theta_values differ in length")
        object.__setattr__(self, "sample_times", t)
        object.__setattr__(self, "theta_values", th)

    @classmethod
    def from_samples(cls, t, theta) -> "ReparamTrace":
        t = np.asarray(t, dtype=float)
        th = np.asarray(theta, dtype=float)
        if t.size < 2:
            return cls(t, th, 1.0)
        dd = np.diff(th) / np.diff(t)
        if np.any(dd <= 0):
            return cls(t, th, float("inf"))
        return cls(t, th, float(max(dd.max(), 1.0 / dd.min())))

    def __call__(self, t):
        return np.interp(t, self.sample_times, self.theta_values)


@dataclass(frozen=True)
class Region:
    """Finite sample of regular points standing in for the open set U."""

    points: np.ndarray

    @classmethod
    def shell(cls, spec: VectorFieldSpec, inner: float, outer: float, n: int, seed: int = 0) -> "Region":
        """Points whose distance to the nearest singularity lies in [inner, outer]."""
        rng = np.random.default_rng(seed)
        sings = [np.asarray(s, dtype=float) for s in spec.singularities]
        pts = []
        tries = 0
        while len(pts) < n and tries < 1000 * max(n, 1):
            tries += 1
            c = sings[rng.integers(len(sings))] if sings else np.zeros(spec.dim)
            d = rng.normal(size=spec.dim)
            r = rng.uniform(inner, outer)
            p = c + r * d / np.linalg.norm(d)
            if np.linalg.norm(p) > spec.domain_radius:
                continue
            if sings and min(np.linalg.norm(p - s) for s in sings) < inner:
                continue
            pts.append(p)
        return cls(np.array(pts).reshape(-1, spec.dim))

    @classmethod
    def orbit_sample(cls, spec: VectorFieldSpec, x, t: float, n: int, transient: float = 0.0) -> "Region":
        x = _int.flow(spec, x, transient) if transient else np.asarray(x, dtype=float)
        seg = _int.orbit(spec, x, t)
        return cls(np.asarray(seg(np.linspace(0.0, t, n, endpoint=False))).reshape(-1, spec.dim))

    def __len__(self):
        return len(self.points)


def _nearby(spec, x, radius, rng, k):
    X = spec._f(x)
    out = []
    for _ in range(k):
        d = rng.normal(size=spec.dim)
        out.append(x + rng.uniform(0.1, 0.9) * radius * d / np.linalg.norm(d))
    return out


# --- compatibility checks -------------------------------------------------------

def check_no_small_period(spec: VectorFieldSpec, region: Region, kappa: float,
                          cfg: SectionConfig | None = None, time_scale: float = 1.0,
                          levels: int = 20) -> dict:
    """Largest r in the grid (kappa/2) 2^-k such that d(x, phi_t x) < r |X(x)| with
    |t| <= 2C forces |t| < kappa C at every sampled x."""
    cfg = _cfg(cfg)
    grid = [(kappa / 2) * 2.0 ** -k for k in range(levels + 1)]
    T = 2.0 * time_scale
    mins = []
    for x in region.points:
        nx = float(np.linalg.norm(spec._f(x)))
        best = (np.inf, None)
        for sgn in (1.0, -1.0):
            try:
                seg = _int.orbit(spec, x, sgn * T, cfg.integrator)
            except (EscapeError, NearSingularityError) as exc:
                # the orbit leaves the region; use what precedes the exit
                span = 0.999 * getattr(exc, "exit_time", getattr(exc, "time", 0.0))
                if abs(span) <= kappa * time_scale:
                    continue
                seg = _int.orbit(spec, x, span if sgn > 0 else -abs(span), cfg.integrator)
            ts = np.unique(np.concatenate([seg.times, np.linspace(*seg.span, 2049)]))
            ts = ts[np.abs(ts) >= kappa * time_scale]
            if ts.size == 0:
                continue
            d = np.linalg.norm(seg(ts) - x, axis=1) / nx
            k = int(np.argmin(d))
            # refine the sampled minimum between its neighbours
            lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, ts.size - 1)]
            if hi > lo:
                res = minimize_scalar(lambda s: np.linalg.norm(_int.flow(spec, x, s, cfg.integrator) - x) / nx,
                                      bounds=(lo, hi),
                                      method="bounded", options={"xatol": 1e-12})
                if res.fun < d[k]:
                    d[k], ts[k] = res.fun, res.x
            if d[k] < best[0]:
                best = (float(d[k]), float(ts[k]))
        mins.append((best[0], best[1], x))
    worst = min((m[0] for m in mins), default=np.inf)
    passing = [r for r in grid if r <= worst]
    r = passing[0] if passing else 0.0
    violations = [{"x": m[2].tolist(), "t": m[1], "rescaled_distance": m[0]}
                  for m in mins if m[0] < grid[0]]
    return {
        "check": "no_small_period",
        "samples": len(mins),
        "kappa": kappa,
        "time_scale": time_scale,
        "r": r,
        "r_grid_max": grid[0],
        "violations": violations,
        # the property asks for some r > 0 on the grid
        "passed": r > 0,
    }


def check_local_injectivity(spec: VectorFieldSpec, region: Region, delta: float,
                            cfg: SectionConfig | None = None, pairs_per_point: int = 4,
                            seed: int = 0, time_scale: float = 1.0, levels: int = 20) -> dict:
    """Largest dyadic beta such that |h_{y,x}(0)| <= beta forces d(phi_t y, x) <= delta |X(x)|
    for some |t| <= C/4, over sampled r0-close pairs."""
    cfg = _cfg(cfg)
    rng = np.random.default_rng(seed)
    grid = [cfg.beta * 2.0 ** -k for k in range(levels + 1)]
    window = 0.25 * time_scale
    records = []
    for x in region.points:
        nx = float(np.linalg.norm(spec._f(x)))
        ys = _nearby(spec, x, cfg.beta * nx, rng, pairs_per_point)
        ys.append(_int.flow(spec, x, window / 2))
        ys.append(x.copy())
        for y in ys:
            try:
                v, s = (np.zeros(spec.dim), 0.0) if np.array_equal(x, y) else _identify(spec, y, x, np.zeros(spec.dim), cfg)
            except IdentificationDomainError:
                continue
            seg_f = _int.orbit(spec, y, window, cfg.integrator)
            seg_b = _int.orbit(spec, y, -window, cfg.integrator)
            ts = np.linspace(0, window, 257)
            d = min(np.min(np.linalg.norm(seg_f(ts) - x, axis=1)),
                    np.min(np.linalg.norm(seg_b(-ts) - x, axis=1)),
                    np.linalg.norm(_int.flow(spec, y, s) - x) if abs(s) <= window else np.inf)
            records.append((float(np.linalg.norm(v)), float(d / nx)))
    bad = [h for h, d in records if d > delta]
    limit = min(bad, default=np.inf)
    passing = [b for b in grid if b < limit]
    return {
        "check": "local_injectivity",
        "samples": len(records),
        "delta": delta,
        "beta": passing[0] if passing else 0.0,
        "violations": len(bad),
        "passed": bool(passing),
    }


def check_local_invariance(spec: VectorFieldSpec, region: Region, cfg: SectionConfig | None = None,
                           samples_per_point: int = 4, seed: int = 0, tol: float = 1e-8) -> dict:
    """h_{phi_t y, x}(psi*_t(u)) = h_{y,x}(u) for y and phi_t(y) both r0-close to x."""
    cfg = _cfg(cfg)
    rng = np.random.default_rng(seed)
    worst = 0.0
    n = 0
    for x in region.points:
        nx = float(np.linalg.norm(spec._f(x)))
        for y in _nearby(spec, x, 0.3 * cfg.beta * nx, rng, samples_per_point):
            Xy = spec._f(y)
            ny = float(np.linalg.norm(Xy))
            tmax = 0.3 * cfg.beta * nx / ny
            t = rng.uniform(-tmax, tmax)
            u = normal_basis(Xy) @ rng.normal(size=spec.dim - 1)
            u *= rng.uniform(0, 0.2 * cfg.beta) / np.linalg.norm(u)
            try:
                rhs, _ = _identify(spec, y, x, u, cfg)
                if t == 0:
                    yt, img = y, u
                else:
                    yt, w, _, Xt = _holonomy(spec, y, ny * u, t, cfg)
                    img = w / np.linalg.norm(Xt)
                lhs, _ = _identify(spec, yt, x, img, cfg)
            except SingflowError:
                continue
            worst = max(worst, float(np.linalg.norm(lhs - rhs)))
            n += 1
    return {
        "check": "local_invariance",
        "samples": n,
        "max_residual": worst,
        "threshold": tol,
        "passed": worst <= tol,
    }


def _section_time_on(spec, seg, P, guess, lo, hi):
    """Base time t' in [lo, hi] nearest guess with P on the section of the orbit at t'."""
    from scipy.optimize import brentq

    def g(t):
        b = seg(t)
        return float((P - b) @ spec._f(b))

    ts = np.linspace(lo, hi, 65)
    vals = [g(t) for t in ts]
    roots = [brentq(g, ts[k], ts[k + 1], xtol=1e-15)
             for k in range(len(ts) - 1) if vals[k] * vals[k + 1] <= 0 and vals[k] != vals[k + 1]]
    if not roots:
        return None
    return min(roots, key=lambda r: abs(r - guess))


def _polish_theta(spec, base, t_base, th, P, cfg):
    """Newton on t -> <P - phi_t(y2), X(phi_t y2)> using the flow from the current base point."""
    for _ in range(8):
        b = base if th == t_base else _int.flow(spec, base, th - t_base, cfg.integrator)
        X = spec._f(b)
        g = (P - b) @ X
        dg = -(X @ X) + (P - b) @ (spec._df(b) @ X)
        if dg == 0:
            break
        step = g / dg
        th -= step
        if abs(step) <= cfg.integrator.event_tol * max(1.0, abs(th)):
            break
    return th


def check_global_invariance(spec: VectorFieldSpec, y, y2, u, u2, I: tuple[float, float],
                            I2: tuple[float, float], delta: float, rho: float,
                            cfg: SectionConfig | None = None, step: float = 1.0 / 16,
                            tol: float = 1e-6) -> tuple[ReparamTrace, dict]:
    """Match the tube orbits through (y, u) and (y2, u2) by a reparametrization theta.

    theta(t) is the base time on the orbit of y2 whose section contains the tube
    point over phi_t(y).  Checked on samples: d(phi_t y, phi_theta(t) y2) < delta,
    Lip(theta) <= 1 + 3 rho, |psi*_theta(t)(u2)| < delta and
    h(psi*_theta(t)(u2)) = psi*_t(u) within tol.
    """
    cfg = _cfg(cfg)
    y = _check_domain(spec, y)
    y2 = _check_domain(spec, y2)
    u = np.asarray(u, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    # the tube point over y2 at time 0 lies on the orbit of the tube point over y
    _, s_align = (np.zeros(spec.dim), 0.0) if np.array_equal(y, y2) else _identify(spec, y2, y, u2, cfg)

    if I2[0] != 0:
        raise ValueError("I2 must start at 0")
    t_grid = np.arange(I[0], I[1] + 1e-12, step)
    # orbit of y2 on [-2 t0, |I2| + 4 t0] for locating theta
    back = 2 * cfg.t0
    try:
        start = _int.flow(spec, y2, -back, cfg.integrator)
    except EscapeError as exc:
        # backward orbits may leave the domain quickly; keep what is inside
        back = 0.9 * abs(exc.exit_time)
        start = _int.flow(spec, y2, -back, cfg.integrator)
    raw = _int.orbit(spec, start, I2[1] + back + 4 * cfg.t0, cfg.integrator)
    seg2 = _int.OrbitSegment(raw.times - back, raw.points, None, raw.velocities)

    b, v = y.copy(), u.copy()
    b2, v2 = y2.copy(), u2.copy()
    th_prev = I2[0]
    times, thetas, dist, part1, part2 = [], [], [], [], []
    truncated = None
    for k, t in enumerate(t_grid):
        try:
            if k > 0:
                h = t - t_grid[k - 1]
                nb = float(np.linalg.norm(spec._f(b)))
                b, w, _, Xb = _holonomy(spec, b, nb * v, h, cfg)
                v = w / np.linalg.norm(Xb)
            nb = float(np.linalg.norm(spec._f(b)))
            P = b + nb * v
            guess = th_prev + (step if k > 0 else s_align)
            lo = max(seg2.span[0], th_prev - 2 * step if k > 0 else -back)
            hi = min(seg2.span[1], guess + 4 * step + 2 * cfg.t0)
            th = _section_time_on(spec, seg2, P, guess, lo, hi) if (k > 0 or s_align != 0) else 0.0
            if th is None or th > I2[1]:
                truncated = float(t)
                break
            th = _polish_theta(spec, b2, th_prev, th, P, cfg)
            dth = th - th_prev
            if k > 0 or th != 0:
                nb2 = float(np.linalg.norm(spec._f(b2)))
                if dth != 0:
                    b2, w2, _, Xb2 = _holonomy(spec, b2, nb2 * v2, dth, cfg)
                    v2 = w2 / np.linalg.norm(Xb2)
            if np.linalg.norm(v) >= cfg.beta or np.linalg.norm(v2) >= cfg.beta:
                truncated = float(t)
                break
            hv = v2 if np.array_equal(b2, b) else _identify(spec, b2, b, v2, cfg)[0]
        except (TubeEscapeError, NoCrossingError, AmbiguousCrossingError, IdentificationDomainError,
                EscapeError, NearSingularityError):
            truncated = float(t)
            break
        th_prev = th
        times.append(float(t))
        thetas.append(float(th))
        dist.append(float(np.linalg.norm(b - b2)))
        part1.append(float(np.linalg.norm(v2)))
        part2.append(float(np.linalg.norm(hv - v)))
    trace = ReparamTrace.from_samples(times, thetas)
    lip_ok = trace.lipschitz_bound <= 1 + 3 * rho
    report = {
        "check": "global_invariance",
        "samples": len(times),
        "alignment_time": float(s_align),
        "truncated_at": truncated,
        "max_distance": max(dist, default=0.0),
        "delta": delta,
        "lipschitz_bound": trace.lipschitz_bound,
        "lipschitz_limit": 1 + 3 * rho,
        "max_image_norm": max(part1, default=0.0),
        "max_residual": max(part2, default=0.0),
        "threshold": tol,
        "passed": bool(times) and max(dist) < delta and lip_ok and max(part1) < delta
                  and max(part2) <= tol,
    }
    return trace, report


def check_no_shear(trace: ReparamTrace, visits: Sequence[tuple[float, bool]]) -> dict:
    """Classify theta by theta(0) and check the matching inequality at flagged times.

    |theta(0)| <= 2: |theta(t) - t| <= 1/2; theta(0) > 2: theta(t) > t + 2;
    theta(0) < -2: theta(t) < t - 2.
    """
    th0 = float(trace(0.0))
    if th0 > 2:
        branch = "ahead"
        ok = lambda t, th: th > t + 2
        gap = lambda t, th: th - t - 2
    elif th0 < -2:
        branch = "behind"
        ok = lambda t, th: th < t - 2
        gap = lambda t, th: t - 2 - th
    else:
        branch = "aligned"
        ok = lambda t, th: abs(th - t) <= 0.5
        gap = lambda t, th: 0.5 - abs(th - t)
    checked = [(t, float(trace(t))) for t, flag in visits if flag]
    bad = [t for t, th in checked if not ok(t, th)]
    return {
        "check": "no_shear",
        "branch": branch,
        "theta0": th0,
        "samples": len(checked),
        "min_margin": min((gap(t, th) for t, th in checked), default=float("inf")),
        "violations": bad,
        "passed": not bad,
    }
