"""Normal Lyapunov exponents, Pliss points, periodic-orbit detection by the
closing argument, and continuity sweeps of the rescaled holonomy flow.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from . import integrate as _int
from .errors import (AmbiguousCrossingError, EscapeError, IdentificationDomainError,
                     NearSingularityError, NoContractionError, NoCrossingError, NoReturnError,
                     RefineError, SingflowError, StiffnessError, TubeEscapeError)
from .fields import VectorFieldSpec, _check_domain, find_singularities
from .identify import _identify
from .integrate import OrbitSegment
from .poincare import (DEFAULT, SectionConfig, _holonomy, _psi_star, _regular,
                       _rescaled_linear_matrix, normal_basis)

__all__ = [
    "ExponentEstimate",
    "PlissReport",
    "PeriodicOrbitResult",
    "lyapunov_normal",
    "pliss_points",
    "detect_periodic",
    "negative_exponents_pipeline",
    "continuity_sweep",
    "threads",
]


def threads(default: int = 1) -> int:
    """Worker count; SINGFLOW_THREADS overrides the caller's value."""
    env = os.environ.get("SINGFLOW_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, int(default))


def _pmap(fn, items, workers):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# --- Lyapunov exponents ------------------------------------------------------------

@dataclass(frozen=True)
class ExponentEstimate:
    orbit: OrbitSegment
    step: float
    exponents: np.ndarray
    field_rate: float
    block_count: int
    block_log_norms: np.ndarray
    logdet_rate: float

    @property
    def logdet_residual(self) -> float:
        """Relative mismatch between the exponent sum and the divergence-based rate."""
        s = float(np.sum(self.exponents))
        return abs(s - self.logdet_rate) / max(abs(self.logdet_rate), 1e-300)


def lyapunov_normal(spec: VectorFieldSpec, x, total_time: float, s: float,
                    cfg: SectionConfig | None = None) -> ExponentEstimate:
    """Exponents of the rescaled linear Poincare flow from blocks of length s.

    The sum of the exponents is cross-checked against
    (int div X - d log(|X(end)| / |X(x)|)) / T, which follows from
    det D phi = exp(int div X) and the block-triangular form of D phi in the
    splitting R X + N.
    """
    cfg = DEFAULT if cfg is None else cfg
    if not total_time > 0:
        raise ValueError("total_time must be positive")
    if not 0 < s <= 1:
        raise ValueError("block length s must lie in (0, 1]")
    x, X, nx = _regular(spec, x, cfg)
    n = max(1, int(round(total_time / s)))
    h = total_time / n
    d = spec.dim
    Q = normal_basis(X)
    logs = np.zeros(d - 1)
    norms = np.empty(n)
    div = 0.0
    pts = [x.copy()]
    xk = x
    for k in range(n):
        x1, W, dv = _rescaled_linear_matrix(spec, xk, Q, h, cfg)
        norms[k] = math.log(np.linalg.norm(W, 2))
        Q1, R = np.linalg.qr(W)
        dr = np.diag(R)
        logs += np.log(np.abs(dr))
        # keep the basis orthonormal inside the new normal space
        Q = Q1 * np.sign(dr)
        div += dv
        xk = x1
        pts.append(x1.copy())
    n_end = float(np.linalg.norm(spec._f(xk)))
    T = n * h
    exps = np.sort(logs / T)[::-1]
    logdet = (div - d * math.log(n_end / nx)) / T
    times = np.arange(n + 1) * h
    seg = OrbitSegment(times, np.array(pts))
    return ExponentEstimate(seg, h, exps, math.log(n_end / nx) / T, n, norms, logdet)


# --- Pliss points --------------------------------------------------------------------

@njit(cache=True)
def _pliss_scan(a, half):
    n = a.size
    out = np.empty(n, dtype=np.int64)
    cnt = 0
    p = 0.0
    lo = 0.0
    for k in range(n):
        p += a[k] + half
        if p <= lo:
            out[cnt] = k + 1
            cnt += 1
        if p < lo:
            lo = p
    return out[:cnt]


@dataclass(frozen=True)
class PlissReport:
    lam: float
    C: float
    pliss_indices: np.ndarray

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "C": self.C, "pliss_indices": [int(i) for i in self.pliss_indices]}


def pliss_points(logs: Sequence[float], lam: float, cfg=None) -> PlissReport:
    """Indices n >= 1 with sum_{i=m}^{n-1} a_i <= -(lam/2)(n-m) for every m < n.

    With P_n = sum_{i<n} (a_i + lam/2) this is P_n <= min_{m<n} P_m, a single
    pass.  C is the smallest constant with prod_{i<n} e^{a_i} <= C e^{-lam n/2}
    for all n.
    """
    a = np.ascontiguousarray(logs, dtype=float)
    if a.size == 0:
        return PlissReport(float(lam), 1.0, np.zeros(0, dtype=np.int64))
    if not np.all(np.isfinite(a)):
        raise ValueError("logs must be finite")
    idx = _pliss_scan(a, 0.5 * lam)
    logC = max(0.0, float(np.max(np.cumsum(a + 0.5 * lam))))
    C = math.exp(logC) if logC < 709.0 else math.inf
    return PlissReport(float(lam), C, idx)


# --- periodic orbits ----------------------------------------------------------------

@dataclass(frozen=True)
class PeriodicOrbitResult:
    point: np.ndarray
    period: float
    multipliers: np.ndarray
    residual: float
    return_time: float
    iterates: int
    conjugated_multipliers: np.ndarray
    spectrum_gap: float

    def to_dict(self) -> dict:
        def cplx(z):
            return [[float(v.real), float(v.imag)] for v in np.atleast_1d(z)]
        return {
            "point": self.point.tolist(),
            "period": self.period,
            "multipliers": cplx(self.multipliers),
            "residual": self.residual,
            "return_time": self.return_time,
            "iterates": self.iterates,
            "conjugated_multipliers": cplx(self.conjugated_multipliers),
            "spectrum_gap": self.spectrum_gap,
        }


def _find_return(spec, x, horizon, r0, min_time, cfg):
    """First local minimum of |phi_t(x) - x| below r0 |X(x)| with t >= min_time."""
    nx = float(np.linalg.norm(spec._f(x)))
    try:
        seg = _int.orbit(spec, x, horizon, cfg.integrator, sing_threshold=cfg.sing_threshold)
    except EscapeError as exc:
        raise NoReturnError(f"orbit escaped at t = {exc.exit_time:.4g} without returning") from exc
    except (NearSingularityError, StiffnessError) as exc:
        raise NoReturnError(f"orbit fell onto a singularity before returning: {exc}") from exc
    ts = seg.times
    dist = np.linalg.norm(seg.points - x, axis=1)
    for k in range(1, ts.size - 1):
        if ts[k] < min_time or dist[k] >= r0 * nx:
            continue
        if dist[k] <= dist[k - 1] and dist[k] <= dist[k + 1]:
            from scipy.optimize import minimize_scalar
            res = minimize_scalar(lambda t: np.linalg.norm(seg(t) - x),
                                  bounds=(ts[k - 1], ts[k + 1]), method="bounded",
                                  options={"xatol": 1e-12})
            return float(res.x)
    raise NoReturnError(f"no return within r0 |X(x)| = {r0 * nx:.3g} before t = {horizon}")


def _return_map(spec, x, T, v, cfg):
    """psi_bar(v) = h_{phi_T x, x}(psi*_T(v)) with its total flow time."""
    nx = float(np.linalg.norm(spec._f(x)))
    xT, w, tp, XT = _holonomy(spec, x, nx * v, T, cfg)
    img, s = _identify(spec, xT, x, w / np.linalg.norm(XT), cfg)
    return img, tp + s


def _shoot(spec, z, T, p, Xp, cfg, tol=1e-8, max_iter=25):
    """Newton on (z, T): phi_T(z) = z with <z - p, X(p)> = 0."""
    d = spec.dim
    best = (np.inf, z, T)
    for _ in range(max_iter):
        xT, M, _ = _int._variational(spec, z, T, cfg.integrator, np.eye(d))
        F = xT - z
        res = float(np.linalg.norm(F))
        if res < best[0]:
            best = (res, z.copy(), T)
        if res <= 0.01 * tol:
            break
        A = np.zeros((d + 1, d + 1))
        A[:d, :d] = M - np.eye(d)
        A[:d, d] = spec._f(xT)
        A[d, :d] = Xp
        rhs = np.concatenate([-F, [-(z - p) @ Xp]])
        step = np.linalg.solve(A, rhs)
        z = z + step[:d]
        T = T + step[d]
    res, z, T = best
    if res > tol:
        raise RefineError(f"periodic orbit refinement stalled at residual {res:.3g}", res)
    return z, T, res


def detect_periodic(spec: VectorFieldSpec, x, search_horizon: float, r0: float = 0.3,
                    beta0: float = 0.3, cfg: SectionConfig | None = None,
                    time_scale: float = 1.0, max_iter: int = 60) -> PeriodicOrbitResult:
    """Closing argument: near-return of x, contraction of h_x o psi*_T, shooting refinement.

    r0 is the return radius and beta0 the ball radius, both in units of |X(x)|.
    """
    cfg = DEFAULT if cfg is None else cfg
    cfg = cfg.with_(beta=max(cfg.beta, beta0, r0))
    x, X, nx = _regular(spec, x, cfg)
    T = _find_return(spec, x, search_horizon, r0, 4.0 * time_scale, cfg)

    v = np.zeros(spec.dim)
    diffs = []
    norms = []
    t_total = T
    try:
        for k in range(max_iter):
            v1, t_total = _return_map(spec, x, T, v, cfg)
            norms.append(float(np.linalg.norm(v1)))
            if np.linalg.norm(v1) >= beta0:
                raise NoContractionError(
                    f"iterate {k + 1} left the ball of radius beta0 = {beta0}", norms)
            diffs.append(float(np.linalg.norm(v1 - v)))
            v = v1
            if len(diffs) >= 2 and diffs[-1] >= diffs[-2] and diffs[-2] > 1e-10:
                raise NoContractionError(f"iterate ratio {diffs[-1] / diffs[-2]:.3g} >= 1", norms)
            if diffs[-1] <= 1e-10:
                break
        else:
            raise NoContractionError(f"no convergence within {max_iter} iterates", norms)
    except (NoCrossingError, AmbiguousCrossingError, TubeEscapeError, IdentificationDomainError) as exc:
        raise NoContractionError(f"return map undefined along the iteration: {exc}", norms) from exc

    p = x + nx * v
    z, period, res = _shoot(spec, p, t_total, p, spec._f(p), cfg)
    M = _int.tangent_flow(spec, z, period, cfg.integrator)
    Q = normal_basis(spec._f(z))
    mult = np.linalg.eigvals(Q.T @ M @ Q)
    mult = mult[np.argsort(-np.abs(mult))]

    # derivative of the return map at its fixed point, by central differences
    Qx = normal_basis(X)
    h = 1e-5
    D = np.empty((spec.dim - 1, spec.dim - 1))
    for j in range(spec.dim - 1):
        e = h * Qx[:, j]
        fp, _ = _return_map(spec, x, T, v + e, cfg)
        fm, _ = _return_map(spec, x, T, v - e, cfg)
        D[:, j] = Qx.T @ (fp - fm) / (2 * h)
    conj = np.linalg.eigvals(D)
    conj = conj[np.argsort(-np.abs(conj))]
    gap = float(np.max(np.abs(conj - mult))) if mult.size else 0.0
    return PeriodicOrbitResult(z, float(period), mult, float(res), float(T), len(diffs), conj, gap)


# --- pipeline -------------------------------------------------------------------------

def _contraction_radius(spec, x, t, cfg, radii=(0.05, 0.025, 0.0125, 0.00625), pairs=6):
    """Largest radius r with |psi*_t(a) - psi*_t(b)| <= |a - b| / 2 on sampled pairs in B(0, r)."""
    rng = np.random.default_rng(0)
    Q = normal_basis(spec._f(x))
    for r in radii:
        ok = True
        for _ in range(pairs):
            a = Q @ rng.normal(size=spec.dim - 1)
            b = Q @ rng.normal(size=spec.dim - 1)
            a *= rng.uniform(0, r) / np.linalg.norm(a)
            b *= rng.uniform(0, r) / np.linalg.norm(b)
            try:
                fa = _psi_star(spec, x, a, t, cfg)
                fb = _psi_star(spec, x, b, t, cfg)
            except SingflowError:
                ok = False
                break
            if np.linalg.norm(fa - fb) > 0.5 * np.linalg.norm(a - b):
                ok = False
                break
        if ok:
            return r
    return 0.0


def negative_exponents_pipeline(spec: VectorFieldSpec, x, cfg: SectionConfig | None = None,
                                total_time: float = 60.0, s: float = 0.5, transient: float = 20.0,
                                search_horizon: float = 60.0, r0: float = 0.3,
                                beta0: float = 0.3) -> dict:
    """exponents -> Pliss points -> contraction radius -> closing.

    Returns a report with one entry per stage; "stage" names the first failing
    stage, or is "done" with the periodic orbit attached.
    """
    cfg = DEFAULT if cfg is None else cfg
    report: dict = {"stages": {}}

    def fail(stage, msg):
        report["stage"] = stage
        report["passed"] = False
        report["reason"] = msg
        return report

    x = _check_domain(spec, x)
    try:
        if transient:
            x = _int.flow(spec, x, transient, cfg.integrator)
        est = lyapunov_normal(spec, x, total_time, s, cfg)
    except SingflowError as exc:
        return fail("exponents", f"{type(exc).__name__}: {exc}")
    report["stages"]["exponents"] = {"exponents": est.exponents.tolist(), "field_rate": est.field_rate}
    if not np.all(est.exponents < 0):
        return fail("exponents", "some normal exponent is non-negative")

    lam = -float(est.exponents[0]) * est.step  # per block
    pl = pliss_points(est.block_log_norms, lam)
    report["stages"]["pliss"] = {"lambda_per_block": lam, "C": pl.C, "count": int(pl.pliss_indices.size)}
    # blocks needed for the Pliss bound to give a factor 1/2
    L = max(1, math.ceil(2 * math.log(2.0) / lam))
    good = pl.pliss_indices[pl.pliss_indices >= max(L, est.block_count // 2)]
    if good.size == 0:
        return fail("pliss", f"no Pliss point with at least {L} blocks before it")

    n = int(good[0])
    xp = est.orbit.points[n - L]
    t_c = L * est.step
    r = _contraction_radius(spec, xp, t_c, cfg)
    report["stages"]["contraction"] = {"pliss_index": n, "start_index": n - L, "time": t_c, "radius": r}
    if r <= 0:
        return fail("contraction", "no radius where psi*_t is a 1/2-contraction")

    try:
        res = detect_periodic(spec, xp, search_horizon, r0, beta0, cfg)
    except NoReturnError as exc:
        return fail("recurrence", str(exc))
    except (NoContractionError, RefineError) as exc:
        return fail("closing", f"{type(exc).__name__}: {exc}")
    report["stages"]["closing"] = res.to_dict()
    report["stage"] = "done"
    report["passed"] = True
    report["periodic_orbit"] = res.to_dict()
    return report


# --- continuity -----------------------------------------------------------------------

def _line_gap(a, b):
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    return float(min(np.linalg.norm(a - b), np.linalg.norm(a + b)))


def _blowup_gap(spec, sings, eps_chart, x, y):
    """Distance on the blowup: chart (s, [u]) near a singularity, Euclidean elsewhere."""
    for c in sings:
        dx, dy = x - c, y - c
        sx, sy = np.linalg.norm(dx), np.linalg.norm(dy)
        if sx < eps_chart and sy < eps_chart and sx > 0 and sy > 0:
            return float(abs(sx - sy) + _line_gap(dx, dy))
    return float(np.linalg.norm(x - y))


def _transport(X_from, X_to, v):
    """Move a normal vector at one base point to the normal space at another, keeping its norm."""
    n = X_to / np.linalg.norm(X_to)
    w = v - (v @ n) * n
    nw = np.linalg.norm(w)
    return w if nw == 0 else w * (np.linalg.norm(v) / nw)


def _pair_distance(spec, x, y, t, beta, cfg, nsamp, c1=True):
    """Sup distances between psi*_{t,x} and psi*_{t,y} on B(0, beta): (C0, C1)."""
    if np.array_equal(x, y):
        return 0.0, 0.0
    Xx, Xy = spec._f(x), spec._f(y)
    Q = normal_basis(Xx)
    k = spec.dim - 1
    dirs = []
    for j in range(nsamp):
        ang = 2 * np.pi * j / nsamp
        c = np.zeros(k)
        c[0] = math.cos(ang)
        if k > 1:
            c[1] = math.sin(ang)
        dirs.append(Q @ c)
    vs = [np.zeros(spec.dim)] + [r * beta * d for r in (0.5, 1.0) for d in dirs]
    c0 = 0.0
    c1d = 0.0
    h = 1e-3 * beta
    for v in vs:
        vy = _transport(Xx, Xy, v)
        try:
            a = _psi_star(spec, x, v, t, cfg)
            b = _psi_star(spec, y, vy, t, cfg)
        except SingflowError:
            return math.inf, math.inf
        c0 = max(c0, float(np.linalg.norm(a - b)))
        if c1 and np.linalg.norm(v) <= 0.5 * beta:
            for j in range(k):
                e = Q[:, j]
                ey = _transport(Xx, Xy, e)
                try:
                    da = (_psi_star(spec, x, v + h * e, t, cfg) - _psi_star(spec, x, v - h * e, t, cfg)) / (2 * h)
                    db = (_psi_star(spec, y, vy + h * ey, t, cfg) - _psi_star(spec, y, vy - h * ey, t, cfg)) / (2 * h)
                except SingflowError:
                    return math.inf, math.inf
                c1d = max(c1d, float(np.linalg.norm(da - db)))
    return c0, c1d


def _sweep_pairs(spec, rng, n_dirs, shells, far_pairs, levels, t, cfg, beta_min=0.003125):
    """(x, y, kind) pairs: shells around each singularity, same-ray pairs, far field, controls."""
    sings = [r.position for r in find_singularities(spec)]
    pairs = []
    for c in sings:
        for s in shells:
            for _ in range(n_dirs):
                u = rng.normal(size=spec.dim)
                u /= np.linalg.norm(u)
                x = c + s * u
                pairs.append((x, x.copy(), "control"))
                pairs.append((x, c + s * (1 + 1e-3) * u, "ray"))
                for lev in levels:
                    w = rng.normal(size=spec.dim)
                    w -= (w @ u) * u
                    u2 = u + lev * w / np.linalg.norm(w)
                    pairs.append((x, c + s * u2 / np.linalg.norm(u2), "shell"))
    R = spec.domain_radius
    made = attempts = 0
    while made < far_pairs and attempts < 200:
        attempts += 1
        # prefer points on a forward orbit, away from fast transients
        x0 = rng.uniform(-0.3, 0.3, size=spec.dim) * R
        try:
            x = _int.flow(spec, x0, 10.0 * max(t, 1.0), cfg.integrator)
        except SingflowError:
            x = x0
        try:
            _int.flow(spec, x, 1.5 * t, cfg.integrator)
            if sings and min(np.linalg.norm(x - c) for c in sings) < 0.05 * R:
                continue
            Q = normal_basis(spec._f(x))
            for j in range(Q.shape[1]):
                _psi_star(spec, x, beta_min * Q[:, j], t, cfg)
        except SingflowError:
            continue
        for lev in levels:
            w = rng.normal(size=spec.dim)
            pairs.append((x, x + lev * 0.01 * R * w / np.linalg.norm(w), "far"))
        made += 1
    return pairs, sings


def continuity_sweep(spec: VectorFieldSpec, t: float, eps_list: Sequence[float],
                     cfg: SectionConfig | None = None, seed: int = 0,
                     betas: Sequence[float] = (0.05, 0.0125, 0.003125),
                     shells: Sequence[float] = (1e-2, 1e-3, 1e-4), n_dirs: int = 2,
                     far_pairs: int = 2, levels: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4),
                     nsamp: int = 4, delta_levels: int = 40, parallelism: int = 1,
                     c1: bool = True) -> dict:
    """Estimate, for each eps, the largest dyadic delta (and its beta) with

        gap(x, y) <= delta  =>  |psi*_{t,x} - psi*_{t,y}|_{C^1, B(0, beta)} <= eps

    over sampled pairs.  gap is the larger of the blowup distance of the base
    points and the distance between the lines R X(x), R X(y).  Normal vectors
    at x are moved to y by orthogonal projection, rescaled to the same norm.
    A pair whose maps are undefined somewhere on the ball counts as failing
    at that beta.
    """
    cfg = DEFAULT if cfg is None else cfg
    rng = np.random.default_rng(seed)
    from .blowup import default_chart_radius
    pairs, sings = _sweep_pairs(spec, rng, n_dirs, shells, far_pairs, levels, t, cfg, min(betas))
    eps_chart = default_chart_radius(spec)
    gaps = [max(_blowup_gap(spec, sings, eps_chart, x, y), _line_gap(spec._f(x), spec._f(y)))
            for x, y, _ in pairs]
    tasks = [(i, b) for b in betas for i in range(len(pairs))]

    def run(task):
        i, b = task
        x, y, _ = pairs[i]
        return _pair_distance(spec, x, y, t, b, cfg, nsamp, c1)

    dist = _pmap(run, tasks, threads(parallelism))
    D = {b: [max(dist[j * len(pairs) + i]) for i in range(len(pairs))] for j, b in enumerate(betas)}
    grid = [2.0 ** -k for k in range(delta_levels + 1)]
    rows = []
    for eps in sorted(eps_list, reverse=True):
        best = (0.0, None)
        for b in betas:
            bad = [gaps[i] for i in range(len(pairs)) if not D[b][i] <= eps]
            limit = min(bad, default=math.inf)
            ok = [g for g in grid if g < limit]
            dl = ok[0] if ok else 0.0
            if dl > best[0]:
                best = (dl, b)
        rows.append({"eps": float(eps), "delta": best[0], "beta": best[1]})
    C0 = {b: [dist[j * len(pairs) + i][0] for i in range(len(pairs))] for j, b in enumerate(betas)}
    controls = [max(D[b][i] for b in betas) for i, p in enumerate(pairs) if p[2] == "control"]
    # undefined maps are a domain matter, not a continuity failure of the ray pair
    rays = [max((C0[b][i] for b in betas if math.isfinite(C0[b][i])), default=math.inf)
            for i, p in enumerate(pairs) if p[2] == "ray"]
    samples = [{"kind": k, "x": x.tolist(), "y": y.tolist(), "gap": gaps[i],
                "c0": {str(b): C0[b][i] for b in betas},
                "c1": {str(b): D[b][i] for b in betas}}
               for i, (x, y, k) in enumerate(pairs)]
    deltas = [r["delta"] for r in rows]
    return {
        "t": t,
        "table": rows,
        "control_max": max(controls, default=0.0),
        "ray_c0_max": max(rays, default=0.0),
        "monotone": all(deltas[i] >= deltas[i + 1] for i in range(len(deltas) - 1)),
        "positive": all(d > 0 for d in deltas),
        "pairs": samples,
    }
