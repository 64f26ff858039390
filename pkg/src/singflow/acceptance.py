"""Acceptance suite: ten numbered criteria with closed-form and independent oracles.

Each criterion returns a CriterionResult; ``verify_all`` runs them in order.
Sampling is driven by numpy Generators seeded from the suite seed, so two runs
with the same seed produce identical results apart from the timing block.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from . import fields as F
from . import integrate as I
from ._json import content_hash
from .analyze import continuity_sweep, detect_periodic, negative_exponents_pipeline, pliss_points
from .blowup import (Boundary, Regular, extended_fiber_lifted_boundary, extended_flow_boundary,
                     extended_lifted_boundary, extended_poincare_boundary,
                     extended_rescaled_linear_poincare, extended_unit_field, rescaling_ratio,
                     theta_functional)
from .errors import NoReturnError, RootFindError, SingflowError
from .identify import identification
from .poincare import (DEFAULT, SectionConfig, crossing_time, linear_poincare, nonlinear_poincare,
                       normal_basis, rescaled_linear_poincare, rescaled_nonlinear_poincare)

__all__ = ["CriterionResult", "CRITERIA", "verify_all", "builtin_fields"]

BUDGETS = {1: 10.0, 2: 30.0, 3: 300.0, 4: 60.0, 5: 120.0, 6: 60.0, 7: 60.0, 8: 120.0, 9: 300.0,
           10: None}


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    seconds: float = 0.0
    budget: Optional[float] = None

    @property
    def within_budget(self) -> bool:
        return self.budget is None or self.seconds <= self.budget

    @property
    def ok(self) -> bool:
        return self.passed and self.within_budget

    def line(self) -> str:
        b = "" if self.budget is None else f" / {self.budget:.0f} s"
        return (f"criterion {self.number:2d} {'PASS' if self.ok else 'FAIL'}  {self.title}: "
                f"{self.summary} [{self.seconds:.1f} s{b}]")

    def to_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": self.passed,
                "summary": self.summary, "details": self.details,
                "timing": {"seconds": self.seconds, "budget": self.budget,
                           "within_budget": self.within_budget}}


def builtin_fields() -> dict:
    return {
        "linear": F.linear_field(np.diag([-1.0, 2.0])),
        "lorenz": F.lorenz(),
        "vanderpol": F.van_der_pol(),
        "hopf": F.hopf(),
    }


def _rot(a):
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def _unit(w):
    return w / np.linalg.norm(w)


def _project(n, w):
    n = _unit(n)
    return w - (w @ n) * n


def _canon(w):
    i = int(np.argmax(np.abs(w)))
    return w if w[i] > 0 else -w


def _closed_form(A):
    """s -> e^{sA} through the eigendecomposition of a real diagonalizable A."""
    lam, V = np.linalg.eig(A)
    Vi = np.linalg.inv(V)
    return lambda s: np.real(V @ np.diag(np.exp(s * lam)) @ Vi)


def _sphere(n, dim, rng):
    w = rng.normal(size=(n, dim))
    return w / np.linalg.norm(w, axis=1)[:, None]


def _base_points(name, spec, n, rng):
    """Regular points where unit-time maps stay in the domain."""
    d = spec.dim
    if name == "linear":
        x1 = rng.uniform(0.5, 2.0, n) * rng.choice([-1.0, 1.0], n)
        return np.column_stack([x1, rng.uniform(-0.1, 0.1, n)])
    if name == "hopf":
        r = rng.uniform(0.5, 1.5, n)
        a = rng.uniform(0, 2 * np.pi, n)
        return np.column_stack([r * np.cos(a), r * np.sin(a)])
    start = {"lorenz": [1.0, 1.0, 1.0], "vanderpol": [2.0, 0.0]}.get(name)
    if start is None:
        start = rng.uniform(-0.1, 0.1, d) * spec.domain_radius
    x = I.flow(spec, start, 10.0)
    seg = I.orbit(spec, x, 20.0)
    idx = rng.choice(len(seg.times) - 1, n)
    return seg.points[idx]


def _sing_near(spec, p):
    recs = F.find_singularities(spec)
    return min(recs, key=lambda r: np.linalg.norm(r.position - p))


# --- 1: linear-field oracles ----------------------------------------------------------

def _oracle_holonomy(E, A, x, u, t, t0):
    """Landing of x+u on the section at e^{tA}x, by a sign scan plus brentq."""
    xt = E(t) @ x
    n = A @ xt
    p = x + u
    g = lambda s: float((E(s) @ p - xt) @ n)
    grid = np.linspace(t - t0, t + t0, 201)
    vals = [g(s) for s in grid]
    roots = []
    for a, b, ga, gb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if ga == 0:
            roots.append(a)
        elif ga * gb < 0:
            roots.append(brentq(g, a, b, xtol=1e-15, rtol=1e-15))
    if not roots:
        return None, None
    s = min(roots, key=lambda r: abs(r - t))
    return E(s) @ p - xt, s


def _raises(fn, *args):
    try:
        fn(*args)
    except SingflowError:
        return True
    return False


def criterion_1(seed: int = 0, **_) -> CriterionResult:
    tol = 1e-8
    A1 = np.diag([-1.0, 2.0])
    R = _rot(0.6)
    A2 = R @ A1 @ R.T
    base = np.array([[1.0, 0.0], [1.0, 0.5], [0.3, -0.8], [-1.5, 0.7]])
    worst: dict[str, float] = {}

    def record(key, err):
        worst[key] = max(worst.get(key, 0.0), float(err))

    for A, pts in ((A1, base), (A2, base @ R.T)):
        spec = F.linear_field(A)
        E = _closed_form(A)
        rec = _sing_near(spec, np.zeros(2))
        for x in pts:
            X = A @ x
            nx = np.linalg.norm(X)
            q = _unit(np.array([-X[1], X[0]]))
            for t in (0.25, 0.5, 1.0):
                Et = E(t)
                xt = Et @ x
                Xt = A @ xt
                record("flow", np.linalg.norm(I.flow(spec, x, t) - xt))
                record("tangent_flow", np.abs(I.tangent_flow(spec, x, t) - Et).max())
                record("rescaling_ratio", abs(rescaling_ratio(spec, Regular(x), t)
                                              - nx / np.linalg.norm(Xt)))
                Psi = _project(Xt, Et @ q)
                record("Psi", np.linalg.norm(linear_poincare(spec, x, q, t).vec - Psi))
                Psi_s = nx / np.linalg.norm(Xt) * Psi
                record("Psi*", np.linalg.norm(rescaled_linear_poincare(spec, x, q, t).vec - Psi_s))
                for c in (-1.0, 0.5, 1.0):
                    u = c * DEFAULT.beta * nx * q
                    img, s = _oracle_holonomy(E, A, x, u, t, DEFAULT.t0)
                    if img is None:
                        record("domain agreement", 0.0 if _raises(nonlinear_poincare, spec, x, u, t)
                               else math.inf)
                        continue
                    r = nonlinear_poincare(spec, x, u, t)
                    record("psi", np.linalg.norm(r.image.vec - img))
                    record("psi crossing time", abs(r.crossing_time - s))
                    rs = rescaled_nonlinear_poincare(spec, x, u / nx, t)
                    record("psi*", np.linalg.norm(rs.image.vec - img / np.linalg.norm(Xt)))
        # boundary formulas at the origin
        for ang in np.linspace(0.1, np.pi - 0.1, 6):
            u = np.array([math.cos(ang), math.sin(ang)])
            Ju = A @ u
            qn = _unit(np.array([-Ju[1], Ju[0]]))
            for t in (0.25, 0.5, 1.0):
                Et = E(t)
                Etu = Et @ u
                ratio = np.linalg.norm(Ju) / np.linalg.norm(A @ Etu)
                record("boundary flow", np.linalg.norm(extended_flow_boundary(rec, u, t)
                                                       - _canon(_unit(Etu))))
                record("unit field", np.linalg.norm(extended_unit_field(rec, u) - _unit(Ju)))
                record("boundary ratio", abs(rescaling_ratio(spec, Boundary(rec, u), t) - ratio))
                y = 0.03 * qn
                record("lifted boundary", np.linalg.norm(extended_lifted_boundary(rec, u, y, t)
                                                         - ratio * Et @ y))
                record("fiber lifted boundary", np.linalg.norm(
                    extended_fiber_lifted_boundary(rec, u, y, t)
                    - (Et @ y + (Etu - u) / np.linalg.norm(Ju))))
                # a Boundary point carries the canonical representative of its direction
                uc = _canon(u)
                Etc = Et @ uc
                tau = 0.1
                img_tau = (np.linalg.norm(A @ uc) / np.linalg.norm(A @ Etc) * E(t + tau) @ y
                           + (E(t + tau) @ uc - Etc) / np.linalg.norm(A @ Etc))
                record("theta", abs(theta_functional(spec, Boundary(rec, u), t, y, tau)
                                    - img_tau @ _unit(A @ Etc)))
                w = extended_rescaled_linear_poincare(spec, Boundary(rec, u), qn, t)
                record("boundary Psi*", np.linalg.norm(w - _project(A @ Etu, ratio * Et @ qn)))
                # linear fields are scale invariant: the boundary map is psi* at x = u
                for c in (-1.0, 1.0):
                    y = c * DEFAULT.beta_prime * qn
                    img, s = _oracle_holonomy(E, A, u, np.linalg.norm(Ju) * y, t, DEFAULT.t0)
                    if img is None:
                        record("domain agreement", 0.0 if _raises(extended_poincare_boundary,
                                                                  rec, u, y, t) else math.inf)
                        continue
                    b, tau = extended_poincare_boundary(rec, u, y, t)
                    record("boundary psi*", np.linalg.norm(b - img / np.linalg.norm(A @ Etu)))
                    record("boundary tau", abs(t + tau - s))
    eta = 0.03
    L = F.linear_field(A1)
    record("crossing time", abs(crossing_time(L, [1.0, 0.0], [1 + eta, 0.0]) - math.log1p(eta)))
    bad = {k: v for k, v in worst.items() if not v <= tol}
    top = max(worst.values())
    return CriterionResult(1, "linear-field oracles", not bad,
                           f"max error {top:.2e} over {len(worst)} quantities (tol {tol:g})",
                           {"tolerance": tol, "max_error": worst, "failing": sorted(bad)})


# --- 2: tangency order --------------------------------------------------------------

def criterion_2(seed: int = 0, **_) -> CriterionResult:
    rng = np.random.default_rng(seed + 2)
    L = F.linear_field(np.diag([-1.0, 2.0]))
    lz = F.lorenz()
    cases = [(L, np.array([1.0, 0.5])), (L, np.array([0.7, -0.4])), (L, np.array([-1.2, 0.3]))]
    cases += [(lz, x) for x in _base_points("lorenz", lz, 3, rng)]
    orders = []
    rows = []
    for spec, x in cases:
        Q = normal_basis(spec._f(x))
        # steps on the local scale |X| / |DX|, where the holonomy is single valued
        h0 = 0.02 / max(1.0, np.linalg.norm(spec._df(x), 2))
        hs = (h0, h0 / 2, h0 / 4)
        for t in (0.5, 1.0):
            for j in range(Q.shape[1]):
                e = Q[:, j]
                exact = rescaled_linear_poincare(spec, x, e, t).vec
                errs = []
                for h in hs:
                    plus = rescaled_nonlinear_poincare(spec, x, h * e, t).image.vec
                    minus = rescaled_nonlinear_poincare(spec, x, -h * e, t).image.vec
                    errs.append(float(np.linalg.norm((plus - minus) / (2 * h) - exact)))
                p = [math.log2(errs[k] / errs[k + 1]) for k in range(2)]
                orders.append(min(p))
                rows.append({"field": spec.kind, "x": x, "t": t, "direction": j,
                             "steps": hs, "errors": errs, "orders": p})
    worst = min(orders)
    return CriterionResult(2, "tangency order", worst >= 1.9,
                           f"minimum observed order {worst:.3f} over {len(orders)} cases (need >= 1.9)",
                           {"min_order": worst, "cases": rows})


# --- 3: compactification limit ------------------------------------------------------

def _transport(n_to, v):
    w = _project(n_to, v)
    return w * (np.linalg.norm(v) / np.linalg.norm(w))


def criterion_3(seed: int = 0, **_) -> CriterionResult:
    rng = np.random.default_rng(seed + 3)
    lz = F.lorenz()
    rec = _sing_near(lz, np.zeros(3))
    J = rec.jacobian
    radii = (1e-2, 1e-3, 1e-4)
    rows = []
    defined = total = 0
    for u in _sphere(20, 3, rng):
        Q = normal_basis(J @ u)
        ys = [r * (math.cos(a) * Q[:, 0] + math.sin(a) * Q[:, 1])
              for r in (DEFAULT.beta_prime, DEFAULT.beta_prime / 2)
              for a in np.linspace(0, 2 * np.pi, 8, endpoint=False)]
        for t in (0.25, 0.5, 1.0):
            pairs = []
            for y in ys:
                total += 1
                try:
                    pairs.append((y, extended_poincare_boundary(rec, u, y, t)[0]))
                except RootFindError:
                    continue
            defined += len(pairs)
            dist = []
            for s in radii:
                x = rec.position + s * u
                X = lz._f(x)
                worst = 0.0 if pairs else math.nan
                for y, b in pairs:
                    try:
                        a = rescaled_nonlinear_poincare(lz, x, _transport(X, y), t).image.vec
                        worst = max(worst, float(np.linalg.norm(a - b)))
                    except SingflowError:
                        worst = math.inf
                dist.append(worst)
            ok = (not pairs) or (dist[0] > dist[1] > dist[2] and dist[2] < 1e-3)
            rows.append({"u": u, "t": t, "defined": len(pairs), "distances": dist, "passed": ok})
    good = all(r["passed"] for r in rows)
    finals = [r["distances"][2] for r in rows if r["defined"]]
    cov = defined / total
    return CriterionResult(
        3, "compactification limit", good,
        f"{sum(r['passed'] for r in rows)}/{len(rows)} (u, t) rows monotone with max distance "
        f"{max(finals):.2e} at s = 1e-4; boundary map defined on {100 * cov:.1f}% of the ball samples",
        {"radii": radii, "coverage": cov, "rows": rows})


# --- 4: normal projection of the rescaled tangent flow ---------------------------------

def _richardson(fn, h):
    d1 = (fn(h) - fn(-h)) / (2 * h)
    d2 = (fn(h / 2) - fn(-h / 2)) / h
    return (4 * d2 - d1) / 3


def criterion_4(seed: int = 0, specs: Optional[dict] = None, **_) -> CriterionResult:
    rng = np.random.default_rng(seed + 4)
    specs = builtin_fields() if specs is None else specs
    reg_worst = 0.0
    bnd_worst = 0.0
    for name, spec in specs.items():
        for x in _base_points(name, spec, 4, rng):
            Q = normal_basis(spec._f(x))
            for t in (0.5, 1.0):
                xt = I.flow(spec, x, t)
                ratio = rescaling_ratio(spec, Regular(x), t)
                for j in range(Q.shape[1]):
                    v = Q[:, j]
                    Dv = _richardson(lambda h: I.lifted_flow(spec, x, h * v, t), 1e-3)
                    phi = _project(spec._f(xt), ratio * Dv)
                    got = extended_rescaled_linear_poincare(spec, Regular(x), v, t)
                    reg_worst = max(reg_worst, float(np.linalg.norm(got - phi)
                                                     / max(1.0, np.linalg.norm(phi))))
        for rec in F.find_singularities(spec):
            for u in _sphere(12, spec.dim, rng):
                Q = normal_basis(rec.jacobian @ u)
                for t in (0.25, 0.5, 1.0):
                    image_dir = extended_flow_boundary(rec, u, t)
                    n = extended_unit_field(rec, image_dir)
                    for j in range(Q.shape[1]):
                        v = Q[:, j]
                        Dv = _richardson(lambda h: extended_lifted_boundary(rec, u, h * v, t), 1e-3)
                        phi = _project(n, Dv)
                        got = extended_rescaled_linear_poincare(spec, Boundary(rec, u), v, t)
                        bnd_worst = max(bnd_worst, float(np.linalg.norm(got - phi)
                                                         / max(1.0, np.linalg.norm(phi))))
    ok = bnd_worst < 1e-8 and reg_worst < 1e-6
    return CriterionResult(4, "normal projection of the rescaled tangent flow", ok,
                           f"boundary residual {bnd_worst:.2e} (tol 1e-8), regular residual "
                           f"{reg_worst:.2e} (tol 1e-6)",
                           {"boundary_residual": bnd_worst, "regular_residual": reg_worst})


# --- 5: flow property and identification cocycle -----------------------------------------

def _random_normal(X, r, rng):
    w = _project(X, rng.normal(size=X.size))
    return r * _unit(w)


def _flow_property(spec, sample, n, rng, cfg):
    """Residuals of psi*_{t1+t2} = psi*_{t2} o psi*_{t1}; sample(rng) draws a base point."""
    res, skipped = [], 0
    while len(res) < n and skipped < 10 * n:
        x = sample(rng)
        v = _random_normal(spec._f(x), rng.uniform(0, cfg.beta / 4), rng)
        t1, t2 = rng.uniform(0, 1, 2)
        try:
            mid = rescaled_nonlinear_poincare(spec, x, v, t1, cfg).image
            if np.linalg.norm(mid.vec) > cfg.beta:
                skipped += 1
                continue
            two = rescaled_nonlinear_poincare(spec, mid.base, mid.vec, t2, cfg).image.vec
            one = rescaled_nonlinear_poincare(spec, x, v, t1 + t2, cfg).image.vec
        except SingflowError:
            skipped += 1
            continue
        res.append(float(np.linalg.norm(one - two)))
    return res, skipped


def cocycle_residuals(spec, sample, n, rng, cfg):
    """Residuals of h_{z,x} o h_{y,z} = h_{y,x} over triples around sampled x."""
    res, skipped = [], 0
    while len(res) < n and skipped < 10 * n:
        x = sample(rng)
        X = spec._f(x)
        r = 0.3 * cfg.beta * np.linalg.norm(X)
        y = x + rng.uniform(0, r) * _unit(rng.normal(size=x.size))
        z = x + rng.uniform(0, r) * _unit(rng.normal(size=x.size))
        u = _random_normal(spec._f(y), rng.uniform(0, cfg.beta / 2), rng)
        try:
            mid = identification(spec, y, z, u, cfg).vec.vec
            if np.linalg.norm(mid) > cfg.beta:
                skipped += 1
                continue
            two = identification(spec, z, x, mid, cfg).vec.vec
            one = identification(spec, y, x, u, cfg).vec.vec
        except SingflowError:
            skipped += 1
            continue
        res.append(float(np.linalg.norm(one - two)))
    return res, skipped


def criterion_5(seed: int = 0, specs: Optional[dict] = None, samples: int = 1000, **_) -> CriterionResult:
    specs = builtin_fields() if specs is None else specs
    rows = {}
    ok = True
    for k, (name, spec) in enumerate(specs.items()):
        rng = np.random.default_rng([seed, 5, k])
        sample = lambda r, name=name, spec=spec: _base_points(name, spec, 1, r)[0]
        fp, fs = _flow_property(spec, sample, samples, rng, DEFAULT)
        cc, cs = cocycle_residuals(spec, sample, samples, rng, DEFAULT)
        row = {"flow_max": max(fp, default=math.inf), "flow_count": len(fp), "flow_skipped": fs,
               "cocycle_max": max(cc, default=math.inf), "cocycle_count": len(cc),
               "cocycle_skipped": cs}
        row["passed"] = (row["flow_max"] < 1e-8 and row["cocycle_max"] < 1e-8
                         and len(fp) >= samples and len(cc) >= samples)
        ok &= row["passed"]
        rows[name] = row
    worst = max(max(r["flow_max"], r["cocycle_max"]) for r in rows.values())
    return CriterionResult(5, "flow property and identification cocycle", ok,
                           f"max residual {worst:.2e} over {samples} + {samples} configurations "
                           f"per field (tol 1e-8)", {"fields": rows})


# --- 6: crossing-time ratio ----------------------------------------------------------

def criterion_6(seed: int = 0, specs: Optional[dict] = None, points: int = 40, **_) -> CriterionResult:
    specs = builtin_fields() if specs is None else specs
    betas = (DEFAULT.beta, DEFAULT.beta / 2, DEFAULT.beta / 4)
    rows = {}
    ok = True
    for k, (name, spec) in enumerate(specs.items()):
        rng = np.random.default_rng([seed, 6, k])
        samples = []
        for x in _base_points(name, spec, points, rng):
            X = spec._f(x)
            for t in (0.1, 0.5, 1.0):
                samples.append((x, _random_normal(X, 1.0, rng), rng.uniform(0.5, 1.0), t))
        ratios = []
        for b in betas:
            cfg = DEFAULT.with_(beta=b)
            col = []
            for x, d, frac, t in samples:
                u = frac * b * np.linalg.norm(spec._f(x)) * d
                try:
                    col.append(nonlinear_poincare(spec, x, u, t, cfg).ratio_bound)
                except SingflowError:
                    col.append(math.nan)
            ratios.append(np.array(col))
        worst = [float(np.nanmax(np.r_[1.0, r])) for r in ratios]
        # monotonicity is judged on the samples defined at every beta
        common = np.all([np.isfinite(r) for r in ratios], axis=0)
        worst_common = [float(np.max(np.r_[1.0, r[common]])) for r in ratios]
        row = {"betas": betas, "worst_ratio": worst, "worst_ratio_common": worst_common,
               "undefined": [int(np.sum(~np.isfinite(r))) for r in ratios],
               "samples": len(samples), "bound_ok": worst[0] < 1 + DEFAULT.rho,
               "monotone": worst_common[0] > worst_common[1] > worst_common[2]}
        row["passed"] = row["bound_ok"] and row["monotone"]
        ok &= row["passed"]
        rows[name] = row
    text = ", ".join(f"{n} {r['worst_ratio'][0]:.3f}" for n, r in rows.items())
    return CriterionResult(6, "crossing-time ratio bound", ok,
                           f"worst ratio at default beta: {text} (need < {1 + DEFAULT.rho:g} "
                           f"and monotone under halving)", {"fields": rows})


# --- 7: Pliss brute force --------------------------------------------------------------

@njit(cache=True)
def _pliss_brute(a, lam):
    """Indices n >= 1 whose every suffix sum a[m:n] is <= -(lam/2)(n-m), by direct summation."""
    out = np.empty(a.size, np.int64)
    k = 0
    for n in range(1, a.size + 1):
        good = True
        s = 0.0
        for m in range(n - 1, -1, -1):
            s += a[m]
            if s > -0.5 * lam * (n - m):
                good = False
                break
        if good:
            out[k] = n
            k += 1
    return out[:k]


def pliss_sequences(seed: int, count: int, max_len: int = 2000):
    """Dyadic random sequences: every partial sum is exact in double precision."""
    rng = np.random.default_rng([seed, 7])
    for _ in range(count):
        n = int(rng.integers(1, max_len + 1))
        lam = float(rng.choice([0.5, 1.0, 2.0]))
        drift = float(rng.choice([-1.0, -0.5, -0.25, 0.0, 0.25]))
        noise = rng.integers(-64, 65, n) / 32.0
        yield (drift - lam / 2) + noise, lam


def criterion_7(seed: int = 0, count: int = 10_000, **_) -> CriterionResult:
    mismatches = 0
    total_points = 0
    for a, lam in pliss_sequences(seed, count):
        fast = np.asarray(pliss_points(a, lam).pliss_indices, dtype=np.int64)
        slow = _pliss_brute(a, lam)
        total_points += slow.size
        if fast.shape != slow.shape or np.any(fast != slow):
            mismatches += 1
    return CriterionResult(7, "Pliss brute-force equivalence", mismatches == 0,
                           f"{mismatches} mismatches over {count} sequences "
                           f"({total_points} Pliss indices)",
                           {"sequences": count, "mismatches": mismatches, "indices": total_points})


# --- 8: closing pipeline -------------------------------------------------------------

def vanderpol_period(mu: float = 1.0) -> float:
    """Limit-cycle period from a return map to {y = 0, x > 0} at tolerance 1e-12."""
    def rhs(t, z):
        return [z[1], mu * (1 - z[0] ** 2) * z[1] - z[0]]

    def hit(t, z):
        return z[1]
    hit.terminal = True
    hit.direction = -1

    def ret(x0):
        a = solve_ivp(rhs, (0, 1), [x0, 0.0], method="DOP853", rtol=1e-12, atol=1e-12)
        b = solve_ivp(rhs, (1, 50), a.y[:, -1], method="DOP853", rtol=1e-12, atol=1e-12,
                      events=hit)
        return b.y_events[0][0][0], b.t_events[0][0]

    x_star = brentq(lambda x: ret(x)[0] - x, 1.5, 2.5, xtol=1e-14)
    return float(ret(x_star)[1])


def criterion_8(seed: int = 0, **_) -> CriterionResult:
    details = {}
    V = F.van_der_pol()
    H = F.hopf()
    ref = vanderpol_period()
    rv = negative_exponents_pipeline(V, [2.0, 0.0])
    vdp_err = abs(rv["periodic_orbit"]["period"] - ref) if rv["passed"] else math.inf
    details["vanderpol"] = {"stage": rv["stage"], "oracle_period": ref, "period_error": vdp_err}
    rh = negative_exponents_pipeline(H, [0.9, 0.0])
    if rh["passed"]:
        po = rh["periodic_orbit"]
        h_err = abs(po["period"] - 2 * math.pi)
        mult = complex(*po["multipliers"][0])
        m_err = abs(mult - math.exp(-4 * math.pi))
    else:
        h_err = m_err = math.inf
    details["hopf"] = {"stage": rh["stage"], "period_error": h_err, "multiplier_error": m_err}
    try:
        detect_periodic(F.linear_field(np.diag([-1.0, 2.0])), [1.0, 0.3], 40.0)
        no_return = False
    except NoReturnError:
        no_return = True
    details["linear_no_return"] = no_return
    ok = vdp_err < 1e-6 and h_err < 1e-8 and m_err < 1e-4 and no_return
    return CriterionResult(8, "closing pipeline", ok,
                           f"Van der Pol period error {vdp_err:.1e}, Hopf period error {h_err:.1e}, "
                           f"Hopf multiplier error {m_err:.1e}, linear no-return {no_return}",
                           details)


# --- 9: continuity sweep -----------------------------------------------------------

def criterion_9(seed: int = 0, specs: Optional[dict] = None, parallelism: int = 1, **_) -> CriterionResult:
    specs = builtin_fields() if specs is None else specs
    eps = (1e-1, 1e-2, 1e-3)
    rows = {}
    ok = True
    for name, spec in specs.items():
        r = continuity_sweep(spec, 1.0, eps, seed=seed, parallelism=parallelism)
        row = {"table": r["table"], "monotone": r["monotone"], "positive": r["positive"],
               "control_max": r["control_max"], "ray_c0_max": r["ray_c0_max"]}
        row["passed"] = r["monotone"] and r["positive"] and r["control_max"] <= 1e-12
        ok &= row["passed"]
        rows[name] = row
    text = ", ".join(f"{n} " + "/".join(f"{t['delta']:.1e}" for t in r["table"])
                     for n, r in rows.items())
    return CriterionResult(9, "continuity sweep", ok, f"delta per eps: {text}", {"fields": rows})


# --- 10: determinism ----------------------------------------------------------------

CRITERIA: dict[int, Callable[..., CriterionResult]] = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9,
}


def _run_one(n, **kw) -> CriterionResult:
    t = time.perf_counter()
    res = CRITERIA[n](**kw)
    res.seconds = time.perf_counter() - t
    res.budget = BUDGETS[n]
    return res


def verify_all(seed: int = 0, field_spec: Optional[F.VectorFieldSpec] = None, parallelism: int = 1,
               only: Optional[set] = None, determinism: bool = True,
               report: Optional[Callable[[CriterionResult], None]] = None) -> list[CriterionResult]:
    """Run the criteria in order.

    With field_spec, the per-field criteria (4, 5, 6, 9) run on that field
    alone.  Criterion 10 repeats criteria 1-9 and compares content hashes.
    """
    specs = None if field_spec is None else {field_spec.kind: field_spec}
    kw = {"seed": seed, "specs": specs, "parallelism": parallelism}
    wanted = [n for n in sorted(CRITERIA) if only is None or n in only]
    out = []
    for n in wanted:
        r = _run_one(n, **kw)
        out.append(r)
        if report:
            report(r)
    if determinism and (only is None or 10 in only):
        t = time.perf_counter()
        first = content_hash([r.to_dict() for r in out])
        again = content_hash([_run_one(n, **kw).to_dict() for n in wanted])
        r = CriterionResult(10, "determinism", first == again,
                            f"hash {first[:16]} vs {again[:16]}",
                            {"first": first, "second": again, "criteria": wanted},
                            time.perf_counter() - t, BUDGETS[10])
        out.append(r)
        if report:
            report(r)
    return out
