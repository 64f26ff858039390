# Compiled inner loops: polynomial fields and an adaptive DOP853 stepper.
#
# Every field is stored as a flat list of monomials (coefficient, output
# component, exponent multi-index), so a single compiled evaluator covers the
# builtin fields and user polynomials alike.
from __future__ import annotations

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dop

_NS = _dop.N_STAGES
A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
B = np.ascontiguousarray(_dop.B)
C = np.ascontiguousarray(_dop.C[:_NS])
E3 = np.ascontiguousarray(_dop.E3)
E5 = np.ascontiguousarray(_dop.E5)

# system modes
FLOW = 0      # y = x
VARIATIONAL = 1  # y = [x, M (d*m, row-major), int tr DX]
LIFTED = 2    # y = [x, w], w' = X(x + w) - X(x)
FIBER = 3     # y = z, z' = X(anchor + z)

# exit status
OK = 0
ESCAPED = 1
NEAR_SINGULAR = 2
TOO_SMALL_STEP = 3
TOO_MANY_STEPS = 4

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXP = -1.0 / 8.0


@njit(cache=True, nogil=True)
def _ipow(v, e):
    r = 1.0
    for _ in range(e):
        r *= v
    return r


@njit(cache=True, nogil=True)
def poly_eval(coef, comp, expo, x, out):
    out[:] = 0.0
    nt, d = expo.shape
    for k in range(nt):
        m = coef[k]
        for j in range(d):
            e = expo[k, j]
            if e > 0:
                m *= _ipow(x[j], e)
        out[comp[k]] += m


@njit(cache=True, nogil=True)
def poly_jac(coef, comp, expo, x, out):
    out[:, :] = 0.0
    nt, d = expo.shape
    for k in range(nt):
        for j in range(d):
            ej = expo[k, j]
            if ej == 0:
                continue
            m = coef[k] * ej * _ipow(x[j], ej - 1)
            for i in range(d):
                if i != j and expo[k, i] > 0:
                    m *= _ipow(x[i], expo[k, i])
            out[comp[k], j] += m


@njit(cache=True, nogil=True)
def _rhs(mode, coef, comp, expo, d, m, anchor, y, out, xb, fb, jb):
    if mode == FLOW:
        poly_eval(coef, comp, expo, y[:d], out[:d])
    elif mode == VARIATIONAL:
        x = y[:d]
        poly_eval(coef, comp, expo, x, out[:d])
        poly_jac(coef, comp, expo, x, jb)
        for i in range(d):
            for c in range(m):
                acc = 0.0
                for k in range(d):
                    acc += jb[i, k] * y[d + k * m + c]
                out[d + i * m + c] = acc
        tr = 0.0
        for i in range(d):
            tr += jb[i, i]
        out[d + d * m] = tr
    elif mode == LIFTED:
        poly_eval(coef, comp, expo, y[:d], out[:d])
        for i in range(d):
            xb[i] = y[i] + y[d + i]
        poly_eval(coef, comp, expo, xb, fb)
        for i in range(d):
            out[d + i] = fb[i] - out[i]
    else:
        for i in range(d):
            xb[i] = anchor[i] + y[i]
        poly_eval(coef, comp, expo, xb, out[:d])


@njit(cache=True, nogil=True)
def _base_norms(mode, d, anchor, y, f):
    """Return (largest distance from origin of a tracked point, |X(base)|)."""
    r2 = 0.0
    if mode == FIBER:
        for i in range(d):
            r2 += (anchor[i] + y[i]) ** 2
    else:
        for i in range(d):
            r2 += y[i] ** 2
        if mode == LIFTED:
            q2 = 0.0
            for i in range(d):
                q2 += (y[i] + y[d + i]) ** 2
            if q2 > r2:
                r2 = q2
    f2 = 0.0
    for i in range(d):
        f2 += f[i] ** 2
    return np.sqrt(r2), np.sqrt(f2)


@njit(cache=True, nogil=True)
def _rms(v):
    s = 0.0
    for i in range(v.size):
        s += v[i] * v[i]
    return np.sqrt(s / v.size)


@njit(cache=True, nogil=True)
def integrate(mode, coef, comp, expo, d, m, anchor, y0, t0, t1, rtol, atol,
              max_step, escape_radius, sing_threshold, max_steps, a, b, c, e3, e5):
    """Integrate one of the systems above from t0 to t1.

    Returns (status, ts, ys, fs) with every accepted step recorded; on a
    non-OK status the last recorded step is the one that triggered it.
    """
    n = y0.size
    xb = np.empty(d)
    fb = np.empty(d)
    jb = np.empty((d, d))

    cap = 64
    ts = np.empty(cap)
    ys = np.empty((cap, n))
    fs = np.empty((cap, n))

    y = y0.copy()
    f = np.empty(n)
    _rhs(mode, coef, comp, expo, d, m, anchor, y, f, xb, fb, jb)
    ts[0] = t0
    ys[0] = y
    fs[0] = f
    cnt = 1

    if t1 == t0:
        return OK, ts[:1], ys[:1], fs[:1]
    direction = 1.0 if t1 > t0 else -1.0

    # initial step (Hairer, Norsett & Wanner, II.4)
    scale = atol + np.abs(y) * rtol
    d0 = _rms(y / scale)
    d1 = _rms(f / scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = y + h0 * direction * f
    f1 = np.empty(n)
    _rhs(mode, coef, comp, expo, d, m, anchor, y1, f1, xb, fb, jb)
    d2 = _rms((f1 - f) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / 8.0)
    h_abs = min(100.0 * h0, h1, abs(t1 - t0))

    K = np.empty((13, n))
    ytmp = np.empty(n)
    t = t0
    nsteps = 0
    while direction * (t1 - t) > 0.0:
        if nsteps >= max_steps:
            return TOO_MANY_STEPS, ts[:cnt], ys[:cnt], fs[:cnt]
        nsteps += 1
        min_step = 10.0 * abs(np.nextafter(t, direction * np.inf) - t)
        if h_abs > max_step:
            h_abs = max_step
        rejected = False
        while True:
            if h_abs < min_step:
                return TOO_SMALL_STEP, ts[:cnt], ys[:cnt], fs[:cnt]
            h = h_abs * direction
            t_new = t + h
            if direction * (t_new - t1) > 0.0:
                t_new = t1
            h = t_new - t
            h_abs = abs(h)

            K[0] = f
            for s in range(1, 12):
                for i in range(n):
                    acc = 0.0
                    for j in range(s):
                        acc += a[s, j] * K[j, i]
                    ytmp[i] = y[i] + h * acc
                _rhs(mode, coef, comp, expo, d, m, anchor, ytmp, K[s], xb, fb, jb)
            y_new = np.empty(n)
            for i in range(n):
                acc = 0.0
                for j in range(12):
                    acc += b[j] * K[j, i]
                y_new[i] = y[i] + h * acc
            f_new = np.empty(n)
            _rhs(mode, coef, comp, expo, d, m, anchor, y_new, f_new, xb, fb, jb)
            K[12] = f_new

            err5 = 0.0
            err3 = 0.0
            for i in range(n):
                sc = atol[i] + max(abs(y[i]), abs(y_new[i])) * rtol
                a5 = 0.0
                a3 = 0.0
                for j in range(13):
                    a5 += e5[j] * K[j, i]
                    a3 += e3[j] * K[j, i]
                err5 += (a5 / sc) ** 2
                err3 += (a3 / sc) ** 2
            if err5 == 0.0 and err3 == 0.0:
                err = 0.0
            else:
                err = h_abs * err5 / np.sqrt((err5 + 0.01 * err3) * n)

            if err < 1.0:
                if err == 0.0:
                    factor = MAX_FACTOR
                else:
                    factor = min(MAX_FACTOR, SAFETY * err ** ERR_EXP)
                if rejected:
                    factor = min(1.0, factor)
                h_abs *= factor
                break
            h_abs *= max(MIN_FACTOR, SAFETY * err ** ERR_EXP)
            rejected = True

        t = t_new
        y = y_new
        f = f_new
        if cnt == cap:
            cap *= 2
            ts2 = np.empty(cap)
            ys2 = np.empty((cap, n))
            fs2 = np.empty((cap, n))
            ts2[:cnt] = ts[:cnt]
            ys2[:cnt] = ys[:cnt]
            fs2[:cnt] = fs[:cnt]
            ts, ys, fs = ts2, ys2, fs2
        ts[cnt] = t
        ys[cnt] = y
        fs[cnt] = f
        cnt += 1

        r, fx = _base_norms(mode, d, anchor, y, f)
        if r > escape_radius:
            return ESCAPED, ts[:cnt], ys[:cnt], fs[:cnt]
        if fx < sing_threshold:
            return NEAR_SINGULAR, ts[:cnt], ys[:cnt], fs[:cnt]

    return OK, ts[:cnt], ys[:cnt], fs[:cnt]
