import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

import singflow as sf


def brute_pliss(a, lam):
    """Indices n whose every suffix sum a[m:n] is at most -(lam/2)(n - m)."""
    out = []
    for n in range(1, len(a) + 1):
        if all(sum(a[m:n]) <= -(lam / 2) * (n - m) for m in range(n)):
            out.append(n)
    return out


def vdp_period_oracle():
    """Period of the Van der Pol cycle from successive downward crossings of y = 0."""
    f = lambda t, z: [z[1], (1 - z[0] ** 2) * z[1] - z[0]]
    ev = lambda t, z: z[1]
    ev.direction = -1
    sol = solve_ivp(f, (0, 60), [2.0, 0.0], method="DOP853", rtol=1e-13, atol=1e-13, events=ev)
    t = sol.t_events[0]
    return t[-1] - t[-2]


def test_linear_exponent(lin):
    est = sf.lyapunov_normal(lin, [1.0, 0.0], 5.0, 0.5)
    assert est.exponents.shape == (1,)
    assert est.exponents[0] == pytest.approx(3.0, abs=1e-8)
    assert est.field_rate == pytest.approx(-1.0, abs=1e-8)
    assert est.block_count == 10


def test_vanderpol_exponent(vdp):
    x = sf.flow(vdp, [2.0, 0.0], 20.0)
    a = sf.lyapunov_normal(vdp, x, 40.0, 0.5)
    b = sf.lyapunov_normal(vdp, x, 80.0, 0.5)
    assert a.exponents[0] < 0
    assert abs(a.exponents[0] - b.exponents[0]) < 1e-2
    # |X| is bounded and bounded away from zero on the cycle
    assert abs(b.field_rate) < 1e-2
    assert abs(b.field_rate) < abs(a.field_rate) + 1e-3
    assert a.logdet_residual < 1e-4


def test_exponents_stable_under_block_halving(vdp, hopf):
    for spec, x0 in ((vdp, [2.0, 0.0]), (hopf, [0.9, 0.0])):
        x = sf.flow(spec, x0, 20.0)
        a = sf.lyapunov_normal(spec, x, 20.0, 0.5)
        b = sf.lyapunov_normal(spec, x, 20.0, 0.25)
        assert np.abs(a.exponents - b.exponents).max() < 1e-3


def test_hopf_exponent_closed_form(hopf):
    # radial rate on r = 1 is -2; |X| is constant on the cycle
    est = sf.lyapunov_normal(hopf, [1.0, 0.0], 2 * np.pi, 0.25)
    assert est.exponents[0] == pytest.approx(-2.0, abs=1e-6)
    assert est.field_rate == pytest.approx(0.0, abs=1e-9)


def test_lyapunov_bad_inputs(lin):
    with pytest.raises(ValueError):
        sf.lyapunov_normal(lin, [1.0, 0.0], 0.0, 0.5)
    with pytest.raises(ValueError):
        sf.lyapunov_normal(lin, [1.0, 0.0], 1.0, 2.0)


def test_pliss_examples():
    lam = 1.0
    assert list(sf.pliss_points([-lam] * 10, lam).pliss_indices) == list(range(1, 11))
    assert sf.pliss_points([lam] * 10, lam).pliss_indices.size == 0
    a = [-2.0, 1.0] * 8
    got = list(sf.pliss_points(a, lam).pliss_indices)
    assert got == brute_pliss(a, lam)
    assert got == [1, 3, 5, 7, 9, 11, 13, 15]
    rep = sf.pliss_points([], lam)
    assert rep.pliss_indices.size == 0
    with pytest.raises(ValueError):
        sf.pliss_points([0.0, float("nan")], lam)


def test_pliss_constant_bounds_products():
    rng = np.random.default_rng(4)
    a = rng.normal(-0.3, 1.0, 200)
    rep = sf.pliss_points(a, 0.4)
    n = np.arange(1, a.size + 1)
    assert np.all(np.cumsum(a) <= math.log(rep.C) - 0.2 * n + 1e-12)


# quarter-integers keep every partial sum exact in floating point
_vals = st.integers(-12, 12).map(lambda k: k / 4)


@given(st.lists(_vals, max_size=60), st.sampled_from([0.5, 1.0, 2.0]))
@settings(max_examples=300, deadline=None)
def test_pliss_matches_brute_force(a, lam):
    assert list(sf.pliss_points(a, lam).pliss_indices) == brute_pliss(a, lam)


def test_pliss_long_lists_match_vectorized_oracle():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n = int(rng.integers(1, 2001))
        a = rng.integers(-8, 9, n) / 8.0
        lam = float(rng.choice([0.5, 1.0, 2.0]))
        # S[m, n] = sum a[m:n] from prefix sums, all exact
        P = np.concatenate([[0.0], np.cumsum(a)])
        k = np.arange(n + 1)
        ok = (P[None, :] - P[:, None]) <= -(lam / 2) * (k[None, :] - k[:, None])
        mask = np.tril(np.ones((n + 1, n + 1), dtype=bool))
        ok |= mask
        want = [j for j in range(1, n + 1) if ok[:, j].all()]
        assert list(sf.pliss_points(a, lam).pliss_indices) == want


def test_detect_periodic_hopf(hopf):
    res = sf.detect_periodic(hopf, [0.9, 0.0], 40.0)
    assert res.period == pytest.approx(2 * np.pi, abs=1e-6)
    assert res.multipliers.size == 1
    assert abs(res.multipliers[0] - np.exp(-2 * 2 * np.pi)) < 1e-4
    assert abs(np.linalg.norm(res.point) - 1.0) < 1e-8
    assert res.residual <= 1e-8
    assert res.spectrum_gap < 1e-6


def test_detect_periodic_vanderpol(vdp):
    T = vdp_period_oracle()
    assert T == pytest.approx(6.6633, abs=1e-4)
    res = sf.detect_periodic(vdp, [2.0, 0.0], 40.0)
    assert res.period == pytest.approx(T, abs=1e-8)
    assert res.residual <= 1e-8
    assert 0 < abs(res.multipliers[0]) < 1


def test_detect_periodic_no_return(lin):
    with pytest.raises(sf.NoReturnError):
        sf.detect_periodic(lin, [1.0, 1e-3], 20.0)


def test_pipeline_limit_cycles(vdp, hopf):
    for spec, x in ((vdp, [2.0, 0.0]), (hopf, [0.9, 0.0])):
        rep = sf.negative_exponents_pipeline(spec, x)
        assert rep["passed"] and rep["stage"] == "done"
        assert list(rep["stages"]) == ["exponents", "pliss", "contraction", "closing"]
    assert rep["periodic_orbit"]["period"] == pytest.approx(2 * np.pi, abs=1e-6)


def test_pipeline_linear_fields():
    # a sink passes the exponent stages and then finds no recurrence
    sink = sf.linear_field(np.diag([-1.0, -2.0]))
    rep = sf.negative_exponents_pipeline(sink, [1.0, 0.01], transient=0, total_time=10.0)
    assert not rep["passed"] and rep["stage"] == "recurrence"
    # the saddle has a positive normal exponent and stops first
    saddle = sf.linear_field(np.diag([-1.0, 2.0]))
    rep = sf.negative_exponents_pipeline(saddle, [1.0, 0.0], transient=0, total_time=5.0)
    assert not rep["passed"] and rep["stage"] == "exponents"


def test_continuity_identical_pairs_are_zero(lor):
    from singflow.analyze import _pair_distance
    x = sf.flow(lor, [1.0, 1.0, 1.0], 10.0)
    assert max(_pair_distance(lor, x, x.copy(), 1.0, 0.0125, sf.SectionConfig(), 4, True)) == 0.0


def test_continuity_sweep_linear(lin):
    rep = sf.continuity_sweep(lin, 1.0, [1e-1, 1e-2, 1e-3])
    assert rep["control_max"] == 0.0
    assert rep["ray_c0_max"] <= 1e-12
    deltas = [r["delta"] for r in rep["table"]]
    assert [r["eps"] for r in rep["table"]] == [1e-1, 1e-2, 1e-3]
    assert all(a >= b for a, b in zip(deltas, deltas[1:]))
    assert deltas[-1] > 0


def test_continuity_sweep_vanderpol_monotone(vdp):
    rep = sf.continuity_sweep(vdp, 0.5, [1e-1, 1e-2])
    deltas = [r["delta"] for r in rep["table"]]
    assert deltas[0] >= deltas[1] > 0


def test_threads_env(monkeypatch):
    monkeypatch.setenv("SINGFLOW_THREADS", "3")
    assert sf.threads() == 3
    monkeypatch.delenv("SINGFLOW_THREADS")
    assert sf.threads(2) == 2
