import numpy as np
import pytest

import singflow as sf

E1 = np.array([1.0, 0.0])
E2 = np.array([0.0, 1.0])
D = np.array([1.0, 1.0]) / np.sqrt(2.0)


@pytest.fixture(scope="module")
def sig(lin):
    return sf.find_singularities(lin)[0]


@pytest.fixture(scope="module")
def lor_origin(lor):
    return [r for r in sf.find_singularities(lor) if np.allclose(r.position, 0)][0]


def test_canonical_representative():
    np.testing.assert_array_equal(sf.canonical([0.6, -0.8]), [-0.6, 0.8])
    np.testing.assert_array_equal(sf.canonical([-0.6, 0.8]), [-0.6, 0.8])
    # ties go to the lowest index
    np.testing.assert_array_equal(sf.canonical([-1.0, 1.0]), [1.0, -1.0])


def test_to_blowup(lin, lor):
    assert isinstance(sf.to_blowup(lin, [1.0, 0.5]), sf.Regular)
    with pytest.raises(sf.NeedsDirectionError):
        sf.to_blowup(lin, [0.0, 0.0])
    b = sf.to_blowup(lin, [0.0, 0.0], direction=[0.0, -3.0])
    assert isinstance(b, sf.Boundary)
    np.testing.assert_array_equal(b.dir, E2)
    assert b == sf.to_blowup(lin, [0.0, 0.0], direction=E2)


def test_chart_coords(lin, sig):
    u = np.array([0.6, -0.8])
    c = sf.chart_coords(lin, 0.01 * u)
    assert c.s == pytest.approx(0.01)
    np.testing.assert_allclose(c.u, u)
    np.testing.assert_allclose(c.point, 0.01 * u, atol=1e-17)
    assert sf.chart_coords(lin, [5.0, 0.0]) is None
    # (s, u) and (-s, -u) name the same point
    a = sf.ChartCoords(sig, 0.01, u)
    b = sf.ChartCoords(sig, -0.01, -u)
    np.testing.assert_array_equal(a.point, b.point)
    assert sf.ChartCoords(sig, 0.0, u).blowup_point() == sf.ChartCoords(sig, 0.0, -u).blowup_point()


def test_default_chart_radius(lin, lor):
    assert sf.default_chart_radius(lin) == pytest.approx(1.0)
    # closest pair is C+ and C-, at distance 2 sqrt(2) sqrt(72) = 24
    assert sf.default_chart_radius(lor) == pytest.approx(0.2 * 24.0)


def test_extended_flow_boundary(sig):
    got = sf.extended_flow_boundary(sig, D, 1.0)
    want = np.array([np.exp(-1.0), np.exp(2.0)])
    np.testing.assert_allclose(got, want / np.linalg.norm(want), rtol=1e-13)
    np.testing.assert_allclose(got, [0.049726, 0.998763], atol=1e-6)
    np.testing.assert_allclose(sf.extended_flow_boundary(sig, E1, 0.7), E1, atol=1e-15)
    np.testing.assert_allclose(sf.extended_flow_boundary(sig, D, 0.0), D, atol=1e-15)


def test_boundary_flow_property(lor_origin):
    rng = np.random.default_rng(0)
    # forward times; backward maps amplify rounding by exp(34.6 |t|)
    for _ in range(20):
        u = rng.normal(size=3)
        t1, t2 = rng.uniform(0, 1, 2)
        a = sf.extended_flow_boundary(lor_origin, sf.extended_flow_boundary(lor_origin, u, t1), t2)
        b = sf.extended_flow_boundary(lor_origin, u, t1 + t2)
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_extended_unit_field(sig, lor, lor_origin):
    np.testing.assert_allclose(sf.extended_unit_field(sig, E1), -E1)
    np.testing.assert_allclose(sf.extended_unit_field(sig, D), np.array([-1.0, 2.0]) / np.sqrt(5.0))
    u = np.array([0.3, -0.2, 0.9]) / np.linalg.norm([0.3, -0.2, 0.9])
    lim = sf.extended_unit_field(lor_origin, u)
    errs = []
    for s in (1e-2, 1e-3, 1e-4):
        X = sf.eval_field(lor, s * u)
        errs.append(np.linalg.norm(X / np.linalg.norm(X) - lim))
    # O(s) convergence
    assert errs[0] / errs[1] == pytest.approx(10.0, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(10.0, rel=0.1)


def test_rescaling_ratio(lin, sig):
    for t in (0.5, 1.0):
        assert sf.rescaling_ratio(lin, sf.Regular(E1), t) == pytest.approx(np.exp(t), rel=1e-10)
        assert sf.rescaling_ratio(lin, sf.Boundary(sig, E1), t) == pytest.approx(np.exp(t), rel=1e-13)
    assert sf.rescaling_ratio(lin, sf.Boundary(sig, D), 0.0) == 1.0


def test_extended_lifted_boundary(sig):
    np.testing.assert_allclose(sf.extended_lifted_boundary(sig, E1, E2, 1.0), np.exp(3.0) * E2, rtol=1e-13)
    assert np.array_equal(sf.extended_lifted_boundary(sig, E1, np.zeros(2), 1.0), np.zeros(2))


def test_extended_fiber_lifted_boundary(sig):
    np.testing.assert_allclose(sf.extended_fiber_lifted_boundary(sig, E1, np.zeros(2), 1.0),
                               [np.exp(-1.0) - 1.0, 0.0], atol=1e-15)
    y = np.array([0.01, -0.02])
    np.testing.assert_allclose(sf.extended_fiber_lifted_boundary(sig, D, y, 0.0), y, atol=1e-17)


def test_lifted_flows_converge_to_boundary(lor, lor_origin):
    u = np.array([0.3, -0.2, 0.9]) / np.linalg.norm([0.3, -0.2, 0.9])
    y = np.array([0.01, 0.02, -0.01])
    t = 0.3
    lim = sf.extended_lifted_boundary(lor_origin, u, y, t)
    lim0 = sf.extended_fiber_lifted_boundary(lor_origin, u, y, t)
    errs, errs0 = [], []
    for s in (1e-2, 1e-3, 1e-4):
        x = s * u
        nx = np.linalg.norm(sf.eval_field(lor, x))
        nxt = np.linalg.norm(sf.eval_field(lor, sf.flow(lor, x, t)))
        errs.append(np.linalg.norm(sf.lifted_flow(lor, x, nx * y, t) / nxt - lim))
        errs0.append(np.linalg.norm(sf.fiber_lifted_flow(lor, x, nx * y, t) / nx - lim0))
    for e in (errs, errs0):
        assert e[0] > e[1] > e[2]
        assert e[2] < 1e-3


def test_theta_functional(lin, sig):
    assert sf.theta_functional(lin, sf.Regular(E1), 1.0, np.zeros(2), 0.0) == 0.0
    b = sf.Boundary(sig, E1)
    assert sf.theta_functional(lin, b, 1.0, 0.01 * E2, 0.0) == pytest.approx(0.0, abs=1e-15)


def test_theta_derivative_nonzero_on_boundary(lor):
    rng = np.random.default_rng(5)
    h = 1e-6
    for rec in sf.find_singularities(lor):
        for _ in range(10):
            b = sf.Boundary(rec, rng.normal(size=3))
            t = rng.uniform(0, 1)
            d = (sf.theta_functional(lor, b, t, np.zeros(3), h)
                 - sf.theta_functional(lor, b, t, np.zeros(3), -h)) / (2 * h)
            assert abs(d) > 1e-3


def test_extended_poincare_boundary(sig):
    img, tau = sf.extended_poincare_boundary(sig, E1, np.zeros(2), 1.0)
    assert tau == 0.0 and np.array_equal(img, np.zeros(2))
    img, tau = sf.extended_poincare_boundary(sig, E1, 0.01 * E2, 1.0)
    assert tau == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(img, 0.01 * np.exp(3.0) * E2, rtol=1e-13)


def test_extended_poincare_image_is_normal(lor_origin):
    rng = np.random.default_rng(11)
    J = lor_origin.jacobian
    for _ in range(20):
        u = rng.normal(size=3)
        u /= np.linalg.norm(u)
        y = rng.normal(size=3)
        y -= (y @ (J @ u)) / np.linalg.norm(J @ u) ** 2 * (J @ u)
        y *= 0.01 / np.linalg.norm(y)
        t = rng.uniform(0.1, 1.0)
        try:
            img, tau = sf.extended_poincare_boundary(lor_origin, u, y, t)
        except sf.RootFindError:
            continue
        # the target section sits at the boundary image of u at time t
        n = sf.extended_unit_field(lor_origin, sf.extended_flow_boundary(lor_origin, u, t))
        assert abs(img @ n) <= 1e-10 * max(1.0, np.linalg.norm(img))


def test_extended_poincare_tangent_is_linear_map(lin, sig, lor, lor_origin):
    b = sf.Boundary(sig, E1)
    np.testing.assert_allclose(sf.extended_rescaled_linear_poincare(lin, b, E2, 1.0),
                               np.exp(3.0) * E2, rtol=1e-13)
    assert np.array_equal(sf.extended_rescaled_linear_poincare(lin, b, E2, 0.0), E2)
    J = lor_origin.jacobian
    u = np.array([0.3, -0.2, 0.9]) / np.linalg.norm([0.3, -0.2, 0.9])
    Q = sf.normal_basis(J @ u)
    h = 1e-5
    for k in range(2):
        q = Q[:, k]
        fd = (sf.extended_poincare_boundary(lor_origin, u, h * q, 0.7)[0]
              - sf.extended_poincare_boundary(lor_origin, u, -h * q, 0.7)[0]) / (2 * h)
        want = sf.extended_rescaled_linear_poincare(lor, sf.Boundary(lor_origin, u), q, 0.7)
        assert np.linalg.norm(fd - want) <= 1e-6 * max(1.0, np.linalg.norm(want))


def test_regular_case_matches_rescaled_linear_poincare(lor):
    x = sf.flow(lor, [1.0, 1.0, 1.0], 3.0)
    v = sf.normal_project(lor, x, [0.1, 0.5, -0.2]).vec
    np.testing.assert_array_equal(sf.extended_rescaled_linear_poincare(lor, sf.Regular(x), v, 0.5),
                                  sf.rescaled_linear_poincare(lor, x, v, 0.5).vec)


def test_antipodal_equivariance(lin, lor_origin):
    rng = np.random.default_rng(2)
    J = lor_origin.jacobian
    for _ in range(10):
        u = rng.normal(size=3)
        t = rng.uniform(0.1, 1.0)
        np.testing.assert_allclose(sf.extended_flow_boundary(lor_origin, u, t),
                                   sf.extended_flow_boundary(lor_origin, -u, t), atol=1e-14)
        assert sf.rescaling_ratio(lin, sf.Boundary(lor_origin, u), t) == \
            sf.rescaling_ratio(lin, sf.Boundary(lor_origin, -u), t)
        y = rng.normal(size=3) * 0.01
        np.testing.assert_allclose(sf.extended_lifted_boundary(lor_origin, u, y, t),
                                   sf.extended_lifted_boundary(lor_origin, -u, y, t), atol=1e-14)


def test_boundary_limit_of_rescaled_holonomy(lor, lor_origin):
    # psi* at sigma + s u approaches the boundary map as s -> 0
    u = np.array([0.3, -0.2, 0.9]) / np.linalg.norm([0.3, -0.2, 0.9])
    J = lor_origin.jacobian
    q = sf.normal_basis(J @ u)[:, 0]
    y = 0.005 * q
    lim, _ = sf.extended_poincare_boundary(lor_origin, u, y, 0.5)
    errs = []
    for s in (1e-2, 1e-3, 1e-4):
        x = s * u
        X = sf.eval_field(lor, x)
        v = y - (y @ X) / (X @ X) * X
        errs.append(np.linalg.norm(sf.rescaled_nonlinear_poincare(lor, x, v, 0.5).image.vec - lim))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-3


@pytest.mark.parametrize("name", ["lin", "lor", "vdp", "hopf"])
def test_check_boundary_passes(name, request):
    rep = sf.check_boundary(request.getfixturevalue(name), n_dirs=3)
    assert rep["passed"], rep
