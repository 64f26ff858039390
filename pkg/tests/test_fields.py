import numpy as np
import pytest

import singflow as sf


def test_eval_linear(lin):
    assert np.array_equal(sf.eval_field(lin, [1.0, 0.0]), [-1.0, 0.0])


def test_eval_lorenz(lor):
    x = np.array([1.0, 1.0, 1.0])
    np.testing.assert_allclose(sf.eval_field(lor, x), [0.0, 26.0, -5.0 / 3.0], atol=1e-14)
    assert np.array_equal(sf.eval_field(lor, np.zeros(3)), np.zeros(3))


def test_lorenz_jacobian_at_origin(lor):
    want = [[-10.0, 10.0, 0.0], [28.0, -1.0, 0.0], [0.0, 0.0, -8.0 / 3.0]]
    np.testing.assert_allclose(sf.eval_jacobian(lor, np.zeros(3)), want, atol=1e-15)


def test_polynomial_jacobian():
    spec = sf.polynomial_field([[(1.0, (0, 2))], []])
    np.testing.assert_array_equal(sf.eval_jacobian(spec, [0.0, 3.0]), [[0.0, 6.0], [0.0, 0.0]])


@pytest.mark.parametrize("name", ["lor", "vdp", "hopf"])
def test_jacobian_matches_central_differences(name, request):
    spec = request.getfixturevalue(name)
    rng = np.random.default_rng(1)
    x = rng.uniform(-2, 2, spec.dim)
    J = sf.eval_jacobian(spec, x)
    errs = []
    for h in (1e-2, 5e-3):
        fd = np.column_stack([
            (sf.eval_field(spec, x + h * e) - sf.eval_field(spec, x - h * e)) / (2 * h)
            for e in np.eye(spec.dim)])
        errs.append(np.abs(fd - J).max())
    # cubic terms give an O(h^2) error; halving h divides it by about 4
    assert errs[1] < 1e-3
    if errs[0] > 1e-10:
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_lorenz_origin_eigenvalues(lor):
    rec = [r for r in sf.find_singularities(lor) if np.allclose(r.position, 0)][0]
    disc = np.sqrt(11.0 ** 2 + 4 * 10 * 27)
    want = sorted([(-11.0 + disc) / 2, (-11.0 - disc) / 2, -8.0 / 3.0])
    np.testing.assert_allclose(sorted(rec.eigenvalues.real), want, atol=1e-10)
    assert want[0] == pytest.approx(-22.8277, abs=1e-4)
    assert want[2] == pytest.approx(11.8277, abs=1e-4)


def test_lorenz_nontrivial_singularities(lor):
    recs = sf.find_singularities(lor)
    c = np.sqrt(8.0 / 3.0 * 27.0)
    pos = sorted(tuple(np.round(r.position, 9)) for r in recs)
    want = sorted(tuple(np.round(p, 9)) for p in ([0, 0, 0], [c, c, 27.0], [-c, -c, 27.0]))
    assert pos == want


def test_eigendecomposition_reconstructs_jacobian(lor, vdp, hopf):
    for spec in (lor, vdp, hopf):
        for r in sf.find_singularities(spec):
            V, w = r.eigenvectors, r.eigenvalues
            np.testing.assert_allclose(V @ np.diag(w) @ np.linalg.inv(V), r.jacobian, atol=1e-10)
            assert np.linalg.norm(sf.eval_field(spec, r.position)) <= 1e-12


def test_find_singularities_idempotent(lor):
    a = sf.find_singularities(lor)
    b = sf.find_singularities(lor)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.position, rb.position)
        assert np.array_equal(ra.eigenvalues, rb.eigenvalues)


def test_degenerate_singularity_raises():
    spec = sf.polynomial_field([[(1.0, (2, 0))], [(1.0, (0, 1))]], singularities=[[0.0, 0.0]])
    with pytest.raises(sf.DegenerateSingularityError):
        sf.find_singularities(spec)


def test_out_of_domain_raises(lin):
    with pytest.raises(sf.DomainError):
        sf.eval_field(lin, [100.0, 0.0])
    with pytest.raises(ValueError):
        sf.eval_field(lin, [1.0, 0.0, 0.0])


@pytest.mark.parametrize("name", ["lin", "lor", "vdp", "hopf"])
def test_config_round_trip(name, request, tmp_path):
    spec = request.getfixturevalue(name)
    path = tmp_path / "f.json"
    sf.save_field(spec, path)
    back = sf.load_field(path)
    assert back == spec
    x = np.linspace(0.1, 0.7, spec.dim)
    assert np.array_equal(sf.eval_field(back, x), sf.eval_field(spec, x))


def test_polynomial_config_round_trip():
    spec = sf.polynomial_field([[(1.0, (0, 2)), (-0.5, (1, 0))], [(2.0, (1, 1))]], [[0.0, 0.0]], 5.0)
    assert sf.from_config(sf.to_config(spec)) == spec


def test_bad_configs():
    with pytest.raises(ValueError, match="FORMATS.md"):
        sf.from_config({"kind": "lorenz"})
    with pytest.raises(ValueError):
        sf.from_config({"kind": "nope", "dim": 2})
    with pytest.raises(ValueError):
        sf.from_config({"kind": "lorenz", "dim": 2})
    with pytest.raises(ValueError):
        sf.polynomial_field([[(1.0, (1,))], []])
