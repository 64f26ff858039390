"""Rescaled holonomy near the Lorenz origin against its boundary value.

Prints the C0 gap between psi*_t at sigma + s u and the closed-form boundary
map for shrinking s, for a few directions u.
"""
import numpy as np

import singflow as sf

spec = sf.lorenz()
sing = [r for r in sf.find_singularities(spec) if np.allclose(r.position, 0)][0]
J = sing.jacobian
rng = np.random.default_rng(0)
t = 0.5

print(f"{'direction':>28} {'s':>8} {'gap':>10}")
for _ in range(3):
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    y = 0.005 * sf.normal_basis(J @ u)[:, 0]
    try:
        limit, tau = sf.extended_poincare_boundary(sing, u, y, t)
    except sf.RootFindError:
        continue
    for s in (1e-2, 1e-3, 1e-4):
        x = s * u
        X = sf.eval_field(spec, x)
        v = y - (y @ X) / (X @ X) * X
        img = sf.rescaled_nonlinear_poincare(spec, x, v, t).image.vec
        print(f"{np.array2string(u, precision=3):>28} {s:8.0e} {np.linalg.norm(img - limit):10.2e}")
