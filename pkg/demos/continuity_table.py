"""Continuity table (eps, delta, beta) for each builtin field, t = 1."""
import sys

import numpy as np

import singflow as sf

fields = {"linear": sf.linear_field(np.diag([-1.0, 2.0])), "lorenz": sf.lorenz(),
          "vanderpol": sf.van_der_pol(), "hopf": sf.hopf()}
names = sys.argv[1:] or list(fields)
for name in names:
    rep = sf.continuity_sweep(fields[name], 1.0, [1e-1, 1e-2, 1e-3])
    print(f"{name}  (controls {rep['control_max']:.1e}, rays {rep['ray_c0_max']:.1e})")
    for row in rep["table"]:
        print(f"  eps {row['eps']:7.0e}  delta {row['delta']:9.3e}  beta {row['beta']}")
