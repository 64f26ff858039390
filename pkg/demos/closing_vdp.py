"""Negative normal exponents to a periodic orbit for Van der Pol and Hopf."""
import numpy as np

import singflow as sf

for name, spec, x in (("vanderpol", sf.van_der_pol(), [2.0, 0.0]), ("hopf", sf.hopf(), [0.9, 0.0])):
    rep = sf.negative_exponents_pipeline(spec, x)
    print(f"{name}: stage {rep['stage']}")
    print(f"  exponents  {rep['stages']['exponents']['exponents']}")
    print(f"  pliss      {rep['stages']['pliss']['count']} indices")
    print(f"  contraction radius {rep['stages']['contraction']['radius']}")
    orb = rep.get("periodic_orbit")
    if orb:
        mult = orb["multipliers"][0]
        print(f"  period {orb['period']:.12f}  multiplier {complex(*mult):.6g}  residual {orb['residual']:.1e}")

print(f"hopf reference: period {2 * np.pi:.12f}  multiplier {np.exp(-4 * np.pi):.6g}")

sink = sf.linear_field(np.diag([-1.0, -2.0]))
rep = sf.negative_exponents_pipeline(sink, [1.0, 0.01], transient=0, total_time=10.0)
print(f"linear sink: stops at '{rep['stage']}': {rep['reason']}")
