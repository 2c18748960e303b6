"""Recover the pressure after the fact from a stored trajectory.

The trajectory keeps every step; the noise increments are regenerated from
the seed, so the unprojected momentum residual can be rebuilt exactly and
inverted for its gradient part.
"""

from acns import runner

from _common import load, out_root

root = out_root()
runner.run_single(load("pressure_trajectory.yaml"), root / "trajectory")
rep = runner.run_pressure(root / "trajectory", root / "pressure")

print(f"max closure residual  {rep['max_closure_residual']:.2e}")
print(f"max |mean pi|         {rep['max_abs_mean']:.2e}")
print(f"max solenoidal part   {rep['max_solenoidal_part']:.2e}")
print(f"max uniform force     {rep['max_mean_force']:.2e}  (mean of the discrete capillary force)")
print(f"norm ratio lhs/rhs    {rep['ratio']:.3e}")
