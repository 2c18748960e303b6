"""Energy behaviour: monotone decay without noise, then the Monte-Carlo
energy inequality on a 64-member ensemble.

The ensemble part takes a couple of minutes on one core; ACNS_WORKERS spreads
members over processes without changing a single output byte.
"""

import numpy as np

from acns import runner

from _common import load, out_root

root = out_root()

summary = runner.run_single(load("energy_decay.yaml"), root / "decay")
print(f"noise off: E {summary['energy_initial']:.4f} -> {summary['energy_final']:.4f}, "
      f"largest per-step increase {summary['max_energy_increase']:.2e}")

verdict = runner.run_ensemble(load("energy_ensemble.yaml"), root / "ensemble")
table = verdict.table
t = np.asarray(table["t"])
margin = (np.asarray(table["lhs_mean"]) - np.asarray(table["rhs_mean"]))[t > 0]
allow = np.asarray(table["tolerance"])[t > 0]
k = int(np.argmax(margin))
print(f"ensemble of {verdict.members}: passed={verdict.passed}, bias_rate={verdict.bias_rate:.3e}")
print(f"tightest time t={t[t > 0][k]:.3f}: LHS - RHS = {margin[k]:.3e}, allowance {allow[k]:.3e}")
print(f"term table: {root / 'ensemble' / 'terms.csv'}")
