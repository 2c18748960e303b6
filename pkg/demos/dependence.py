"""Paired paths from nearby initial data, driven by the same noise.

The stopped distance at T should scale linearly with the initial separation.
eps = 0 is included as a control: identical inputs must give identical paths.
"""

from acns import runner

from _common import load, out_root

root = out_root()
cfg = load("dependence.yaml")

summary = runner.run_dependence(cfg, root / "ladder")
for r in summary.reports:
    print(f"eps {r.eps:<8g} initial {r.initial_distance:.3e}  stopped final {r.stopped_distance:.3e}")
print(f"fitted slope {summary.slope:.4f}")

control = runner.run_dependence(cfg, root / "control", eps=[0.0])
print(f"eps = 0 stopped distance: {control.reports[0].stopped_distance!r}")
