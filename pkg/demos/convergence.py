"""Self-convergence ladders in dt, lambda and N on a fixed noise path."""

from acns import runner

from _common import load, out_root

root = out_root()
for kind in ("dt", "lambda", "n"):
    rep = runner.run_converge(load(f"converge_{kind}.yaml"), root / kind)
    dists = ", ".join(f"{d:.2e}" for d in rep.distances)
    rates = ", ".join(f"{r:.2f}" for r in rep.rates)
    print(f"in_{kind:<7} ladder {rep.ladder}: distances [{dists}] rates [{rates}] monotone={rep.monotone}")
