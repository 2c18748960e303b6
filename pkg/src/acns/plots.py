"""Static figures written next to the numeric artifacts (Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)


def energy_curve(path, ledger):
    t = ledger.array("t")
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t, ledger.array("energy"), label="E")
    ax.plot(t, ledger.array("energy") + ledger.dissipation(), "--", label="E + dissipation")
    ax.set_xlabel("t")
    ax.legend()
    _save(fig, path)


def energy_bands(path, verdict):
    tab = verdict.table
    t = tab["t"]
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, style in (("lhs", "-"), ("rhs", "--")):
        m, se = tab[f"{name}_mean"], tab[f"{name}_se"]
        ax.plot(t, m, style, label=name)
        ax.fill_between(t, m - verdict.z * se, m + verdict.z * se, alpha=0.25)
    ax.set_xlabel("t")
    ax.set_title(f"M = {verdict.members}, {'pass' if verdict.passed else 'FAIL'}")
    ax.legend()
    _save(fig, path)


def dependence_scaling(path, rows, slope):
    pos = [r for r in rows if r["eps"] > 0]
    eps = np.array([r["eps"] for r in pos])
    dist = np.array([r["stopped_distance"] for r in pos])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(eps, dist, "o-", label=f"slope {slope:.3f}")
    ax.loglog(eps, dist[0] * eps / eps[0], ":", label="slope 1")
    ax.set_xlabel("eps")
    ax.set_ylabel("stopped distance")
    ax.legend()
    _save(fig, path)


def convergence_curve(path, report):
    x = np.asarray(report.ladder[1:], dtype=float)
    d = np.asarray(report.distances)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(x, np.where(d > 0, d, np.nan), "o-")
    ax.set_xlabel(report.kind.replace("in_", ""))
    ax.set_ylabel("successive-rung distance")
    _save(fig, path)
