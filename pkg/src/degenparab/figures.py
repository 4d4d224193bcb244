"""PNG renderings of the report objects, written next to the CSV artifacts.

All functions are file-path based and use the Agg backend so they run in
headless batch jobs; each returns the path it wrote.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def hardy_figure(op, report, path):
    """Extremal eigenfunction of the Hardy pencil over the mesh."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    v = report.eigvec / np.max(np.abs(report.eigvec))
    ax.plot(op.dof_x, v, "-", lw=1.2)
    ax.axvline(op.mesh.x0, color="k", ls=":", lw=0.8)
    ax.set_xlabel("x")
    ax.set_ylabel("extremal v (normalized)")
    ax.set_title(f"C*_h = {report.cstar_h:.6g} (N = {report.mesh_n})")
    return _finish(fig, path)


def refinement_figure(ns, cstars, path, bound=None):
    """Hardy constant against mesh size, with the analytic bound if given."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogx(ns, cstars, "o-", base=2)
    if bound is not None and np.isfinite(bound):
        ax.axhline(bound, color="r", ls="--", lw=0.9, label=f"analytic {bound:.4g}")
        ax.legend()
    ax.set_xlabel("mesh cells")
    ax.set_ylabel("C*_h")
    return _finish(fig, path)


def energy_figure(times, energies, path, label="E(t)"):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.semilogy(times, np.maximum(energies, 1e-300), "-")
    ax.set_xlabel("t")
    ax.set_ylabel(label)
    return _finish(fig, path)


def carleman_figure(reports, path):
    """lhs/rhs ratio of the weighted inequality against the parameter s."""
    s = [r.s for r in reports]
    ratio = [r.ratio for r in reports]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.loglog(s, ratio, "o-")
    ax.set_xlabel("s")
    ax.set_ylabel("lhs / (rhs source + boundary)")
    return _finish(fig, path)


def control_figure(op, tg, result, path):
    """Control heatmap h(t, x) and the terminal state of the controlled run."""
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.5))
    h_nodes = np.array([op.extend(row) for row in result.h.values])
    ex = (op.mesh.nodes[0], op.mesh.nodes[-1], tg.times[0], tg.times[-1])
    im = ax0.imshow(h_nodes, origin="lower", aspect="auto", extent=ex, cmap="RdBu_r")
    fig.colorbar(im, ax=ax0, label="h")
    ax0.set_xlabel("x")
    ax0.set_ylabel("t")
    ax1.plot(op.dof_x, result.pT, lw=1.0)
    ax1.axvline(op.mesh.x0, color="k", ls=":", lw=0.8)
    ax1.set_xlabel("x")
    ax1.set_ylabel("terminal adjoint datum p_T")
    ax1.set_title(f"||u(T)|| = {result.terminal_norm:.3e}")
    return _finish(fig, path)


def sweep_figure(sweep, path):
    ns = [L.n_cells for L in sweep.levels]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.loglog(ns, [L.cstar_h for L in sweep.levels], "o-", base=2, label="C*_h")
    ax.loglog(ns, [L.c_T for L in sweep.levels], "s-", base=2, label="c_T")
    ax.set_xlabel("mesh cells")
    ax.legend()
    ax.set_title(f"verdict: {sweep.verdict}")
    return _finish(fig, path)
