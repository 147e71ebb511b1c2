"""Static report figures rendered next to the CSV output.

The CSV is the authoritative record; these are line charts of the logged
quantities (states vs reference, control split, adaptation diagnostics).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["plot_run", "plot_comparison"]


def _reference_arrays(plan, steps):
    xs = np.array([plan.state(t) for t in range(steps + 1)])
    us = np.array([plan.control(t) for t in range(steps)]) if steps else np.zeros((0, plan.u_e.size))
    return xs, us


def plot_run(log, plan, outdir, prefix="run"):
    """States/controls/adaptation figures for one closed-loop log; returns the
    written paths."""
    outdir = str(outdir)
    T = log.steps
    t_x = np.arange(T + 1)
    t_u = np.arange(T)
    x_ref, u_ref = _reference_arrays(plan, T)
    paths = []

    fig, axes = plt.subplots(log.states.shape[1], 1, sharex=True, figsize=(7, 5))
    axes = np.atleast_1d(axes)
    for j, ax in enumerate(axes):
        ax.plot(t_x, log.states[:, j], label=f"x{j}")
        ax.plot(t_x, x_ref[:, j], "k--", lw=1, label="reference")
        ax.set_ylabel(f"x{j}")
        ax.legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("step")
    fig.suptitle(f"{log.header.get('model', '')} states (adaptation {log.header.get('adaptation', '?')})")
    paths.append(_save(fig, outdir, f"{prefix}_states"))

    fig, ax = plt.subplots(figsize=(7, 3.5))
    for j in range(log.u.shape[1]):
        ax.plot(t_u, log.u[:, j], label=f"u{j} total")
        ax.plot(t_u, log.u_m[:, j], ":", label=f"u{j} mpc")
        ax.plot(t_u, log.u_a[:, j], "--", label=f"u{j} adaptive")
    if u_ref.size:
        ax.plot(t_u, u_ref[:, 0], "k--", lw=1, label="reference")
    ax.set_xlabel("step")
    ax.set_ylabel("control")
    ax.legend(loc="best", fontsize=8)
    paths.append(_save(fig, outdir, f"{prefix}_controls"))

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(t_x, log.V_a)
    ax.set_xlabel("step")
    ax.set_ylabel("V_a")
    paths.append(_save(fig, outdir, f"{prefix}_va"))

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.semilogy(t_u, np.maximum(log.residual, 1e-16))
    ax.set_xlabel("step")
    ax.set_ylabel("||g(x) u~||")
    paths.append(_save(fig, outdir, f"{prefix}_residual"))
    return paths


def plot_comparison(log_on, log_off, plan, outdir, prefix="compare"):
    """Overlay of adaptation on/off trajectories against the reference."""
    T = min(log_on.steps, log_off.steps)
    t_x = np.arange(T + 1)
    x_ref, _ = _reference_arrays(plan, T)
    d = log_on.states.shape[1]
    paths = []

    fig, axes = plt.subplots(d, 1, sharex=True, figsize=(7, 5))
    axes = np.atleast_1d(axes)
    for j, ax in enumerate(axes):
        ax.plot(t_x, log_on.states[: T + 1, j], label="adaptive")
        ax.plot(t_x, log_off.states[: T + 1, j], label="mpc only")
        ax.plot(t_x, x_ref[:, j], "k--", lw=1, label="reference")
        ax.set_ylabel(f"x{j}")
        ax.legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("step")
    fig.suptitle(f"{log_on.header.get('model', '')}: adaptation on vs off")
    paths.append(_save(fig, outdir, f"{prefix}_states"))

    err_on = np.linalg.norm(log_on.states[: T + 1] - x_ref, axis=1)
    err_off = np.linalg.norm(log_off.states[: T + 1] - x_ref, axis=1)
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.semilogy(t_x, np.maximum(err_on, 1e-16), label="adaptive")
    ax.semilogy(t_x, np.maximum(err_off, 1e-16), label="mpc only")
    ax.set_xlabel("step")
    ax.set_ylabel("tracking error")
    ax.legend(loc="best", fontsize=8)
    paths.append(_save(fig, outdir, f"{prefix}_error"))
    return paths


def _save(fig, outdir, stem):
    path = f"{outdir}/{stem}.svg"
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
