"""Figure rendering for experiment reports.

Each report kind gets one or two PNG files next to its delimited output.
Rendering is best-effort presentation; the CSV tables remain the canonical
results.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_FIGSIZE = (6.0, 3.8)


def _save(fig, path: Path):
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def _col(table, name):
    i = table.header.index(name)
    return [row[i] for row in table.rows]


def render_report(report, out_dir) -> list[Path]:
    out = Path(out_dir)
    renderer = _RENDERERS.get(report.spec.kind)
    if renderer is None:
        return []
    return renderer(report, out)


def _render_scan(report, out: Path) -> list[Path]:
    table = next(t for t in report.tables if t.name == "scan")
    eps = _col(table, "eps")
    lam = _col(table, "lambda")
    err = _col(table, "stderr")
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.8))
    axes[0].errorbar(eps, lam, yerr=[2 * e for e in err], fmt="o-", capsize=3)
    axes[0].axhline(0.0, color="0.6", lw=0.8)
    axes[0].set_xscale("log")
    axes[0].set_xlabel(r"$\epsilon$")
    axes[0].set_ylabel(r"$\hat\lambda^\perp$")
    axes[0].set_title("transverse exponent")
    ratio = [l / e if e else math.nan for l, e in zip(lam, eps)]
    axes[1].plot(eps, ratio, "s-")
    axes[1].axhline(0.0, color="0.6", lw=0.8)
    axes[1].set_xscale("log")
    axes[1].set_xlabel(r"$\epsilon$")
    axes[1].set_ylabel(r"$\hat\lambda^\perp/\epsilon$")
    axes[1].set_title("normalised exponent")
    path = out / "scan.png"
    _save(fig, path)
    return [path]


def _render_lyapunov(report, out: Path) -> list[Path]:
    table = report.tables[0]
    methods = _col(table, "method")
    values = _col(table, "value")
    errs = _col(table, "stderr")
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    xs = range(len(methods))
    ax.errorbar(xs, values, yerr=[2 * e for e in errs], fmt="o", capsize=4)
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.set_xticks(list(xs), methods)
    ax.set_ylabel(r"$\hat\lambda^\perp$")
    ax.set_title("exponent estimators (2 SE bars)")
    path = out / "lyapunov.png"
    _save(fig, path)
    return [path]


def _render_moment(report, out: Path) -> list[Path]:
    table = next(t for t in report.tables if t.name == "moment")
    ps = _col(table, "p")
    lams = _col(table, "Lambda")
    errs = _col(table, "stderr")
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.errorbar(ps, lams, yerr=[2 * e for e in errs], fmt="o-", capsize=3)
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.set_xlabel("p")
    ax.set_ylabel(r"$\hat\Lambda(p)$")
    ax.set_title("moment exponent curve")
    path = out / "moment.png"
    _save(fig, path)
    return [path]


def _render_sync(report, out: Path) -> list[Path]:
    table = report.tables[0]
    eps = _col(table, "eps")
    frac = _col(table, "fraction_synchronized")
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(eps, frac, "o-")
    ax.set_xscale("log")
    ax.set_ylim(-0.05, 1.05)
    ax.set_xlabel(r"$\epsilon$")
    ax.set_ylabel("fraction synchronized")
    ax.set_title("coupled-pair synchronization")
    path = out / "sync.png"
    _save(fig, path)
    return [path]


def _render_escape(report, out: Path) -> list[Path]:
    table = report.tables[0]
    deltas = _col(table, "delta")
    means = _col(table, "mean_escape_time")
    errs = _col(table, "stderr")
    xs = [math.log(1.0 / d) for d in deltas]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.errorbar(xs, means, yerr=[2 * e if math.isfinite(e) else 0 for e in errs],
                fmt="o", capsize=3)
    slope = report.extra.get("slope", math.nan)
    intercept = report.extra.get("intercept", math.nan)
    if math.isfinite(slope):
        grid = [min(xs), max(xs)]
        ax.plot(grid, [slope * x + intercept for x in grid], "-",
                label=f"slope {slope:.2f}")
        ax.legend()
    ax.set_xlabel(r"$\log(1/\delta)$")
    ax.set_ylabel("mean escape time")
    ax.set_title("escape from the invariant subspace")
    path = out / "escape.png"
    _save(fig, path)
    return [path]


def _render_hist(report, out: Path) -> list[Path]:
    table = next(t for t in report.tables if t.name == "hist")
    left = _col(table, "bin_left")
    right = _col(table, "bin_right")
    mass = _col(table, "mass")
    widths = [r - l for l, r in zip(left, right)]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.bar(left, mass, width=widths, align="edge", edgecolor="none")
    ax.set_xlabel(r"$|\Pi^\perp u|$")
    ax.set_ylabel("time-average mass")
    ax.set_title("transverse-distance histogram")
    path = out / "hist.png"
    _save(fig, path)
    return [path]


def _render_super(report, out: Path) -> list[Path]:
    table = report.tables[0]
    radii = _col(table, "radius")
    log_ratio = _col(table, "log_ratio")
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(radii, log_ratio, "o-")
    ax.set_xlabel(r"$|u_0|$")
    ax.set_ylabel(r"$\log\,\mathrm{E}[\sup_t V_\eta]/V_\eta(u_0)$")
    ax.set_title("confinement ratio probe")
    path = out / "super_lyap.png"
    _save(fig, path)
    return [path]


def _render_trajectory(report, out: Path) -> list[Path]:
    traj = report.extra.get("trajectory")
    if traj is None:
        return []
    fig, axes = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    n = traj.states.shape[1]
    for j in range(n):
        axes[0].plot(traj.times, traj.states[:, j], lw=0.7)
    axes[0].set_ylabel("coordinates")
    perp = [sum(x * x for k, x in enumerate(row) if k % 3 != 0) ** 0.5
            for row in traj.states]
    axes[1].plot(traj.times, perp, lw=0.9)
    axes[1].set_yscale("symlog", linthresh=1e-12)
    axes[1].set_xlabel("t")
    axes[1].set_ylabel(r"$|\Pi^\perp u|$")
    path = out / "trajectory.png"
    _save(fig, path)
    return [path]


def _render_cap(report, out: Path) -> list[Path]:
    payload = report.extra.get("cap_json", {})
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.axis("off")
    lines = [f"{k} = {v}" for k, v in sorted(payload.items()) if k != "elementaries"]
    if "elementaries" in payload:
        lines += [f"{k}: {v}" for k, v in sorted(payload["elementaries"].items())]
    ax.text(0.02, 0.95, "\n".join(lines), va="top", family="monospace")
    path = out / "cap.png"
    _save(fig, path)
    return [path]


_RENDERERS = {
    "scan-epsilon": _render_scan,
    "lyapunov": _render_lyapunov,
    "moment-lyap": _render_moment,
    "sync-test": _render_sync,
    "escape-time": _render_escape,
    "stationary-hist": _render_hist,
    "super-lyap": _render_super,
    "simulate": _render_trajectory,
    "cap-verify": _render_cap,
}
