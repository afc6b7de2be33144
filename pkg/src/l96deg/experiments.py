"""Experiment drivers, run manifests and report emission.

Every run is a pure function of its spec: stream ids are fixed functions of
task indices, results are reduced in task order regardless of completion
order, and the emitted delimited files are byte-identical across re-runs on
one platform.  The manifest echoes the canonical spec text, which `rerun`
parses to reproduce a run exactly.

Stream-id allocation (base seed = system.seed):
  simulate / lyapunov / stationary-hist : stream 0
  scan-epsilon                          : grid index g -> stream g
  sync-test                             : grid g, pair p -> stream g * pairs + p
  escape-time                           : grid d, path p -> stream d * paths + p
  moment-lyap                           : path p -> stream 50000 + p
  super-lyap                            : direction 10000; point i, path p
                                          -> stream 10001 + i * paths + p
"""

from __future__ import annotations

import json
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .cocycle import (
    lambda_scan,
    lyapunov_both,
    moment_curve,
)
from .model import BlowUpError, L96Config
from .liecap import closure, contains_elementary, local_generators, m_k_rational, verify_sl_generation
from .rng import NoiseStream
from .sde import (
    Trajectory,
    coupled_pair,
    eta_star,
    simulate,
    super_lyapunov_probe,
    write_trajectory_summary,
)
from .specfile import ExperimentSpec, parse_text, to_text

_CHUNK = 1 << 16


@dataclass
class Table:
    name: str
    header: list[str]
    rows: list[list]


@dataclass
class CheckResult:
    name: str
    value: float
    op: str           # "<=", ">=", comparison against threshold
    threshold: float
    passed: bool
    gating: bool = True


@dataclass
class RunReport:
    spec: ExperimentSpec
    tables: list[Table] = field(default_factory=list)
    checks: list[CheckResult] = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    aborted: str | None = None


def _fmt_cell(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _check(name, value, op, threshold, gating=True) -> CheckResult:
    value = float(value)
    passed = value <= threshold if op == "<=" else value >= threshold
    return CheckResult(name=name, value=value, op=op, threshold=float(threshold),
                       passed=passed, gating=gating)


def _pmap(fn, args_list, threads: int):
    if threads <= 1:
        return [fn(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, args_list))


def _with_epsilon(cfg: L96Config, eps: float) -> L96Config:
    return L96Config(n=cfg.n, epsilon=float(eps), sigma=cfg.sigma, dt=cfg.dt,
                     seed=cfg.seed, mode=cfg.mode, tamed=cfg.tamed)


def _resolve_burn_in(raw: float, horizon: float) -> float:
    from .cocycle import default_burn_in
    return default_burn_in(horizon) if raw < 0 else float(raw)


# -- runners -------------------------------------------------------------


def run_simulate(spec: ExperimentSpec, threads: int = 1) -> RunReport:
    cfg = spec.system
    p = spec.params
    noise = NoiseStream(cfg.seed, 0)
    kind = p["x0"]
    if kind == "zero":
        u0 = np.zeros(cfg.n)
    elif kind == "gaussian":
        u0 = p["x0_scale"] * noise.normals(cfg.n)
    elif kind == "invariant":
        u0 = np.zeros(cfg.n)
        forced = list(cfg.indexing.forced)
        u0[forced] = (p["x0_scale"] * math.sqrt(0.5)
                      * cfg.sigma_forced_array() * noise.normals(len(forced)))
    else:
        raise ValueError(f"unknown x0 kind {kind!r}")
    traj = simulate(u0, cfg, p["horizon"], thin=p["thin"], stream_id=0)
    rows = [[float(t)] + [float(x) for x in row]
            for t, row in zip(traj.times, traj.states)]
    table = Table(name="trajectory",
                  header=["t"] + [f"u_{j}" for j in range(cfg.n)], rows=rows)
    report = RunReport(spec=spec, tables=[table],
                       counts={"blow_ups": 0 if traj.blow_up is None else 1},
                       extra={"trajectory": traj})
    if traj.blow_up is not None:
        report.aborted = f"trajectory blow-up at t={traj.blow_up}"
    return report


def run_lyapunov(spec: ExperimentSpec, threads: int = 1) -> RunReport:
    cfg = spec.system
    p = spec.params
    burn = _resolve_burn_in(p["burn_in"], p["horizon"])
    est_log, est_fk = lyapunov_both(cfg, p["horizon"], burn, p["batches"], stream_id=0)
    rows = [[e.method, e.value, e.stderr, e.horizon, e.burn_in, e.n_batches]
            for e in (est_log, est_fk)]
    table = Table(name="lyapunov",
                  header=["method", "value", "stderr", "horizon", "burn_in", "batches"],
                  rows=rows)
    coherence = abs(est_log.value - est_fk.value)
    bound = 2.0 * math.hypot(est_log.stderr, est_fk.stderr)
    checks = [_check("estimator_coherence", coherence, "<=", bound)]
    return RunReport(spec=spec, tables=[table], checks=checks,
                     counts={"blow_ups": 0},
                     extra={"est_log": est_log, "est_fk": est_fk})


def run_scan_epsilon(spec: ExperimentSpec, threads: int = 1) -> RunReport:
    cfg = spec.system
    p = spec.params
    burn = _resolve_burn_in(p["burn_in"], p["horizon"])
    points = []
    args = [(_with_epsilon(cfg, eps), p["horizon"], burn, p["batches"], g)
            for g, eps in enumerate(p["eps_grid"])]
    results = _pmap(_scan_point_task, args, threads)
    scan_rows, coh_rows, failures = [], [], 0
    for eps, res in zip(p["eps_grid"], results):
        if isinstance(res, str):
            failures += 1
            scan_rows.append([eps, math.nan, math.nan, math.nan])
            continue
        est_log, est_fk = res
        scan_rows.append([eps, est_log.value, est_log.stderr, est_log.value / eps])
        coh_rows.append([eps, est_log.value, est_log.stderr,
                         est_fk.value, est_fk.stderr,
                         abs(est_log.value - est_fk.value),
                         2.0 * math.hypot(est_log.stderr, est_fk.stderr)])
        points.append((eps, est_log, est_fk))
    tables = [
        Table(name="scan", header=["eps", "lambda", "stderr", "lambda_over_eps"],
              rows=scan_rows),
        Table(name="coherence",
              header=["eps", "lambda_log", "stderr_log", "lambda_fk", "stderr_fk",
                      "difference", "bound"],
              rows=coh_rows),
    ]
    checks = [_check(f"coherence_eps_{row[0]}", row[5], "<=", row[6])
              for row in coh_rows]
    return RunReport(spec=spec, tables=tables, checks=checks,
                     counts={"failed_points": failures},
                     extra={"points": points})


def _scan_point_task(args):
    cfg, horizon, burn, batches, stream_id = args
    try:
        return lyapunov_both(cfg, horizon, burn, batches, stream_id=stream_id)
    except (BlowUpError, RuntimeError) as exc:
        return str(exc)


def run_moment_curve(spec: ExperimentSpec, threads: int = 1) -> RunReport:
    cfg = spec.system
    p = spec.params
    estimates = moment_curve(cfg, p["p_grid"], p["horizon"], p["paths"],
                             bootstrap=p["bootstrap"])
    rows = [[e.p, e.value, e.stderr] for e in estimates]
    detail = [[e.p, e.value, e.stderr, e.ess, e.reliable] for e in estimates]
    tables = [
        Table(name="moment", header=["p", "Lambda", "stderr"], rows=rows),
        Table(name="moment_detail",
              header=["p", "Lambda", "stderr", "ess", "reliable"], rows=detail),
    ]
    checks = [_check(f"ess_p_{e.p}", e.ess, ">=", e.n_paths / 100.0)
              for e in estimates if e.p != 0.0]
    return RunReport(spec=spec, tables=tables, checks=checks,
                     counts={"paths": p["paths"]}, extra={"estimates": estimates})


def _sync_pair_task(args):
    cfg, horizon, sync_tol, thin, stream_id = args
    noise = NoiseStream(cfg.seed, stream_id)
    u0 = noise.normals(cfg.n)
    v0 = noise.normals(cfg.n)
    pair = coupled_pair(u0, v0, cfg, horizon, sync_tol=sync_tol, thin=thin,
                        stream_id=stream_id)
    return pair.synchronized, pair.sync_time, pair.blow_up


def run_sync_sweep(spec: ExperimentSpec, threads: int = 1) -> RunReport:
    cfg = spec.system
    p = spec.params
    pairs = p["pairs"]
    rows = []
    blow_ups = 0
    for g, eps in enumerate(p["eps_grid"]):
        cfg_eps = _with_epsilon(cfg, eps)
        args = [(cfg_eps, p["horizon"], p["sync_tol"], p["thin"], g * pairs + i)
                for i in range(pairs)]
        results = _pmap(_sync_pair_task, args, threads)
        synced = [r for r in results if r[0]]
        blow_ups += sum(1 for r in results if r[2] is not None)
        frac = len(synced) / pairs
        median = float(np.median([r[1] for r in synced])) if synced else math.nan
        rows.append([eps, frac, median, pairs])
    table = Table(name="sync",
                  header=["eps", "fraction_synchronized", "median_sync_time", "pairs"],
                  rows=rows)
    return RunReport(spec=spec, tables=[table], counts={"blow_ups": blow_ups},
                     extra={"rows": rows})


def _escape_path_task(args):
    cfg, delta, threshold, horizon, stream_id = args
    idx = cfg.indexing
    noise = NoiseStream(cfg.seed, stream_id)
    u = np.zeros(cfg.n)
    forced = list(idx.forced)
    u[forced] = math.sqrt(0.5) * cfg.sigma_forced_array() * noise.normals(len(forced))
    vhat = np.zeros(cfg.n)
    raw = noise.normals(len(idx.transverse))
    vhat[list(idx.transverse)] = raw / np.linalg.norm(raw)
    u += delta * vhat
    if np.linalg.norm(u[list(idx.transverse)]) >= threshold:
        return ("escaped", 0.0)
    act = np.array(cfg.active_indices, dtype=np.int64)
    amp = math.sqrt(cfg.epsilon * cfg.dt) * np.array([cfg.sigma[j] for j in act])
    trans = np.array(idx.transverse, dtype=np.int64)
    nsteps = int(round(horizon / cfg.dt))
    done = 0
    while done < nsteps:
        take = min(_CHUNK, nsteps - done)
        xi = noise.normals((take, act.size))
        bad, hit = _kernels.em_escape_chunk(u, xi, cfg.dt, cfg.epsilon, amp, act,
                                            cfg.tamed, trans, threshold)
        if bad >= 0:
            return ("blow_up", (done + bad + 1) * cfg.dt)
        if hit >= 0:
            return ("escaped", (done + hit + 1) * cfg.dt)
        done += take
    return ("censored", horizon)


def run_escape_time(spec: ExperimentSpec, threads: int = 1) -> RunReport:
    cfg = spec.system
    p = spec.params
    threshold = p["threshold"]
    deltas = p["delta_grid"]
    if any(not 0 < d <= threshold for d in deltas):
        raise ValueError("delta grid values must lie in (0, threshold]")
    paths = p["paths"]
    rows = []
    blow_ups = 0
    checks = []
    xs, ys = [], []
    for d_idx, delta in enumerate(deltas):
        args = [(cfg, delta, threshold, p["horizon"], d_idx * paths + i)
                for i in range(paths)]
        results = _pmap(_escape_path_task, args, threads)
        times = [t for status, t in results if status == "escaped"]
        censored = sum(1 for status, _ in results if status == "censored")
        blow_ups += sum(1 for status, _ in results if status == "blow_up")
        mean = float(np.mean(times)) if times else math.nan
        stderr = (float(np.std(times, ddof=1) / math.sqrt(len(times)))
                  if len(times) > 1 else math.nan)
        rows.append([delta, mean, stderr, len(times), censored])
        checks.append(_check(f"censor_fraction_delta_{delta}", censored / paths,
                             "<=", p["max_censor_fraction"]))
        if times:
            xs.append(math.log(1.0 / delta))
            ys.append(mean)
    slope, intercept = (math.nan, math.nan)
    if len(xs) >= 2:
        slope, intercept = np.polyfit(xs, ys, 1)
    table = Table(name="escape",
                  header=["delta", "mean_escape_time", "stderr", "escaped", "censored"],
                  rows=rows)
    return RunReport(spec=spec, tables=[table], checks=checks,
                     counts={"blow_ups": blow_ups},
                     extra={"slope": float(slope), "intercept": float(intercept)})


def run_stationary_hist(spec: ExperimentSpec, threads: int = 1) -> RunReport:
    cfg = spec.system
    p = spec.params
    burn = _resolve_burn_in(p["burn_in"], p["horizon"])
    noise = NoiseStream(cfg.seed, 0)
    u = noise.normals(cfg.n)
    act = np.array(cfg.active_indices, dtype=np.int64)
    amp = math.sqrt(cfg.epsilon * cfg.dt) * np.array([cfg.sigma[j] for j in act])
    trans = np.array(cfg.indexing.transverse, dtype=np.int64)
    nsteps = int(round(p["horizon"] / cfg.dt))
    burn_steps = int(round(burn / cfg.dt))
    edges = np.linspace(0.0, p["hist_max"], p["bins"] + 1)
    counts = np.zeros(p["bins"], dtype=np.int64)
    overflow = 0
    n_small = 0
    n_large = 0
    batches = p["batches"]
    post = nsteps - burn_steps
    blen = post // batches
    coord_batch_mean = np.zeros((batches, cfg.n))
    coord_batch_sq = np.zeros((batches, cfg.n))
    aborted = None

    def do_steps(count, batch_slot):
        nonlocal overflow, n_small, n_large, aborted
        done = 0
        while done < count:
            take = min(_CHUNK, count - done)
            xi = noise.normals((take, act.size))
            perp = np.empty(take)
            csum = np.zeros(cfg.n)
            csq = np.zeros(cfg.n)
            bad = _kernels.em_stats_chunk(u, xi, cfg.dt, cfg.epsilon, amp, act,
                                          cfg.tamed, trans, perp, csum, csq)
            if bad >= 0:
                aborted = f"blow-up at t={(bad + 1) * cfg.dt}"
                return False
            if batch_slot is not None:
                counts_local, _ = np.histogram(perp, bins=edges)
                counts[:] += counts_local
                overflow += int((perp > p["hist_max"]).sum())
                n_small += int((perp < p["small_radius"]).sum())
                n_large += int((perp > p["large_radius"]).sum())
                coord_batch_mean[batch_slot] += csum
                coord_batch_sq[batch_slot] += csq
            done += take
        return True

    ok = do_steps(burn_steps, None)
    total_recorded = 0
    if ok:
        for b in range(batches):
            if not do_steps(blen, b):
                break
            total_recorded += blen
    if total_recorded == 0 and aborted:
        return RunReport(spec=spec, tables=[], counts={"blow_ups": 1},
                         aborted=aborted)
    mass = counts / max(total_recorded, 1)
    hist_rows = [[float(edges[i]), float(edges[i + 1]), float(mass[i])]
                 for i in range(p["bins"])]
    coord_mean = coord_batch_mean.sum(axis=0) / max(total_recorded, 1)
    coord_var = coord_batch_sq.sum(axis=0) / max(total_recorded, 1) - coord_mean ** 2
    batch_vars = coord_batch_sq / max(blen, 1) - (coord_batch_mean / max(blen, 1)) ** 2
    var_stderr = batch_vars.std(axis=0, ddof=1) / math.sqrt(batches)
    moment_rows = [[j, float(coord_mean[j]), float(coord_var[j]), float(var_stderr[j])]
                   for j in range(cfg.n)]
    tables = [
        Table(name="hist", header=["bin_left", "bin_right", "mass"], rows=hist_rows),
        Table(name="moments", header=["coord", "mean", "variance", "variance_stderr"],
              rows=moment_rows),
    ]
    small_mass = n_small / max(total_recorded, 1)
    large_mass = n_large / max(total_recorded, 1)
    report = RunReport(
        spec=spec, tables=tables,
        counts={"blow_ups": 1 if aborted else 0, "recorded_steps": total_recorded,
                "overflow_samples": overflow},
        extra={"mass_below_small_radius": small_mass,
               "mass_above_large_radius": large_mass,
               "forced_variances": [float(coord_var[j]) for j in cfg.indexing.forced],
               "forced_variance_stderr": [float(var_stderr[j])
                                          for j in cfg.indexing.forced]},
        aborted=aborted,
    )
    return report


def run_cap_verify(spec: ExperimentSpec, threads: int = 1) -> RunReport:
    cfg = spec.system
    p = spec.params
    t0 = time.perf_counter()
    if p["generators"] == "all":
        rep = verify_sl_generation(cfg.n, depth_cap=p["depth_cap"])
        payload = {"N": rep.n, "dim": rep.dim, "expected": rep.expected,
                   "generated": rep.generated, "depthUsed": rep.depth_used,
                   "elapsed": rep.elapsed}
        result = closure([m_k_rational(k, cfg.n) for k in cfg.indexing.forced],
                         p["depth_cap"]) if p["emit_basis"] else None
    elif p["generators"] == "local":
        gens = local_generators(cfg.n)
        result = closure(gens, p["depth_cap"])
        expected = cfg.indexing.n_transverse ** 2 - 1
        payload = {"N": cfg.n, "dim": result.dim, "expected": expected,
                   "generated": result.dim == expected,
                   "depthUsed": result.depth_reached,
                   "elapsed": time.perf_counter() - t0,
                   "elementaries": {f"E_{i}_{j}": contains_elementary(result.tracker, i, j)
                                    for (i, j) in ((3, 2), (4, 3), (5, 4))}}
    else:
        raise ValueError("generators must be 'all' or 'local'")
    if p["emit_basis"] and result is not None:
        result.tracker.dump_csv(p["emit_basis"])
    rows = [[payload["N"], payload["dim"], payload["expected"],
             payload["generated"], payload["depthUsed"]]]
    table = Table(name="cap",
                  header=["N", "dim", "expected", "generated", "depth_used"],
                  rows=rows)
    return RunReport(spec=spec, tables=[table], counts={},
                     extra={"cap_json": payload})


def run_super_lyap(spec: ExperimentSpec, threads: int = 1) -> RunReport:
    cfg = spec.system
    p = spec.params
    eta = p["eta_fraction"] * eta_star(cfg)
    rep = super_lyapunov_probe(cfg, eta, p["radii"], p["horizon"], p["paths"])
    rows = [[pt.radius, pt.log_ratio, pt.ratio, pt.log_mean_final, pt.excluded]
            for pt in rep.points]
    table = Table(name="super_lyap",
                  header=["radius", "log_ratio", "ratio", "log_mean_final", "excluded"],
                  rows=rows)
    checks = [
        _check("max_ratio", rep.max_ratio, "<=", p["ratio_cap"]),
        _check("min_ratio", min(pt.ratio for pt in rep.points), ">=", 1.0),
    ]
    return RunReport(spec=spec, tables=[table], checks=checks,
                     counts={"excluded_paths": sum(pt.excluded for pt in rep.points)},
                     extra={"eta": eta, "eta_star": rep.eta_star})


RUNNERS = {
    "simulate": run_simulate,
    "lyapunov": run_lyapunov,
    "scan-epsilon": run_scan_epsilon,
    "moment-lyap": run_moment_curve,
    "sync-test": run_sync_sweep,
    "escape-time": run_escape_time,
    "stationary-hist": run_stationary_hist,
    "cap-verify": run_cap_verify,
    "super-lyap": run_super_lyap,
}


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> RunReport:
    return RUNNERS[spec.kind](spec, threads=threads)


# -- emission --------------------------------------------------------------


def write_table_csv(table: Table, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(table.header) + "\n")
        for row in table.rows:
            fh.write(",".join(_fmt_cell(x) for x in row) + "\n")


def build_manifest(report: RunReport, threads: int, wall_clock: float,
                   plots: bool) -> dict:
    return {
        "toolkit_version": __version__,
        "kind": report.spec.kind,
        "spec_text": to_text(report.spec),
        "base_seed": report.spec.system.seed,
        "threads": threads,
        "plots": plots,
        "counts": report.counts,
        "checks": [{"name": c.name, "value": c.value, "op": c.op,
                    "threshold": c.threshold, "passed": c.passed}
                   for c in report.checks],
        "aborted": report.aborted,
        "environment": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "platform": platform.platform(),
        },
        "wall_clock_s": wall_clock,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }


def emit_report(report: RunReport, out_dir, manifest: dict, plots: bool = True) -> int:
    """Write tables, manifest, summary and figures; returns the exit code.

    0 on success, 2 on an empty result set or a failed gating check,
    3 if the run was aborted by blow-up.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    nonempty = [t for t in report.tables if t.rows]
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not nonempty:
        return 2
    for table in nonempty:
        write_table_csv(table, out / f"{table.name}.csv")
    if report.spec.kind == "cap-verify" and "cap_json" in report.extra:
        with open(out / "cap_verify.json", "w") as fh:
            json.dump(report.extra["cap_json"], fh, indent=2, sort_keys=True)
            fh.write("\n")
    if report.spec.kind == "simulate" and "trajectory" in report.extra:
        # the trajectory table already produced trajectory.csv in the same format
        traj: Trajectory = report.extra["trajectory"]
        write_trajectory_summary(traj, report.spec.system, out / "summary.json")
    _write_summary(report, out / "summary.txt")
    if plots:
        from . import plots as _plots
        _plots.render_report(report, out)
    if report.aborted is not None:
        return 3
    if any(c.gating and not c.passed for c in report.checks):
        return 2
    return 0


def _write_summary(report: RunReport, path) -> None:
    lines = [f"experiment: {report.spec.kind}"]
    for table in report.tables:
        lines.append(f"table {table.name}: {len(table.rows)} rows "
                     f"({', '.join(table.header)})")
    for key, val in sorted(report.counts.items()):
        lines.append(f"count {key}: {val}")
    for key in sorted(k for k in report.extra
                      if isinstance(report.extra[k], (int, float))):
        lines.append(f"value {key}: {_fmt_cell(report.extra[key])}")
    for c in report.checks:
        status = "PASS" if c.passed else "FAIL"
        lines.append(f"check {c.name}: {_fmt_cell(c.value)} {c.op} "
                     f"{_fmt_cell(c.threshold)} -> {status}")
    if report.aborted:
        lines.append(f"aborted: {report.aborted}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def spec_from_manifest(path) -> ExperimentSpec:
    with open(path) as fh:
        manifest = json.load(fh)
    return parse_text(manifest["spec_text"])
