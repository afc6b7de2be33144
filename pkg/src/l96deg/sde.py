"""Time integration of the full system and of the invariant-subspace base process.

The default step is tamed Euler-Maruyama,

    u' = u + dt * X0(u) / (1 + dt * |X0(u)|) + sqrt(eps * dt) * sigma_j * xi_j e_j,

with noise entering only the coordinates whose amplitude is positive.  Sampled
paths are deterministic functions of ``(config, seed, stream_id)``.  A
trajectory that produces a non-finite state is aborted and carries the first
bad time instead of silently propagating NaNs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import (
    BlowUpError,
    L96Config,
    drift,
    project_transverse,
    require_finite,
)
from .rng import NoiseStream

_CHUNK = 1 << 16


@dataclass
class Trajectory:
    """Thinned sample path. ``states[0]`` is the initial state at ``times[0] = 0``."""

    times: np.ndarray
    states: np.ndarray
    blow_up: float | None = None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _noise_arrays(cfg: L96Config):
    act = np.array(cfg.active_indices, dtype=np.int64)
    amp = math.sqrt(cfg.epsilon * cfg.dt) * np.array([cfg.sigma[j] for j in act])
    return act, amp


def step_em(u, cfg: L96Config, noise: NoiseStream, tamed: bool | None = None) -> np.ndarray:
    """One Euler-Maruyama step (reference implementation of the chunk kernel)."""
    u = require_finite(np.asarray(u, dtype=float))
    if u.shape[0] != cfg.n:
        raise ValueError(f"state has length {u.shape[0]}, config expects {cfg.n}")
    tamed = cfg.tamed if tamed is None else tamed
    d = drift(u, cfg.epsilon)
    factor = cfg.dt / (1.0 + cfg.dt * np.linalg.norm(d)) if tamed else cfg.dt
    out = u + factor * d
    act, amp = _noise_arrays(cfg)
    if act.size:
        out[act] += amp * noise.normals(act.size)
    return require_finite(out, "state after step")


def simulate(u0, cfg: L96Config, horizon: float, thin: int = 1,
             stream_id: int = 0) -> Trajectory:
    """Integrate for ``horizon`` time units, sampling every ``thin`` steps."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if thin < 1:
        raise ValueError("thin must be >= 1")
    u = require_finite(np.array(u0, dtype=float))
    if u.shape[0] != cfg.n:
        raise ValueError(f"state has length {u.shape[0]}, config expects {cfg.n}")
    act, amp = _noise_arrays(cfg)
    noise = NoiseStream(cfg.seed, stream_id)
    nsteps = int(round(horizon / cfg.dt))
    n_rec = nsteps // thin
    out = np.empty((n_rec, cfg.n))
    recs_per_chunk = max(1, _CHUNK // thin)
    done = 0
    while done < n_rec:
        take = min(recs_per_chunk, n_rec - done)
        xi = noise.normals((take * thin, act.size))
        bad = _kernels.em_record_chunk(u, xi, cfg.dt, cfg.epsilon, amp, act,
                                       cfg.tamed, thin, out[done:done + take])
        if bad >= 0:
            step = done * thin + bad
            kept = done + bad // thin
            t_rec = cfg.dt * thin * np.arange(kept + 1)
            states = np.vstack([np.array(u0, dtype=float)[None, :], out[:kept]])
            return Trajectory(times=t_rec, states=states,
                              blow_up=(step + 1) * cfg.dt)
        done += take
    times = cfg.dt * thin * np.arange(n_rec + 1)
    states = np.vstack([np.array(u0, dtype=float)[None, :], out])
    return Trajectory(times=times, states=states)


def simulate_ou(y0, cfg: L96Config, horizon: float, mode: str = "exact",
                thin: int = 1, stream_id: int = 0) -> Trajectory:
    """Base-process path on the invariant subspace, embedded in R^N.

    ``mode='exact'`` uses the exact one-step transition
    ``y' = y e^{-eps dt} + sigma_j sqrt((1 - e^{-2 eps dt}) / 2) xi``;
    ``mode='em'`` uses Euler-Maruyama for consistency with the full system.
    """
    y0 = np.asarray(y0, dtype=float)
    if y0.shape[0] != cfg.n:
        raise ValueError(f"state has length {y0.shape[0]}, config expects {cfg.n}")
    if np.any(project_transverse(y0) != 0):
        raise ValueError("simulate_ou requires an initial point on the invariant subspace")
    if mode not in ("exact", "em"):
        raise ValueError(f"mode must be 'exact' or 'em', got {mode!r}")
    idx = cfg.indexing
    forced = list(idx.forced)
    sig = cfg.sigma_forced_array()
    y = y0[forced].copy()
    noise = NoiseStream(cfg.seed, stream_id)
    nsteps = int(round(horizon / cfg.dt))
    n_rec = nsteps // thin
    states = np.zeros((n_rec + 1, cfg.n))
    states[0] = y0
    decay = math.exp(-cfg.epsilon * cfg.dt)
    nscale = sig * math.sqrt((1.0 - math.exp(-2.0 * cfg.epsilon * cfg.dt)) / 2.0)
    amp = math.sqrt(cfg.epsilon * cfg.dt) * sig
    for r in range(n_rec):
        xi = noise.normals((thin, len(forced)))
        if mode == "exact":
            _kernels.ou_exact_chunk(y, xi, decay, nscale)
        else:
            _kernels.ou_em_chunk(y, xi, cfg.dt, cfg.epsilon, amp)
        states[r + 1, forced] = y
    times = cfg.dt * thin * np.arange(n_rec + 1)
    return Trajectory(times=times, states=states)


def ou_ensemble(cfg: L96Config, horizon: float, n_paths: int, mode: str = "exact",
                stream_id: int = 0, y0=None) -> np.ndarray:
    """Final forced-coordinate values of ``n_paths`` independent base paths.

    Vectorised across paths; returns an (n_paths, K) array.  Used for
    distributional checks of the two OU stepping modes.
    """
    k = cfg.indexing.k
    sig = cfg.sigma_forced_array()
    noise = NoiseStream(cfg.seed, stream_id)
    y = np.zeros((n_paths, k)) if y0 is None else np.tile(np.asarray(y0, float), (n_paths, 1))
    nsteps = int(round(horizon / cfg.dt))
    decay = math.exp(-cfg.epsilon * cfg.dt)
    nscale = sig * math.sqrt((1.0 - math.exp(-2.0 * cfg.epsilon * cfg.dt)) / 2.0)
    amp = math.sqrt(cfg.epsilon * cfg.dt) * sig
    for _ in range(nsteps):
        xi = noise.normals((n_paths, k))
        if mode == "exact":
            y = y * decay + nscale * xi
        else:
            y = y * (1.0 - cfg.epsilon * cfg.dt) + amp * xi
    return y


@dataclass
class CoupledPair:
    times: np.ndarray
    distances: np.ndarray
    synchronized: bool
    sync_time: float | None
    blow_up: float | None = None


def coupled_pair(u0, v0, cfg: L96Config, horizon: float, sync_tol: float = 1e-6,
                 thin: int = 1, stream_id: int = 0) -> CoupledPair:
    """Drive two initial states with the identical noise realisation.

    Integration stops early once |u - v| < ``sync_tol``.
    """
    u = require_finite(np.array(u0, dtype=float))
    v = require_finite(np.array(v0, dtype=float))
    if u.shape != v.shape or u.shape[0] != cfg.n:
        raise ValueError("initial states must both have the config length")
    act, amp = _noise_arrays(cfg)
    noise = NoiseStream(cfg.seed, stream_id)
    nsteps = int(round(horizon / cfg.dt))
    n_rec = nsteps // thin
    dist = np.empty(n_rec + 1)
    dist[0] = np.linalg.norm(u - v)
    if dist[0] < sync_tol:
        return CoupledPair(times=np.zeros(1), distances=dist[:1],
                           synchronized=True, sync_time=0.0)
    recs_per_chunk = max(1, _CHUNK // thin)
    done = 0
    while done < n_rec:
        take = min(recs_per_chunk, n_rec - done)
        xi = noise.normals((take * thin, act.size))
        bad, stop = _kernels.em_pair_chunk(u, v, xi, cfg.dt, cfg.epsilon, amp, act,
                                           cfg.tamed, thin, dist[done + 1:done + take + 1],
                                           sync_tol)
        if bad >= 0:
            kept = done + bad // thin
            t = cfg.dt * thin * np.arange(kept + 1)
            return CoupledPair(times=t, distances=dist[:kept + 1], synchronized=False,
                               sync_time=None, blow_up=(done * thin + bad + 1) * cfg.dt)
        if stop >= 0:
            kept = done + stop + 1
            t = cfg.dt * thin * np.arange(kept + 1)
            return CoupledPair(times=t, distances=dist[:kept + 1], synchronized=True,
                               sync_time=float(t[-1]))
        done += take
    t = cfg.dt * thin * np.arange(n_rec + 1)
    return CoupledPair(times=t, distances=dist, synchronized=bool(dist[-1] < sync_tol),
                       sync_time=float(t[-1]) if dist[-1] < sync_tol else None)


def eta_star(cfg: L96Config) -> float:
    """Confinement threshold 1 / (8 max_j sigma_j^2) over the forced modes."""
    smax = max(cfg.sigma[j] for j in cfg.indexing.forced)
    if smax <= 0:
        raise ValueError("eta_star undefined without forcing")
    return 1.0 / (8.0 * smax * smax)


@dataclass
class SuperLyapPoint:
    radius: float
    log_ratio: float
    ratio: float
    log_mean_final: float
    excluded: int


@dataclass
class SuperLyapReport:
    eta: float
    eta_star: float
    horizon: float
    n_paths: int
    points: list[SuperLyapPoint]

    @property
    def max_ratio(self) -> float:
        return max(p.ratio for p in self.points)


def _log_mean_exp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.mean(np.exp(x - m))))


def super_lyapunov_probe(cfg: L96Config, eta: float, sample_radii, horizon: float,
                         n_paths: int, stream_id_base: int = 10_000) -> SuperLyapReport:
    """Monte Carlo bound probe for E[sup_t exp(eta |u_t|^2)] / exp(eta |u_0|^2).

    One grid point per radius; the initial direction is a fixed seeded draw.
    All expectations are evaluated in log space; blown-up paths are excluded
    and counted.
    """
    es = eta_star(cfg)
    if not 0 < eta < es:
        raise ValueError(f"eta must lie in (0, {es}), got {eta}")
    act, amp = _noise_arrays(cfg)
    nsteps = int(round(horizon / cfg.dt))
    direction = NoiseStream(cfg.seed, stream_id_base).normals(cfg.n)
    direction /= np.linalg.norm(direction)
    points = []
    for ig, radius in enumerate(sample_radii):
        u0 = float(radius) * direction
        sup_eta: list[float] = []
        final_eta: list[float] = []
        excluded = 0
        for p in range(n_paths):
            noise = NoiseStream(cfg.seed, stream_id_base + 1 + ig * n_paths + p)
            u = u0.copy()
            best = float(u @ u)
            bad = False
            left = nsteps
            while left > 0:
                take = min(_CHUNK, left)
                xi = noise.normals((take, act.size))
                bad_step, chunk_best = _kernels.em_supnorm_chunk(
                    u, xi, cfg.dt, cfg.epsilon, amp, act, cfg.tamed)
                best = max(best, chunk_best)
                if bad_step >= 0:
                    bad = True
                    break
                left -= take
            if bad:
                excluded += 1
                continue
            sup_eta.append(eta * best)
            final_eta.append(eta * float(u @ u))
        if not sup_eta:
            raise BlowUpError(f"all paths rejected at radius {radius}")
        log_ratio = _log_mean_exp(np.array(sup_eta)) - eta * float(u0 @ u0)
        points.append(SuperLyapPoint(
            radius=float(radius),
            log_ratio=log_ratio,
            ratio=math.exp(log_ratio) if log_ratio < 700 else math.inf,
            log_mean_final=_log_mean_exp(np.array(final_eta)),
            excluded=excluded,
        ))
    return SuperLyapReport(eta=eta, eta_star=es, horizon=horizon,
                           n_paths=n_paths, points=points)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Delimited export with header ``t,u_0,...,u_{N-1}``."""
    n = traj.states.shape[1]
    with open(path, "w") as fh:
        fh.write("t," + ",".join(f"u_{j}" for j in range(n)) + "\n")
        for t, row in zip(traj.times, traj.states):
            fh.write(repr(float(t)) + "," + ",".join(repr(float(x)) for x in row) + "\n")


def trajectory_summary(traj: Trajectory, cfg: L96Config, stream_id: int = 0) -> dict:
    return {
        "config": {
            "n": cfg.n, "epsilon": cfg.epsilon, "sigma": list(cfg.sigma),
            "dt": cfg.dt, "seed": cfg.seed, "mode": cfg.mode, "tamed": cfg.tamed,
        },
        "stream_id": stream_id,
        "samples": int(traj.times.shape[0]),
        "blow_up": traj.blow_up,
        "blow_up_count": 0 if traj.blow_up is None else 1,
    }


def write_trajectory_summary(traj: Trajectory, cfg: L96Config, path,
                             stream_id: int = 0) -> None:
    with open(path, "w") as fh:
        json.dump(trajectory_summary(traj, cfg, stream_id), fh, indent=2, sort_keys=True)
        fh.write("\n")
