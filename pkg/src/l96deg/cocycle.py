"""Transverse linear and projective dynamics over the base process.

The frame (y, v, log_norm) carries the base point (forced coordinates only),
the unit transverse direction in compact indexing, and the accumulated
log-growth of the underlying linear solution.  Two estimators of the top
transverse exponent share one trajectory:

* ``logNormGrowth`` differences the accumulated log norm (midpoint-rule
  increments),
* ``fkAverage`` time-averages the instantaneous integrand
  ``<v, G(y) v> - eps`` sampled at step starts,

and agree up to discretisation order.  ``unstable_block`` is the exact
rational certificate for the 4x4 invariant block of the generator at
``y = a e_0 + b e_3``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels
from .model import BlowUpError, L96Config, m_stack
from .rng import NoiseStream

_CHUNK = 1 << 16


class EstimateRefused(RuntimeError):
    """Too much of the trajectory was lost to blow-up for a trustworthy estimate."""


@dataclass
class TransverseFrame:
    """State of the projective cocycle: base point, direction, log growth."""

    y: np.ndarray        # forced-coordinate values, length K
    v: np.ndarray        # unit transverse direction, length 2K, compact indexing
    log_norm: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.v.shape[0] != 2 * self.y.shape[0]:
            raise ValueError("direction must have twice the base dimension")
        if abs(np.linalg.norm(self.v) - 1.0) > 1e-9:
            raise ValueError("direction must be a unit vector")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.v))
                and math.isfinite(self.log_norm)):
            raise BlowUpError("non-finite transverse frame", time=self.t)


def _ou_coeffs(cfg: L96Config):
    decay = math.exp(-cfg.epsilon * cfg.dt)
    nscale = cfg.sigma_forced_array() * math.sqrt(
        (1.0 - math.exp(-2.0 * cfg.epsilon * cfg.dt)) / 2.0)
    return decay, nscale


def initial_frame(cfg: L96Config, noise: NoiseStream) -> TransverseFrame:
    """Direction uniform on the unit sphere; base point from the stationary law."""
    k = cfg.indexing.k
    v = noise.normals(2 * k)
    v /= np.linalg.norm(v)
    y = cfg.sigma_forced_array() * math.sqrt(0.5) * noise.normals(k)
    return TransverseFrame(y=y, v=v)


def step_transverse(frame: TransverseFrame, cfg: L96Config,
                    noise: NoiseStream) -> TransverseFrame:
    """One step of the projective cocycle (reference for the chunk kernel).

    With G frozen at the frame's base point: midpoint RK2 on the projective
    field F(v) = G v - eps v - v <v, G v - eps v>, renormalisation, a log-norm
    increment dt * (<v_mid, G v_mid> - eps), then one exact base transition.
    """
    stack = m_stack(3 * frame.y.shape[0])
    g = np.einsum("k,kij->ij", frame.y, stack)
    v = frame.v
    eps, dt = cfg.epsilon, cfg.dt
    gv = g @ v
    q = float(v @ gv)
    k1 = gv - eps * v - (q - eps) * v
    vm = v + 0.5 * dt * k1
    vm /= np.linalg.norm(vm)
    gvm = g @ vm
    qm = float(vm @ gvm)
    k2 = gvm - eps * vm - (qm - eps) * vm
    v_new = v + dt * k2
    nrm = np.linalg.norm(v_new)
    if not np.isfinite(nrm) or nrm == 0.0:
        raise BlowUpError("projective step produced a non-finite direction",
                          time=frame.t + dt)
    v_new /= nrm
    decay, nscale = _ou_coeffs(cfg)
    y_new = frame.y * decay + nscale * noise.normals(frame.y.shape[0])
    return TransverseFrame(y=y_new, v=v_new,
                           log_norm=frame.log_norm + dt * (qm - eps),
                           t=frame.t + dt)


@dataclass
class ExponentEstimate:
    """Point estimate of a growth rate with batch-means uncertainty."""

    value: float
    stderr: float
    horizon: float
    burn_in: float
    method: str
    n_batches: int

    def ci_excludes_zero(self, z: float = 1.96) -> bool:
        return abs(self.value) > z * self.stderr


def default_burn_in(horizon: float) -> float:
    """10% of the horizon, at least 10 time units, capped at half the horizon."""
    return min(max(0.1 * horizon, 10.0), 0.5 * horizon)


@dataclass
class _TransverseRun:
    fk: np.ndarray       # instantaneous integrand per step
    mid: np.ndarray      # midpoint integrand per step (log-norm increments / dt)
    burn_steps: int
    horizon: float
    burn_in: float


def _run_transverse(cfg: L96Config, horizon: float, burn_in: float,
                    stream_id: int) -> _TransverseRun:
    noise = NoiseStream(cfg.seed, stream_id)
    frame = initial_frame(cfg, noise)
    y, v = frame.y.copy(), frame.v.copy()
    stack = m_stack(cfg.n)
    decay, nscale = _ou_coeffs(cfg)
    nsteps = int(round(horizon / cfg.dt))
    burn_steps = int(round(burn_in / cfg.dt))
    if not 0 <= burn_steps < nsteps:
        raise ValueError("burn-in must be shorter than the horizon")
    fk = np.empty(nsteps)
    mid = np.empty(nsteps)
    done = 0
    while done < nsteps:
        take = min(_CHUNK, nsteps - done)
        xi = noise.normals((take, y.shape[0]))
        bad, _ = _kernels.transverse_chunk(y, v, xi, cfg.dt, cfg.epsilon, decay,
                                           nscale, stack, fk[done:done + take],
                                           mid[done:done + take])
        if bad >= 0:
            raise BlowUpError("transverse cocycle blow-up",
                              time=(done + bad + 1) * cfg.dt)
        done += take
    return _TransverseRun(fk=fk, mid=mid, burn_steps=burn_steps,
                          horizon=horizon, burn_in=burn_in)


def _batch_estimate(series: np.ndarray, burn_steps: int, batches: int,
                    horizon: float, burn_in: float, method: str) -> ExponentEstimate:
    post = series[burn_steps:]
    blen = post.shape[0] // batches
    if blen < 1:
        raise ValueError("horizon too short for the requested batch count")
    used = post[:blen * batches].reshape(batches, blen)
    means = used.mean(axis=1)
    value = float(means.mean())
    stderr = float(means.std(ddof=1) / math.sqrt(batches)) if batches > 1 else 0.0
    return ExponentEstimate(value=value, stderr=stderr, horizon=horizon,
                            burn_in=burn_in, method=method, n_batches=batches)


def lyapunov_both(cfg: L96Config, horizon: float, burn_in: float | None = None,
                  batches: int = 20, stream_id: int = 0
                  ) -> tuple[ExponentEstimate, ExponentEstimate]:
    """Both estimators from one trajectory: (logNormGrowth, fkAverage)."""
    if batches < 2:
        raise ValueError("need at least two batches for a standard error")
    burn = default_burn_in(horizon) if burn_in is None else burn_in
    run = _run_transverse(cfg, horizon, burn, stream_id)
    est_log = _batch_estimate(run.mid, run.burn_steps, batches, horizon, burn,
                              "logNormGrowth")
    est_fk = _batch_estimate(run.fk, run.burn_steps, batches, horizon, burn,
                             "fkAverage")
    return est_log, est_fk


def lyapunov_exponent(cfg: L96Config, horizon: float, burn_in: float | None = None,
                      batches: int = 20, method: str = "logNormGrowth",
                      stream_id: int = 0) -> ExponentEstimate:
    """Top transverse exponent by the requested estimator."""
    if method not in ("logNormGrowth", "fkAverage"):
        raise ValueError(f"unknown method {method!r}")
    est_log, est_fk = lyapunov_both(cfg, horizon, burn_in, batches, stream_id)
    return est_log if method == "logNormGrowth" else est_fk


@dataclass
class DetRateResult:
    rate: float
    expected: float
    max_abs_trace: float


def determinant_rate(cfg: L96Config, horizon: float, stream_id: int = 0) -> DetRateResult:
    """Time-average of d/dt log det of the transverse cocycle.

    The generator is trace-free, so the result must equal -eps * 2K up to
    roundoff; the maximum measured |trace| is returned as a structural check.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    noise = NoiseStream(cfg.seed, stream_id)
    frame = initial_frame(cfg, noise)
    y = frame.y.copy()
    stack = m_stack(cfg.n)
    decay, nscale = _ou_coeffs(cfg)
    nsteps = int(round(horizon / cfg.dt))
    acc = 0.0
    worst = 0.0
    done = 0
    while done < nsteps:
        take = min(_CHUNK, nsteps - done)
        xi = noise.normals((take, y.shape[0]))
        inc, w = _kernels.det_rate_chunk(y, xi, decay, nscale, stack,
                                         cfg.epsilon, cfg.dt)
        acc += inc
        worst = max(worst, w)
        done += take
    return DetRateResult(rate=acc / (nsteps * cfg.dt),
                         expected=-cfg.epsilon * 2 * cfg.indexing.k,
                         max_abs_trace=worst)


@dataclass
class MomentEstimate:
    """Monte Carlo estimate of the decay rate of E |w_t|^{-p}."""

    p: float
    value: float
    stderr: float
    horizon: float
    n_paths: int
    ess: float
    reliable: bool


def _log_mean_exp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + math.log(float(np.mean(np.exp(x - m))))


def _path_log_norms(cfg: L96Config, horizon: float, n_paths: int,
                    stream_id_base: int) -> np.ndarray:
    stack = m_stack(cfg.n)
    decay, nscale = _ou_coeffs(cfg)
    nsteps = int(round(horizon / cfg.dt))
    k = cfg.indexing.k
    scratch_fk = np.empty(min(_CHUNK, nsteps))
    scratch_mid = np.empty(min(_CHUNK, nsteps))
    out = np.empty(n_paths)
    for p in range(n_paths):
        noise = NoiseStream(cfg.seed, stream_id_base + p)
        frame = initial_frame(cfg, noise)
        y, v = frame.y.copy(), frame.v.copy()
        total = 0.0
        done = 0
        while done < nsteps:
            take = min(_CHUNK, nsteps - done)
            xi = noise.normals((take, k))
            bad, added = _kernels.transverse_chunk(
                y, v, xi, cfg.dt, cfg.epsilon, decay, nscale, stack,
                scratch_fk[:take], scratch_mid[:take])
            if bad >= 0:
                raise BlowUpError("transverse cocycle blow-up",
                                  time=(done + bad + 1) * cfg.dt)
            total += added
            done += take
        out[p] = total
    return out


def _moment_from_log_norms(log_norms: np.ndarray, p: float, horizon: float,
                           boot_idx: np.ndarray | None) -> MomentEstimate:
    m = log_norms.shape[0]
    if p == 0.0:
        return MomentEstimate(p=0.0, value=0.0, stderr=0.0, horizon=horizon,
                              n_paths=m, ess=float(m), reliable=True)
    x = -p * log_norms
    value = -_log_mean_exp(x) / horizon
    shifted = np.exp(x - np.max(x))
    ess = float(shifted.sum() ** 2 / (shifted ** 2).sum())
    stderr = 0.0
    if boot_idx is not None:
        resampled = np.array([-_log_mean_exp(x[idx]) / horizon for idx in boot_idx])
        stderr = float(resampled.std(ddof=1))
    return MomentEstimate(p=p, value=value, stderr=stderr, horizon=horizon,
                          n_paths=m, ess=ess, reliable=ess >= m / 100.0)


def moment_curve(cfg: L96Config, p_grid, horizon: float, n_paths: int,
                 bootstrap: int = 200, stream_id_base: int = 50_000
                 ) -> list[MomentEstimate]:
    """Estimates for every p in the grid from one shared set of paths."""
    if n_paths < 2:
        raise ValueError("need at least two paths")
    log_norms = _path_log_norms(cfg, horizon, n_paths, stream_id_base)
    boot = None
    if bootstrap > 0:
        rng = np.random.Generator(np.random.Philox(
            key=np.array([cfg.seed, 0xB005], dtype=np.uint64)))
        boot = rng.integers(0, n_paths, size=(bootstrap, n_paths))
    return [_moment_from_log_norms(log_norms, float(p), horizon, boot) for p in p_grid]


def moment_lyapunov(cfg: L96Config, p: float, horizon: float, n_paths: int,
                    bootstrap: int = 200, stream_id_base: int = 50_000) -> MomentEstimate:
    """Λ(p) estimate: -(1/T) log mean exp(-p log|w_T|), stably in log space."""
    return moment_curve(cfg, [p], horizon, n_paths, bootstrap, stream_id_base)[0]


@dataclass
class ScanPoint:
    epsilon: float
    est_log: ExponentEstimate | None
    est_fk: ExponentEstimate | None
    error: str | None = None


@dataclass
class ScanResult:
    points: list[ScanPoint]

    def rows(self) -> list[list]:
        out = []
        for pt in self.points:
            if pt.est_log is None:
                out.append([pt.epsilon, math.nan, math.nan, math.nan])
            else:
                lam = pt.est_log.value
                out.append([pt.epsilon, lam, pt.est_log.stderr, lam / pt.epsilon])
        return out

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("eps,lambda,stderr,lambda_over_eps\n")
            for row in self.rows():
                fh.write(",".join(repr(float(x)) for x in row) + "\n")


def lambda_scan(cfg_template: L96Config, eps_grid, horizon: float,
                burn_in: float | None = None, batches: int = 20,
                stream_id: int = 0) -> ScanResult:
    """Per-epsilon exponent estimates with shared estimator settings."""
    points = []
    for eps in eps_grid:
        cfg = L96Config(n=cfg_template.n, epsilon=float(eps), sigma=cfg_template.sigma,
                        dt=cfg_template.dt, seed=cfg_template.seed,
                        mode=cfg_template.mode, tamed=cfg_template.tamed)
        try:
            est_log, est_fk = lyapunov_both(cfg, horizon, burn_in, batches, stream_id)
            points.append(ScanPoint(epsilon=float(eps), est_log=est_log, est_fk=est_fk))
        except (BlowUpError, EstimateRefused) as exc:
            points.append(ScanPoint(epsilon=float(eps), est_log=None, est_fk=None,
                                    error=str(exc)))
    return ScanResult(points=points)


# -- exact 4x4 instability certificate ---------------------------------------

@dataclass
class UnstableBlockCertificate:
    """Exact eigendata of the generator block on span{e_1, e_2, e_4, e_5}
    at base point a e_0 + b e_3."""

    a: Fraction
    b: Fraction
    matrix: list[list[Fraction]]
    charpoly: tuple[Fraction, ...]        # coefficients of t^4, t^3, t^2, t, 1
    factored_check: bool
    discriminant: Fraction                # a (b - a)
    unstable: bool
    eigenvalues: tuple[complex, ...] = field(default=())


def _charpoly_faddeev_leverrier(m: list[list[Fraction]]) -> tuple[Fraction, ...]:
    """Coefficients of det(tI - M) = t^n - c1 t^{n-1} - ... - cn, exactly."""
    n = len(m)
    def matmul(a, b):
        return [[sum(a[i][k] * b[k][j] for k in range(n)) for j in range(n)]
                for i in range(n)]
    def trace(a):
        return sum(a[i][i] for i in range(n))
    coeffs = [Fraction(1)]
    mk = [row[:] for row in m]
    cs = []
    for k in range(1, n + 1):
        ck = Fraction(trace(mk), k)
        cs.append(ck)
        if k < n:
            shifted = [[mk[i][j] - (ck if i == j else 0) for j in range(n)]
                       for i in range(n)]
            mk = matmul(m, shifted)
    coeffs.extend(-c for c in cs)
    return tuple(coeffs)


def unstable_block(a, b) -> UnstableBlockCertificate:
    """Exact certificate for the 4x4 invariant block at y = a e_0 + b e_3.

    Verifies coefficientwise that det(M - t I) = (b^2 + t^2)(a^2 - a b + t^2)
    and reports the closed-form roots ±i b, ±sqrt(a (b - a)); the block is
    linearly unstable exactly when a (b - a) > 0.
    """
    a, b = Fraction(a), Fraction(b)
    z = Fraction(0)
    m = [
        [z, a, z, z],
        [b - a, z, z, z],
        [z, -b, z, b],
        [z, z, -b, z],
    ]
    cp = _charpoly_faddeev_leverrier(m)
    # (b^2 + t^2)(a^2 - a b + t^2) = t^4 + (a^2 - a b + b^2) t^2 + (a^2 b^2 - a b^3)
    expected = (Fraction(1), z, a * a - a * b + b * b, z, a * a * b * b - a * b ** 3)
    disc = a * (b - a)
    root_real = math.sqrt(float(disc)) if disc >= 0 else 0.0
    root_imag = math.sqrt(float(-disc)) if disc < 0 else 0.0
    eigs = (
        complex(0.0, float(b)), complex(0.0, -float(b)),
        complex(root_real, root_imag), complex(-root_real, -root_imag),
    )
    return UnstableBlockCertificate(
        a=a, b=b, matrix=m, charpoly=cp, factored_check=(cp == expected),
        discriminant=disc, unstable=disc > 0, eigenvalues=eigs,
    )
