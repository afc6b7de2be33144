"""Chunked integration kernels.

Noise blocks are drawn by the caller (numpy Philox streams) and passed in, so
results are bit-identical to stepping the reference implementations with the
same stream.  All kernels mutate their state arguments in place and return the
in-chunk step index of the first non-finite state, or -1 if the chunk
completed.
"""

from __future__ import annotations

import numba
import numpy as np

_F = numba.float64
_I = numba.int64


@numba.njit(cache=True)
def _apply_drift(u, du, dt, eps, tamed):
    n = u.shape[0]
    nrm2 = 0.0
    for j in range(n):
        jp1 = j + 1 - n if j + 1 >= n else j + 1
        jm1 = j - 1 + n if j - 1 < 0 else j - 1
        jm2 = j - 2 + n if j - 2 < 0 else j - 2
        d = (u[jp1] - u[jm2]) * u[jm1] - eps * u[j]
        du[j] = d
        nrm2 += d * d
    f = dt / (1.0 + dt * np.sqrt(nrm2)) if tamed else dt
    for j in range(n):
        u[j] += f * du[j]


@numba.njit(cache=True)
def _finite(u):
    for j in range(u.shape[0]):
        if not np.isfinite(u[j]):
            return False
    return True


@numba.njit(cache=True)
def em_chunk(u, xi, dt, eps, amp, act, tamed):
    """Advance ``u`` by one tamed Euler-Maruyama step per noise row."""
    m = xi.shape[0]
    du = np.empty(u.shape[0])
    for s in range(m):
        _apply_drift(u, du, dt, eps, tamed)
        for a in range(act.shape[0]):
            u[act[a]] += amp[a] * xi[s, a]
        if not _finite(u):
            return s
    return -1


@numba.njit(cache=True)
def em_record_chunk(u, xi, dt, eps, amp, act, tamed, thin, out):
    """Like :func:`em_chunk` but records the state after every ``thin`` steps.

    ``xi`` must hold ``out.shape[0] * thin`` rows.
    """
    du = np.empty(u.shape[0])
    s = 0
    for r in range(out.shape[0]):
        for _ in range(thin):
            _apply_drift(u, du, dt, eps, tamed)
            for a in range(act.shape[0]):
                u[act[a]] += amp[a] * xi[s, a]
            if not _finite(u):
                return s
            s += 1
        out[r] = u
    return -1


@numba.njit(cache=True)
def em_pair_chunk(u, v, xi, dt, eps, amp, act, tamed, thin, dist_out, tol):
    """Advance two states through identical noise; record |u - v| every ``thin``
    steps.  Returns (bad_step, stop_record): ``stop_record`` is the record index
    at which the distance first dropped below ``tol`` (-1 if it never did).
    """
    du = np.empty(u.shape[0])
    s = 0
    for r in range(dist_out.shape[0]):
        for _ in range(thin):
            _apply_drift(u, du, dt, eps, tamed)
            _apply_drift(v, du, dt, eps, tamed)
            for a in range(act.shape[0]):
                w = amp[a] * xi[s, a]
                u[act[a]] += w
                v[act[a]] += w
            if not (_finite(u) and _finite(v)):
                return s, -1
            s += 1
        d2 = 0.0
        for j in range(u.shape[0]):
            d2 += (u[j] - v[j]) ** 2
        dist_out[r] = np.sqrt(d2)
        if dist_out[r] < tol:
            return -1, r
    return -1, -1


@numba.njit(cache=True)
def em_escape_chunk(u, xi, dt, eps, amp, act, tamed, trans, threshold):
    """Advance until the transverse norm reaches ``threshold``.

    Returns (bad_step, exit_step); exit_step is -1 if no escape in the chunk.
    """
    m = xi.shape[0]
    du = np.empty(u.shape[0])
    for s in range(m):
        _apply_drift(u, du, dt, eps, tamed)
        for a in range(act.shape[0]):
            u[act[a]] += amp[a] * xi[s, a]
        if not _finite(u):
            return s, -1
        p2 = 0.0
        for t in range(trans.shape[0]):
            p2 += u[trans[t]] ** 2
        if np.sqrt(p2) >= threshold:
            return -1, s
    return -1, -1


@numba.njit(cache=True)
def em_stats_chunk(u, xi, dt, eps, amp, act, tamed, trans, perp_out, coord_sum, coord_sumsq):
    """Advance while recording |transverse part| per step and accumulating
    per-coordinate first/second moments."""
    m = xi.shape[0]
    n = u.shape[0]
    du = np.empty(n)
    for s in range(m):
        _apply_drift(u, du, dt, eps, tamed)
        for a in range(act.shape[0]):
            u[act[a]] += amp[a] * xi[s, a]
        if not _finite(u):
            return s
        p2 = 0.0
        for t in range(trans.shape[0]):
            p2 += u[trans[t]] ** 2
        perp_out[s] = np.sqrt(p2)
        for j in range(n):
            coord_sum[j] += u[j]
            coord_sumsq[j] += u[j] * u[j]
    return -1


@numba.njit(cache=True)
def em_supnorm_chunk(u, xi, dt, eps, amp, act, tamed):
    """Advance and return (bad_step, max |u|^2 over the post-step states)."""
    m = xi.shape[0]
    du = np.empty(u.shape[0])
    best = 0.0
    for s in range(m):
        _apply_drift(u, du, dt, eps, tamed)
        for a in range(act.shape[0]):
            u[act[a]] += amp[a] * xi[s, a]
        if not _finite(u):
            return s, best
        n2 = 0.0
        for j in range(u.shape[0]):
            n2 += u[j] * u[j]
        if n2 > best:
            best = n2
    return -1, best


@numba.njit(cache=True)
def ou_exact_chunk(y, xi, decay, nscale):
    """Exact-in-distribution OU transitions: y <- y*decay + nscale*xi."""
    for s in range(xi.shape[0]):
        for k in range(y.shape[0]):
            y[k] = y[k] * decay + nscale[k] * xi[s, k]
    return -1


@numba.njit(cache=True)
def ou_em_chunk(y, xi, dt, eps, amp):
    """Euler-Maruyama OU steps: y <- y*(1 - eps*dt) + amp*xi."""
    for s in range(xi.shape[0]):
        for k in range(y.shape[0]):
            y[k] = y[k] * (1.0 - eps * dt) + amp[k] * xi[s, k]
    return -1


@numba.njit(cache=True)
def transverse_chunk(y, v, xi, dt, eps, decay, nscale, mstack, fk_out, mid_out):
    """One projective-cocycle step per noise row.

    Per step, with G(y) frozen at the step's initial base point:
      * record the instantaneous growth integrand <v, G v> - eps (``fk_out``),
      * advance v by midpoint RK2 on the projective field
        F(v) = G v - eps v - v <v, G v - eps v>, renormalising afterwards,
      * record the midpoint integrand (``mid_out``) whose dt-sum is the
        log-norm increment,
      * advance y by one exact OU transition.

    Returns (bad_step, log_norm_added).
    """
    m = xi.shape[0]
    kdim = y.shape[0]
    n = v.shape[0]
    g = np.empty((n, n))
    k1 = np.empty(n)
    vm = np.empty(n)
    k2 = np.empty(n)
    added = 0.0
    for s in range(m):
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for k in range(kdim):
                    acc += y[k] * mstack[k, i, j]
                g[i, j] = acc
        # stage 1 at v
        q = 0.0
        for i in range(n):
            gi = 0.0
            for j in range(n):
                gi += g[i, j] * v[j]
            k1[i] = gi
            q += v[i] * gi
        fk_out[s] = q - eps
        for i in range(n):
            k1[i] = k1[i] - eps * v[i] - (q - eps) * v[i]
        nrm = 0.0
        for i in range(n):
            vm[i] = v[i] + 0.5 * dt * k1[i]
            nrm += vm[i] * vm[i]
        nrm = np.sqrt(nrm)
        for i in range(n):
            vm[i] /= nrm
        # stage 2 at the midpoint
        qm = 0.0
        for i in range(n):
            gi = 0.0
            for j in range(n):
                gi += g[i, j] * vm[j]
            k2[i] = gi
            qm += vm[i] * gi
        mid_out[s] = qm - eps
        added += dt * (qm - eps)
        nrm = 0.0
        for i in range(n):
            v[i] += dt * (k2[i] - eps * vm[i] - (qm - eps) * vm[i])
            nrm += v[i] * v[i]
        nrm = np.sqrt(nrm)
        for i in range(n):
            v[i] /= nrm
        if not np.isfinite(nrm) or nrm == 0.0:
            return s, added
        for k in range(kdim):
            y[k] = y[k] * decay + nscale[k] * xi[s, k]
    return -1, added


@numba.njit(cache=True)
def det_rate_chunk(y, xi, decay, nscale, mstack, eps, dt):
    """Accumulate d/dt log det of the transverse cocycle along an OU path.

    Returns (integral increment of trace(G(y_t)) - eps*dim over the chunk,
    max |trace G(y_t)| seen), measuring the trace from the assembled matrix.
    """
    m = xi.shape[0]
    kdim = y.shape[0]
    n = mstack.shape[1]
    acc = 0.0
    worst = 0.0
    for s in range(m):
        tr = 0.0
        for i in range(n):
            gij = 0.0
            for k in range(kdim):
                gij += y[k] * mstack[k, i, i]
            tr += gij
        if abs(tr) > worst:
            worst = abs(tr)
        acc += dt * (tr - eps * n)
        for k in range(kdim):
            y[k] = y[k] * decay + nscale[k] * xi[s, k]
    return acc, worst
