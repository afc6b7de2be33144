"""Core Lorenz-96 definitions shared by every other module.

State vectors are plain ``numpy`` arrays of length ``N`` indexed cyclically
(index arithmetic mod ``N``; index 0 is the same site as index ``N``).  With
``N = 3K``, the forced index set is ``I = {j : j % 3 == 0}`` and the
transverse set ``T`` is its complement in natural order.  The advection
bilinear form is

    B(u, v)_j = (u_{j+1} - u_{j-2}) * v_{j-1}

and the drift of the damped system is ``X0(u) = B(u, u) - eps * u``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np


class BlowUpError(RuntimeError):
    """A state or integration step produced a non-finite value."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


def _as_state(u) -> np.ndarray:
    u = np.asarray(u)
    if u.ndim != 1:
        raise ValueError(f"state must be a 1-d vector, got shape {u.shape}")
    return u


def require_finite(u: np.ndarray, what: str = "state", time: float | None = None) -> np.ndarray:
    if not np.all(np.isfinite(u)):
        raise BlowUpError(f"non-finite {what}", time=time)
    return u


@dataclass(frozen=True)
class SubspaceIndexing:
    """Forced/transverse index bookkeeping for system size ``n = 3K``.

    ``transverse`` is listed in natural order and ``compact_of`` is the
    order-preserving bijection onto ``0..2K-1`` (so original index ``3q+1``
    maps to compact ``2q`` and ``3q+2`` to ``2q+1``).
    """

    n: int
    forced: tuple[int, ...] = field(init=False)
    transverse: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if self.n < 3 or self.n % 3 != 0:
            raise ValueError(f"system size must be a positive multiple of 3, got {self.n}")
        object.__setattr__(self, "forced", tuple(j for j in range(self.n) if j % 3 == 0))
        object.__setattr__(self, "transverse", tuple(j for j in range(self.n) if j % 3 != 0))

    @property
    def k(self) -> int:
        return self.n // 3

    @property
    def n_transverse(self) -> int:
        return 2 * (self.n // 3)

    def compact_of(self, j: int) -> int:
        j = j % self.n
        if j % 3 == 0:
            raise IndexError(f"index {j} is forced, not transverse")
        q, r = divmod(j, 3)
        return 2 * q + (r - 1)

    def original_of(self, c: int) -> int:
        if not 0 <= c < self.n_transverse:
            raise IndexError(f"compact index {c} out of range 0..{self.n_transverse - 1}")
        q, r = divmod(c, 2)
        return 3 * q + r + 1


@functools.lru_cache(maxsize=None)
def indexing(n: int) -> SubspaceIndexing:
    return SubspaceIndexing(n)


@dataclass(frozen=True)
class L96Config:
    """System size, damping, noise amplitudes, integrator step and seed.

    ``sigma`` holds one amplitude per coordinate.  In ``degenerate`` mode
    (the model of interest) ``sigma[j] > 0`` iff ``j % 3 == 0``; ``custom``
    mode permits arbitrary nonnegative amplitudes for exploratory runs.
    """

    n: int
    epsilon: float
    sigma: tuple[float, ...]
    dt: float = 1e-3
    seed: int = 0
    mode: str = "degenerate"
    tamed: bool = True

    def __post_init__(self):
        idx = indexing(self.n)  # validates n
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        sigma = tuple(float(s) for s in self.sigma)
        if len(sigma) != self.n:
            raise ValueError(f"sigma must have length {self.n}, got {len(sigma)}")
        if any(s < 0 or not np.isfinite(s) for s in sigma):
            raise ValueError("sigma entries must be finite and nonnegative")
        if self.mode == "degenerate":
            for j, s in enumerate(sigma):
                if (j in idx.forced) != (s > 0):
                    raise ValueError(
                        f"degenerate forcing requires sigma[j] > 0 iff j % 3 == 0; "
                        f"violated at j={j} (sigma={s})"
                    )
        elif self.mode != "custom":
            raise ValueError(f"mode must be 'degenerate' or 'custom', got {self.mode!r}")
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def degenerate(cls, n: int, epsilon: float, sigma_forced: float = 1.0,
                   dt: float = 1e-3, seed: int = 0, tamed: bool = True) -> "L96Config":
        """Uniform amplitude ``sigma_forced`` on every forced coordinate."""
        sigma = tuple(sigma_forced if j % 3 == 0 else 0.0 for j in range(n))
        return cls(n=n, epsilon=epsilon, sigma=sigma, dt=dt, seed=seed, tamed=tamed)

    @property
    def indexing(self) -> SubspaceIndexing:
        return indexing(self.n)

    @property
    def active_indices(self) -> tuple[int, ...]:
        """Coordinates that actually receive noise (sigma > 0)."""
        return tuple(j for j, s in enumerate(self.sigma) if s > 0)

    def sigma_forced_array(self) -> np.ndarray:
        """Amplitudes on the forced set, in forced order."""
        return np.array([self.sigma[j] for j in self.indexing.forced])


def bilinear_b(u, v) -> np.ndarray:
    """B(u, v)_j = (u_{j+1} - u_{j-2}) * v_{j-1}, indices mod N."""
    u, v = _as_state(u), _as_state(v)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    return (np.roll(u, -1) - np.roll(u, 2)) * np.roll(v, 1)


def drift(u, epsilon: float) -> np.ndarray:
    """X0(u) = B(u, u) - epsilon * u."""
    u = _as_state(u)
    out = bilinear_b(u, u) - epsilon * u
    return require_finite(out, "drift")


def jacobian_db(u) -> np.ndarray:
    """Matrix J of the derivative of u -> B(u, u):

    (J v)_l = (v_{l+1} - v_{l-2}) u_{l-1} + (u_{l+1} - u_{l-2}) v_{l-1}.

    Preserves the input dtype, so integer states give an exact integer matrix.
    """
    u = _as_state(u)
    n = u.shape[0]
    idx = np.arange(n)
    jac = np.zeros((n, n), dtype=u.dtype)
    np.add.at(jac, (idx, (idx + 1) % n), u[(idx - 1) % n])
    np.add.at(jac, (idx, (idx - 2) % n), -u[(idx - 1) % n])
    np.add.at(jac, (idx, (idx - 1) % n), u[(idx + 1) % n] - u[(idx - 2) % n])
    return jac


def project_invariant(u) -> np.ndarray:
    """Zero out the transverse entries (orthogonal projection onto H_I)."""
    u = _as_state(u)
    out = np.zeros_like(u)
    forced = list(indexing(u.shape[0]).forced)
    out[forced] = u[forced]
    return out


def project_transverse(u) -> np.ndarray:
    """Zero out the forced entries (orthogonal projection onto the complement)."""
    u = _as_state(u)
    out = u.copy()
    out[list(indexing(u.shape[0]).forced)] = 0
    return out


def m_k_triples(k: int, n: int) -> list[tuple[int, int, int]]:
    """Sparse (row, col, value) description of M_k in compact transverse indexing.

    M_k = E_{k+1,k+2} - E_{k+1,k-1} + E_{k-1,k-2} - E_{k+2,k+1}, original
    indices mod n restricted to the transverse set, then re-indexed.  Entries
    at coinciding positions accumulate (everything cancels for n = 3).
    """
    idx = indexing(n)
    k = k % n
    if k % 3 != 0:
        raise IndexError(f"k={k} is not a forced index")
    raw = [
        ((k + 1) % n, (k + 2) % n, 1),
        ((k + 1) % n, (k - 1) % n, -1),
        ((k - 1) % n, (k - 2) % n, 1),
        ((k + 2) % n, (k + 1) % n, -1),
    ]
    acc: dict[tuple[int, int], int] = {}
    for i, j, val in raw:
        key = (idx.compact_of(i), idx.compact_of(j))
        acc[key] = acc.get(key, 0) + val
    return [(i, j, v) for (i, j), v in sorted(acc.items()) if v != 0]


def m_k_matrix(k: int, n: int) -> np.ndarray:
    """Dense integer 2K x 2K matrix of M_k in compact indexing."""
    m = 2 * (n // 3)
    out = np.zeros((m, m), dtype=np.int64)
    for i, j, v in m_k_triples(k, n):
        out[i, j] = v
    return out


@functools.lru_cache(maxsize=None)
def m_stack(n: int) -> np.ndarray:
    """Float array of shape (K, 2K, 2K) stacking M_k over forced k in order."""
    idx = indexing(n)
    return np.stack([m_k_matrix(k, n).astype(float) for k in idx.forced])


def transverse_generator(y) -> np.ndarray:
    """Matrix of DB(y) restricted to the transverse subspace, for y in H_I.

    Returns sum_k y_k M_k (compact indexing).  Raises if y has a nonzero
    transverse component.
    """
    y = _as_state(y)
    idx = indexing(y.shape[0])
    if np.any(y[list(idx.transverse)] != 0):
        raise ValueError("transverse_generator requires a point on the invariant subspace")
    forced_vals = y[list(idx.forced)].astype(float)
    return np.einsum("k,kij->ij", forced_vals, m_stack(y.shape[0]))


def shift_state(u, by: int = 3) -> np.ndarray:
    """Cyclic coordinate shift (S u)_j = u_{j-by}."""
    return np.roll(_as_state(u), by)


def matrix_to_csv(mat: np.ndarray) -> str:
    """Row-major CSV rendering for debugging; exact for integer matrices."""
    lines = []
    for row in np.asarray(mat):
        lines.append(",".join(str(int(x)) if float(x).is_integer() else repr(float(x))
                              for x in row))
    return "\n".join(lines) + "\n"
