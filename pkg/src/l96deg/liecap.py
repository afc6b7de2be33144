"""Exact rational bracket-closure engine and bracket-spanning rank checks.

Matrices are dense arrays of ``fractions.Fraction`` (arbitrary precision,
canonical reduced form).  Spans of vectorized matrices (row-major) are held in
fully reduced row-echelon form by :class:`SpanTracker`, so rank queries and
membership tests are exact.  The closure routine retains only rank-increasing
brackets, which bounds memory by the ambient dimension while producing the
same final span as unfiltered enumeration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import L96Config, indexing, m_k_triples


class PreconditionError(ValueError):
    """An operation's input fails its stated precondition."""


class RationalMatrix:
    """Dense matrix of exact rationals."""

    __slots__ = ("rows", "cols", "_m")

    def __init__(self, entries):
        m = [[Fraction(x) for x in row] for row in entries]
        if not m or any(len(row) != len(m[0]) for row in m):
            raise ValueError("entries must be a nonempty rectangular array")
        self.rows = len(m)
        self.cols = len(m[0])
        self._m = m

    # -- constructors ---------------------------------------------------
    @classmethod
    def zeros(cls, rows: int, cols: int | None = None) -> "RationalMatrix":
        cols = rows if cols is None else cols
        return cls([[0] * cols for _ in range(rows)])

    @classmethod
    def identity(cls, n: int) -> "RationalMatrix":
        return cls([[1 if i == j else 0 for j in range(n)] for i in range(n)])

    @classmethod
    def elementary(cls, n: int, i: int, j: int) -> "RationalMatrix":
        """E_{i,j} with 1-based indices, matching the compact-index tables."""
        if not (1 <= i <= n and 1 <= j <= n):
            raise IndexError(f"elementary indices must lie in 1..{n}")
        out = cls.zeros(n)
        out._m[i - 1][j - 1] = Fraction(1)
        return out

    @classmethod
    def from_array(cls, arr) -> "RationalMatrix":
        return cls([[Fraction(int(x)) if float(x).is_integer() else Fraction(float(x))
                     for x in row] for row in np.asarray(arr)])

    # -- basic ops --------------------------------------------------------
    def __getitem__(self, ij) -> Fraction:
        i, j = ij
        return self._m[i][j]

    def __eq__(self, other) -> bool:
        return (isinstance(other, RationalMatrix) and self.rows == other.rows
                and self.cols == other.cols and self._m == other._m)

    def __hash__(self):
        return hash(tuple(tuple(row) for row in self._m))

    def __add__(self, other: "RationalMatrix") -> "RationalMatrix":
        self._check_same_shape(other)
        return RationalMatrix([[a + b for a, b in zip(ra, rb)]
                               for ra, rb in zip(self._m, other._m)])

    def __sub__(self, other: "RationalMatrix") -> "RationalMatrix":
        self._check_same_shape(other)
        return RationalMatrix([[a - b for a, b in zip(ra, rb)]
                               for ra, rb in zip(self._m, other._m)])

    def __neg__(self) -> "RationalMatrix":
        return RationalMatrix([[-a for a in row] for row in self._m])

    def __rmul__(self, scalar) -> "RationalMatrix":
        c = Fraction(scalar)
        return RationalMatrix([[c * a for a in row] for row in self._m])

    def __matmul__(self, other: "RationalMatrix") -> "RationalMatrix":
        if self.cols != other.rows:
            raise ValueError(f"cannot multiply {self.rows}x{self.cols} by "
                             f"{other.rows}x{other.cols}")
        bt = list(zip(*other._m))
        return RationalMatrix([[sum(a * b for a, b in zip(row, col)) for col in bt]
                               for row in self._m])

    def _check_same_shape(self, other: "RationalMatrix"):
        if self.rows != other.rows or self.cols != other.cols:
            raise ValueError("shape mismatch")

    def trace(self) -> Fraction:
        if self.rows != self.cols:
            raise ValueError("trace of a non-square matrix")
        return sum(self._m[i][i] for i in range(self.rows))

    def apply(self, vec: list[Fraction]) -> list[Fraction]:
        if len(vec) != self.cols:
            raise ValueError("vector length mismatch")
        return [sum(a * x for a, x in zip(row, vec)) for row in self._m]

    def vectorize(self) -> dict[int, Fraction]:
        """Sparse row-major vectorization {flat index: value}."""
        out = {}
        for i, row in enumerate(self._m):
            for j, x in enumerate(row):
                if x:
                    out[i * self.cols + j] = x
        return out

    def to_float(self) -> np.ndarray:
        return np.array([[float(x) for x in row] for row in self._m])

    def __repr__(self):
        return f"RationalMatrix({self.rows}x{self.cols})"


def bracket(a: RationalMatrix, b: RationalMatrix) -> RationalMatrix:
    """Exact commutator [A, B] = AB - BA."""
    if a.rows != a.cols or b.rows != b.cols or a.rows != b.rows:
        raise ValueError("bracket requires square matrices of equal size")
    return a @ b - b @ a


def m_k_rational(k: int, n: int) -> RationalMatrix:
    """Exact copy of the transverse coupling matrix in compact indexing."""
    out = RationalMatrix.zeros(2 * (n // 3))
    for i, j, v in m_k_triples(k, n):
        out._m[i][j] = Fraction(v)
    return out


def shift_permutation(n: int, power: int = 1) -> RationalMatrix:
    """Permutation matrix whose conjugation shifts entry indices by +2*power."""
    out = RationalMatrix.zeros(n)
    for i in range(n):
        out._m[i][(i - 2 * power) % n] = Fraction(1)
    return out


def shift_conjugate(a: RationalMatrix, power: int = 1) -> RationalMatrix:
    """Conjugation by the compact-index shift: entry (i, j) moves to
    (i + 2*power, j + 2*power) mod n.  ``power=+1`` maps the coupling matrix
    at forced site k to the one at k + 3."""
    if a.rows != a.cols:
        raise ValueError("shift_conjugate requires a square matrix")
    n = a.rows
    s = (2 * power) % n
    return RationalMatrix([[a._m[(i - s) % n][(j - s) % n] for j in range(n)]
                           for i in range(n)])


class SpanTracker:
    """Incremental fully-reduced row-echelon span of vectors in Q^dim.

    Basis vectors are stored sparsely keyed by pivot; every pivot entry is 1
    and each pivot column is zero in every other basis vector.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.dim = dim
        self._basis: dict[int, dict[int, Fraction]] = {}

    @property
    def rank(self) -> int:
        return len(self._basis)

    def copy(self) -> "SpanTracker":
        out = SpanTracker(self.dim)
        out._basis = {p: dict(row) for p, row in self._basis.items()}
        return out

    def reduce(self, vec: dict[int, Fraction]) -> dict[int, Fraction]:
        """Remainder of ``vec`` after elimination against the basis."""
        vec = {i: Fraction(x) for i, x in vec.items() if x}
        for i in vec:
            if not 0 <= i < self.dim:
                raise IndexError(f"vector index {i} outside 0..{self.dim - 1}")
        while vec:
            p = min(vec)
            row = self._basis.get(p)
            if row is None:
                return vec
            c = vec[p]
            for j, x in row.items():
                nv = vec.get(j, Fraction(0)) - c * x
                if nv:
                    vec[j] = nv
                else:
                    vec.pop(j, None)
        return vec

    def contains(self, vec: dict[int, Fraction]) -> bool:
        return not self.reduce(vec)

    def add(self, vec: dict[int, Fraction]) -> bool:
        """Insert if independent; returns True iff the rank grew."""
        rem = self.reduce(vec)
        if not rem:
            return False
        p = min(rem)
        c = rem[p]
        rem = {j: x / c for j, x in rem.items()}
        for row in self._basis.values():
            if p in row:
                cc = row[p]
                for j, x in rem.items():
                    nv = row.get(j, Fraction(0)) - cc * x
                    if nv:
                        row[j] = nv
                    else:
                        row.pop(j, None)
        self._basis[p] = rem
        return True

    def basis_rows(self) -> list[tuple[int, dict[int, Fraction]]]:
        return sorted(((p, dict(row)) for p, row in self._basis.items()))

    def dump_csv(self, path) -> None:
        """Golden dump: one basis vector per line, entries as "num/den"."""
        with open(path, "w") as fh:
            for _, row in self.basis_rows():
                cells = []
                for i in range(self.dim):
                    x = row.get(i, Fraction(0))
                    cells.append(f"{x.numerator}/{x.denominator}")
                fh.write(",".join(cells) + "\n")


@dataclass
class ClosureResult:
    tracker: SpanTracker
    dim: int
    depth_reached: int
    stable: bool
    basis: list[RationalMatrix]     # retained rank-increasing elements, in order


def closure(generators: list[RationalMatrix], depth_cap: int) -> ClosureResult:
    """Breadth-first bracket closure with rank filtering.

    Level 0 holds the generators; each later level brackets every previous
    level's rank-increasing element against the whole retained set (which
    includes the generators), keeping a bracket only if it enlarges the span.
    Stops at ``depth_cap``, at the traceless bound, or when a level adds no
    rank.  Every pair of retained elements is bracketed by the time the
    closure stabilises, so a stable result spans the full generated algebra.
    """
    if depth_cap < 1:
        raise ValueError("depth_cap must be >= 1")
    if not generators:
        raise ValueError("need at least one generator")
    n = generators[0].rows
    for g in generators:
        if g.rows != g.cols or g.rows != n:
            raise ValueError("generators must be square matrices of equal size")
    d = n * n
    max_rank = d - 1 if all(g.trace() == 0 for g in generators) else d
    tracker = SpanTracker(d)
    retained: list[RationalMatrix] = []
    new: list[RationalMatrix] = []
    for g in generators:
        if tracker.add(g.vectorize()):
            retained.append(g)
            new.append(g)
    depth_reached = 0
    depth = 0
    while new and depth < depth_cap and tracker.rank < max_rank:
        depth += 1
        partners = list(retained)
        nxt: list[RationalMatrix] = []
        for a in new:
            for b in partners:
                c = bracket(a, b)
                if tracker.add(c.vectorize()):
                    retained.append(c)
                    nxt.append(c)
                    if tracker.rank >= max_rank:
                        break
            if tracker.rank >= max_rank:
                break
        if nxt:
            depth_reached = depth
        new = nxt
    stable = not new or tracker.rank >= max_rank
    return ClosureResult(tracker=tracker, dim=tracker.rank,
                         depth_reached=depth_reached, stable=stable,
                         basis=retained)


def contains_elementary(tracker: SpanTracker, i: int, j: int) -> bool:
    """Is E_{i,j} (1-based compact indices) in the tracked span?"""
    n_sq = tracker.dim
    n = int(round(n_sq ** 0.5))
    if n * n != n_sq:
        raise ValueError("tracker dimension is not a perfect square")
    if not (1 <= i <= n and 1 <= j <= n):
        raise IndexError(f"elementary indices must lie in 1..{n}")
    return tracker.contains({(i - 1) * n + (j - 1): Fraction(1)})


@dataclass
class GenerationReport:
    n: int
    dim: int
    expected: int
    generated: bool
    depth_used: int
    stable: bool
    elapsed: float


def verify_sl_generation(n: int, depth_cap: int = 16) -> GenerationReport:
    """Closure over all K coupling matrices, compared against the full
    traceless dimension (2K)^2 - 1.  Every retained element is checked
    traceless (exact), so the dimension bound is structural."""
    idx = indexing(n)
    t0 = time.perf_counter()
    gens = [m_k_rational(k, n) for k in idx.forced]
    result = closure(gens, depth_cap)
    for mat in result.basis:
        if mat.trace() != 0:
            raise AssertionError("closure retained a non-traceless element")
    expected = idx.n_transverse ** 2 - 1
    return GenerationReport(n=n, dim=result.dim, expected=expected,
                            generated=result.dim == expected,
                            depth_used=result.depth_reached, stable=result.stable,
                            elapsed=time.perf_counter() - t0)


def local_generators(n: int) -> list[RationalMatrix]:
    """The three coupling matrices at forced sites 3, 6, 9 (requires n >= 9)."""
    if n < 9:
        raise ValueError("local generator set needs n >= 9")
    return [m_k_rational(k, n) for k in (3, 6, 9)]


@dataclass
class GPathStep:
    target: tuple[int, int]      # 1-based compact indices of the produced unit
    seed: tuple[int, int]
    power: int
    in_span: bool


@dataclass
class GPathReport:
    n_members: int
    reached: int
    chain_steps: int
    steps: list[GPathStep]
    all_reached: bool


_SEEDS = ((3, 2), (4, 3), (5, 4))


def conjugation_close(result: ClosureResult) -> tuple[SpanTracker, list[RationalMatrix]]:
    """Close the spanned algebra under shift conjugation (exact)."""
    tracker = result.tracker.copy()
    basis = list(result.basis)
    frontier = list(result.basis)
    while frontier:
        nxt = []
        for mat in frontier:
            conj = shift_conjugate(mat, 1)
            if tracker.add(conj.vectorize()):
                basis.append(conj)
                nxt.append(conj)
        frontier = nxt
    return tracker, basis


def lemma_gen_G_path(result: ClosureResult, n_sites: int) -> GPathReport:
    """Replay the conjugation chains deriving the standard generating set
    {E_{j+1,j} : j = 1..2K-1} plus E_{1,2K} from the three seed units
    E_{3,2}, E_{4,3}, E_{5,4}.

    Requires ``n_sites >= 15`` and the seeds present in the closure span;
    each chain applies unit conjugation steps (entry shift ±2) and confirms
    that every produced unit is a member of the conjugation-closed span.
    """
    if n_sites < 15:
        raise PreconditionError("the local-window argument needs n >= 15")
    n = 2 * (n_sites // 3)
    if result.tracker.dim != n * n:
        raise ValueError("closure result does not match the requested system size")
    for (i, j) in _SEEDS:
        if not contains_elementary(result.tracker, i, j):
            raise PreconditionError(f"seed unit E_{{{i},{j}}} is not in the span")
    closed, _ = conjugation_close(result)

    def wrap(i: int) -> int:
        return (i - 1) % n + 1

    steps: list[GPathStep] = []
    reached: set[tuple[int, int]] = set()
    chain_steps = 0
    targets = [(j + 1, j) for j in range(1, n)] + [(1, n)]
    for (ti, tj) in targets:
        # pick the seed with matching row parity; rows step by 2 per conjugation
        seed = (4, 3) if ti % 2 == 0 else (5, 4)
        if (ti, tj) in _SEEDS:
            seed = (ti, tj)
        power = (ti - seed[0]) // 2
        mat = RationalMatrix.elementary(n, *seed)
        ci, cj = seed
        for _ in range(abs(power)):
            step = 1 if power > 0 else -1
            mat = shift_conjugate(mat, step)
            ci, cj = wrap(ci + 2 * step), wrap(cj + 2 * step)
            if mat != RationalMatrix.elementary(n, ci, cj):
                raise AssertionError("conjugation did not shift the unit as expected")
            chain_steps += 1
        if (ci, cj) != (ti, wrap(tj)):
            raise AssertionError(f"chain for E_{{{ti},{tj}}} landed on E_{{{ci},{cj}}}")
        ok = closed.contains(mat.vectorize())
        steps.append(GPathStep(target=(ti, tj), seed=seed, power=power, in_span=ok))
        if ok:
            reached.add((ti, tj))
    return GPathReport(n_members=len(targets), reached=len(reached),
                       chain_steps=chain_steps, steps=steps,
                       all_reached=len(reached) == len(targets))


def standard_generators(n: int) -> list[RationalMatrix]:
    """{E_{j+1,j} : j < n} plus E_{1,n}."""
    if n < 2:
        raise ValueError("need n >= 2")
    gens = [RationalMatrix.elementary(n, j + 1, j) for j in range(1, n)]
    gens.append(RationalMatrix.elementary(n, 1, n))
    return gens


def standard_generators_check(n: int, depth_cap: int | None = None) -> bool:
    """Does the standard generating set close to the full traceless algebra?"""
    cap = depth_cap if depth_cap is not None else max(8, 3 * n)
    result = closure(standard_generators(n), cap)
    return result.dim == n * n - 1


@dataclass
class HormanderRank:
    rank: int
    full_rank: bool


def validate_algebra_basis(basis: list[RationalMatrix]) -> SpanTracker:
    """Check the basis is linearly independent, traceless, and bracket-closed.

    Returns the span tracker of the basis.  Raises PreconditionError if any
    pairwise bracket escapes the span (the property the rank evaluation needs).
    """
    if not basis:
        raise PreconditionError("empty algebra basis")
    n = basis[0].rows
    tracker = SpanTracker(n * n)
    for mat in basis:
        if mat.rows != mat.cols or mat.rows != n:
            raise PreconditionError("basis matrices must be square and uniform")
        if mat.trace() != 0:
            raise PreconditionError("basis contains a non-traceless matrix")
        if not tracker.add(mat.vectorize()):
            raise PreconditionError("basis is linearly dependent")
    for i, a in enumerate(basis):
        for b in basis[i + 1:]:
            if not tracker.contains(bracket(a, b).vectorize()):
                raise PreconditionError("basis is not bracket-closed")
    return tracker


def hormander_rank_at(u, basis: list[RationalMatrix], cfg: L96Config,
                      exact: bool | None = None,
                      check_basis: bool = True) -> HormanderRank:
    """Rank of the spanning family {e_k : k forced} plus {M w : M in basis}
    evaluated at ``u`` (w = transverse part of u, compact indexing).

    Exact mode (rational or integer input) ranks by exact elimination;
    float mode uses an SVD with tolerance 1e-9 times the top singular value.
    """
    idx = cfg.indexing
    u = list(u)
    if len(u) != cfg.n:
        raise ValueError(f"state has length {len(u)}, config expects {cfg.n}")
    if check_basis:
        validate_algebra_basis(basis)
    if exact is None:
        exact = all(isinstance(x, (int, Fraction)) for x in u)
    if exact:
        w = [Fraction(u[t]) for t in idx.transverse]
        tracker = SpanTracker(cfg.n)
        for k in idx.forced:
            tracker.add({k: Fraction(1)})
        for mat in basis:
            img = mat.apply(w)
            vec = {orig: val for orig, val in zip(idx.transverse, img) if val}
            tracker.add(vec)
        rank = tracker.rank
    else:
        w = np.array([float(u[t]) for t in idx.transverse])
        vectors = []
        for k in idx.forced:
            e = np.zeros(cfg.n)
            e[k] = 1.0
            vectors.append(e)
        for mat in basis:
            img = mat.to_float() @ w
            e = np.zeros(cfg.n)
            e[list(idx.transverse)] = img
            vectors.append(e)
        s = np.linalg.svd(np.array(vectors), compute_uv=False)
        rank = int((s > 1e-9 * s[0]).sum()) if s.size and s[0] > 0 else 0
    return HormanderRank(rank=rank, full_rank=rank == cfg.n)
