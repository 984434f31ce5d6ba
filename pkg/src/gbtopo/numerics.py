"""Self-contained numerical kernels.

Closed-form symmetric eigensolvers (2x2 analytic, 3x3 trigonometric with a
Jacobi fallback), fixed-width dual numbers for forward-mode differentiation,
a deterministic pairwise tree reduction, and a splittable counter-based RNG.

Everything here is pure and immutable; identical inputs give identical bits
regardless of how many workers call in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFinite

# Absolute floor used when dividing by eigenvalue sums; covariance matrices of
# collinear neighborhoods are rank-deficient, so the floor must be absolute.
EPS_EIG = 1e-12

DEFAULT_TANGENT_WIDTH = 2


# ---------------------------------------------------------------------------
# symmetric matrix value types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sym2:
    """Symmetric 2x2 matrix [[a11, a12], [a12, a22]]."""

    a11: float
    a12: float
    a22: float

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a12, self.a22]], dtype=np.float64)

    @classmethod
    def from_matrix(cls, m) -> "Sym2":
        m = np.asarray(m, dtype=np.float64)
        return cls(float(m[0, 0]), 0.5 * float(m[0, 1] + m[1, 0]), float(m[1, 1]))


@dataclass(frozen=True)
class Sym3:
    """Symmetric 3x3 matrix stored as its upper triangle."""

    a11: float
    a12: float
    a13: float
    a22: float
    a23: float
    a33: float

    def as_matrix(self) -> np.ndarray:
        return np.array(
            [
                [self.a11, self.a12, self.a13],
                [self.a12, self.a22, self.a23],
                [self.a13, self.a23, self.a33],
            ],
            dtype=np.float64,
        )

    @classmethod
    def from_matrix(cls, m) -> "Sym3":
        m = np.asarray(m, dtype=np.float64)
        return cls(
            float(m[0, 0]),
            0.5 * float(m[0, 1] + m[1, 0]),
            0.5 * float(m[0, 2] + m[2, 0]),
            float(m[1, 1]),
            0.5 * float(m[1, 2] + m[2, 1]),
            float(m[2, 2]),
        )


@dataclass(frozen=True)
class EigenPair2:
    values: np.ndarray  # (2,) descending
    vectors: np.ndarray  # (2, 2) orthonormal columns


@dataclass(frozen=True)
class EigenPair3:
    values: np.ndarray  # (3,) descending
    vectors: np.ndarray  # (3, 3) orthonormal columns


# ---------------------------------------------------------------------------
# dual numbers (forward mode, fixed tangent width)
# ---------------------------------------------------------------------------

class Dual:
    """A value together with a fixed-width vector of directional derivatives.

    `value` may be a scalar or any numpy array; `tangents` stacks the lanes on
    a trailing axis of size `width`.  Arithmetic applies the chain rule
    exactly, so a Dual with all-zero tangents behaves like the plain value.
    Division by zero does not raise: value and tangents become NaN and the
    caller screens them.
    """

    __slots__ = ("value", "tangents")

    # Defer mixed ndarray-Dual arithmetic to the reflected operators below
    # instead of letting numpy wrap Duals in object arrays.
    __array_ufunc__ = None

    def __init__(self, value, tangents):
        self.value = np.asarray(value, dtype=np.float64)
        self.tangents = np.asarray(tangents, dtype=np.float64)
        if self.tangents.shape[:-1] != self.value.shape:
            raise ValueError(
                f"tangent shape {self.tangents.shape} does not extend value shape {self.value.shape}"
            )

    @property
    def width(self) -> int:
        return self.tangents.shape[-1]

    @classmethod
    def lift(cls, value, lane: int, width: int = DEFAULT_TANGENT_WIDTH) -> "Dual":
        value = np.asarray(value, dtype=np.float64)
        if not 0 <= lane < width:
            raise ValueError(f"lane {lane} outside tangent width {width}")
        t = np.zeros(value.shape + (width,), dtype=np.float64)
        t[..., lane] = 1.0
        return cls(value, t)

    @classmethod
    def constant(cls, value, width: int = DEFAULT_TANGENT_WIDTH) -> "Dual":
        value = np.asarray(value, dtype=np.float64)
        return cls(value, np.zeros(value.shape + (width,), dtype=np.float64))

    def _coerce(self, other) -> "Dual":
        if isinstance(other, Dual):
            return other
        return Dual.constant(other, width=self.width)

    # -- arithmetic -----------------------------------------------------

    def __add__(self, other):
        o = self._coerce(other)
        return Dual(self.value + o.value, self.tangents + o.tangents)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        return Dual(self.value - o.value, self.tangents - o.tangents)

    def __rsub__(self, other):
        o = self._coerce(other)
        return Dual(o.value - self.value, o.tangents - self.tangents)

    def __mul__(self, other):
        o = self._coerce(other)
        return Dual(
            self.value * o.value,
            self.value[..., None] * o.tangents + o.value[..., None] * self.tangents,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = self.value / o.value
            t = (self.tangents * o.value[..., None] - o.tangents * self.value[..., None]) / (
                o.value * o.value
            )[..., None]
        bad = o.value == 0.0
        if np.any(bad):
            v = np.where(bad, np.nan, v)
            t = np.where(bad[..., None], np.nan, t)
        return Dual(v, t)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        return Dual(-self.value, -self.tangents)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("dual exponent must be a plain number")
        with np.errstate(divide="ignore", invalid="ignore"):
            v = self.value ** exponent
            t = (exponent * self.value ** (exponent - 1))[..., None] * self.tangents
        return Dual(v, t)

    # -- elementary functions -------------------------------------------

    def sqrt(self):
        v = np.sqrt(self.value)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = self.tangents / (2.0 * v)[..., None]
        return Dual(v, t)

    def sin(self):
        return Dual(np.sin(self.value), np.cos(self.value)[..., None] * self.tangents)

    def cos(self):
        return Dual(np.cos(self.value), -np.sin(self.value)[..., None] * self.tangents)

    def abs(self):
        s = np.sign(self.value)
        return Dual(np.abs(self.value), s[..., None] * self.tangents)

    def sum(self, axis=None):
        if axis is None:
            return Dual(np.sum(self.value), np.sum(self.tangents.reshape(-1, self.width), axis=0))
        return Dual(np.sum(self.value, axis=axis), np.sum(self.tangents, axis=axis))

    def __getitem__(self, key):
        return Dual(self.value[key], self.tangents[key])

    def __repr__(self):
        return f"Dual(value={self.value!r}, tangents={self.tangents!r})"


def dual_lift(x, lane: int, width: int = DEFAULT_TANGENT_WIDTH) -> Dual:
    return Dual.lift(x, lane, width)


# Generic dispatch helpers so numeric kernels accept plain arrays or Duals.

def sqrt(x):
    return x.sqrt() if isinstance(x, Dual) else np.sqrt(x)


def sin(x):
    return x.sin() if isinstance(x, Dual) else np.sin(x)


def cos(x):
    return x.cos() if isinstance(x, Dual) else np.cos(x)


def atan2(y, x):
    if isinstance(y, Dual) or isinstance(x, Dual):
        if not isinstance(y, Dual):
            y = Dual.constant(y, width=x.width)
        if not isinstance(x, Dual):
            x = Dual.constant(x, width=y.width)
        v = np.arctan2(y.value, x.value)
        denom = (x.value * x.value + y.value * y.value)[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (x.value[..., None] * y.tangents - y.value[..., None] * x.tangents) / denom
        return Dual(v, t)
    return np.arctan2(y, x)


def where(cond, a, b):
    """Select elementwise on the *values* of the condition."""
    cond = np.asarray(cond)
    if isinstance(a, Dual) or isinstance(b, Dual):
        width = a.width if isinstance(a, Dual) else b.width
        if not isinstance(a, Dual):
            a = Dual.constant(a, width)
        if not isinstance(b, Dual):
            b = Dual.constant(b, width)
        return Dual(
            np.where(cond, a.value, b.value),
            np.where(cond[..., None], a.tangents, b.tangents),
        )
    return np.where(cond, a, b)


def value_of(x):
    return x.value if isinstance(x, Dual) else np.asarray(x)


def det2(m11, m12, m21, m22):
    """Determinant of a 2x2 laid out entrywise (entries may be Duals)."""
    return m11 * m22 - m12 * m21


def trace2(m11, m22):
    return m11 + m22


# ---------------------------------------------------------------------------
# eigen decomposition, 2x2
# ---------------------------------------------------------------------------

def eigen_sym2_entries(a11, a12, a22):
    """Closed-form eigendecomposition of [[a11,a12],[a12,a22]].

    Returns (lam1, lam2, c, s) with lam1 >= lam2 and first eigenvector
    (c, s); the second is (-s, c).  Works elementwise on arrays and on
    Duals (branch decisions are taken on values, the smooth formula is
    applied to both lanes).
    """
    mean = (a11 + a22) * 0.5
    half_diff = (a11 - a22) * 0.5
    # The discriminant is a sum of squares: no cancellation inside the sqrt.
    disc = sqrt(half_diff * half_diff + a12 * a12)
    lam1 = mean + disc
    lam2 = mean - disc

    # Eigenvector for lam1: pick the better-conditioned of the two candidate
    # rows of (A - lam1 I) to avoid 0/0 when a12 ~ 0.
    v1x_a = a12
    v1y_a = lam1 - a11
    v1x_b = lam1 - a22
    v1y_b = a12
    na = value_of(v1x_a) ** 2 + value_of(v1y_a) ** 2
    nb = value_of(v1x_b) ** 2 + value_of(v1y_b) ** 2
    use_a = na >= nb
    vx = where(use_a, v1x_a, v1x_b)
    vy = where(use_a, v1y_a, v1y_b)
    norm_sq = vx * vx + vy * vy
    degenerate = value_of(norm_sq) == 0.0  # multiple of identity
    inv_norm = 1.0 / sqrt(where(degenerate, 1.0, norm_sq))
    c = where(degenerate, 1.0, vx * inv_norm)
    s = where(degenerate, 0.0, vy * inv_norm)
    return lam1, lam2, c, s


def eigen_sym2(m: Sym2) -> EigenPair2:
    entries = np.array([m.a11, m.a12, m.a22], dtype=np.float64)
    if not np.all(np.isfinite(entries)):
        raise NonFinite(f"eigen_sym2 got non-finite entries {entries}")
    lam1, lam2, c, s = eigen_sym2_entries(m.a11, m.a12, m.a22)
    values = np.array([lam1, lam2], dtype=np.float64)
    vectors = np.array([[c, -s], [s, c]], dtype=np.float64)
    return EigenPair2(values=values, vectors=vectors)


# ---------------------------------------------------------------------------
# eigen decomposition, 3x3 (batched)
# ---------------------------------------------------------------------------

def _eigvals_sym3_batch(A: np.ndarray) -> np.ndarray:
    """Trigonometric closed form for the eigenvalues of symmetric 3x3 batches."""
    a11, a22, a33 = A[:, 0, 0], A[:, 1, 1], A[:, 2, 2]
    a12, a13, a23 = A[:, 0, 1], A[:, 0, 2], A[:, 1, 2]
    q = (a11 + a22 + a33) / 3.0
    p1 = a12 ** 2 + a13 ** 2 + a23 ** 2
    p2 = (a11 - q) ** 2 + (a22 - q) ** 2 + (a33 - q) ** 2 + 2.0 * p1
    p = np.sqrt(np.maximum(p2 / 6.0, 0.0))
    lam = np.empty((A.shape[0], 3), dtype=np.float64)
    scalar = p <= 0.0
    safe_p = np.where(scalar, 1.0, p)
    B = (A - q[:, None, None] * np.eye(3)) / safe_p[:, None, None]
    detB = (
        B[:, 0, 0] * (B[:, 1, 1] * B[:, 2, 2] - B[:, 1, 2] * B[:, 2, 1])
        - B[:, 0, 1] * (B[:, 1, 0] * B[:, 2, 2] - B[:, 1, 2] * B[:, 2, 0])
        + B[:, 0, 2] * (B[:, 1, 0] * B[:, 2, 1] - B[:, 1, 1] * B[:, 2, 0])
    )
    phi = np.arccos(np.clip(detB / 2.0, -1.0, 1.0)) / 3.0
    lam[:, 0] = q + 2.0 * p * np.cos(phi)
    lam[:, 2] = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    lam[:, 1] = 3.0 * q - lam[:, 0] - lam[:, 2]
    lam[scalar] = q[scalar, None]
    return lam


def _eigvec_for(A: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Eigenvector of each A for eigenvalue lam via the largest row cross product."""
    n = A.shape[0]
    M = A - lam[:, None, None] * np.eye(3)
    c01 = np.cross(M[:, 0], M[:, 1])
    c02 = np.cross(M[:, 0], M[:, 2])
    c12 = np.cross(M[:, 1], M[:, 2])
    cands = np.stack([c01, c02, c12], axis=1)  # (n, 3, 3)
    norms = np.linalg.norm(cands, axis=2)
    best = np.argmax(norms, axis=1)
    v = cands[np.arange(n), best]
    nv = norms[np.arange(n), best]
    ok = nv > 0.0
    v[ok] /= nv[ok, None]
    # Degenerate eigenvalue: any unit vector annihilating one row works; fall
    # back to completing a basis from the largest row of M.
    if np.any(~ok):
        idx = np.where(~ok)[0]
        for i in idx:
            rows = M[i]
            rn = np.linalg.norm(rows, axis=1)
            j = int(np.argmax(rn))
            if rn[j] == 0.0:
                v[i] = np.array([1.0, 0.0, 0.0])
            else:
                r = rows[j] / rn[j]
                probe = np.array([1.0, 0.0, 0.0])
                if abs(r[0]) > 0.9:
                    probe = np.array([0.0, 1.0, 0.0])
                u = np.cross(r, probe)
                v[i] = u / np.linalg.norm(u)
    return v


def _jacobi_sym3(A: np.ndarray, sweeps: int = 12):
    """Cyclic Jacobi sweeps; batched fallback for the rare hard cases."""
    n = A.shape[0]
    a = A.copy()
    V = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    for _ in range(sweeps):
        for (p, q) in ((0, 1), (0, 2), (1, 2)):
            apq = a[:, p, q]
            mask = np.abs(apq) > 1e-18
            if not np.any(mask):
                continue
            app = a[:, p, p]
            aqq = a[:, q, q]
            theta = np.zeros(n)
            theta[mask] = 0.5 * np.arctan2(2.0 * apq[mask], aqq[mask] - app[mask])
            c = np.cos(theta)
            s = np.sin(theta)
            J = np.zeros((n, 3, 3))
            J[:, 0, 0] = J[:, 1, 1] = J[:, 2, 2] = 1.0
            J[:, p, p] = c
            J[:, q, q] = c
            J[:, p, q] = s
            J[:, q, p] = -s
            a = np.einsum("nij,njk,nkl->nil", np.transpose(J, (0, 2, 1)), a, J)
            V = np.einsum("nij,njk->nik", V, J)
    vals = np.stack([a[:, 0, 0], a[:, 1, 1], a[:, 2, 2]], axis=1)
    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    vecs = np.take_along_axis(V, order[:, None, :], axis=2)
    return vals, vecs


def eigen_sym3_batch(A: np.ndarray):
    """Eigendecompose a (n,3,3) symmetric batch; values sorted descending.

    Trigonometric closed form first, Jacobi sweeps for entries whose
    reconstruction residual exceeds the tolerance.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 2:
        A = A[None]
    n = A.shape[0]
    lam = _eigvals_sym3_batch(A)

    v1 = _eigvec_for(A, lam[:, 0])
    v3 = _eigvec_for(A, lam[:, 2])
    # Middle eigenvector: orthogonal completion keeps the basis orthonormal
    # even when lam2 is close to one of its neighbors.
    v2 = np.cross(v3, v1)
    nv2 = np.linalg.norm(v2, axis=1)
    bad2 = nv2 < 1e-12
    v2[~bad2] /= nv2[~bad2, None]
    if np.any(bad2):
        v2[bad2] = _eigvec_for(A[bad2], lam[bad2, 1])
    # Re-orthogonalize v3 against the other two.
    v3 = np.cross(v1, v2)
    n3 = np.linalg.norm(v3, axis=1)
    ok3 = n3 > 0
    v3[ok3] /= n3[ok3, None]
    Q = np.stack([v1, v2, v3], axis=2)

    recon = np.einsum("nij,nj,nkj->nik", Q, lam, Q)
    scale = np.maximum(1.0, np.abs(A).max(axis=(1, 2)))
    resid = np.abs(recon - A).max(axis=(1, 2))
    hard = resid > 1e-11 * scale
    if np.any(hard):
        vals_h, vecs_h = _jacobi_sym3(A[hard])
        lam[hard] = vals_h
        Q[hard] = vecs_h
    return lam, Q


def eigen_sym3(m: Sym3) -> EigenPair3:
    M = m.as_matrix()
    if not np.all(np.isfinite(M)):
        raise NonFinite("eigen_sym3 got non-finite entries")
    vals, vecs = eigen_sym3_batch(M[None])
    return EigenPair3(values=vals[0], vectors=vecs[0])


# ---------------------------------------------------------------------------
# reductions and RNG
# ---------------------------------------------------------------------------

def stable_sum(values) -> float:
    """Fixed-order pairwise tree reduction.

    The reduction tree depends only on the input length, so the result is
    bit-identical for identical input order no matter how the caller
    parallelizes everything else.
    """
    a = np.asarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    while a.size > 1:
        m = a.size // 2
        folded = a[:m] + a[m : 2 * m]
        if a.size % 2:
            folded = np.append(folded, a[-1])
        a = folded
    return float(a[0])


def rng_for(seed: int, *path: int) -> np.random.Generator:
    """Philox generator for a (seed, *path) address.

    Philox is counter based, so streams addressed by different paths are
    independent and the draw order of one stream never affects another;
    per-point Monte-Carlo draws stay reproducible under any parallel
    schedule.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
