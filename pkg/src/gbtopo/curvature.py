"""Self-adjoint shape-operator estimation and curvature fields.

Three interchangeable per-point solvers produce the 2x2 operator W that best
maps projected neighbor offsets to projected normal differences:

* ``sylvester``: enforce symmetry exactly by solving W A + A W = X with
  A = dp~^T dp~ and X = dp~^T dn~ + dn~^T dp~, via the eigenbasis of A.
* ``pinv``: ordinary least squares (A^{-1} dp~^T dn~) followed by
  symmetrization (W + W^T)/2.
* ``det``: a determinant-only shortcut that assumes W commutes with A,
  K = det(X) / (4 det(A)); no eigen-decomposition anywhere on this path,
  and only the Gaussian curvature is available.

Curvatures: K = det W, H = tr(W)/2, F = ||W||_F (the square-rooted norm;
the squared value is exposed separately).

Neighborhood charts are pre-scaled by 1/sqrt(tr(dp~^T dp~)) before solving
and the operator rescaled afterwards, so conditioning thresholds are
independent of the neighborhood radius.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .area import TangentChart
from .errors import NearSingular
from .numerics import EPS_EIG, Sym2

FLAG_OK = 0
FLAG_NEAR_SINGULAR = 1
FLAG_PERTURBED = 2

# Determinant floor for the commuting shortcut, applied after trace
# normalization of dp~.
EPS_DET = 1e-14
# Isotropic retry perturbation, relative to tr(A).
PERTURB_REL = 1e-10

SOLVERS = ("sylvester", "pinv", "det")


@dataclass
class WeingartenField:
    w11: np.ndarray
    w12: np.ndarray
    w22: np.ndarray
    solver: str
    condition_flags: np.ndarray  # (N,) uint8

    def entry_matrices(self) -> np.ndarray:
        out = np.empty(self.w11.shape + (2, 2), dtype=np.float64)
        out[..., 0, 0] = self.w11
        out[..., 0, 1] = self.w12
        out[..., 1, 0] = self.w12
        out[..., 1, 1] = self.w22
        return out


@dataclass
class CurvatureField:
    gaussian: np.ndarray  # K, (N,)
    mean: np.ndarray | None  # H, absent for the det solver
    total: np.ndarray | None  # Frobenius norm of W
    total_squared: np.ndarray | None
    solver: str
    flags: np.ndarray  # (N,) uint8
    weingarten: WeingartenField | None = None


# ---------------------------------------------------------------------------
# kernels: generic over ndarray / Dual inputs
# ---------------------------------------------------------------------------

def sylvester_kernel(a11, a12, a22, x11, x12, x22):
    """Solve W A + A W = X for symmetric W, via the eigenbasis of A.

    Steps: A = Q diag(l1, l2) Q^T; C = Q^T X Q; E_pq = C_pq / (l_p + l_q);
    W = Q E Q^T.  Entrywise, so it runs on arrays and dual numbers alike.
    """
    l1, l2, c, s = nm.eigen_sym2_entries(a11, a12, a22)
    # C = Q^T X Q with Q = [[c, -s], [s, c]]
    c11 = c * (x11 * c + x12 * s) + s * (x12 * c + x22 * s)
    c12 = c * (x12 * c + x22 * s) - s * (x11 * c + x12 * s)
    c22 = c * (x22 * c - x12 * s) - s * (x12 * c - x11 * s)
    e11 = c11 / (2.0 * l1)
    e12 = c12 / (l1 + l2)
    e22 = c22 / (2.0 * l2)
    # W = Q E Q^T
    w11 = c * (c * e11 - s * e12) - s * (c * e12 - s * e22)
    w12 = c * (c * e12 - s * e22) + s * (c * e11 - s * e12)
    w22 = s * (s * e11 + c * e12) + c * (s * e12 + c * e22)
    return w11, w12, w22


def pinv_symmetrized_kernel(a11, a12, a22, b11, b12, b21, b22):
    """(A^{-1} B + (A^{-1} B)^T) / 2 with A = dp~^T dp~ and B = dp~^T dn~."""
    det_a = a11 * a22 - a12 * a12
    i11 = a22 / det_a
    i12 = -a12 / det_a
    i22 = a11 / det_a
    w11 = i11 * b11 + i12 * b21
    w12 = i11 * b12 + i12 * b22
    w21 = i12 * b11 + i22 * b21
    w22 = i12 * b12 + i22 * b22
    return w11, 0.5 * (w12 + w21), w22, (w11, w12, w21, w22)


def commuting_det_kernel(a11, a12, a22, x11, x12, x22):
    """K = det(X) / (4 det(A)); valid exactly when W and A commute."""
    det_x = x11 * x22 - x12 * x12
    det_a = a11 * a22 - a12 * a12
    return det_x / (4.0 * det_a)


def _gram(dp: np.ndarray, dn: np.ndarray):
    """A = dp^T dp (sym), B = dp^T dn (full), X = B + B^T (sym); batched."""
    a11 = np.einsum("...k,...k->...", dp[..., 0], dp[..., 0])
    a12 = np.einsum("...k,...k->...", dp[..., 0], dp[..., 1])
    a22 = np.einsum("...k,...k->...", dp[..., 1], dp[..., 1])
    b11 = np.einsum("...k,...k->...", dp[..., 0], dn[..., 0])
    b12 = np.einsum("...k,...k->...", dp[..., 0], dn[..., 1])
    b21 = np.einsum("...k,...k->...", dp[..., 1], dn[..., 0])
    b22 = np.einsum("...k,...k->...", dp[..., 1], dn[..., 1])
    return (a11, a12, a22), (b11, b12, b21, b22)


# ---------------------------------------------------------------------------
# spec-level single operators
# ---------------------------------------------------------------------------

def solve_sylvester(A: Sym2, X: Sym2) -> Sym2:
    ents = np.array([A.a11, A.a12, A.a22, X.a11, X.a12, X.a22])
    if not np.all(np.isfinite(ents)):
        raise nm.NonFinite("solve_sylvester got non-finite entries")
    pair = nm.eigen_sym2(A)
    lam = pair.values
    if min(2 * lam[0], 2 * lam[1], lam[0] + lam[1]) <= EPS_EIG:
        raise NearSingular(f"eigenvalue sum below {EPS_EIG}: {lam}")
    w11, w12, w22 = sylvester_kernel(A.a11, A.a12, A.a22, X.a11, X.a12, X.a22)
    return Sym2(float(w11), float(w12), float(w22))


def solve_symmetrized_pinv(dp: np.ndarray, dn: np.ndarray, return_raw: bool = False):
    """Least-squares fit followed by symmetrization; `return_raw` also gives
    the non-self-adjoint least-squares solution for baseline comparisons."""
    dp = np.asarray(dp, dtype=np.float64)
    dn = np.asarray(dn, dtype=np.float64)
    (a11, a12, a22), (b11, b12, b21, b22) = _gram(dp, dn)
    if a11 * a22 - a12 * a12 <= EPS_EIG ** 2:
        raise NearSingular("dp~^T dp~ is numerically singular")
    w11, w12, w22, raw = pinv_symmetrized_kernel(a11, a12, a22, b11, b12, b21, b22)
    sym = Sym2(float(w11), float(w12), float(w22))
    if return_raw:
        return sym, np.array([[raw[0], raw[1]], [raw[2], raw[3]]], dtype=np.float64)
    return sym


def gaussian_commuting_det(dp: np.ndarray, dn: np.ndarray) -> float:
    """Determinant-ratio Gaussian curvature; retries once with a small
    isotropic perturbation when the chart Gram matrix is near singular."""
    dp = np.asarray(dp, dtype=np.float64)
    dn = np.asarray(dn, dtype=np.float64)
    tr = np.einsum("kj,kj->", dp, dp)
    if tr <= 0.0:
        raise NearSingular("empty chart")
    scale = 1.0 / np.sqrt(tr)
    dps = dp * scale
    (a11, a12, a22), (b11, b12, b21, b22) = _gram(dps, dn)
    det_a = a11 * a22 - a12 * a12
    if det_a <= EPS_DET:
        eps = PERTURB_REL * (a11 + a22)
        a11, a22 = a11 + eps, a22 + eps
        det_a = a11 * a22 - a12 * a12
        if det_a <= EPS_DET:
            raise NearSingular("chart Gram matrix singular after perturbation")
    k_scaled = commuting_det_kernel(a11, a12, a22, b11 + b11, b12 + b21, b22 + b22)
    return float(k_scaled * scale * scale)


# ---------------------------------------------------------------------------
# whole-field driver
# ---------------------------------------------------------------------------

def weingarten_entries(dp, dn, solver: str):
    """Batched operator entries (w11, w12, w22, flags) in original units.

    Works for ndarray charts of shape (..., k, 2); the scaled Gram matrices
    are checked per point, perturbed once if near singular, and flagged if
    still unusable (entries become NaN there).
    """
    tr = np.einsum("...kj,...kj->...", dp, dp)
    ok = tr > 0.0
    scale = np.where(ok, 1.0 / np.sqrt(np.where(ok, tr, 1.0)), np.nan)
    dps = dp * scale[..., None, None]
    (a11, a12, a22), (b11, b12, b21, b22) = _gram(dps, dn)
    flags = np.zeros(np.shape(a11), dtype=np.uint8)

    if solver == "det":
        det_a = a11 * a22 - a12 * a12
        bad = ok & (det_a <= EPS_DET)
        if np.any(bad):
            eps = PERTURB_REL * (a11 + a22)
            a11 = np.where(bad, a11 + eps, a11)
            a22 = np.where(bad, a22 + eps, a22)
            det_a = a11 * a22 - a12 * a12
            flags |= np.where(bad, FLAG_PERTURBED, 0).astype(np.uint8)
        dead = ~ok | ~(det_a > EPS_DET)
        flags |= np.where(dead, FLAG_NEAR_SINGULAR, 0).astype(np.uint8)
        with np.errstate(divide="ignore", invalid="ignore"):
            k = commuting_det_kernel(a11, a12, a22, 2 * b11, b12 + b21, 2 * b22)
        k = np.where(dead, np.nan, k * scale * scale)
        return k, flags

    lam_min_sum = _min_eig_sum(a11, a12, a22)
    bad = ok & (lam_min_sum <= EPS_EIG)
    if np.any(bad):
        eps = PERTURB_REL * (a11 + a22)
        a11 = np.where(bad, a11 + eps, a11)
        a22 = np.where(bad, a22 + eps, a22)
        lam_min_sum = _min_eig_sum(a11, a12, a22)
        flags |= np.where(bad, FLAG_PERTURBED, 0).astype(np.uint8)
    dead = ~ok | ~(lam_min_sum > EPS_EIG)
    flags |= np.where(dead, FLAG_NEAR_SINGULAR, 0).astype(np.uint8)

    with np.errstate(divide="ignore", invalid="ignore"):
        if solver == "sylvester":
            w11, w12, w22 = sylvester_kernel(a11, a12, a22, 2 * b11, b12 + b21, 2 * b22)
        elif solver == "pinv":
            w11, w12, w22, _ = pinv_symmetrized_kernel(a11, a12, a22, b11, b12, b21, b22)
        else:
            raise ValueError(f"unknown solver {solver!r}")
    w11 = np.where(dead, np.nan, w11 * scale)
    w12 = np.where(dead, np.nan, w12 * scale)
    w22 = np.where(dead, np.nan, w22 * scale)
    return (w11, w12, w22), flags


def _min_eig_sum(a11, a12, a22):
    mean = 0.5 * (a11 + a22)
    disc = np.sqrt(np.maximum(0.25 * (a11 - a22) ** 2 + a12 * a12, 0.0))
    lam2 = mean - disc
    return 2.0 * lam2


def curvature_field(chart: TangentChart, solver: str = "sylvester") -> CurvatureField:
    """Gaussian/mean/total curvature per point; per-point failures flag the
    point instead of aborting the field."""
    if solver not in SOLVERS:
        raise ValueError(f"solver must be one of {SOLVERS}")
    if solver == "det":
        k, flags = weingarten_entries(chart.dp, chart.dn, "det")
        return CurvatureField(
            gaussian=k, mean=None, total=None, total_squared=None,
            solver=solver, flags=flags, weingarten=None,
        )
    (w11, w12, w22), flags = weingarten_entries(chart.dp, chart.dn, solver)
    wf = WeingartenField(w11=w11, w12=w12, w22=w22, solver=solver, condition_flags=flags)
    gaussian = w11 * w22 - w12 * w12
    mean = 0.5 * (w11 + w22)
    total_squared = w11 * w11 + 2.0 * w12 * w12 + w22 * w22
    return CurvatureField(
        gaussian=gaussian,
        mean=mean,
        total=np.sqrt(total_squared),
        total_squared=total_squared,
        solver=solver,
        flags=flags,
        weingarten=wf,
    )
