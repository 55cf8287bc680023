"""Dense float64 kernels: batch reduction, matrix norms, patch reshaping.

A "tensor" throughout the package is a plain numpy array of shape
(batch, seq, channel); a "matrix" is 2-D. All functions here are pure and
never mutate their inputs. Reductions rely on numpy's pairwise summation,
which is deterministic and accurate to well below the 1e-12 the rest of
the package leans on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError
from .validation import as_matrix, as_tensor3

POWER_ITERS = 200
POWER_TOL = 1e-10

NORM_KINDS = ("spectral", "frobenius", "one")


def batch_mean(x) -> np.ndarray:
    """Mean over the batch axis; returns a (seq, channel) matrix."""
    return as_tensor3(x).mean(axis=0)


@dataclass(frozen=True)
class SpectralNormResult:
    """Power-iteration outcome.

    ``converged`` is False when the relative change in the eigenvalue
    estimate was still above tolerance when the iteration budget ran out;
    ``value`` is returned regardless.
    """

    value: float
    iterations: int
    converged: bool


def spectral_norm_info(m, iters: int = POWER_ITERS,
                       tol: float = POWER_TOL) -> SpectralNormResult:
    """Largest singular value of ``m`` by power iteration on ``m^T m``.

    Starts from a deterministic all-ones vector so repeated runs agree bit
    for bit. The known blind spot (a start vector exactly orthogonal to
    the top singular direction) does not occur for the generic matrices
    this package produces.
    """
    a = as_matrix(m)
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    n = a.shape[1]
    v = np.full(n, 1.0 / math.sqrt(n))
    lam_prev = math.inf
    lam = 0.0
    for k in range(1, iters + 1):
        w = a @ v
        y = a.T @ w
        lam = float(np.linalg.norm(y))
        if lam == 0.0:
            return SpectralNormResult(0.0, k, True)
        v = y / lam
        if abs(lam - lam_prev) <= tol * lam:
            return SpectralNormResult(math.sqrt(lam), k, True)
        lam_prev = lam
    return SpectralNormResult(math.sqrt(lam), iters, False)


def spectral_norm(m, iters: int = POWER_ITERS, tol: float = POWER_TOL) -> float:
    return spectral_norm_info(m, iters, tol).value


def frobenius_norm(m) -> float:
    a = as_matrix(m)
    return float(np.sqrt((a * a).sum()))


def one_norm(m) -> float:
    """Induced 1-norm: maximum absolute column sum."""
    a = as_matrix(m)
    return float(np.abs(a).sum(axis=0).max())


def matrix_norm(m, kind: str = "spectral") -> float:
    """Dispatch over the three norm variants used by the metric reports."""
    if kind == "spectral":
        return spectral_norm(m)
    if kind == "frobenius":
        return frobenius_norm(m)
    if kind == "one":
        return one_norm(m)
    raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")


def patchify(flat, channels: int) -> np.ndarray:
    """Reshape a flat (B, ., .) tensor into (B, T, channels) patches.

    Purely a reshape; total entries per sample must divide into whole
    patches of ``channels`` entries.
    """
    x = as_tensor3(flat, name="flat")
    total = x.shape[1] * x.shape[2]
    if channels < 1 or total % channels != 0:
        raise DimensionMismatchError(
            f"{total} entries per sample do not divide into patches of {channels}")
    return x.reshape(x.shape[0], total // channels, channels)


def unpatchify(x) -> np.ndarray:
    """Inverse of :func:`patchify`: collapse (B, T, C) back to (B, 1, T*C)."""
    arr = as_tensor3(x)
    return arr.reshape(arr.shape[0], 1, arr.shape[1] * arr.shape[2])
