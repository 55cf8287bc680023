"""Numerical error-propagation analysis for the fixed-point inversion.

The per-sweep update map is g(x)_t = exp(s_t(x)) * z_t + u_t(x). Its
Jacobian, evaluated anywhere, is strictly block lower triangular: s_t and
u_t only see positions before t, and position 1 is constant. A strictly
lower triangular matrix of block order T is nilpotent with index <= T,
which is exactly why the parallel iteration lands on the exact inverse
after at most T-1 sweeps, and why the error after each sweep loses one
more leading block. This is also a diagonal Newton iteration: the residual
f(x) = x - g(x) has an identity block diagonal, so the diagonal-Newton
step x - diag(J_f)^{-1} f(x) reduces to x - f(x) = g(x), the very same
update the parallel sampler runs.

The Jacobian is built by central finite differences (the closed form
would need derivatives through the attention stack); a two-step-size
Richardson check in the test-suite guards the step choice. Everything
here is restricted to desk scale: the matrix is dense (T*C)^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CausalityViolationError, DimensionMismatchError
from .flow import FlowBlock, inverse_block_serial, scale_shift
from .samplers import ConvergenceTrace, InitMode, Segmentation, gs_jacobi_sample, jacobi_sample
from .validation import as_tensor3

MAX_DENSE_DIM = 256
DEFAULT_FD_STEP = 1e-5


def residual_field(block: FlowBlock, x, z) -> np.ndarray:
    """f_t = x_t - exp(s_t) * z_t - u_t; exactly zero at the true inverse."""
    x = as_tensor3(x, channels=block.channels)
    z = as_tensor3(z, channels=block.channels, name="z")
    if x.shape != z.shape:
        raise DimensionMismatchError(f"x {x.shape} and z {z.shape} differ")
    s, u = scale_shift(block, x)
    # associate as x - (exp(s)*z + u) so the residual is exactly zero at a
    # bitwise fixed point of the update map
    return x - (np.exp(s) * z + u)


def update_map(block: FlowBlock, x, z) -> np.ndarray:
    """One parallel sweep applied to x (without any stopping logic)."""
    x = as_tensor3(x, channels=block.channels)
    z = as_tensor3(z, channels=block.channels, name="z")
    s, u = scale_shift(block, x)
    return np.exp(s) * z + u


def exact_fixed_point(block: FlowBlock, z) -> np.ndarray:
    """Bitwise-stationary inverse: T-1 parallel sweeps pin every position
    to bits that one more sweep reproduces identically."""
    z = as_tensor3(z, channels=block.channels, name="z")
    t_len = z.shape[1]
    if t_len == 1:
        return z.copy()
    x, _ = jacobi_sample(block, z, max_iters=t_len - 1, ebound=0.0)
    return x


@dataclass(eq=False)
class ErrorPropagation:
    """Dense Jacobian of the update map at one evaluation point.

    ``matrix`` is (T*C, T*C), ordered position-major (the block row for
    position t spans rows t*C..(t+1)*C). Entries in block (t, i) with
    i >= t are structural zeros; ``upper_noise`` records the largest raw
    magnitude measured there before they were zeroed.
    """

    matrix: np.ndarray
    seq_len: int
    channels: int
    fd_step: float
    point_id: str
    upper_noise: float

    def write_csv(self, fh) -> None:
        for row in self.matrix:
            fh.write(",".join(repr(v) for v in row) + "\n")


def error_propagation_matrix(block: FlowBlock, x, z,
                             fd_step: float = DEFAULT_FD_STEP,
                             point_id: str = "") -> ErrorPropagation:
    """Central finite differences of the update map at (x, z); batch 1 only.

    Raises when an entry that causality forces to zero measures above the
    finite-difference noise floor.
    """
    x = as_tensor3(x, channels=block.channels)
    z = as_tensor3(z, channels=block.channels, name="z")
    if x.shape[0] != 1:
        raise DimensionMismatchError("dense Jacobian is defined per sample; batch must be 1")
    if fd_step <= 0:
        raise ValueError("fd_step must be > 0")
    t_len, c = x.shape[1], x.shape[2]
    dim = t_len * c
    if dim > MAX_DENSE_DIM:
        raise DimensionMismatchError(
            f"T*C = {dim} exceeds the dense-analysis limit {MAX_DENSE_DIM}")
    matrix = np.empty((dim, dim))
    for t in range(t_len):
        for ch in range(c):
            col = t * c + ch
            xp = x.copy()
            xp[0, t, ch] += fd_step
            gp = update_map(block, xp, z)
            xp[0, t, ch] -= 2 * fd_step
            gm = update_map(block, xp, z)
            matrix[:, col] = ((gp - gm) / (2 * fd_step))[0].ravel()
    # Causality makes every block (t, i) with i >= t exactly zero; verify
    # before forcing, since a violation means the stack leaked positions.
    noise_floor = 10.0 * fd_step * fd_step
    upper_noise = 0.0
    for t in range(t_len):
        raw = float(np.abs(matrix[t * c:(t + 1) * c, t * c:]).max())
        upper_noise = max(upper_noise, raw)
    if upper_noise > noise_floor:
        raise CausalityViolationError(
            f"upper Jacobian block measured {upper_noise:.3e}, "
            f"above the noise floor {noise_floor:.3e}")
    for t in range(t_len):
        matrix[t * c:(t + 1) * c, t * c:] = 0.0
    return ErrorPropagation(matrix=matrix, seq_len=t_len, channels=c,
                            fd_step=fd_step, point_id=point_id,
                            upper_noise=upper_noise)


def nilpotency_check(ep: ErrorPropagation, tol: float = 1e-10) -> bool:
    """True when the T-th power of the matrix vanishes (up to rounding)."""
    power = np.linalg.matrix_power(ep.matrix, ep.seq_len)
    return bool(np.abs(power).max() <= tol)


@dataclass
class RecursionCheck:
    delta: float
    err0_norm: float
    err1_norm: float
    remainder_ratio: float


@dataclass
class RecursionReport:
    """First-order error-map verification at shrinking perturbations.

    For each delta, start one sweep from the exact inverse plus a
    delta-sized random direction and compare the measured new error with
    the Jacobian prediction; the remainder over delta^2 should stay flat.
    """

    checks: list[RecursionCheck]

    @property
    def ratio_spread(self) -> float:
        ratios = [c.remainder_ratio for c in self.checks if c.remainder_ratio > 0]
        if not ratios:
            return 1.0
        return max(ratios) / min(ratios)


def verify_error_recursion(block: FlowBlock, z,
                           deltas=(1e-2, 1e-3, 1e-4), seed: int = 0,
                           fd_step: float = DEFAULT_FD_STEP) -> RecursionReport:
    z = as_tensor3(z, channels=block.channels, name="z")
    if z.shape[0] != 1:
        raise DimensionMismatchError("recursion check runs per sample; batch must be 1")
    x_star = exact_fixed_point(block, z)
    ep = error_propagation_matrix(block, x_star, z, fd_step=fd_step,
                                  point_id="fixed-point")
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(z.shape)
    direction /= np.linalg.norm(direction)
    checks = []
    for delta in deltas:
        err0 = delta * direction
        x1 = update_map(block, x_star + err0, z)
        err1 = (x1 - x_star).ravel()
        predicted = ep.matrix @ err0.ravel()
        err0_norm = float(np.linalg.norm(err0))
        remainder = float(np.linalg.norm(err1 - predicted))
        ratio = remainder / err0_norm ** 2 if err0_norm > 0 else 0.0
        checks.append(RecursionCheck(delta=delta, err0_norm=err0_norm,
                                     err1_norm=float(np.linalg.norm(err1)),
                                     remainder_ratio=ratio))
    return RecursionReport(checks=checks)


def convergence_distance_trace(block: FlowBlock, z, *,
                               mode: str = "jacobi",
                               init: InitMode = InitMode.FROM_Z,
                               x0: np.ndarray | None = None,
                               max_iters: int | None = None,
                               seg: Segmentation | None = None,
                               j_budget: int | None = None,
                               ebound: float = 0.0,
                               block_index: int = 0,
                               oracle: np.ndarray | None = None,
                               ) -> ConvergenceTrace:
    """Distance-to-target series for one block under either sampler.

    Computes the serial inverse first (unless an oracle is supplied) and
    hands it to the sampler, so every sweep logs the spectral norm of the
    batch-meaned error: whole block for the parallel sampler, per module
    for the hybrid. ``ebound=0`` runs the full budget.
    """
    z = as_tensor3(z, channels=block.channels, name="z")
    t_len = z.shape[1]
    if oracle is None:
        oracle = inverse_block_serial(block, z)
    if mode == "jacobi":
        iters = max_iters if max_iters is not None else max(t_len - 1, 1)
        _, trace = jacobi_sample(block, z, init=init, max_iters=iters,
                                 ebound=ebound, x0=x0, oracle=oracle,
                                 block_index=block_index)
    elif mode == "gs-jacobi":
        if seg is None or j_budget is None:
            raise ValueError("gs-jacobi mode needs seg and j_budget")
        _, trace = gs_jacobi_sample(block, z, seg, j_budget, init=init,
                                    ebound=ebound, x0=x0, oracle=oracle,
                                    block_index=block_index)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return trace
