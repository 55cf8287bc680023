"""Inversion strategies: serial loop, parallel fixed-point, and the
Gauss-Seidel-Jacobi hybrid.

The inverse of a coupling block is the fixed point of the update map

    g(x)_t = exp(s_t(x)) * z_t + u_t(x),

whose Jacobian is strictly block lower triangular (each position's update
depends only on earlier positions), so iterating g from any start reaches
the exact inverse in at most T-1 sweeps. A plain fixed-point sweep updates
all T positions in parallel per network evaluation. The hybrid partitions
positions into contiguous modules: within a module it sweeps in parallel,
between modules it hands finished positions forward serially, and each
module sweep only evaluates the network over the prefix it actually needs.
That prefix truncation is where the cost reduction comes from.

Cost is counted in "su evals": one full (prefix-)sequence evaluation of
the scale/shift network. The serial loop costs T-1 per block by this
measure; each parallel sweep costs 1.

Stopping: a module stops after its sweep budget or once the mean-square
update residual ||x_new - x_old||^2 / (B*T*C) drops to ``ebound``
(checked after every sweep, including the first). The residual norm is
taken over the updated positions but normalized by the full tensor size.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, NumericalOverflowError
from .flow import FlowBlock, FlowModel, PrefixCache, exp_scale, flip_seq, scale_shift
from .strategy import Strategy
from .tensor_ops import batch_mean, spectral_norm
from .validation import as_tensor3, max_finite_abs

DEFAULT_EBOUND = 1e-8

TRACE_HEADER = "block,module,iter,distance,residual,wall_ns,su_evals"


class InitMode(enum.Enum):
    """Initial iterate: the incoming noise itself, or only its first
    position with everything later zeroed."""

    FROM_Z = "Z"
    FROM_Z0 = "Z0"


def apply_init(z: np.ndarray, init: InitMode) -> np.ndarray:
    if init is InitMode.FROM_Z:
        return z.copy()
    x0 = np.zeros_like(z)
    x0[:, 0, :] = z[:, 0, :]
    return x0


@dataclass(frozen=True)
class Segmentation:
    """Contiguous partition of positions 0..T-1, stored as cumulative
    end indices (exclusive); the last bound equals T."""

    bounds: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.bounds:
            raise DimensionMismatchError("segmentation needs at least one group")
        prev = 0
        for b in self.bounds:
            if b <= prev:
                raise DimensionMismatchError(
                    f"segmentation bounds must be strictly increasing: {self.bounds}")
            prev = b

    @property
    def seq_len(self) -> int:
        return self.bounds[-1]

    @property
    def n_groups(self) -> int:
        return len(self.bounds)

    @property
    def groups(self) -> list[tuple[int, int]]:
        starts = (0,) + self.bounds[:-1]
        return list(zip(starts, self.bounds))

    @property
    def max_group_size(self) -> int:
        return max(end - start for start, end in self.groups)

    @classmethod
    def equal(cls, seq_len: int, n_groups: int) -> "Segmentation":
        """Equal-size split; when the group count does not divide T the
        leftover positions go to the last groups."""
        if n_groups < 1 or seq_len // n_groups < 1:
            raise DimensionMismatchError(
                f"cannot split {seq_len} positions into {n_groups} non-empty groups")
        base, rem = divmod(seq_len, n_groups)
        sizes = [base] * (n_groups - rem) + [base + 1] * rem
        return cls(tuple(np.cumsum(sizes).tolist()))

    @classmethod
    def singletons(cls, seq_len: int) -> "Segmentation":
        return cls(tuple(range(1, seq_len + 1)))


@dataclass(frozen=True)
class TraceRecord:
    block: int
    module: int
    iteration: int
    distance: float | None
    residual: float
    wall_ns: int
    su_evals: int


class ConvergenceTrace:
    """Per-sweep log of residuals, optional oracle distances, and cost."""

    def __init__(self) -> None:
        self.records: list[TraceRecord] = []
        self.clamp_events = 0

    def add(self, record: TraceRecord) -> None:
        self.records.append(record)

    @property
    def su_evals(self) -> int:
        return sum(r.su_evals for r in self.records)

    def block_su_evals(self, block: int) -> int:
        return sum(r.su_evals for r in self.records if r.block == block)

    def sweeps(self, block: int | None = None, module: int | None = None) -> int:
        return sum(1 for r in self.records
                   if (block is None or r.block == block)
                   and (module is None or r.module == module))

    def sweeps_to_distance(self, target: float,
                           block: int | None = None) -> int | None:
        """Cumulative su evals spent when the recorded distance first
        reached ``target``; None when it never did."""
        spent = 0
        for r in self.records:
            if block is not None and r.block != block:
                continue
            spent += r.su_evals
            if r.distance is not None and r.distance <= target:
                return spent
        return None

    def write_csv(self, fh) -> None:
        fh.write(TRACE_HEADER + "\n")
        for r in self.records:
            dist = "" if r.distance is None else repr(r.distance)
            fh.write(f"{r.block},{r.module},{r.iteration},{dist},"
                     f"{r.residual!r},{r.wall_ns},{r.su_evals}\n")

    def write_csv_path(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            self.write_csv(fh)


def _run_module(eval_su, x: np.ndarray, z: np.ndarray,
                start: int, end: int, budget: int, ebound: float, *,
                trace: ConvergenceTrace, block_index: int, module_index: int,
                oracle: np.ndarray | None, clamp: float | None,
                denom: float) -> None:
    """Sweep positions [start, end) up to ``budget`` times, conditioning on
    the (frozen) prefix before ``start``. Mutates ``x`` in place.

    ``eval_su(x)`` returns the log-scale and shift for exactly the updated
    slice; one call is one su eval.
    """
    for k in range(1, budget + 1):
        t0 = time.perf_counter_ns()
        s, u = eval_su(x)
        sigma, n_clamped = exp_scale(s, clamp)
        trace.clamp_events += n_clamped
        new = sigma * z[:, start:end, :] + u
        if not np.all(np.isfinite(new)):
            raise NumericalOverflowError(
                "sweep produced non-finite values",
                block=block_index, module=module_index, iteration=k,
                max_abs=max_finite_abs(new))
        residual = float(((new - x[:, start:end, :]) ** 2).sum() / denom)
        x[:, start:end, :] = new
        distance = None
        if oracle is not None:
            distance = spectral_norm(
                batch_mean(x[:, start:end, :] - oracle[:, start:end, :]))
        trace.add(TraceRecord(block_index, module_index, k, distance,
                              residual, time.perf_counter_ns() - t0, 1))
        if residual <= ebound:
            return


def jacobi_sample(block: FlowBlock, z, init: InitMode = InitMode.FROM_Z,
                  max_iters: int = 0, ebound: float = DEFAULT_EBOUND, *,
                  x0: np.ndarray | None = None,
                  oracle: np.ndarray | None = None, block_index: int = 0,
                  clamp: float | None = None,
                  trace: ConvergenceTrace | None = None,
                  ) -> tuple[np.ndarray, ConvergenceTrace]:
    """Parallel fixed-point inversion of one block.

    Every sweep updates all T positions from the previous iterate in one
    network evaluation. Position 1 equals z_1 throughout for the standard
    init modes. ``x0`` overrides the init mode with an explicit start
    (verification use). ``ebound=0`` disables early stopping short of an
    exact (bitwise) fixed point.
    """
    z = as_tensor3(z, channels=block.channels)
    t_len = z.shape[1]
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    if ebound < 0:
        raise ValueError("ebound must be >= 0")
    x = x0.copy() if x0 is not None else apply_init(z, init)
    if x.shape != z.shape:
        raise DimensionMismatchError("x0 shape differs from z")
    if trace is None:
        trace = ConvergenceTrace()
    denom = float(z.size)

    def eval_full(cur):
        return scale_shift(block, cur)

    _run_module(eval_full, x, z, 0, t_len, max_iters, ebound, trace=trace,
                block_index=block_index, module_index=1, oracle=oracle,
                clamp=clamp, denom=denom)
    return x, trace


def gs_jacobi_sample(block: FlowBlock, z, seg: Segmentation, j_budget: int,
                     init: InitMode = InitMode.FROM_Z,
                     ebound: float = DEFAULT_EBOUND, *,
                     x0: np.ndarray | None = None,
                     oracle: np.ndarray | None = None, block_index: int = 0,
                     clamp: float | None = None,
                     trace: ConvergenceTrace | None = None,
                     ) -> tuple[np.ndarray, ConvergenceTrace]:
    """Module-wise hybrid inversion of one block.

    Modules are visited in order; within a module, parallel sweeps run to
    the budget or the residual bound, conditioning on all earlier (frozen)
    positions. A sweep never needs positions past the module's end, and the
    frozen prefix enters through cached per-layer key/value state, so each
    sweep only pushes the module's own positions through the stack. A
    budget of the module size is always enough for an exact result. The
    leading singleton module {position 1}, when present, is exact by
    construction and consumes no network evaluation.
    """
    z = as_tensor3(z, channels=block.channels)
    t_len = z.shape[1]
    if seg.seq_len != t_len:
        raise DimensionMismatchError(
            f"segmentation covers {seg.seq_len} positions, tensor has {t_len}")
    if j_budget < 1:
        raise ValueError(f"j_budget must be >= 1, got {j_budget}")
    if ebound < 0:
        raise ValueError("ebound must be >= 0")
    x = x0.copy() if x0 is not None else apply_init(z, init)
    if x.shape != z.shape:
        raise DimensionMismatchError("x0 shape differs from z")
    if trace is None:
        trace = ConvergenceTrace()
    denom = float(z.size)
    cache = PrefixCache(block, z.shape[0], t_len)
    groups = seg.groups
    for gi, (start, end) in enumerate(groups, 1):
        if start == 0 and end == 1:
            x[:, 0, :] = z[:, 0, :]
        else:
            def eval_chunk(cur, _start=start, _end=end):
                return cache.eval_chunk(cur[:, _start:_end, :])

            _run_module(eval_chunk, x, z, start, end, j_budget, ebound,
                        trace=trace, block_index=block_index, module_index=gi,
                        oracle=oracle, clamp=clamp, denom=denom)
        if gi < len(groups):
            cache.extend(x[:, start:end, :])
    return x, trace


def serial_su_evals(seq_len: int) -> int:
    """Cost of the exact serial loop in the su-eval measure."""
    return seq_len - 1


def sample_model(model: FlowModel, z, strategy: Strategy,
                 report=None, init: InitMode = InitMode.FROM_Z,
                 ebound: float = DEFAULT_EBOUND, *,
                 record_distance: bool = False, clamp: float | None = None,
                 ) -> tuple[np.ndarray, ConvergenceTrace]:
    """Strategy-driven inversion of a whole model.

    Blocks run in sampling order (last block first). Stacked blocks use
    their (segment count, budget) pair; all others run plain parallel
    sweeps with the Else budget. Each block's output, flipped where the
    block requires it, becomes the next block's input. Per-block init
    modes come from ``report`` (a metrics report) when given, else
    ``init`` uniformly. ``record_distance`` computes each block's serial
    oracle first and logs distances into the trace (verification mode).
    """
    from .flow import inverse_block_serial  # local import to keep cycle-free

    n_blocks = len(model.blocks)
    bad = [b for b in strategy.stack if b < 0 or b >= n_blocks]
    if bad:
        raise DimensionMismatchError(
            f"strategy stacks unknown block indices {bad}; model has {n_blocks}")
    channels = model.config.channels if model.config else model.blocks[0].channels
    h = as_tensor3(z, channels=channels)
    t_len = h.shape[1]
    stack_pos = {b: i for i, b in enumerate(strategy.stack)}
    trace = ConvergenceTrace()
    for idx in range(n_blocks - 1, -1, -1):
        block = model.blocks[idx]
        block_init = init
        if report is not None:
            block_init = report.blocks[idx].chosen_init
        oracle = inverse_block_serial(block, h) if record_distance else None
        if idx in stack_pos:
            pos = stack_pos[idx]
            seg = Segmentation.equal(t_len, strategy.gs[pos])
            x, _ = gs_jacobi_sample(block, h, seg, strategy.j[pos],
                                    init=block_init, ebound=ebound, oracle=oracle,
                                    block_index=idx, clamp=clamp, trace=trace)
        else:
            x, _ = jacobi_sample(block, h, init=block_init,
                                 max_iters=strategy.else_j, ebound=ebound,
                                 oracle=oracle, block_index=idx, clamp=clamp,
                                 trace=trace)
        if block.flip:
            x = flip_seq(x)
        h = x
    return h, trace
