"""Per-block diagnostics that drive the sampling strategy.

Two numbers are computed for every block from one forward pass over a
reference data batch:

* igm (initial-guess metric): the norm of the residual left by a single
  fixed-point update started from a candidate initial value, evaluated for
  both candidates (the block's own output z, and z with everything after
  position 1 zeroed). The smaller one wins; a huge or overflowing value
  flags an initialization that would blow up the iteration.
* crm (convergence ranking metric): ||mean_B(exp(-s(x)) * x)||_2 * ||W_s||_2
  + ||W_u||_2. It only ranks blocks against each other: the larger it is,
  the more parallel sweeps the block needs, which is what decides where the
  module-segmented solver is worth its overhead.

Residuals are averaged over the batch axis down to a (T, C) matrix before
the norm; spectral norm is the default, with frobenius and induced-1
variants reported alongside.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .flow import FlowBlock, FlowModel, flip_seq, forward_block, inverse_model_serial, scale_shift
from .samplers import InitMode, apply_init
from .tensor_ops import NORM_KINDS, batch_mean, matrix_norm
from .validation import as_tensor3

# Residual norms above this mark an init as unusable regardless of how the
# other candidate compares.
PATHOLOGICAL_IGM = 1e4

DEFAULT_DOMINANCE_RATIO = 3.0
DEFAULT_METRIC_BATCH = 128


def igm_residual(block: FlowBlock, x_star, z, init: InitMode,
                 x0: np.ndarray | None = None
                 ) -> tuple[np.ndarray | None, float | None]:
    """Batch-meaned one-update residual for a candidate start.

    Returns the (T, C) residual matrix and None, or, when the update
    overflowed, None and the largest finite magnitude reached.
    """
    x_star = as_tensor3(x_star, channels=block.channels, name="x_star")
    z = as_tensor3(z, channels=block.channels, name="z")
    start = x0.copy() if x0 is not None else apply_init(z, init)
    s, u = scale_shift(block, start)
    with np.errstate(over="ignore", invalid="ignore"):
        resid = np.exp(s) * z + u - x_star
    finite = np.isfinite(resid)
    if not finite.all():
        vals = np.abs(resid[finite])
        partial_max = float(vals.max()) if vals.size else float("inf")
        return None, partial_max
    return batch_mean(resid), None


@dataclass(frozen=True)
class IgmValue:
    value: float
    pathological: bool


def compute_igm_info(block: FlowBlock, x_star, z, init: InitMode,
                     norm: str = "spectral",
                     x0: np.ndarray | None = None) -> IgmValue:
    resid, partial_max = igm_residual(block, x_star, z, init, x0=x0)
    if partial_max is not None:
        return IgmValue(partial_max, True)
    value = matrix_norm(resid, norm)
    return IgmValue(value, value > PATHOLOGICAL_IGM)


def compute_igm(block: FlowBlock, x_star, z, init: InitMode,
                norm: str = "spectral", x0: np.ndarray | None = None) -> float:
    """Residual norm for one candidate start; see module docstring."""
    return compute_igm_info(block, x_star, z, init, norm=norm, x0=x0).value


def nvp_matrix(block: FlowBlock, x_star) -> np.ndarray:
    """Batch-meaned exp(-s(x)) * x, the non-volume-preserving factor."""
    x_star = as_tensor3(x_star, channels=block.channels, name="x_star")
    s, _ = scale_shift(block, x_star)
    return batch_mean(np.exp(-s) * x_star)


@dataclass(frozen=True)
class CrmComponents:
    crm: float
    nvp: float
    ws: float
    wu: float


def compute_crm(block: FlowBlock, x_star, norm: str = "spectral") -> CrmComponents:
    """Convergence ranking metric and its three factors."""
    nvp = matrix_norm(nvp_matrix(block, x_star), norm)
    ws = matrix_norm(block.w_s, norm)
    wu = matrix_norm(block.w_u, norm)
    return CrmComponents(crm=nvp * ws + wu, nvp=nvp, ws=ws, wu=wu)


@dataclass(frozen=True)
class StackSelection:
    """Blocks flagged as tough, in selection order."""

    indices: tuple[int, ...]
    dominance_ratio: float


def select_stack(report_or_crms, dominance_ratio: float = DEFAULT_DOMINANCE_RATIO
                 ) -> StackSelection:
    """Greedy tough-block selection.

    Repeatedly moves the largest-crm block (ties break to the lower index)
    into the stack while it is at least ``dominance_ratio`` times the
    median of the remaining crms; stops as soon as no block dominates.
    """
    if dominance_ratio <= 1:
        raise ValueError("dominance_ratio must be > 1")
    if hasattr(report_or_crms, "blocks"):
        crms = [bm.crm for bm in report_or_crms.blocks]
    else:
        crms = [float(c) for c in report_or_crms]
    remaining = dict(enumerate(crms))
    picked: list[int] = []
    while remaining:
        values = list(remaining.values())
        top = max(values)
        if top <= 0 or top < dominance_ratio * statistics.median(values):
            break
        idx = min(i for i, c in remaining.items() if c == top)
        picked.append(idx)
        del remaining[idx]
    return StackSelection(tuple(picked), dominance_ratio)


@dataclass
class BlockMetrics:
    index: int
    igm_z: float
    igm_z0: float
    igm_z_pathological: bool
    igm_z0_pathological: bool
    chosen_init: InitMode
    crm: float
    nvp: float
    ws: float
    wu: float
    crm_percent: float
    variants: dict = field(default_factory=dict)


@dataclass
class MetricReport:
    blocks: list[BlockMetrics]
    stack: tuple[int, ...]
    dominance_ratio: float
    norm: str = "spectral"

    def to_json_dict(self) -> dict:
        return {
            "blocks": [
                {
                    "igm_z": bm.igm_z,
                    "igm_z0": bm.igm_z0,
                    "init": bm.chosen_init.value,
                    "crm": bm.crm,
                    "nvp": bm.nvp,
                    "ws": bm.ws,
                    "wu": bm.wu,
                    "percent": bm.crm_percent,
                    "igm_z_pathological": bm.igm_z_pathological,
                    "igm_z0_pathological": bm.igm_z0_pathological,
                    "variants": bm.variants,
                }
                for bm in self.blocks
            ],
            "stack": list(self.stack),
            "dominance_ratio": self.dominance_ratio,
            "norm": self.norm,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "MetricReport":
        blocks = []
        for i, braw in enumerate(doc["blocks"]):
            blocks.append(BlockMetrics(
                index=i,
                igm_z=braw["igm_z"],
                igm_z0=braw["igm_z0"],
                igm_z_pathological=braw.get("igm_z_pathological", False),
                igm_z0_pathological=braw.get("igm_z0_pathological", False),
                chosen_init=InitMode(braw["init"]),
                crm=braw["crm"],
                nvp=braw["nvp"],
                ws=braw["ws"],
                wu=braw["wu"],
                crm_percent=braw["percent"],
                variants=braw.get("variants", {}),
            ))
        return cls(blocks=blocks, stack=tuple(doc["stack"]),
                   dominance_ratio=doc["dominance_ratio"],
                   norm=doc.get("norm", "spectral"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2),
                              encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MetricReport":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def synthetic_data_batch(model: FlowModel, batch: int,
                         seq_len: int | None = None, seed: int = 0) -> np.ndarray:
    """Data-space reference batch for models with no dataset: exactly
    invert seeded standard-normal noise through the model."""
    t_len = seq_len or (model.config.seq_len if model.config else 64)
    channels = model.config.channels if model.config else model.blocks[0].channels
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((batch, t_len, channels))
    return inverse_model_serial(model, z)


def metric_pass(model: FlowModel, x_star_batch,
                dominance_ratio: float = DEFAULT_DOMINANCE_RATIO,
                norm: str = "spectral") -> MetricReport:
    """One forward pass capturing every block's (x, z) pair (flips applied),
    then the full per-block metric table under all three norm variants."""
    channels = model.config.channels if model.config else model.blocks[0].channels
    h = as_tensor3(x_star_batch, channels=channels, name="x_star_batch")
    pairs: list[tuple[np.ndarray, np.ndarray]] = []
    for block in model.blocks:
        if block.flip:
            h = flip_seq(h)
        z = forward_block(block, h)
        pairs.append((h, z))
        h = z

    blocks: list[BlockMetrics] = []
    for idx, (block, (xs, z)) in enumerate(zip(model.blocks, pairs)):
        resid_z, partial_z = igm_residual(block, xs, z, InitMode.FROM_Z)
        resid_z0, partial_z0 = igm_residual(block, xs, z, InitMode.FROM_Z0)
        nvp_mat = nvp_matrix(block, xs)
        variants = {}
        for kind in NORM_KINDS:
            igm_z = partial_z if partial_z is not None else matrix_norm(resid_z, kind)
            igm_z0 = partial_z0 if partial_z0 is not None else matrix_norm(resid_z0, kind)
            nvp = matrix_norm(nvp_mat, kind)
            ws = matrix_norm(block.w_s, kind)
            wu = matrix_norm(block.w_u, kind)
            variants[kind] = {"igm_z": igm_z, "igm_z0": igm_z0,
                              "crm": nvp * ws + wu, "nvp": nvp,
                              "ws": ws, "wu": wu}
        main = variants[norm]
        igm_z, igm_z0 = main["igm_z"], main["igm_z0"]
        blocks.append(BlockMetrics(
            index=idx,
            igm_z=igm_z,
            igm_z0=igm_z0,
            igm_z_pathological=partial_z is not None or igm_z > PATHOLOGICAL_IGM,
            igm_z0_pathological=partial_z0 is not None or igm_z0 > PATHOLOGICAL_IGM,
            chosen_init=InitMode.FROM_Z if igm_z <= igm_z0 else InitMode.FROM_Z0,
            crm=main["crm"],
            nvp=main["nvp"],
            ws=main["ws"],
            wu=main["wu"],
            crm_percent=0.0,
            variants=variants,
        ))
    total = sum(bm.crm for bm in blocks)
    if total > 0:
        for bm in blocks:
            bm.crm_percent = 100.0 * bm.crm / total
    selection = select_stack([bm.crm for bm in blocks], dominance_ratio)
    return MetricReport(blocks=blocks, stack=selection.indices,
                        dominance_ratio=dominance_ratio, norm=norm)
