"""Runtime invariant suites behind the ``verify`` CLI command.

Each suite is a list of named checks; a check raises AssertionError (or
any package error) to fail. Checks run against the supplied model where
one is relevant and against internally seeded synthetic blocks for the
quantified invariants, so ``verify`` works on any well-formed model file.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import analysis, metrics, tensor_ops
from .errors import DimensionMismatchError
from .flow import (
    FlowModel,
    ModelConfig,
    forward_block,
    forward_model,
    gen_synthetic_model,
    inverse_block_serial,
    inverse_model_serial,
    scale_shift,
    stack_forward,
)
from .samplers import InitMode, Segmentation, apply_init, gs_jacobi_sample, jacobi_sample
from .validation import as_tensor3


def _default_model() -> FlowModel:
    cfg = ModelConfig(channels=4, blocks=4, depth=2, seq_len=16)
    return gen_synthetic_model(2024, cfg, weight_scale=[0.02, 0.3, 0.05, 0.1])


def reference_inverse_serial(block, z) -> np.ndarray:
    """Naive serial inverse that re-runs the whole prefix every step;
    the independent reference for the cached implementation."""
    z = as_tensor3(z, channels=block.channels)
    x = z.copy()
    x[:, 0, :] = z[:, 0, :]
    for t in range(1, z.shape[1]):
        h = stack_forward(block, x[:, :t, :])
        s_t = h[:, -1, :] @ block.w_s + block.b_s
        u_t = h[:, -1, :] @ block.w_u + block.b_u
        x[:, t, :] = np.exp(s_t) * z[:, t, :] + u_t
    return x


# --- tensor suite ---------------------------------------------------------

def check_norm_inequality(model, rng) -> None:
    for _ in range(20):
        m = rng.standard_normal((rng.integers(2, 12), rng.integers(2, 12)))
        spec = tensor_ops.spectral_norm(m)
        assert spec <= tensor_ops.frobenius_norm(m) + 1e-9
        alpha = float(rng.uniform(0.1, 5.0))
        scaled = tensor_ops.spectral_norm(alpha * m)
        assert abs(scaled - alpha * spec) <= 1e-9 * max(1.0, alpha * spec)


def check_batch_mean_linear(model, rng) -> None:
    x = rng.standard_normal((5, 7, 3))
    y = rng.standard_normal((5, 7, 3))
    lhs = tensor_ops.batch_mean(x + y)
    rhs = tensor_ops.batch_mean(x) + tensor_ops.batch_mean(y)
    assert np.abs(lhs - rhs).max() <= 1e-12


def check_patchify_roundtrip(model, rng) -> None:
    flat = rng.standard_normal((2, 1, 24))
    patched = tensor_ops.patchify(flat, 4)
    assert patched.shape == (2, 6, 4)
    assert np.array_equal(tensor_ops.unpatchify(patched), flat)
    try:
        tensor_ops.patchify(flat, 5)
    except DimensionMismatchError:
        pass
    else:
        raise AssertionError("patchify accepted a non-dividing patch size")


def check_spectral_vs_svd(model, rng) -> None:
    for _ in range(10):
        m = rng.standard_normal((rng.integers(2, 16), rng.integers(2, 16)))
        ref = float(np.linalg.svd(m, compute_uv=False)[0])
        assert abs(tensor_ops.spectral_norm(m) - ref) <= 1e-9 * max(1.0, ref)


# --- flow suite -----------------------------------------------------------

def check_causality(model, rng) -> None:
    block = model.blocks[0]
    t_len = 6
    x = rng.standard_normal((2, t_len, block.channels))
    s0, u0 = scale_shift(block, x)
    for j in range(t_len):
        xp = x.copy()
        xp[:, j, :] += rng.standard_normal(block.channels)
        s1, u1 = scale_shift(block, xp)
        assert np.array_equal(s0[:, :j + 1, :], s1[:, :j + 1, :])
        assert np.array_equal(u0[:, :j + 1, :], u1[:, :j + 1, :])


def check_roundtrip(model, rng) -> None:
    channels = model.config.channels if model.config else model.blocks[0].channels
    for _ in range(100):
        x = rng.standard_normal((2, 12, channels))
        err = np.abs(inverse_model_serial(model, forward_model(model, x)) - x).max()
        assert err <= 1e-9, f"roundtrip error {err:.2e}"


def check_serial_vs_reference(model, rng) -> None:
    block = model.blocks[1 % len(model.blocks)]
    z = rng.standard_normal((2, 10, block.channels))
    cached = inverse_block_serial(block, z)
    naive = reference_inverse_serial(block, z)
    assert np.abs(cached - naive).max() <= 1e-12


def check_first_position_identity(model, rng) -> None:
    for block in model.blocks:
        x = rng.standard_normal((2, 5, block.channels))
        s, u = scale_shift(block, x)
        assert np.all(s[:, 0, :] == 0.0) and np.all(u[:, 0, :] == 0.0)
        z = forward_block(block, x)
        assert np.array_equal(z[:, 0, :], x[:, 0, :])


def check_log_det(model, rng) -> None:
    block = model.blocks[0]
    c = block.channels
    t_len = 3
    x = rng.standard_normal((1, t_len, c))
    s, _ = scale_shift(block, x)
    logdet = -s.sum()
    dim = t_len * c
    jac = np.empty((dim, dim))
    h = 1e-6
    for i in range(dim):
        xp = x.copy().reshape(-1)
        xp[i] += h
        zp = forward_block(block, xp.reshape(1, t_len, c)).ravel()
        xp[i] -= 2 * h
        zm = forward_block(block, xp.reshape(1, t_len, c)).ravel()
        jac[:, i] = (zp - zm) / (2 * h)
    sign, ref = np.linalg.slogdet(jac)
    assert sign > 0
    assert abs(logdet - ref) <= 1e-5 * max(1.0, abs(ref))


# --- samplers suite -------------------------------------------------------

def check_exact_convergence(model, rng) -> None:
    cfg = ModelConfig(channels=4, blocks=1, depth=2, seq_len=8)
    for seed in range(20):
        block = gen_synthetic_model(300 + seed, cfg, weight_scale=0.2).blocks[0]
        t_len = (4, 8, 16, 32)[seed % 4]
        z = rng.standard_normal((2, t_len, 4))
        x, _ = jacobi_sample(block, z, max_iters=t_len - 1, ebound=0.0)
        err = np.abs(x - inverse_block_serial(block, z)).max()
        assert err <= 1e-10, f"seed={seed} T={t_len} error {err:.2e}"


def check_information_front(model, rng) -> None:
    cfg = ModelConfig(channels=4, blocks=1, depth=2, seq_len=12)
    block = gen_synthetic_model(77, cfg, weight_scale=0.2).blocks[0]
    t_len = 12
    z = rng.standard_normal((2, t_len, 4))
    oracle = inverse_block_serial(block, z)
    for k in range(1, t_len - 1):
        x, _ = jacobi_sample(block, z, max_iters=k, ebound=0.0)
        front = np.abs(x[:, :k + 1, :] - oracle[:, :k + 1, :]).max()
        assert front <= 1e-12, f"front at k={k}: {front:.2e}"


def check_gs_equivalence(model, rng) -> None:
    cfg = ModelConfig(channels=4, blocks=1, depth=2, seq_len=16)
    block = gen_synthetic_model(41, cfg, weight_scale=0.3).blocks[0]
    t_len = 16
    z = rng.standard_normal((2, t_len, 4))
    oracle = inverse_block_serial(block, z)
    for groups in (1, 2, 4, t_len):
        seg = Segmentation.equal(t_len, groups)
        x, _ = gs_jacobi_sample(block, z, seg, seg.max_group_size, ebound=0.0)
        err = np.abs(x - oracle).max()
        assert err <= 1e-10, f"G={groups} error {err:.2e}"


def check_cost_accounting(model, rng) -> None:
    cfg = ModelConfig(channels=4, blocks=1, depth=2, seq_len=8)
    block = gen_synthetic_model(55, cfg, weight_scale=0.1).blocks[0]
    t_len = 8
    z = rng.standard_normal((2, t_len, 4))
    x, trace = jacobi_sample(block, z, max_iters=5, ebound=0.0)
    assert trace.su_evals == trace.sweeps() == 5
    _, trace = gs_jacobi_sample(block, z, Segmentation.singletons(t_len), 1,
                                ebound=0.0)
    assert trace.su_evals == t_len - 1
    seg = Segmentation.equal(t_len, 2)
    _, trace = gs_jacobi_sample(block, z, seg, 3, ebound=0.0)
    assert trace.su_evals == sum(
        trace.sweeps(module=g) for g in range(1, seg.n_groups + 1))


def check_init_modes(model, rng) -> None:
    z = rng.standard_normal((3, 6, 4))
    x0 = apply_init(z, InitMode.FROM_Z0)
    assert np.array_equal(x0[:, 0, :], z[:, 0, :])
    assert np.all(x0[:, 1:, :] == 0.0)
    assert np.array_equal(apply_init(z, InitMode.FROM_Z), z)


# --- metrics suite --------------------------------------------------------

def check_igm_fixed_point(model, rng) -> None:
    block = model.blocks[0]
    z = rng.standard_normal((2, 8, block.channels))
    x_star = analysis.exact_fixed_point(block, z)
    value = metrics.compute_igm(block, x_star, z, InitMode.FROM_Z, x0=x_star)
    assert value == 0.0


def check_crm_identity(model, rng) -> None:
    channels = model.config.channels if model.config else model.blocks[0].channels
    x_star = rng.standard_normal((4, 8, channels))
    for block in model.blocks:
        comp = metrics.compute_crm(block, x_star)
        assert abs(comp.crm - (comp.nvp * comp.ws + comp.wu)) <= 1e-12


def check_crm_scale_covariance(model, rng) -> None:
    import copy
    block = model.blocks[0]
    x_star = rng.standard_normal((4, 8, block.channels))
    base = metrics.compute_crm(block, x_star)
    doubled = copy.deepcopy(block)
    doubled.w_u = 2.0 * block.w_u
    comp = metrics.compute_crm(doubled, x_star)
    assert abs(comp.crm - (base.crm + base.wu)) <= 1e-12 * max(1.0, base.crm)
    scaled_s = copy.deepcopy(block)
    scaled_s.w_s = 2.0 * block.w_s
    comp = metrics.compute_crm(scaled_s, x_star)
    # Only the ws factor of the product term rescales; the wu term is
    # untouched (nvp re-evaluates, since the log-scale runs through w_s).
    assert abs(comp.ws - 2.0 * base.ws) <= 1e-12 * max(1.0, base.ws)
    assert comp.wu == base.wu
    assert abs(comp.crm - (comp.nvp * comp.ws + comp.wu)) <= 1e-12 * max(1.0, comp.crm)


def check_stack_invariance(model, rng) -> None:
    crms = [1.0, 9.0, 0.5, 0.7]
    base = metrics.select_stack(crms).indices
    scaled = metrics.select_stack([42.0 * c for c in crms]).indices
    assert base == scaled == (1,)
    assert metrics.select_stack([2.0, 2.0, 2.0]).indices == ()


def check_report_consistency(model, rng) -> None:
    batch = metrics.synthetic_data_batch(model, 8, seq_len=12, seed=9)
    report = metrics.metric_pass(model, batch)
    total = sum(bm.crm_percent for bm in report.blocks)
    assert abs(total - 100.0) <= 0.01
    for bm in report.blocks:
        assert abs(bm.crm - (bm.nvp * bm.ws + bm.wu)) <= 1e-12 * max(1.0, bm.crm)
        expected = InitMode.FROM_Z if bm.igm_z <= bm.igm_z0 else InitMode.FROM_Z0
        assert bm.chosen_init is expected


# --- analysis suite -------------------------------------------------------

def check_gamma_structure(model, rng) -> None:
    cfg = ModelConfig(channels=2, blocks=1, depth=2, seq_len=4)
    for seed in (11, 12):
        block = gen_synthetic_model(seed, cfg, weight_scale=0.2).blocks[0]
        for t_len in range(2, 7):
            z = rng.standard_normal((1, t_len, 2))
            x_star = analysis.exact_fixed_point(block, z)
            ep = analysis.error_propagation_matrix(block, x_star, z)
            assert ep.upper_noise <= 10.0 * ep.fd_step ** 2
            assert analysis.nilpotency_check(ep)


def check_error_recursion(model, rng) -> None:
    cfg = ModelConfig(channels=2, blocks=1, depth=2, seq_len=4)
    block = gen_synthetic_model(21, cfg, weight_scale=0.2).blocks[0]
    z = rng.standard_normal((1, 4, 2))
    report = analysis.verify_error_recursion(block, z)
    assert report.ratio_spread < 10.0, f"spread {report.ratio_spread:.2f}"


def check_telescoping(model, rng) -> None:
    cfg = ModelConfig(channels=2, blocks=1, depth=2, seq_len=5)
    block = gen_synthetic_model(31, cfg, weight_scale=0.2).blocks[0]
    t_len, c = 5, 2
    z = rng.standard_normal((1, t_len, c))
    x_star = analysis.exact_fixed_point(block, z)
    x = z.copy()
    err = (x - x_star).ravel()
    for k in range(1, t_len - 1):
        ep = analysis.error_propagation_matrix(block, x, z)
        err = ep.matrix @ err
        x = analysis.update_map(block, x, z)
        leading = np.abs(err[:(k + 1) * c]).max()
        assert leading <= 1e-8, f"k={k} leading {leading:.2e}"


@dataclass
class CheckResult:
    suite: str
    name: str
    ok: bool
    detail: str
    wall_ns: int


SUITES = {
    "tensor": [
        ("norm-inequality-and-homogeneity", check_norm_inequality),
        ("batch-mean-linearity", check_batch_mean_linear),
        ("patchify-roundtrip", check_patchify_roundtrip),
        ("spectral-vs-svd", check_spectral_vs_svd),
    ],
    "flow": [
        ("causality-perturbation", check_causality),
        ("roundtrip-invertibility", check_roundtrip),
        ("serial-vs-naive-reference", check_serial_vs_reference),
        ("first-position-identity", check_first_position_identity),
        ("log-det-vs-jacobian", check_log_det),
    ],
    "samplers": [
        ("exact-convergence", check_exact_convergence),
        ("information-front", check_information_front),
        ("gs-serial-equivalence", check_gs_equivalence),
        ("cost-accounting", check_cost_accounting),
        ("init-modes", check_init_modes),
    ],
    "metrics": [
        ("igm-zero-at-fixed-point", check_igm_fixed_point),
        ("crm-component-identity", check_crm_identity),
        ("crm-scale-covariance", check_crm_scale_covariance),
        ("stack-selection-invariance", check_stack_invariance),
        ("report-consistency", check_report_consistency),
    ],
    "analysis": [
        ("jacobian-structure-and-nilpotency", check_gamma_structure),
        ("first-order-error-recursion", check_error_recursion),
        ("telescoping-zeros", check_telescoping),
    ],
}


def run_suites(suite: str = "all", model: FlowModel | None = None,
               seed: int = 0) -> list[CheckResult]:
    if suite == "all":
        names = list(SUITES)
    elif suite in SUITES:
        names = [suite]
    else:
        raise ValueError(f"unknown suite {suite!r}; choose from "
                         f"{['all', *SUITES]}")
    if model is None:
        model = _default_model()
    results = []
    for suite_name in names:
        for check_name, fn in SUITES[suite_name]:
            rng = np.random.default_rng(seed)
            t0 = time.perf_counter_ns()
            try:
                fn(model, rng)
                ok, detail = True, ""
            except Exception as exc:  # deliberate: report, don't crash
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            results.append(CheckResult(suite_name, check_name, ok, detail,
                                       time.perf_counter_ns() - t0))
    return results
