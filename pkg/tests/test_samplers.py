import io

import numpy as np
import pytest

from gsjflow.analysis import exact_fixed_point
from gsjflow.errors import DimensionMismatchError, NumericalOverflowError
from gsjflow.flow import forward_model, inverse_block_serial, inverse_model_serial
from gsjflow.samplers import (
    TRACE_HEADER,
    InitMode,
    Segmentation,
    apply_init,
    gs_jacobi_sample,
    jacobi_sample,
    sample_model,
    serial_su_evals,
)
from gsjflow.strategy import Strategy, parse_strategy

from .conftest import make_block, make_model, zero_block


class TestSegmentation:
    def test_equal_split(self):
        seg = Segmentation.equal(16, 4)
        assert seg.groups == [(0, 4), (4, 8), (8, 12), (12, 16)]
        assert seg.max_group_size == 4

    def test_remainder_goes_to_late_groups(self):
        seg = Segmentation.equal(10, 4)
        assert [e - s for s, e in seg.groups] == [2, 2, 3, 3]

    def test_singletons(self):
        seg = Segmentation.singletons(4)
        assert seg.groups == [(0, 1), (1, 2), (2, 3), (3, 4)]

    def test_too_many_groups_rejected(self):
        with pytest.raises(DimensionMismatchError):
            Segmentation.equal(4, 5)

    def test_bounds_must_increase(self):
        with pytest.raises(DimensionMismatchError):
            Segmentation((3, 3, 5))


class TestInitModes:
    def test_from_z_copies(self, rng):
        z = rng.standard_normal((2, 5, 3))
        x0 = apply_init(z, InitMode.FROM_Z)
        assert np.array_equal(x0, z) and x0 is not z

    def test_from_z0_zeroes_tail(self, rng):
        z = rng.standard_normal((2, 5, 3))
        x0 = apply_init(z, InitMode.FROM_Z0)
        assert np.array_equal(x0[:, 0, :], z[:, 0, :])
        assert np.all(x0[:, 1:, :] == 0.0)


class TestJacobi:
    def test_fixed_point_start_converges_immediately(self, rng):
        block = make_block(seed=30, weight_scale=0.3)
        z = rng.standard_normal((2, 6, 4))
        x_star = exact_fixed_point(block, z)
        x, trace = jacobi_sample(block, z, max_iters=10, ebound=0.0, x0=x_star)
        assert trace.records[0].residual == 0.0
        assert trace.su_evals == 1
        assert np.array_equal(x, x_star)

    def test_zero_weight_converges_first_sweep(self, rng):
        z = rng.standard_normal((2, 6, 4))
        x, trace = jacobi_sample(zero_block(), z, max_iters=5, ebound=1e-8)
        assert np.array_equal(x, z)
        assert trace.su_evals == 1

    def test_exact_after_t_minus_one(self, rng):
        block = make_block(seed=31, weight_scale=0.3)
        z = rng.standard_normal((2, 4, 4))
        x, trace = jacobi_sample(block, z, max_iters=3, ebound=0.0)
        oracle = inverse_block_serial(block, z)
        assert trace.su_evals == 3
        assert np.abs(x - oracle).max() <= 1e-10

    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("t_len", [4, 8, 16, 32])
    def test_exact_convergence_quantified(self, seed, t_len):
        block = make_block(seed=100 + seed, weight_scale=0.25)
        r = np.random.default_rng(seed)
        z = r.standard_normal((2, t_len, 4))
        x, _ = jacobi_sample(block, z, max_iters=t_len - 1, ebound=0.0)
        assert np.abs(x - inverse_block_serial(block, z)).max() <= 1e-10

    def test_information_front_moves_one_per_sweep(self, rng):
        block = make_block(seed=32, weight_scale=0.2)
        t_len = 10
        z = rng.standard_normal((2, t_len, 4))
        oracle = inverse_block_serial(block, z)
        for k in (1, 3, 6, 9):
            x, _ = jacobi_sample(block, z, max_iters=k, ebound=0.0)
            assert np.abs(x[:, :k + 1, :] - oracle[:, :k + 1, :]).max() <= 1e-12

    def test_first_position_pinned(self, rng):
        block = make_block(seed=33, weight_scale=0.4)
        z = rng.standard_normal((2, 5, 4))
        x, _ = jacobi_sample(block, z, init=InitMode.FROM_Z0, max_iters=2,
                             ebound=0.0)
        assert np.array_equal(x[:, 0, :], z[:, 0, :])

    def test_overflow_carries_context(self, rng):
        block = make_block(seed=34, weight_scale=800.0)
        z = rng.standard_normal((1, 6, 4))
        with pytest.raises(NumericalOverflowError) as exc_info:
            jacobi_sample(block, z, max_iters=5, block_index=2)
        err = exc_info.value
        assert err.block == 2 and err.iteration is not None
        assert err.max_abs is not None

    def test_clamp_keeps_sweeps_finite_and_counts(self, rng):
        # clamping is opt-in; with it the same block iterates without
        # overflowing and the trace counts every clamped entry
        block = make_block(seed=34, weight_scale=800.0)
        z = rng.standard_normal((1, 6, 4))
        x, trace = jacobi_sample(block, z, max_iters=5, ebound=0.0, clamp=8.0)
        assert np.all(np.isfinite(x))
        assert trace.clamp_events > 0

    def test_bad_args(self, rng):
        block = zero_block()
        z = rng.standard_normal((1, 4, 4))
        with pytest.raises(ValueError):
            jacobi_sample(block, z, max_iters=0)
        with pytest.raises(ValueError):
            jacobi_sample(block, z, max_iters=1, ebound=-1.0)


class TestGSJacobi:
    def test_singleton_groups_equal_serial(self, rng):
        block = make_block(seed=35, weight_scale=0.4)
        t_len = 12
        z = rng.standard_normal((2, t_len, 4))
        oracle = inverse_block_serial(block, z)
        for budget in (1, 3):
            x, _ = gs_jacobi_sample(block, z, Segmentation.singletons(t_len),
                                    budget, ebound=0.0)
            assert np.abs(x - oracle).max() <= 1e-12

    def test_single_group_is_plain_jacobi(self, rng):
        block = make_block(seed=36, weight_scale=0.3)
        t_len = 8
        z = rng.standard_normal((2, t_len, 4))
        xj, _ = jacobi_sample(block, z, max_iters=t_len - 1, ebound=0.0)
        xg, _ = gs_jacobi_sample(block, z, Segmentation.equal(t_len, 1),
                                 t_len - 1, ebound=0.0)
        assert np.abs(xg - xj).max() <= 1e-10

    def test_modules_converge_within_their_size(self, rng):
        block = make_block(seed=37, weight_scale=0.3)
        t_len = 16
        z = rng.standard_normal((2, t_len, 4))
        x, _ = gs_jacobi_sample(block, z, Segmentation.equal(t_len, 4), 4,
                                ebound=0.0)
        assert np.abs(x - inverse_block_serial(block, z)).max() <= 1e-10

    @pytest.mark.parametrize("groups", [1, 2, 4, 16])
    def test_equivalence_across_segmentations(self, groups):
        block = make_block(seed=38, weight_scale=0.35)
        r = np.random.default_rng(groups)
        t_len = 16
        z = r.standard_normal((2, t_len, 4))
        seg = Segmentation.equal(t_len, groups)
        x, _ = gs_jacobi_sample(block, z, seg, seg.max_group_size, ebound=0.0)
        assert np.abs(x - inverse_block_serial(block, z)).max() <= 1e-10

    def test_wrong_segmentation_length(self, rng):
        block = zero_block()
        z = rng.standard_normal((1, 8, 4))
        with pytest.raises(DimensionMismatchError):
            gs_jacobi_sample(block, z, Segmentation.equal(10, 2), 1)

    def test_overflow_carries_module(self, rng):
        block = make_block(seed=39, weight_scale=800.0)
        z = rng.standard_normal((1, 8, 4))
        with pytest.raises(NumericalOverflowError) as exc_info:
            gs_jacobi_sample(block, z, Segmentation.equal(8, 2), 3)
        assert exc_info.value.module is not None


class TestCostAccounting:
    def test_jacobi_su_equals_sweeps(self, rng):
        block = make_block(seed=40, weight_scale=0.3)
        z = rng.standard_normal((2, 8, 4))
        _, trace = jacobi_sample(block, z, max_iters=5, ebound=0.0)
        assert trace.su_evals == trace.sweeps() == 5

    def test_gs_su_equals_sum_of_module_sweeps(self, rng):
        block = make_block(seed=41, weight_scale=0.3)
        z = rng.standard_normal((2, 12, 4))
        seg = Segmentation.equal(12, 3)
        _, trace = gs_jacobi_sample(block, z, seg, 4, ebound=0.0)
        per_module = [trace.sweeps(module=g) for g in range(1, 4)]
        assert trace.su_evals == sum(per_module)

    def test_full_segmentation_matches_serial_count(self, rng):
        block = make_block(seed=42, weight_scale=0.2)
        t_len = 9
        z = rng.standard_normal((2, t_len, 4))
        _, trace = gs_jacobi_sample(block, z, Segmentation.singletons(t_len),
                                    1, ebound=0.0)
        assert trace.su_evals == serial_su_evals(t_len) == t_len - 1

    def test_early_stop_checked_after_first_sweep(self, rng):
        z = rng.standard_normal((2, 6, 4))
        _, trace = jacobi_sample(zero_block(), z, max_iters=50, ebound=1e-8)
        assert trace.su_evals == 1


class TestTraceExport:
    def test_csv_format(self, rng):
        block = make_block(seed=43, weight_scale=0.2)
        z = rng.standard_normal((1, 5, 4))
        oracle = inverse_block_serial(block, z)
        _, with_dist = jacobi_sample(block, z, max_iters=3, ebound=0.0,
                                     oracle=oracle)
        buf = io.StringIO()
        with_dist.write_csv(buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == TRACE_HEADER
        assert len(lines) == 4
        assert lines[1].split(",")[3] != ""

        _, without = jacobi_sample(block, z, max_iters=2, ebound=0.0)
        buf = io.StringIO()
        without.write_csv(buf)
        row = buf.getvalue().strip().splitlines()[1].split(",")
        assert row[3] == ""

    def test_iterations_strictly_increase_per_module(self, rng):
        block = make_block(seed=44, weight_scale=0.3)
        z = rng.standard_normal((2, 8, 4))
        _, trace = gs_jacobi_sample(block, z, Segmentation.equal(8, 2), 3,
                                    ebound=0.0)
        seen = {}
        for rec in trace.records:
            key = (rec.block, rec.module)
            assert rec.iteration > seen.get(key, 0)
            seen[key] = rec.iteration


class TestSampleModel:
    def test_stack_everything_serial_equals_exact(self, rng):
        model = make_model(seed=45, blocks=3, weight_scale=[0.05, 0.3, 0.1])
        t_len = 12
        z = rng.standard_normal((2, t_len, 4))
        strategy = Strategy(stack=(0, 1, 2), gs=(t_len,) * 3, j=(1,) * 3,
                            else_j=1)
        x, trace = sample_model(model, z, strategy, ebound=0.0)
        oracle = inverse_model_serial(model, z)
        assert np.abs(x - oracle).max() <= 1e-9
        assert trace.su_evals == 3 * (t_len - 1)

    def test_full_jacobi_budget_single_block(self, rng):
        model = make_model(seed=46, blocks=1, weight_scale=0.3)
        t_len = 10
        z = rng.standard_normal((2, t_len, 4))
        strategy = parse_strategy(f"[0-1-{t_len - 1}-{t_len - 1}]")
        x, _ = sample_model(model, z, strategy, ebound=0.0)
        assert np.abs(x - inverse_model_serial(model, z)).max() <= 1e-10

    def test_stacked_dominant_block_matches_serial(self, rng):
        model = make_model(seed=47, blocks=4,
                           weight_scale=[0.02, 0.4, 0.05, 0.1])
        t_len = 16
        z = rng.standard_normal((2, t_len, 4))
        strategy = parse_strategy("[1-4-4-15]")
        x, _ = sample_model(model, z, strategy, ebound=0.0)
        assert np.abs(x - inverse_model_serial(model, z)).max() <= 1e-9

    def test_unknown_stack_index_rejected(self, rng):
        model = make_model(seed=48, blocks=2)
        z = rng.standard_normal((1, 8, 4))
        with pytest.raises(DimensionMismatchError):
            sample_model(model, z, parse_strategy("[5-2-2-2]"))

    def test_report_drives_init_modes(self, rng):
        from gsjflow.metrics import metric_pass, synthetic_data_batch
        model = make_model(seed=49, blocks=2, weight_scale=0.2)
        batch = synthetic_data_batch(model, 6, seq_len=8, seed=1)
        report = metric_pass(model, batch)
        z = rng.standard_normal((2, 8, 4))
        x, _ = sample_model(model, z, parse_strategy("[0-2-4-7]"),
                            report=report, ebound=0.0)
        assert np.abs(x - inverse_model_serial(model, z)).max() <= 1e-8

    def test_blocks_processed_in_reverse(self, rng):
        # output must invert the composed forward exactly for zero weights
        model = make_model(seed=50, blocks=2, weight_scale=0.0)
        z = rng.standard_normal((1, 6, 4))
        strategy = parse_strategy("[0-1-1-1]")
        x, _ = sample_model(model, z, strategy)
        assert np.abs(forward_model(model, x) - z).max() <= 1e-12

    def test_concurrent_runs_share_immutable_model(self, rng):
        from concurrent.futures import ThreadPoolExecutor
        model = make_model(seed=51, blocks=2, weight_scale=0.2)
        strategy = parse_strategy("[0-2-3-5]")
        batches = [rng.standard_normal((2, 8, 4)) for _ in range(4)]
        expected = [sample_model(model, z, strategy, ebound=0.0)[0]
                    for z in batches]
        with ThreadPoolExecutor(max_workers=4) as pool:
            got = list(pool.map(
                lambda z: sample_model(model, z, strategy, ebound=0.0)[0],
                batches))
        for a, b in zip(expected, got):
            assert np.array_equal(a, b)
