"""Sequence registration strategies: wiring, reuse, and behaviour."""

import numpy as np
import pytest

import mmorph.pipeline as pipeline
from mmorph.estimator import EstimatorConfig
from mmorph.grid import TransformKind, VectorField, interior_slices
from mmorph.metrics import epe
from mmorph.pipeline import (
    Method,
    MethodSpec,
    SequenceInput,
    register,
    register_mmorph,
    run_sequence,
    subsample_indices,
)
from mmorph.synth import SynthConfig, bspline_control_shape, generate_movie, movie_from_offsets

FAST = EstimatorConfig(iters_per_level=40)


def constant_movie(total_px: float, frames: int, size: int = 96, freq: int = 10):
    """A movie translating by ``total_px`` along axis 0 in equal steps."""
    cfg = SynthConfig(size=size, frames=frames, freq=freq, seed=0)
    offsets = np.zeros(bspline_control_shape(size, cfg.cp_spacing, 2) + (2,))
    offsets[..., 0] = total_px
    return movie_from_offsets(cfg, offsets)


class TestSubsample:
    @pytest.mark.parametrize(
        "target, count, expected",
        [
            (3, 3, [0, 1, 3]),  # midpoint 1.5 rounds toward the reference
            (8, 3, [0, 4, 8]),
            (4, 3, [0, 2, 4]),
            (5, 2, [0, 5]),
            (1, 2, [0, 1]),
            (2, 10, [0, 1, 2]),  # count clamps to target + 1
        ],
    )
    def test_cases(self, target, count, expected):
        assert subsample_indices(target, count) == expected

    def test_count_validated(self):
        with pytest.raises(ValueError):
            subsample_indices(5, 1)

    def test_strictly_increasing(self):
        for target in range(1, 12):
            for count in range(2, target + 2):
                idx = subsample_indices(target, count)
                assert idx[0] == 0 and idx[-1] == target
                assert all(b > a for a, b in zip(idx, idx[1:]))


class TestValidation:
    def test_negative_correction_passes(self):
        with pytest.raises(ValueError):
            MethodSpec(Method.MMORPH2, correction_passes=-1)

    def test_subsample_only_for_compose(self):
        with pytest.raises(ValueError):
            MethodSpec(Method.DIRECT, subsample_frames=3)
        MethodSpec(Method.COMPOSE, subsample_frames=3)  # fine

    def test_subsample_minimum(self):
        with pytest.raises(ValueError):
            MethodSpec(Method.COMPOSE, subsample_frames=1)

    def test_sequence_needs_two_frames(self):
        m = constant_movie(1.0, 2, size=32, freq=3)
        with pytest.raises(ValueError):
            SequenceInput(m.frames[:1])

    def test_sequence_shape_mismatch(self):
        a = constant_movie(1.0, 2, size=32, freq=3)
        b = constant_movie(1.0, 2, size=48, freq=5)
        with pytest.raises(ValueError):
            SequenceInput([a.frames[0], b.frames[0]])

    def test_target_index_bounds(self):
        m = constant_movie(1.0, 3, size=32, freq=3)
        with pytest.raises(ValueError):
            SequenceInput(m.frames, target_index=0)
        with pytest.raises(ValueError):
            SequenceInput(m.frames, target_index=3)
        assert SequenceInput(m.frames).target_index == 2

    def test_register_mmorph_rejects_other_methods(self):
        m = constant_movie(1.0, 2, size=32, freq=3)
        with pytest.raises(ValueError):
            register_mmorph(SequenceInput(m.frames), MethodSpec(Method.DIRECT))


class _CountingStub:
    """estimate_svf stand-in returning a fixed constant field."""

    def __init__(self, value=(0.0, 0.0)):
        self.value = np.asarray(value, dtype=np.float64)
        self.calls = 0

    def __call__(self, fixed, moving, cfg):
        self.calls += 1
        values = np.broadcast_to(self.value, fixed.shape.dims + (2,)).copy()
        return VectorField(fixed.shape, values)


class TestEstimatorCallCounts:
    @pytest.fixture
    def frames4(self):
        return constant_movie(3.0, 4, size=32, freq=3).frames

    def _count(self, monkeypatch, frames, spec):
        stub = _CountingStub()
        monkeypatch.setattr(pipeline, "estimate_svf", stub)
        results = run_sequence(frames, spec)
        return stub.calls, results

    def test_compose_shares_chain(self, monkeypatch, frames4):
        calls, results = self._count(monkeypatch, frames4, MethodSpec(Method.COMPOSE))
        assert calls == 3
        assert [len(r.eulerian) for r in results] == [1, 2, 3]

    def test_direct_estimates_each_target(self, monkeypatch, frames4):
        calls, results = self._count(monkeypatch, frames4, MethodSpec(Method.DIRECT))
        assert calls == 3
        for r in results:
            assert r.eulerian == [] and r.momenta is None and r.residual is None

    def test_mmorph_adds_one_correction_per_target(self, monkeypatch, frames4):
        spec = MethodSpec(Method.MMORPH2, correction_passes=1)
        calls, results = self._count(monkeypatch, frames4, spec)
        assert calls == 2 * 3  # 3 chain steps + 3 corrections
        for r in results:
            assert r.momenta is not None and r.residual is not None

    def test_mmorph_without_correction(self, monkeypatch, frames4):
        spec = MethodSpec(Method.MMORPH1, correction_passes=0)
        calls, results = self._count(monkeypatch, frames4, spec)
        assert calls == 3
        assert all(r.residual is None for r in results)

    def test_subsampled_compose_builds_per_target(self, monkeypatch, frames4):
        spec = MethodSpec(Method.COMPOSE, subsample_frames=2)
        calls, results = self._count(monkeypatch, frames4, spec)
        # Targets 1, 2, 3 each use the single chain [0, t].
        assert calls == 3
        assert [len(r.eulerian) for r in results] == [1, 1, 1]

    def test_timing_keys_present(self, monkeypatch, frames4):
        for spec in (
            MethodSpec(Method.DIRECT),
            MethodSpec(Method.COMPOSE),
            MethodSpec(Method.MMORPH2),
        ):
            _, results = self._count(monkeypatch, frames4, spec)
            for r in results:
                assert set(r.timings) == {"eulerian", "momenta", "shooting", "correction"}
                assert all(v >= 0.0 for v in r.timings.values())
                assert r.lagrangian.kind is TransformKind.LAGRANGIAN


class TestCommutingReduction:
    def test_orders_agree_bitwise_for_constant_steps(self, monkeypatch):
        # Constant fields commute, so the bracket term vanishes exactly and
        # both accumulation orders produce the same momenta bit for bit.
        frames = constant_movie(3.0, 4, size=32, freq=3).frames
        momenta = {}
        for method in (Method.MMORPH1, Method.MMORPH2):
            stub = _CountingStub(value=(0.5, 0.25))
            monkeypatch.setattr(pipeline, "estimate_svf", stub)
            spec = MethodSpec(method, correction_passes=0)
            momenta[method] = run_sequence(frames, spec)[-1].momenta.values
        assert np.array_equal(momenta[Method.MMORPH1], momenta[Method.MMORPH2])
        assert np.array_equal(
            momenta[Method.MMORPH1],
            np.broadcast_to([1.5, 0.75], (32, 32, 2)),
        )


class TestTwoFrameEquivalence:
    def test_all_methods_agree_on_single_step(self):
        m = generate_movie(SynthConfig(size=96, frames=2, freq=10, seed=5))
        seq = SequenceInput(m.frames)
        inner = interior_slices((96, 96))

        results = {
            method: register(seq, MethodSpec(method, estimator=FAST))
            for method in Method
        }
        # With one frame pair DIRECT and COMPOSE run the identical estimate.
        assert np.array_equal(
            results[Method.DIRECT].lagrangian.displacement.values,
            results[Method.COMPOSE].lagrangian.displacement.values,
        )
        base = results[Method.DIRECT].lagrangian.displacement.values[inner]
        for method in (Method.MMORPH1, Method.MMORPH2):
            diff = results[method].lagrangian.displacement.values[inner] - base
            assert np.abs(np.linalg.norm(diff, axis=-1)).mean() < 0.3


@pytest.fixture(scope="module")
def movie6px():
    # 6 px of total translation: more than half the 9.6 px pattern period,
    # so a single straight estimate locks onto the wrong stripe while
    # per-step methods (2 px per step) track the true one.
    return constant_movie(6.0, 4)


class TestLargeMotion:
    def test_direct_aliases(self, movie6px):
        spec = MethodSpec(Method.DIRECT, estimator=FAST)
        res = register(SequenceInput(movie6px.frames), spec)
        mean_err, _ = epe(res.lagrangian, movie6px.gt_lagrangian[-1])
        assert mean_err > 2.0

    def test_stepwise_methods_track(self, movie6px):
        for method in (Method.COMPOSE, Method.MMORPH2):
            spec = MethodSpec(method, estimator=FAST)
            res = run_sequence(movie6px.frames, spec)[-1]
            mean_err, _ = epe(res.lagrangian, movie6px.gt_lagrangian[-1])
            assert mean_err < 0.5, method

    def test_run_sequence_matches_single_register(self, movie6px):
        spec = MethodSpec(Method.MMORPH2, estimator=FAST)
        chained = run_sequence(movie6px.frames, spec)[-1]
        single = register(SequenceInput(movie6px.frames), spec)
        assert np.array_equal(
            chained.lagrangian.displacement.values,
            single.lagrangian.displacement.values,
        )

    def test_momenta_near_step_sum(self, movie6px):
        spec = MethodSpec(Method.MMORPH1, estimator=FAST, correction_passes=0)
        res = run_sequence(movie6px.frames, spec)[-1]
        inner = interior_slices((96, 96))
        p0 = res.momenta.values[inner][..., 0]
        # Three steps of -2 px accumulate to about -6 px of velocity.
        assert abs(p0.mean() + 6.0) < 0.5
