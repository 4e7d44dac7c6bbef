"""Synthetic movie generator: determinism, quality gates, ground truth."""

import numpy as np
import pytest

from mmorph.grid import (
    GridShape,
    TransformKind,
    compose,
    interior_slices,
    jacobian_determinant,
    warp_image,
)
from mmorph.synth import (
    GenerationError,
    SynthConfig,
    bspline_control_shape,
    bspline_field,
    corpus_seed,
    generate_movie,
    movie_from_offsets,
    sample_invariant_report,
    sinusoid_pattern,
    sinusoid_value,
)


class TestConfig:
    def test_defaults(self):
        cfg = SynthConfig()
        assert cfg.period == pytest.approx(9.6)
        assert cfg.max_step == pytest.approx(4.8)
        assert cfg.total_amplitude == pytest.approx(9.6)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"size": 2},
            {"frames": 1},
            {"freq": 0},
            {"size": 8, "freq": 5},  # period 1.6 <= 2 px
            {"reject_limit": 0},
        ],
    )
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            SynthConfig(**kwargs)


class TestPattern:
    def test_sinusoid_range_and_period(self):
        img = sinusoid_pattern(96, 10, orientation=0)
        assert img.values.min() >= 0.0 and img.values.max() <= 1.0
        # One full period later the value repeats.
        line = img.values[:, 0, 0]
        assert np.allclose(
            sinusoid_value(np.arange(20.0), 9.6),
            sinusoid_value(np.arange(20.0) + 9.6, 9.6),
            atol=1e-12,
        )
        assert line[0] == pytest.approx(0.5)

    def test_orientation_axis(self):
        along0 = sinusoid_pattern(32, 4, orientation=0)
        along1 = sinusoid_pattern(32, 4, orientation=1)
        assert np.allclose(along0.values[:, 0], along0.values[:, 5])
        assert np.allclose(along1.values[0, :], along1.values[5, :])
        with pytest.raises(ValueError):
            sinusoid_pattern(32, 4, orientation=2)


class TestBsplineField:
    def test_constant_offsets_give_constant_field(self):
        # The cubic basis is a partition of unity.
        ncp = bspline_control_shape(48, 16.0, 2)
        offsets = np.zeros(ncp + (2,))
        offsets[..., 0] = 3.0
        f = bspline_field(offsets, 16.0, 48)
        assert np.allclose(f.values[..., 0], 3.0, atol=1e-12)
        assert np.allclose(f.values[..., 1], 0.0, atol=1e-12)

    def test_malformed_control_grid_rejected(self):
        with pytest.raises(ValueError):
            bspline_field(np.zeros((3, 3, 2)), 16.0, 48)


class TestGenerate:
    def test_shape_channels_and_range(self):
        cfg = SynthConfig(size=48, frames=3, freq=5, seed=4)
        m = generate_movie(cfg)
        assert len(m.frames) == 3
        assert len(m.gt_lagrangian) == 2
        assert len(m.gt_forward) == 2
        for f in m.frames:
            assert f.shape.dims == (48, 48)
            assert f.values.shape[-1] == 2
            assert f.values.min() >= 0.0 and f.values.max() <= 1.0
        for gt in m.gt_lagrangian:
            assert gt.kind is TransformKind.LAGRANGIAN

    def test_deterministic_in_seed(self):
        cfg = SynthConfig(size=48, frames=3, freq=5, seed=9)
        a = generate_movie(cfg)
        b = generate_movie(cfg)
        for fa, fb in zip(a.frames, b.frames):
            assert np.array_equal(fa.values, fb.values)
        for ga, gb in zip(a.gt_lagrangian, b.gt_lagrangian):
            assert np.array_equal(ga.displacement.values, gb.displacement.values)

    def test_different_seeds_differ(self):
        base = SynthConfig(size=48, frames=3, freq=5, seed=1)
        other = SynthConfig(size=48, frames=3, freq=5, seed=2)
        a, b = generate_movie(base), generate_movie(other)
        assert not np.array_equal(a.frames[1].values, b.frames[1].values)

    def test_invariant_report_within_bounds(self):
        cfg = SynthConfig(size=96, frames=3, freq=10, seed=12)
        m = generate_movie(cfg)
        rep = sample_invariant_report(cfg, m)
        assert rep["worst_step"] <= rep["step_bound"]
        assert rep["step_bound"] == pytest.approx(cfg.max_step + 0.1)
        assert rep["min_det"] > 0.0
        assert rep["worst_warp_rmse"] < rep["warp_rmse_bound"] == 0.02

    def test_gt_magnitude_monotone(self):
        cfg = SynthConfig(size=96, frames=4, freq=10, seed=3)
        m = generate_movie(cfg)
        inner = interior_slices((96, 96))
        mags = [
            np.linalg.norm(gt.displacement.values[inner], axis=-1).mean()
            for gt in m.gt_lagrangian
        ]
        assert all(b >= a - 1e-9 for a, b in zip(mags, mags[1:]))

    def test_rejection_limit_reported(self):
        # With one draw allowed, most seeds fail the quality gates; at least
        # one in a small range must surface the documented error.
        raised = 0
        for seed in range(10):
            cfg = SynthConfig(size=96, frames=3, freq=10, seed=seed, reject_limit=1)
            try:
                generate_movie(cfg)
            except GenerationError as e:
                raised += 1
                assert "rejection limit" in str(e)
        assert raised >= 1


class TestFromOffsets:
    def test_constant_translation_exact(self):
        cfg = SynthConfig(size=48, frames=3, freq=5, seed=0)
        ncp = bspline_control_shape(48, cfg.cp_spacing, 2)
        offsets = np.zeros(ncp + (2,))
        offsets[..., 0] = 4.0
        m = movie_from_offsets(cfg, offsets)
        # Frame t samples the pattern at x + (t/(T-1)) * 4 px exactly.
        coords0 = np.arange(48.0)
        expect_last = sinusoid_value(coords0 + 4.0, cfg.period)
        assert np.allclose(m.frames[2].values[:, 0, 0], expect_last, atol=1e-9)
        inner = interior_slices((48, 48))
        u = m.gt_lagrangian[-1].displacement.values[inner]
        assert np.allclose(u[..., 0], -4.0, atol=1e-3)

    def test_gt_inverts_forward_map(self):
        cfg = SynthConfig(size=96, frames=3, freq=10, seed=8)
        m = generate_movie(cfg)
        inner = interior_slices((96, 96))
        for fwd, gt in zip(m.gt_forward, m.gt_lagrangian):
            resid = compose(fwd, gt).displacement.values[inner]
            assert np.abs(resid).max() < 2e-4

    def test_gt_warp_reproduces_reference(self):
        cfg = SynthConfig(size=96, frames=3, freq=10, seed=8)
        m = generate_movie(cfg)
        inner = interior_slices((96, 96))
        for t, gt in enumerate(m.gt_lagrangian, start=1):
            moved = warp_image(m.frames[t], gt)
            rmse = np.sqrt(np.mean((moved.values[inner] - m.frames[0].values[inner]) ** 2))
            assert rmse < 0.02

    def test_folding_offsets_rejected(self):
        cfg = SynthConfig(size=48, frames=3, freq=5, seed=0)
        ncp = bspline_control_shape(48, cfg.cp_spacing, 2)
        offsets = np.zeros(ncp + (2,))
        # Alternate huge pushes to force the deformation through itself.
        offsets[::2, :, 0] = 40.0
        offsets[1::2, :, 0] = -40.0
        with pytest.raises(GenerationError):
            movie_from_offsets(cfg, offsets)

    def test_gt_dets_positive(self):
        cfg = SynthConfig(size=96, frames=3, freq=10, seed=21)
        m = generate_movie(cfg)
        for gt in m.gt_lagrangian:
            assert jacobian_determinant(gt).min() > 0.0


class TestCorpusSeed:
    def test_deterministic(self):
        assert corpus_seed(7, 3) == corpus_seed(7, 3)

    def test_distinct_across_indices_and_bases(self):
        seeds = {corpus_seed(0, i) for i in range(1000)}
        assert len(seeds) == 1000
        assert corpus_seed(0, 5) != corpus_seed(1, 5)

    def test_uint64_range(self):
        for i in (0, 1, 999):
            s = corpus_seed(123, i)
            assert 0 <= s < 2**64
