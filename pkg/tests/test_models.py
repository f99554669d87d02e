import math
from dataclasses import replace

import numpy as np
import pytest

from models import (
    Anchor, AnchorLayout, NoiseModel, Position2D, Rates, RunManifest, TimedSample, Trajectory,
)
from services.errors import ValidationError
from services.trajectory import align_pairs, aligned_arrays, interpolate_position


def line(times, xs, ys=None):
    ys = ys if ys is not None else [0.0] * len(xs)
    return Trajectory.from_arrays(times, np.column_stack([xs, ys]))


class TestPosition2D:

    def test_distance(self):
        assert Position2D(0.0, 0.0).distance_to(Position2D(3.0, 4.0)) == 5.0

    def test_rejects_non_finite(self):
        with pytest.raises(ValidationError):
            Position2D(math.nan, 0.0)

    def test_dict_round_trip(self):
        p = Position2D(1.25, -3.5)
        assert Position2D.from_dict(p.to_dict()) == p


class TestTrajectory:

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            Trajectory(())

    def test_rejects_non_increasing_times(self):
        with pytest.raises(ValidationError):
            line([0.0, 1.0, 1.0], [0.0, 1.0, 2.0])

    def test_rejects_negative_time(self):
        with pytest.raises(ValidationError):
            TimedSample(-1.0, Position2D(0.0, 0.0))

    def test_helpers(self):
        traj = line([0.0, 0.5, 1.0], [0.0, 1.0, 2.0])
        assert traj.span() == (0.0, 1.0)
        assert len(traj) == 3
        np.testing.assert_array_equal(traj.xy()[:, 0], [0.0, 1.0, 2.0])


class TestInterpolation:

    def test_exact_at_sample(self):
        traj = line([0.0, 1.0, 2.0], [0.0, 3.0, 4.0])
        assert interpolate_position(traj, 1.0) == Position2D(3.0, 0.0)

    def test_midpoint(self):
        traj = line([0.0, 2.0], [0.0, 4.0], [0.0, 2.0])
        p = interpolate_position(traj, 1.0)
        assert (p.x, p.y) == (2.0, 1.0)

    def test_out_of_span(self):
        traj = line([0.0, 1.0], [0.0, 1.0])
        with pytest.raises(ValidationError):
            interpolate_position(traj, 1.5)

    def test_align_pairs_restricts_to_overlap(self):
        a = line([0.0, 1.0, 2.0, 3.0], [0.0, 1.0, 2.0, 3.0])
        b = line([1.0, 2.0], [10.0, 20.0])
        pairs = align_pairs(a, b)
        assert [(p.x, q.x) for p, q in pairs] == [(1.0, 10.0), (2.0, 20.0)]

    def test_align_pairs_reads_clock_once(self, monkeypatch):
        n = 500
        a = line(np.arange(n) * 0.1 + 0.05, np.arange(n, dtype=float))
        b = line(np.arange(n + 1) * 0.1, np.arange(n + 1, dtype=float))
        calls = []
        times = Trajectory.times
        monkeypatch.setattr(Trajectory, "times", lambda self: calls.append(self) or times(self))
        pairs = align_pairs(a, b)
        assert len(pairs) == n
        assert len(calls) == 1
        assert pairs[3][1].x == pytest.approx(3.5)

    def test_aligned_arrays_empty_without_overlap(self):
        a = line([0.0, 1.0], [0.0, 1.0])
        b = line([5.0, 6.0], [0.0, 1.0])
        t, _, _ = aligned_arrays(a, b)
        assert t.size == 0


class TestAnchorLayout:

    def test_sorted_by_id(self):
        layout = AnchorLayout((Anchor(3, Position2D(0, 5)), Anchor(1, Position2D(0, 0)),
                               Anchor(2, Position2D(5, 0))))
        assert layout.ids == [1, 2, 3]

    def test_rejects_duplicates(self):
        with pytest.raises(ValidationError):
            AnchorLayout((Anchor(1, Position2D(0, 0)), Anchor(1, Position2D(5, 0)),
                          Anchor(2, Position2D(0, 5))))

    def test_rejects_collinear(self):
        with pytest.raises(ValidationError):
            AnchorLayout(tuple(Anchor(i, Position2D(float(i), 2.0 * i)) for i in range(4)))


class TestConfigModels:

    def test_noise_model_unknown_key(self):
        with pytest.raises(ValidationError, match="noise.sigma_typo"):
            NoiseModel.from_dict({"sigma_typo": 1.0})

    def test_noise_model_negative(self):
        with pytest.raises(ValidationError):
            NoiseModel(sigma_los=-0.1)

    def test_rates_must_match(self):
        with pytest.raises(ValidationError):
            Rates(rf_hz=15.0, vo_hz=30.0)

    def test_manifest_excludes_wall_time(self):
        manifest = RunManifest("simulate", "a.toml", 1, ["a.toml"], ["x.jsonl"], "1.0.0", wall_time=2.5)
        assert "wall_time" not in manifest.to_dict()


class TestTrace:

    @pytest.mark.parametrize("stream", ["rf", "vo"])
    def test_short_stream_rejected(self, noise_free_trace, stream):
        short = getattr(noise_free_trace, stream)[:-1]
        with pytest.raises(ValidationError, match="stream lengths differ"):
            replace(noise_free_trace, **{stream: short})

    def test_short_ground_truth_rejected(self, noise_free_trace):
        gt = Trajectory(noise_free_trace.gt.samples[:-1])
        with pytest.raises(ValidationError, match="stream lengths differ"):
            replace(noise_free_trace, gt=gt)

    def test_equal_lengths_accepted(self, noise_free_trace):
        assert len(replace(noise_free_trace, scenario="copy")) == len(noise_free_trace)
