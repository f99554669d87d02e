"""
End-to-end reproductions on the bundled scenarios. These train real models
and take minutes; they are deselected by default, run them with
`pytest -m slow`.
"""
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from models import Position2D
from services.anchor_selector import build_selector_dataset, selector_accuracy, train_anchor_selector
from services.baselines import ekf_fuse, rf_only, vo_only
from services.blackbox import train_blackbox
from services.evaluation import ate, multi_user_report, power_error_correlation, relative_errors, window_ate
from services.fusion import attention_report, train_fusion
from services.rf_loc import label_best_anchors, localize_epoch, multilaterate, ranges_for
from services.rng import RngStream
from services.scenario_config import load_scenario_config
from services.training import TrainConfig, predict_trace
from services.world_sim import run_scenario, simulate_multi_agent

pytestmark = pytest.mark.slow

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def scenario(name):
    return load_scenario_config(SCENARIOS / f"{name}.toml")


def median_ate(est, trace):
    return ate(est, trace.gt).median


@pytest.fixture(scope="module")
def practical():
    base = scenario("office_practical")
    return {
        "train": [run_scenario(base.with_seed(seed)) for seed in (7, 8, 9)],
        "held_out": run_scenario(base.with_seed(21)),
    }


@pytest.fixture(scope="module")
def selector(practical):
    dataset = build_selector_dataset(practical["train"])
    return train_anchor_selector(dataset, chain_order=practical["held_out"].layout.ids,
                                 rng=RngStream.named(0, "selector/init"))


@pytest.fixture(scope="module")
def fusion_model(practical, selector):
    return train_fusion(practical["train"], TrainConfig(), selector).model


class TestMultilateration:

    def test_exact_ranges_on_random_layouts(self):
        rng = RngStream.named(0, "acceptance/multilateration")
        for _ in range(1000):
            n = rng.integer(3, 8)
            angles = [2 * math.pi * (i + rng.uniform(-0.25, 0.25)) / n for i in range(n)]
            radius = rng.uniform(5.0, 30.0)
            anchors = [Position2D(radius * math.cos(a), radius * math.sin(a)) for a in angles]
            target = Position2D(rng.uniform(-0.4, 0.4) * radius, rng.uniform(-0.4, 0.4) * radius)
            result = multilaterate([(a, a.distance_to(target)) for a in anchors])
            assert result.position.distance_to(target) < 1e-6

    def test_los_calibration(self):
        trace = run_scenario(scenario("office_los"))
        assert len(trace) >= 2000
        assert median_ate(rf_only(trace), trace) == pytest.approx(0.2, abs=0.05)

    def test_nlos_calibration(self):
        trace = run_scenario(scenario("office_nlos"))
        assert all(not e.los for s in trace.rf for e in s.entries)
        summary = ate(rf_only(trace), trace.gt)
        assert summary.median == pytest.approx(1.0, abs=0.2)
        assert summary.max >= 2.0


class TestAnchorSelection:

    def test_best_subset_beats_mixed(self, practical, selector):
        trace = practical["held_out"]
        best, mixed = [], []
        for sample, truth in zip(trace.rf, trace.gt.samples):
            labels = label_best_anchors(sample, trace.layout, truth.value)
            chosen = [i for i, flag in zip(trace.layout.ids, labels) if flag]
            best.append(multilaterate(ranges_for(sample, trace.layout, chosen)).position.distance_to(truth.value))
            mixed.append(localize_epoch(sample, trace.layout)[0].position.distance_to(truth.value))
        assert np.median(best) < np.median(mixed)
        assert median_ate(rf_only(trace, selector), trace) <= 1.2 * np.median(best)

    def test_selector_accuracy_on_mixed_scenario(self, practical, selector):
        report = selector_accuracy(selector, build_selector_dataset([practical["held_out"]]))
        assert report["mean_accuracy"] >= 0.85

    def test_selected_power_anticorrelates_with_error(self, practical, selector):
        coefficient, _ = power_error_correlation([practical["held_out"]], selector)
        assert coefficient <= -0.4


class TestFusion:

    def test_beats_every_baseline(self, practical, selector, fusion_model):
        trace = practical["held_out"]
        fused = median_ate(predict_trace(fusion_model, trace), trace)
        baselines = [
            median_ate(rf_only(trace, selector), trace),
            median_ate(vo_only(trace), trace),
            median_ate(ekf_fuse(trace, selector=selector), trace),
        ]
        assert fused <= 0.8 * min(baselines)

    def test_ablations_are_worse(self, practical, selector, fusion_model):
        trace = practical["held_out"]
        full = median_ate(predict_trace(fusion_model, trace), trace)
        for flags in ({"no_cross_attention": True}, {"no_anchor_selection": True}):
            ablated = train_fusion(practical["train"], TrainConfig(**flags), selector).model
            assert full <= median_ate(predict_trace(ablated, trace), trace)

    def test_forty_percent_of_windows(self, practical, selector, fusion_model):
        trace = practical["held_out"]
        full = median_ate(predict_trace(fusion_model, trace), trace)
        reduced = train_fusion(practical["train"], TrainConfig(train_fraction=0.4), selector).model
        assert median_ate(predict_trace(reduced, trace), trace) <= 1.25 * full

    def test_vo_attention_drops_in_dim_zone(self, practical, fusion_model):
        trace = practical["held_out"]
        report = attention_report(fusion_model, trace)
        zone = trace.environment.dim_zones[0].rect
        truth = {s.t: s.value for s in trace.gt.samples}
        inside = np.array([zone.contains(truth[t]) for t in report["t"]])
        assert inside.any() and (~inside).any()
        assert report["vo_mask"][inside].mean() < report["vo_mask"][~inside].mean()

    def test_noise_free_is_learnable(self):
        base = scenario("office_practical")
        config = replace(base, noise=base.noise.zero_noise())
        traces = [run_scenario(config)]
        result = train_fusion(traces, TrainConfig(no_anchor_selection=True, epochs=80))
        assert math.sqrt(np.mean(window_ate(result.model, result.test).errors ** 2)) < 0.05


class TestDrift:

    def test_fused_error_does_not_grow(self, selector):
        base = scenario("drift")
        model = train_fusion([run_scenario(base.with_seed(s)) for s in (5, 6)], TrainConfig(), selector).model
        trace = run_scenario(base.with_seed(31))

        fused = ate(predict_trace(model, trace), trace.gt)
        assert np.median(fused.window(0.75, 1.0)) <= 1.5 * np.median(fused.window(0.0, 0.25))

        drifting = ate(vo_only(trace), trace.gt)
        assert np.median(drifting.window(0.75, 1.0)) >= 2.0 * np.median(drifting.window(0.0, 0.25))


class TestGeneralization:

    def test_blackbox_degrades_more(self, practical, selector):
        config = TrainConfig(epochs=20)
        fusion = train_fusion(practical["train"], config, selector).model
        blackbox = train_blackbox(practical["train"], config).model
        seen = practical["held_out"]
        unseen = run_scenario(scenario("home_unseen"))

        def degradation(model):
            return (median_ate(predict_trace(model, unseen), unseen)
                    / median_ate(predict_trace(model, seen), seen))

        assert degradation(blackbox) >= 1.5 * degradation(fusion)


class TestMultiUser:

    def test_pair_error_bounded_by_individual_errors(self, fusion_model):
        traces = simulate_multi_agent(scenario("office_practical").with_seed(21), 2)
        estimates = [predict_trace(fusion_model, trace) for trace in traces]
        rel = relative_errors(estimates[0], estimates[1], traces[0].gt, traces[1].gt)
        bound = sum(median_ate(est, trace) for est, trace in zip(estimates, traces))
        assert rel.median_distance <= bound

    def test_three_agents(self, fusion_model):
        traces = simulate_multi_agent(scenario("office_practical").with_seed(21), 3)
        table, overall = multi_user_report([predict_trace(fusion_model, t) for t in traces],
                                           [t.gt for t in traces])
        assert overall["pairs"] == 3
        assert np.isfinite(table[["mean_distance_m", "mean_angle_deg"]].to_numpy()).all()
