"""Candidate enumeration, per-sample search, scoring, composition."""

import numpy as np
import pytest

from robustharness import evaluator as ev
from robustharness import transforms as tf
from robustharness.classifier import (
    ClassifierEndpoint,
    Prediction,
    fit_centroid,
    open_connection,
)
from robustharness.dataset import DatasetManifest, LabeledSample, generate_synthetic
from robustharness.errors import ConfigError, DatasetError, TransportError
from robustharness.imaging import RandomStream, constant_image, encode_ppm


def prop(kinds, budget, property_id="p", seed=None, overrides=None):
    specs = []
    for kind in kinds:
        s = tf.default_spec(kind)
        if overrides and kind in overrides:
            s = tf.override_domain(s, overrides[kind])
        specs.append(s)
    return ev.PropertySpec(property_id, tuple(specs), budget, seed)


def sample_on_disk(tmp_path, value, label, sample_id="s0", size=4):
    path = tmp_path / f"{sample_id}.ppm"
    path.write_bytes(encode_ppm(constant_image(size, size, value)))
    return LabeledSample(sample_id, path, label, "test")


def tiny_dataset(samples, num_classes=2, flip=()):
    return DatasetManifest(
        num_classes=num_classes,
        class_names=[f"class_{k}" for k in range(num_classes)],
        flip_invariant_classes=frozenset(flip),
        samples=samples,
    )


class ScriptedOracle:
    """Duck-typed endpoint: classifies by mean intensity against 0.5."""

    input_width = 0
    input_height = 0

    def predict(self, images):
        out = []
        for img in images:
            m = float(img.astype(np.float64).mean())
            scores = [-abs(m - 0.25), -abs(m - 0.75)]
            label = 0 if scores[0] >= scores[1] else 1
            out.append(Prediction(label, scores))
        return out


# -- enumeration ------------------------------------------------------------


def collect(spec, sample_id="s", seed=0, feed=None):
    gen = ev.enumerate_candidates(spec, sample_id, seed)
    out = []
    try:
        cand = next(gen)
        while True:
            out.append(cand)
            cand = gen.send(feed(cand) if feed else 0.0)
    except StopIteration:
        return out


def test_grid_identity_first_then_linspace():
    spec = prop(["rotate"], ev.SearchBudget("grid", grid_steps=3))
    cands = collect(spec)
    angles = [c.thetas[0]["angle"] for c in cands]
    assert angles == [0.0, -15.0, 0.0, 15.0]
    assert [c.index for c in cands] == [0, 1, 2, 3]
    assert all(c.theta_draws == 0 for c in cands)


def test_grid_two_dim_product_counts():
    spec = prop(["translate"], ev.SearchBudget("grid", grid_steps=5))
    cands = collect(spec)
    assert len(cands) == 1 + 25
    # last dim advances fastest
    assert cands[1].thetas[0] == {"dx": -0.1, "dy": -0.1}
    assert cands[2].thetas[0]["dx"] == -0.1
    assert cands[2].thetas[0]["dy"] == -0.05


def test_grid_composition_product_order():
    spec = prop(["rotate", "brightness"], ev.SearchBudget("grid", grid_steps=3))
    cands = collect(spec)
    assert len(cands) == 1 + 9
    assert cands[0].thetas == [{"angle": 0.0}, {"factor": 1.0}]
    # brightness (second transform) is the fast axis
    assert cands[1].thetas == [{"angle": -15.0}, {"factor": 0.5}]
    assert cands[2].thetas == [{"angle": -15.0}, {"factor": 1.0}]


def test_enumeration_deterministic():
    spec = prop(["gaussian_noise"], ev.SearchBudget("random", random_candidates=6), seed=4)
    a = [c.thetas for c in collect(spec, seed=4)]
    b = [c.thetas for c in collect(spec, seed=4)]
    assert a == b


def test_random_thetas_match_stream_contract():
    spec = prop(["brightness"], ev.SearchBudget("random", random_candidates=3), property_id="rb")
    cands = collect(spec, sample_id="sX", seed=9)
    # index 0 is the identity; random candidates start at index 1
    assert cands[0].thetas[0]["factor"] == 1.0
    for c in cands[1:]:
        u = RandomStream.derive(9, "sX", "rb", c.index).next_uniform()
        assert c.thetas[0]["factor"] == 0.5 + u * 1.0
        assert c.theta_draws == 1


def test_no_identity_candidate_for_identity_free_domain():
    spec = prop(["color_depth"], ev.SearchBudget("grid", grid_steps=5))
    cands = collect(spec)
    assert [c.thetas[0]["bits"] for c in cands] == [4, 5, 6, 7, 8]
    assert cands[0].index == 0


def test_refinement_moves_toward_best():
    spec = prop(
        ["brightness"],
        ev.SearchBudget("grid_then_refine", grid_steps=3, refine_rounds=4),
    )
    # feed scores that make factor=1.5 the weakest point
    cands = collect(spec, feed=lambda c: -c.thetas[0]["factor"])
    assert len(cands) == 1 + 3 + 4
    for c in cands[4:]:
        assert c.theta_draws == 1
        # perturbations stay within 1/10 of the range around the best point
        assert c.thetas[0]["factor"] >= 1.5 - 0.1 - 1e-12
        assert c.thetas[0]["factor"] <= 1.5


def test_grid_rejected_above_dim_limit():
    spec = prop(["sticker"], ev.SearchBudget("grid", grid_steps=3))
    with pytest.raises(ConfigError, match="random"):
        ev.validate_property_spec(spec)


def test_budget_validation():
    with pytest.raises(ConfigError, match="grid_steps"):
        ev.validate_property_spec(prop(["rotate"], ev.SearchBudget("grid", grid_steps=0)))
    with pytest.raises(ConfigError, match="random_candidates"):
        ev.validate_property_spec(prop(["rotate"], ev.SearchBudget("random", random_candidates=0)))
    with pytest.raises(ConfigError, match="strategy"):
        ev.validate_property_spec(prop(["rotate"], ev.SearchBudget("swarm")))


# -- per-sample search ------------------------------------------------------


def test_threshold_brightness_counterexample(tmp_path):
    # mean 0.45 crosses the 0.5 boundary at factor 1.2 on an 11-point grid;
    # sequence: identity, 0.5, 0.6, ..., 1.1, 1.2 -> candidate index 8
    sample = sample_on_disk(tmp_path, 0.45, label=0)
    spec = prop(["brightness"], ev.SearchBudget("grid", grid_steps=11))
    verdict = ev.evaluate_sample(sample, spec, ScriptedOracle())
    assert verdict.correct
    assert verdict.robust is False
    assert verdict.counterexample["candidate_index"] == 8
    assert verdict.counterexample["thetas"][0]["factor"] == pytest.approx(1.2, abs=1e-9)
    assert verdict.counterexample["predicted_label"] == 1
    assert verdict.candidates_evaluated == 9


def test_misclassified_original_not_applicable(tmp_path):
    sample = sample_on_disk(tmp_path, 0.6, label=0)  # oracle says 1
    spec = prop(["brightness"], ev.SearchBudget("grid", grid_steps=3))
    verdict = ev.evaluate_sample(sample, spec, ScriptedOracle())
    assert not verdict.correct
    assert verdict.robust is None
    assert verdict.counterexample is None
    assert verdict.candidates_evaluated == 0


def test_constant_classifier_always_robust(tmp_path):
    sample = sample_on_disk(tmp_path, 0.3, label=1)
    endpoint = ClassifierEndpoint(kind="builtin_constant", num_classes=2, label=1)
    spec = prop(["rotate", "gaussian_noise"], ev.SearchBudget("grid", grid_steps=3))
    verdict = ev.evaluate_sample(sample, spec, open_connection(endpoint))
    assert verdict.robust is True
    assert verdict.candidates_evaluated == 1 + 9


class HalfBrightOracle:
    """Label 0 iff the left half is brighter: flip-sensitive on purpose."""

    input_width = 0
    input_height = 0

    def predict(self, images):
        out = []
        for img in images:
            half = img.shape[1] // 2
            left = float(img[:, :half].mean())
            right = float(img[:, half:].mean())
            scores = [left - right, right - left]
            out.append(Prediction(0 if left >= right else 1, scores))
        return out


def lopsided_sample(tmp_path):
    img = np.zeros((4, 4, 3), dtype=np.float32)
    img[:, :2] = 0.9
    path = tmp_path / "lop.ppm"
    path.write_bytes(encode_ppm(img))
    return LabeledSample("lop", path, 0, "test")


def test_flip_skipped_for_non_invariant_class(tmp_path):
    sample = lopsided_sample(tmp_path)
    spec = prop(["flip"], ev.SearchBudget("grid", grid_steps=2))
    verdict = ev.evaluate_sample(
        sample, spec, HalfBrightOracle(), flip_invariant_classes=frozenset()
    )
    assert verdict.robust is True  # flip treated as identity


def test_flip_applied_for_invariant_class(tmp_path):
    sample = lopsided_sample(tmp_path)
    spec = prop(["flip"], ev.SearchBudget("grid", grid_steps=2))
    verdict = ev.evaluate_sample(
        sample, spec, HalfBrightOracle(), flip_invariant_classes=frozenset({0})
    )
    assert verdict.robust is False
    assert verdict.counterexample["thetas"][0] == {"apply": 1}


def test_identity_candidate_never_falsifies(tmp_path):
    # correct original implies the identity candidate predicts identically
    sample = sample_on_disk(tmp_path, 0.3, label=0)
    spec = prop(["rotate"], ev.SearchBudget("grid", grid_steps=2))
    verdict = ev.evaluate_sample(sample, spec, ScriptedOracle())
    assert verdict.correct
    if verdict.robust is False:
        assert verdict.counterexample["candidate_index"] != 0


# -- dataset-level scoring --------------------------------------------------


def test_property_scores(tmp_path):
    # class-0 samples at 0.45 break under bright factors; 0.2 stays safe;
    # 0.6 is misclassified outright
    samples = [
        sample_on_disk(tmp_path, 0.45, 0, "fragile"),
        sample_on_disk(tmp_path, 0.2, 0, "solid"),
        sample_on_disk(tmp_path, 0.6, 0, "wrong"),
    ]
    ds = tiny_dataset(samples)
    spec = prop(["brightness"], ev.SearchBudget("grid", grid_steps=11))
    result = ev.evaluate_property(ds, spec, ScriptedOracle())
    assert result.accuracy == pytest.approx(2 / 3)
    assert result.robustness_score == pytest.approx(0.5)
    assert result.correct_count == 2
    assert result.robust_count == 1
    assert result.non_robust_count == 1
    by_id = {v.sample_id: v for v in result.verdicts}
    assert by_id["wrong"].robust is None
    assert [v.sample_id for v in result.verdicts] == ["fragile", "solid", "wrong"]


def test_score_undefined_when_nothing_correct(tmp_path):
    ds = tiny_dataset([sample_on_disk(tmp_path, 0.6, 0, "w1")])
    spec = prop(["brightness"], ev.SearchBudget("grid", grid_steps=3))
    result = ev.evaluate_property(ds, spec, ScriptedOracle())
    assert result.robustness_score is None
    assert result.accuracy == 0.0


def test_empty_split_rejected(tmp_path):
    ds = tiny_dataset([sample_on_disk(tmp_path, 0.2, 0, "s")])
    spec = prop(["brightness"], ev.SearchBudget("grid", grid_steps=3))
    with pytest.raises(DatasetError, match="train"):
        ev.evaluate_property(ds, spec, ScriptedOracle(), split="train")


def test_evaluate_property_deterministic(tmp_path):
    ds = generate_synthetic(tmp_path, 2, 4, 8, 8, seed=2)
    endpoint = ClassifierEndpoint(
        kind="builtin_centroid", num_classes=2, centroids=fit_centroid(ds)
    )
    spec = prop(
        ["gaussian_noise"], ev.SearchBudget("random", random_candidates=8), seed=5
    )
    a = ev.evaluate_property(ds, spec, endpoint, run_seed=1)
    b = ev.evaluate_property(ds, spec, endpoint, run_seed=1)
    assert a == b


def test_parallel_workers_match_serial(tmp_path):
    ds = generate_synthetic(tmp_path, 2, 5, 8, 8, seed=7)
    endpoint = ClassifierEndpoint(kind="builtin_threshold", num_classes=2)
    spec = prop(
        ["uniform_noise"], ev.SearchBudget("random", random_candidates=6), seed=3
    )
    serial = ev.evaluate_property(ds, spec, endpoint, workers=1)
    parallel = ev.evaluate_property(ds, spec, endpoint, workers=3)
    assert serial == parallel


class DyingOracle(ScriptedOracle):
    """Raises a transport error after a fixed number of predict calls."""

    def __init__(self, calls_before_death):
        self.remaining = calls_before_death

    def predict(self, images):
        if self.remaining <= 0:
            raise TransportError("endpoint died")
        self.remaining -= 1
        return super().predict(images)


def test_transport_error_carries_partial_verdicts(tmp_path):
    samples = [sample_on_disk(tmp_path, 0.2, 0, f"s{i}") for i in range(4)]
    ds = tiny_dataset(samples)
    spec = prop(["rotate"], ev.SearchBudget("grid", grid_steps=3))
    # each robust sample costs 5 calls: original + identity + 3 grid points
    oracle = DyingOracle(calls_before_death=10)
    with pytest.raises(TransportError) as exc:
        ev.evaluate_property(ds, spec, oracle)
    partial = exc.value.partial_verdicts
    assert [v.sample_id for v in partial] == ["s0", "s1"]
    assert all(v.robust for v in partial)


# -- composition ------------------------------------------------------------


def test_compose_specs_concatenates():
    a = prop(["rotate"], ev.SearchBudget("grid", grid_steps=3), property_id="rot")
    b = prop(["brightness"], ev.SearchBudget("grid", grid_steps=5), property_id="bri")
    c = ev.compose_specs(a, b)
    assert c.property_id == "rot+bri"
    assert [t.kind for t in c.transforms] == ["rotate", "brightness"]
    assert c.budget == ev.SearchBudget("grid", grid_steps=3)


def test_compose_falls_back_to_random_over_dim_limit():
    a = prop(["translate"], ev.SearchBudget("grid", grid_steps=3), property_id="t")
    b = prop(["translate"], ev.SearchBudget("grid", grid_steps=3), property_id="u")
    c = ev.compose_specs(a, b)
    assert c.budget.strategy == "random"


def result_with_score(pid, score):
    return ev.PropertyResult(pid, 1.0, score, [])


def test_combination_delta_paper_values():
    combined = result_with_score("translate+scale", 0.855)
    parts = [result_with_score("translate", 0.947), result_with_score("scale", 0.93)]
    assert round(ev.combination_delta(combined, parts), 1) == -7.5
    combined = result_with_score("rotate+blur", 0.935)
    parts = [result_with_score("rotate", 0.961), result_with_score("blur", 0.969)]
    assert round(ev.combination_delta(combined, parts), 1) == -3.4


def test_combination_delta_zero_and_undefined():
    c = result_with_score("a+b", 0.9)
    parts = [result_with_score("a", 0.95), result_with_score("b", 0.9)]
    assert ev.combination_delta(c, parts) == 0.0
    assert ev.combination_delta(result_with_score("a+b", None), parts) is None
    assert ev.combination_delta(c, [result_with_score("a", None)]) is None


def test_nested_grid_dominance_small(tmp_path):
    # combined grid embeds each part's grid at the other's identity value,
    # so the combined robust set cannot exceed either part's
    ds = generate_synthetic(tmp_path, 2, 6, 8, 8, seed=11)
    endpoint = ClassifierEndpoint(kind="builtin_threshold", num_classes=2)
    ov = {"brightness": {"factor": {"low": 0.5, "high": 1.5}}}
    part_a = prop(["contrast"], ev.SearchBudget("grid", grid_steps=3), property_id="a")
    part_b = prop(["brightness"], ev.SearchBudget("grid", grid_steps=3), property_id="b", overrides=ov)
    combined = ev.compose_specs(part_a, part_b)
    ra = ev.evaluate_property(ds, part_a, endpoint)
    rb = ev.evaluate_property(ds, part_b, endpoint)
    rc = ev.evaluate_property(ds, combined, endpoint)
    assert rc.robustness_score <= min(ra.robustness_score, rb.robustness_score) + 1e-12
