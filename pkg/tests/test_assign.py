import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autoassign.assign import (AssignConfig, CenterPrior, DensePredictions, GroundTruth,
                               WeightReport, baseline_assign, center_weight, confidence_weight,
                               evaluate_loss, export_weight_report, joint_confidence,
                               negative_weights, positive_weights, positive_weights_log)
from autoassign.checks import random_loss_instance
from autoassign.diffcore import DiffArray, Tape, ops
from autoassign.geometry import Box, PyramidLevelSpec, make_locations


def preds_from(x, tape=None):
    if tape is not None:
        x = [tape.variable(v) for v in x]
    return DensePredictions(x[0], x[1], ops.exp(x[2]))


# ----------------------------------------------------------- center prior

def test_center_weight_peaks_at_mu():
    prior = CenterPrior(2, "category")
    prior.mu.value[1] = [0.5, -0.25]
    g = center_weight(np.array([[0.5, -0.25], [1.5, -0.25]]), 1, prior).data
    assert g[0] == pytest.approx(1.0)
    assert g[1] == pytest.approx(math.exp(-0.5))


def test_center_weight_rejects_bad_category():
    with pytest.raises(ValueError):
        center_weight(np.zeros((1, 2)), 3, CenterPrior(2))


def test_prior_none_is_uniform():
    g = center_weight(np.array([[3.0, 4.0]]), 0, CenterPrior(1, "none")).data
    assert np.all(g == 1.0)


def test_sigma_is_clamped():
    prior = CenterPrior(1, sigma_floor=1e-3)
    prior.sigma.value[...] = -1.0
    prior.clamp_()
    assert np.all(prior.sigma.value == 1e-3)


def test_shared_prior_with_one_category_equals_category_mode():
    locations, gts, inputs = random_loss_instance(3, num_classes=1)
    cfg = AssignConfig()
    a = evaluate_loss(preds_from(inputs), gts, locations, cfg, prior=CenterPrior(1, "shared"))
    b = evaluate_loss(preds_from(inputs), gts, locations, cfg, prior=CenterPrior(1, "category"))
    assert a.total.item() == b.total.item()


def test_fixed_prior_gets_no_gradient():
    locations, gts, inputs = random_loss_instance(1)
    prior = CenterPrior(2, "fixed")
    tape = Tape()
    br = evaluate_loss(preds_from(inputs, tape), gts, locations, AssignConfig(),
                       prior=prior.bind(tape))
    tape.backward(br.total)
    assert np.all(prior.mu.grad == 0) and np.all(prior.sigma.grad == 0)


def test_category_prior_gets_gradient():
    locations, gts, inputs = random_loss_instance(1)
    prior = CenterPrior(2, "category")
    tape = Tape()
    br = evaluate_loss(preds_from(inputs, tape), gts, locations, AssignConfig(),
                       prior=prior.bind(tape))
    tape.backward(br.total)
    assert np.any(prior.mu.grad != 0)


# ----------------------------------------------------------- weights

def test_confidence_weight_temperature():
    assert confidence_weight(1.0, 1.0).item() == pytest.approx(math.e)
    assert confidence_weight(1.0, 1 / 3).item() == pytest.approx(math.e ** 3)


def test_positive_weights_empty_set_rejected():
    with pytest.raises(ValueError):
        positive_weights(np.zeros(0), np.zeros(0))


def test_positive_weights_log_matches_direct_form():
    rng = np.random.default_rng(0)
    c, g = np.exp(rng.normal(size=6)), np.exp(rng.normal(size=6))
    np.testing.assert_allclose(positive_weights_log(np.log(c), np.log(g)).data,
                               positive_weights(c, g).data, rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=40))
def test_positive_weights_sum_to_one(logits):
    w = positive_weights_log(np.array(logits)).data
    assert abs(w.sum() - 1.0) < 1e-6
    assert np.all(w >= 0)


def test_negative_weight_worked_example():
    np.testing.assert_allclose(negative_weights([0.0, 0.5, 0.9]), [1.0, 8 / 9, 0.0], atol=1e-12)


def test_negative_weights_all_tied_are_zero():
    assert np.all(negative_weights([0.4, 0.4]) == 0.0)


def test_negative_weights_perfect_iou_is_finite():
    w = negative_weights([1.0, 0.2])
    assert np.all(np.isfinite(w)) and w[0] == 0.0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_negative_weights_range_and_argmax(ious):
    w = negative_weights(ious)
    assert np.all((w >= 0) & (w <= 1))
    assert w[int(np.argmax(ious))] == 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 0.99), min_size=2, max_size=20, unique=True))
def test_negative_weights_decrease_with_iou(ious):
    ious = np.sort(np.array(ious))
    assert np.all(np.diff(negative_weights(ious)) <= 0)


def test_positive_weight_grows_with_confidence():
    w = positive_weights(confidence_weight(np.array([0.1, 0.5, 0.9]), 1 / 3), np.ones(3)).data
    assert w[0] < w[1] < w[2]


# ----------------------------------------------------------- full loss

def single_location_case():
    locations = make_locations([PyramidLevelSpec(4, 1, 1)])        # one point at (2, 2)
    gts = GroundTruth(np.array([[0.0, 0.0, 3.0, 3.0]]), np.array([0]))
    preds = DensePredictions(DiffArray([[0.0]]), DiffArray([[0.0]]),
                             DiffArray([[2.0, 2.0, 1.0, 0.4]]))
    return locations, gts, preds


def test_closed_form_single_location():
    locations, gts, preds = single_location_case()
    br = evaluate_loss(preds, gts, locations, AssignConfig(lam=5.0, focal_alpha=0.25),
                       prior=CenterPrior(1))
    expected = 0.25 * (1.0 + math.log(4.0))     # -0.25 * log(0.25 * exp(-5 * 0.2))
    assert abs(br.total.item() - expected) < 1e-9
    assert round(br.total.item(), 5) == 0.59657
    assert br.max_iou[0] == pytest.approx(0.8)
    assert br.negative.item() == 0.0


def test_total_is_sum_of_terms():
    locations, gts, inputs = random_loss_instance(4)
    br = evaluate_loss(preds_from(inputs), gts, locations, AssignConfig(), prior=CenterPrior(2))
    assert br.total.item() == pytest.approx(br.positive.item() + br.negative.item(), rel=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_invariants_on_random_instances(seed):
    locations, gts, inputs = random_loss_instance(seed)
    br = evaluate_loss(preds_from(inputs), gts, locations, AssignConfig(), prior=CenterPrior(2))
    inside = np.zeros(len(locations), dtype=bool)
    for ob in br.objects:
        assert abs(ob.w_pos.sum() - 1.0) < 1e-6
        inside[ob.indices] = True
        best = ob.indices[int(np.argmax(br.max_iou[ob.indices]))]
        assert br.neg_weight[best] == 0.0
    assert np.all((br.neg_weight >= 0) & (br.neg_weight <= 1))
    assert np.all(br.neg_weight[~inside] == 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_regression_gradient_ignores_negative_term(seed):
    locations, gts, inputs = random_loss_instance(seed)

    def grads(use_negative):
        tape = Tape()
        xs = [tape.variable(v) for v in inputs]
        br = evaluate_loss(preds_from(xs), gts, locations, AssignConfig(),
                           prior=CenterPrior(2).bind(tape))
        tape.backward(br.total if use_negative else br.positive)
        return tape.grad(xs[2])

    assert np.array_equal(grads(True), grads(False))


@pytest.mark.parametrize("mode,pinned", [("cls-only", "loc"), ("loc-only", "cls")])
def test_confidence_modes_equal_full_with_factor_pinned(mode, pinned):
    locations, gts, inputs = random_loss_instance(2)

    def pin(cls_conf, loc_conf, _mode):
        ones = np.ones(cls_conf.shape)
        if pinned == "loc":
            return joint_confidence(cls_conf, ones, "full")
        return joint_confidence(ones, loc_conf, "full")

    ablated = evaluate_loss(preds_from(inputs), gts, locations, AssignConfig(confidence_mode=mode),
                            prior=CenterPrior(2))
    full = evaluate_loss(preds_from(inputs), gts, locations, AssignConfig(), prior=CenterPrior(2),
                         joint=pin)
    assert ablated.total.item() == full.total.item()


@pytest.mark.parametrize("mode", ["implicit", "explicit", "none"])
def test_objectness_modes_are_finite(mode):
    locations, gts, inputs = random_loss_instance(5)
    br = evaluate_loss(preds_from(inputs), gts, locations, AssignConfig(objectness_mode=mode),
                       prior=CenterPrior(2))
    assert np.isfinite(br.total.item())
    assert (br.objectness is not None) == (mode == "explicit")


def test_object_without_locations_is_dropped():
    locations = make_locations([PyramidLevelSpec(8, 2, 2)])
    gts = GroundTruth(np.array([[0.5, 0.5, 2.0, 2.0], [1.0, 1.0, 14.0, 14.0]]), np.array([0, 0]))
    n = len(locations)
    preds = DensePredictions(DiffArray(np.zeros((n, 1))), DiffArray(np.zeros((n, 1))),
                             DiffArray(np.full((n, 4), 4.0)))
    br = evaluate_loss(preds, gts, locations, AssignConfig(), prior=CenterPrior(1))
    assert br.n_dropped == 1 and len(br.objects) == 1


def test_non_finite_loss_names_the_term():
    locations, gts, preds = single_location_case()
    bad = DensePredictions(DiffArray([[np.nan]]), preds.obj_logits, preds.ltrb)
    with pytest.raises(FloatingPointError, match="positive|negative"):
        evaluate_loss(bad, gts, locations, AssignConfig(), prior=CenterPrior(1))


# ----------------------------------------------------------- baselines

def big_box_case():
    locations = make_locations([PyramidLevelSpec(4, 16, 16), PyramidLevelSpec(8, 8, 8)])
    gts = GroundTruth(np.array([[4.0, 4.0, 60.0, 60.0]]), np.array([0]))
    return locations, gts


def test_uniform_inbox_weights():
    locations, gts = big_box_case()
    fa = baseline_assign("uniform-inbox", locations, gts, 1)
    _, idx, w = fa.positives[0]
    assert np.allclose(w, 1.0 / len(idx))
    assert np.all(fa.neg_weight == 1.0)
    one = baseline_assign("uniform-inbox", locations, gts, 1, uniform_weight="one")
    assert np.all(one.positives[0][2] == 1.0)


def test_center_sampling_radius():
    locations, gts = big_box_case()
    fa = baseline_assign("center-sampling", locations, gts, 1, radius=1.5)
    _, idx, _ = fa.positives[0]
    d = np.abs(locations.xy[idx] - 32.0) / locations.strides[idx][:, None]
    assert np.all(d <= 1.5)
    assert np.all(fa.neg_weight[idx, 0] == 0.0)


def test_scale_ranges_restrict_levels():
    locations, gts = big_box_case()
    fa = baseline_assign("center-sampling+scale-ranges", locations, gts, 1)
    _, idx, _ = fa.positives[0]
    reach = np.max(np.abs(np.concatenate([locations.xy[idx] - 4.0, 60.0 - locations.xy[idx]],
                                         axis=1)), axis=1)
    lvl = locations.level[idx]
    assert np.all(reach[lvl == 0] <= 32.0) and np.all(reach[lvl == 1] > 32.0)
    plain = baseline_assign("center-sampling", locations, gts, 1).positives[0][1]
    assert len(idx) < len(plain)


def test_unknown_strategy_rejected():
    locations, gts = big_box_case()
    with pytest.raises(ValueError):
        baseline_assign("atss", locations, gts, 1)


# ----------------------------------------------------------- reports

def test_report_round_trip(tmp_path):
    locations, gts, inputs = random_loss_instance(6)
    br = evaluate_loss(preds_from(inputs), gts, locations, AssignConfig(), prior=CenterPrior(2))
    rep = export_weight_report(br, locations)
    rep.write_csv(tmp_path)
    back = WeightReport.read_csv(tmp_path, locations)
    assert len(back.objects) == len(rep.objects)
    for a, b in zip(rep.objects, back.objects):
        for name in ("indices", "w_pos", "G", "C", "P_pos"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
    assert np.array_equal(rep.neg_weight, back.neg_weight)
    assert np.array_equal(rep.max_iou, back.max_iou)


def test_single_object_report_has_one_map():
    locations, gts, preds = single_location_case()
    br = evaluate_loss(preds, gts, locations, AssignConfig(), prior=CenterPrior(1))
    assert len(export_weight_report(br, locations).objects) == 1
