import numpy as np
import pytest

from autoassign.assign import AssignConfig, CenterPrior
from autoassign.toydet import (CategorySpec, Detection, DetectorModel, ModelConfig,
                               SceneGenConfig, TrainConfig, evaluate_ap,
                               generate_dataset, generate_scene, load_checkpoint, load_dataset,
                               nms, save_checkpoint, save_dataset, train)
from autoassign.toydet.evaluate import average_precision
from autoassign.toydet.model import MAX_PARAMETERS


def rect_config(**kw):
    return SceneGenConfig(categories=[CategorySpec("filled-rect", 14, 28)], **kw)


# ----------------------------------------------------------- scenes

def test_scene_is_reproducible():
    cfg = SceneGenConfig(categories=[CategorySpec("ellipse"), CategorySpec("bottom-bar")])
    a, b = generate_scene(cfg, 42), generate_scene(cfg, 42)
    assert a.image.tobytes() == b.image.tobytes()
    assert a.boxes.tobytes() == b.boxes.tobytes()
    assert not np.array_equal(a.image, generate_scene(cfg, 43).image)


def test_boxes_inside_image():
    for sc in generate_dataset(rect_config(objects_max=4), range(30)):
        assert np.all(sc.boxes[:, :2] > 0) and np.all(sc.boxes[:, 2:] < 64)


def test_empty_scene_is_valid():
    sc = generate_scene(rect_config(objects_min=0, objects_max=0), 1)
    assert sc.boxes.shape == (0, 4) and sc.image.shape == (1, 64, 64)


@pytest.mark.parametrize("offset", [0.0, 0.25])
def test_evidence_sits_at_configured_offset(offset):
    spec = CategorySpec("bottom-bar", 30, 40, offset_y=offset)
    cfg = SceneGenConfig(categories=[spec], objects_min=1, objects_max=1, noise_std=0.0)
    sc = generate_scene(cfg, 3)
    x1, y1, x2, y2 = sc.boxes[0]
    ys, xs = np.nonzero(sc.image[0] > 0.5)
    cy = ys.mean() + 0.5
    assert (cy - 0.5 * (y1 + y2)) / (y2 - y1) == pytest.approx(offset, abs=0.05)
    # the box leaves background around the evidence
    assert (y2 - y1) * (x2 - x1) > len(ys)


def test_bad_category_rejected():
    with pytest.raises(ValueError):
        CategorySpec("triangle")
    with pytest.raises(ValueError):
        CategorySpec("bottom-bar", offset_y=0.7)


def test_dataset_round_trip(tmp_path):
    scenes = generate_dataset(rect_config(objects_min=0), range(6))
    save_dataset(scenes, tmp_path)
    back = load_dataset(tmp_path)
    assert len(back) == len(scenes)
    for a, b in zip(scenes, back):
        assert a.image.tobytes() == b.image.tobytes()
        assert np.array_equal(a.boxes, b.boxes) and np.array_equal(a.labels, b.labels)


# ----------------------------------------------------------- model

def test_model_shapes_and_budget():
    m = DetectorModel(3)
    assert m.num_parameters() <= MAX_PARAMETERS
    p = m.forward(np.zeros((1, 64, 64)))[0]
    assert p.cls_logits.shape == (16 * 16 + 8 * 8, 3)
    assert np.all(p.ltrb.data > 0)


def test_forward_is_deterministic():
    m = DetectorModel(2)
    x = np.random.default_rng(0).normal(size=(1, 64, 64))
    assert m.forward(x)[0].cls_logits.data.tobytes() == m.forward(x)[0].cls_logits.data.tobytes()


def test_wrong_image_size_rejected():
    with pytest.raises(ValueError):
        DetectorModel(1).forward(np.zeros((1, 32, 32)))


def test_checkpoint_round_trip(tmp_path):
    m = DetectorModel(2, ModelConfig(seed=3))
    save_checkpoint(m, {"prior.mu": np.ones((2, 2))}, tmp_path)
    state = load_checkpoint(tmp_path)
    m2 = DetectorModel(2, ModelConfig(seed=9))
    m2.load_state(state)
    for a, b in zip(m.params, m2.params):
        assert np.array_equal(a.value, b.value)
    assert np.array_equal(state["prior.mu"], np.ones((2, 2)))


# ----------------------------------------------------------- training

@pytest.fixture(scope="module")
def rect_scenes():
    return generate_dataset(rect_config(), range(100, 160))


def short_run(scenes, strategy="autoassign", prior_mode="category", iters=200, **assign):
    model = DetectorModel(1, ModelConfig(seed=0))
    prior = CenterPrior(1, prior_mode)
    log = train(model, prior, scenes, AssignConfig(**assign),
                TrainConfig(iterations=iters, batch_size=2, strategy=strategy, warmup=20))
    return model, prior, log


def test_positive_term_decreases(rect_scenes):
    _, _, log = short_run(rect_scenes)
    pos = log.column("positive")
    assert pos[-10:].mean() < pos[:10].mean()


def test_fixed_prior_stays_constant(rect_scenes):
    start = CenterPrior(1, "fixed")
    _, _, log = short_run(rect_scenes, prior_mode="fixed", iters=20)
    assert np.all(log.column("mu") == start.mu.value)
    assert np.all(log.column("sigma") == start.sigma.value)


@pytest.mark.parametrize("mode", ["implicit", "explicit", "none"])
def test_objectness_modes_train_finite(rect_scenes, mode):
    log = short_run(rect_scenes, iters=10, objectness_mode=mode)[2]
    assert np.all(np.isfinite(log.column("loss")))


def test_training_is_bit_reproducible(rect_scenes):
    a = short_run(rect_scenes, iters=15)[2].column("loss")
    b = short_run(rect_scenes, iters=15)[2].column("loss")
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("strategy", ["uniform-inbox", "center-sampling",
                                      "center-sampling+scale-ranges"])
def test_fixed_strategies_train(rect_scenes, strategy):
    log = short_run(rect_scenes, strategy=strategy, iters=10)[2]
    assert np.all(np.isfinite(log.column("loss")))


def test_unknown_training_strategy():
    with pytest.raises(ValueError):
        TrainConfig(strategy="atss")


def test_learning_rate_schedule():
    cfg = TrainConfig(iterations=90, lr=0.01, warmup=10)
    assert cfg.lr_at(0) == pytest.approx(0.001)
    assert cfg.lr_at(30) == pytest.approx(0.01)
    assert cfg.lr_at(60) == pytest.approx(0.001)
    assert cfg.lr_at(80) == pytest.approx(0.0001)


# ----------------------------------------------------------- NMS and AP

def det(box, cat=0, score=1.0, sid=0):
    return Detection(np.asarray(box, float), cat, score, sid)


def test_nms_removes_overlap_above_threshold():
    # IoU of these two boxes is 0.7
    a = det([0, 0, 10, 10], score=0.9)
    b = det([0, 0, 10, 7], score=0.8)
    assert len(nms([a, b], 0.6)) == 1
    assert nms([a, b], 0.6)[0].score == 0.9


def test_nms_is_per_category():
    assert len(nms([det([0, 0, 5, 5], 0), det([0, 0, 5, 5], 1)], 0.6)) == 2


def test_nms_empty():
    assert nms([], 0.6) == []


def test_ap_perfect_and_empty():
    gts = [(np.array([[0, 0, 10, 10.0]]), np.array([0]))]
    assert evaluate_ap([det([0, 0, 10, 10])], gts, 1).ap50 == 1.0
    assert evaluate_ap([], gts, 1).ap50 == 0.0


def test_ap_duplicate_detection():
    gts = [(np.array([[0, 0, 10, 10.0]]), np.array([0]))]
    res = evaluate_ap([det([0, 0, 10, 10], score=0.9), det([0, 0, 10, 10], score=0.5)], gts, 1)
    np.testing.assert_allclose(res.precision[0], [1.0, 0.5])
    np.testing.assert_allclose(res.recall[0], [1.0, 1.0])
    assert res.ap50 == 1.0


def test_category_without_ground_truth_excluded():
    gts = [(np.array([[0, 0, 10, 10.0]]), np.array([0]))]
    res = evaluate_ap([det([0, 0, 10, 10])], gts, 2)
    assert res.excluded == [1] and res.ap50 == 1.0


def test_all_point_interpolation():
    # precision envelope 1 up to recall 0.5, then 2/3 up to recall 1
    assert average_precision(np.array([0.5, 0.5, 1.0]), np.array([1.0, 0.5, 2 / 3])) \
        == pytest.approx(0.5 + 0.5 * 2 / 3)
