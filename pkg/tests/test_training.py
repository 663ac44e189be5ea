import math

import numpy as np
import pytest

from core.config import CosineSchedule, MultiStepSchedule, NetworkConfig, SamplerSpec, SyntheticTask, TrainConfig
from core.errors import ShapeError, SpecError
from core.models import OptimizerState, SampleMode
from modules.nn.network import build_network
from modules.temporal.sampler import segment_sample
from modules.training.loss import cross_entropy, softmax
from modules.training.optim import lr_at, sgd_step
from modules.training.tasks import (DOWN, GROWING, LEFT, RIGHT, SHRINKING, UP, FrameOrderTask,
                                    MotionDirectionTask, gen_dataset, make_task, reverse_clip, sample_batch)
from modules.training.trainer import (Trainer, ensemble_predict, evaluate, evaluate_ensemble, history_to_jsonl,
                                      read_history, train, write_history)


# --- tasks -------------------------------------------------------------------

def test_datasets_are_deterministic(small_task):
    (a_train, a_val), (b_train, b_val) = gen_dataset(small_task), gen_dataset(small_task)
    np.testing.assert_array_equal(a_train.clips, b_train.clips)
    np.testing.assert_array_equal(a_val.labels, b_val.labels)
    other, _ = gen_dataset(small_task.model_copy(update={'seed': 4}))
    assert not np.array_equal(other.clips, a_train.clips)


def test_dataset_shapes_and_balanced_labels(small_task):
    train_set, val_set = gen_dataset(small_task)
    assert train_set.clips.shape == (64, 8, 1, 8, 8)
    assert train_set.clips.dtype == np.float32
    assert np.bincount(train_set.labels).tolist() == [32, 32]
    assert len(val_set) == 32


def test_motion_labels_are_balanced():
    dataset = MotionDirectionTask(8, 8, 0.0).generate(40, np.random.default_rng(0))
    assert np.bincount(dataset.labels, minlength=4).tolist() == [10, 10, 10, 10]


def test_reversed_labels():
    motion = MotionDirectionTask(8, 8, 0.0)
    assert [motion.reversed_label(d) for d in (UP, DOWN, LEFT, RIGHT)] == [DOWN, UP, RIGHT, LEFT]
    order = FrameOrderTask(8, 8, 0.0)
    assert order.reversed_label(GROWING) == SHRINKING
    assert order.reversed_label(SHRINKING) == GROWING


def test_shrinking_clip_is_growing_clip_reversed():
    task = FrameOrderTask(8, 16, 0.05)
    growing = task.render(GROWING, np.random.default_rng(9))
    shrinking = task.render(SHRINKING, np.random.default_rng(9))
    np.testing.assert_array_equal(reverse_clip(growing), shrinking)
    # same frames, different order: a frame-set model cannot tell the classes apart
    key = lambda clip: sorted(f.tobytes() for f in clip)  # noqa: E731
    assert key(growing) == key(shrinking)


def _sampled_frames(clip, frames, mode, seed=0):
    picks = segment_sample(SamplerSpec(total_frames=clip.shape[0], num_segments=frames, mode=mode, seed=seed))
    return sorted(clip[p].tobytes() for p in picks)


@pytest.mark.parametrize("mode", list(SampleMode))
def test_segmented_clip_and_reversal_sample_the_same_frames(mode):
    task = FrameOrderTask(16, 16, 0.0, segments=8)
    growing = task.render(GROWING, np.random.default_rng(9))
    shrinking = task.render(SHRINKING, np.random.default_rng(9))
    for seed in range(3):
        assert _sampled_frames(growing, 8, mode, seed) == _sampled_frames(shrinking, 8, mode, seed)


def test_per_frame_sizes_differ_after_center_sampling():
    task = FrameOrderTask(16, 16, 0.0)
    growing = task.render(GROWING, np.random.default_rng(9))
    shrinking = task.render(SHRINKING, np.random.default_rng(9))
    center = SampleMode.EVAL_CENTER
    assert _sampled_frames(growing, 8, center) != _sampled_frames(shrinking, 8, center)


def test_segments_must_split_the_clip(tiny_vsn, small_task, quick_train):
    with pytest.raises(SpecError):
        FrameOrderTask(10, 16, 0.0, segments=4)
    with pytest.raises(ValueError):
        SyntheticTask(clip_length=10, segments=4)
    assert Trainer(tiny_vsn, small_task, quick_train).task.segments == tiny_vsn.frames


def _direction_of(clip):
    frames = clip[:, 0].astype(np.float64)
    grid = np.arange(frames.shape[-1])
    mass = frames.sum(axis=(1, 2))
    cy = (frames.sum(axis=2) * grid).sum(axis=1) / mass
    cx = (frames.sum(axis=1) * grid).sum(axis=1) / mass
    dy, dx = cy[-1] - cy[0], cx[-1] - cx[0]
    if abs(dx) > abs(dy):
        return RIGHT if dx > 0 else LEFT
    return DOWN if dy > 0 else UP


@pytest.mark.parametrize("label", [UP, DOWN, LEFT, RIGHT])
def test_reversed_motion_clip_moves_the_opposite_way(label):
    task = MotionDirectionTask(8, 16, 0.0)
    clip = task.render(label, np.random.default_rng(5))
    assert _direction_of(clip) == label
    assert _direction_of(reverse_clip(clip)) == task.reversed_label(label)


def test_motion_blob_moves_in_its_direction():
    task = MotionDirectionTask(8, 16, 0.0)
    clip = task.render(RIGHT, np.random.default_rng(2))[:, 0]
    cols = np.arange(16)
    centroid = [(frame.sum(axis=0) * cols).sum() / frame.sum() for frame in clip]
    assert centroid[-1] > centroid[0] + 3
    assert clip.max() <= 1.0 + 1e-6


@pytest.mark.parametrize("frame_size, clip_length", [(7, 8), (8, 1)])
def test_task_size_limits(frame_size, clip_length):
    with pytest.raises(SpecError):
        make_task(SyntheticTask(frame_size=frame_size, clip_length=clip_length))


def test_sample_batch_modes(small_task):
    train_set, _ = gen_dataset(small_task)
    x, y = sample_batch(train_set, [0, 5], 4, SampleMode.EVAL_CENTER)
    assert x.shape == (2, 4, 1, 8, 8)
    np.testing.assert_array_equal(x[0], train_set.clips[0, [1, 3, 5, 7]])
    np.testing.assert_array_equal(y, train_set.labels[[0, 5]])
    with pytest.raises(ValueError):
        sample_batch(train_set, [0], 4, SampleMode.TRAIN_RANDOM)
    with pytest.raises(ShapeError):
        sample_batch(train_set, [], 4, SampleMode.EVAL_CENTER)
    a, _ = sample_batch(train_set, [1, 2], 4, SampleMode.TRAIN_RANDOM, np.random.default_rng(1))
    b, _ = sample_batch(train_set, [1, 2], 4, SampleMode.TRAIN_RANDOM, np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)


# --- loss --------------------------------------------------------------------

def test_uniform_logits_give_log_k():
    loss, grad = cross_entropy(np.zeros((3, 5)), np.array([0, 2, 4]))
    assert loss == pytest.approx(math.log(5))
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)


def test_confident_correct_logits_give_zero_loss():
    loss, grad = cross_entropy(np.array([[100.0, 0.0, 0.0]]), np.array([0]))
    assert loss < 1e-40
    np.testing.assert_allclose(grad, 0.0, atol=1e-40)


def test_cross_entropy_gradient_matches_finite_differences(rng):
    logits = rng.standard_normal((4, 3))
    labels = np.array([0, 2, 1, 1])
    _, grad = cross_entropy(logits, labels)
    h = 1e-6
    for i in range(4):
        for j in range(3):
            bumped = logits.copy()
            bumped[i, j] += h
            dropped = logits.copy()
            dropped[i, j] -= h
            numeric = (cross_entropy(bumped, labels)[0] - cross_entropy(dropped, labels)[0]) / (2 * h)
            assert grad[i, j] == pytest.approx(numeric, abs=1e-8)


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ShapeError):
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(ShapeError):
        cross_entropy(np.zeros((2, 3)), np.array([0]))


def test_softmax_rows_sum_to_one(rng):
    np.testing.assert_allclose(softmax(rng.standard_normal((5, 7)) * 50).sum(axis=1), 1.0)


# --- optimizer ---------------------------------------------------------------

def test_plain_sgd_step():
    p = {'w': np.array([1.0])}
    sgd_step(p, {'w': np.array([2.0])}, OptimizerState(), TrainConfig(lr=0.1, momentum=0.0, weight_decay=0.0))
    assert p['w'][0] == pytest.approx(0.8)


def test_zero_gradient_without_decay_is_a_fixed_point():
    p = {'w': np.array([1.5, -2.0])}
    state = OptimizerState()
    for _ in range(3):
        sgd_step(p, {'w': np.zeros(2)}, state, TrainConfig(lr=0.1, momentum=0.9, weight_decay=0.0))
    np.testing.assert_array_equal(p['w'], [1.5, -2.0])
    assert state.step == 3


def test_momentum_accumulates_over_two_steps():
    m = 0.9
    p = {'w': np.array([0.0])}
    state = OptimizerState()
    cfg = TrainConfig(lr=1.0, momentum=m, weight_decay=0.0)
    for _ in range(2):
        sgd_step(p, {'w': np.array([1.0])}, state, cfg)
    assert -p['w'][0] == pytest.approx(2 + m)


def test_weight_decay_respects_exemptions():
    p = {'w': np.array([1.0]), 'b': np.array([1.0]), 'f': np.array([1.0])}
    grads = {k: np.zeros(1) for k in p}
    sgd_step(p, grads, OptimizerState(), TrainConfig(lr=1.0, momentum=0.0, weight_decay=0.1),
             no_decay={'b'}, frozen={'f'})
    assert p['w'][0] == pytest.approx(0.9)
    assert p['b'][0] == 1.0
    assert p['f'][0] == 1.0


def test_sgd_rejects_mismatched_gradient():
    with pytest.raises(ShapeError):
        sgd_step({'w': np.zeros(2)}, {'w': np.zeros(3)}, OptimizerState(), TrainConfig())


def test_multistep_schedule():
    schedule = MultiStepSchedule(milestones=[10, 20], gamma=0.1)
    assert lr_at(schedule, 0, 30, 1.0) == 1.0
    assert lr_at(schedule, 10, 30, 1.0) == pytest.approx(0.1)
    assert lr_at(schedule, 25, 30, 1.0) == pytest.approx(0.01)


def test_cosine_schedule_with_warmup():
    schedule = CosineSchedule(warmup_steps=10)
    assert lr_at(schedule, 0, 110, 2.0) == 0.0
    assert lr_at(schedule, 5, 110, 2.0) == pytest.approx(1.0)
    assert lr_at(schedule, 10, 110, 2.0) == pytest.approx(2.0)
    assert lr_at(schedule, 60, 110, 2.0) == pytest.approx(1.0)
    assert lr_at(schedule, 110, 110, 2.0) == pytest.approx(0.0, abs=1e-12)
    assert lr_at(schedule, 500, 110, 2.0) == pytest.approx(0.0, abs=1e-12)


def test_unknown_schedule():
    with pytest.raises(TypeError):
        lr_at(object(), 0, 10)


# --- training ----------------------------------------------------------------

def test_sgd_fits_a_fixed_batch(rng):
    cfg = NetworkConfig.from_preset('vsn-tiny', classes=2)
    network = build_network(cfg, seed=0, dtype='f64')
    x = rng.standard_normal((8, cfg.frames, 1, 8, 8))
    y = np.array([0, 1] * 4)
    state, train_cfg = OptimizerState(), TrainConfig(lr=0.05, momentum=0.9, weight_decay=0.0)
    losses = []
    for _ in range(20):
        loss, grad = cross_entropy(network.forward(x, training=True), y)
        network.backward(grad)
        sgd_step(network.parameters(), network.gradients(), state, train_cfg)
        losses.append(loss)
    assert losses[-1] < losses[0]


def test_training_is_deterministic(tiny_vsn, small_task, quick_train):
    first = train(tiny_vsn, small_task, quick_train)
    second = train(tiny_vsn, small_task, quick_train)
    assert len(first) == quick_train.epochs
    assert history_to_jsonl(first) == history_to_jsonl(second)
    assert all(0.0 <= r.val_acc <= 1.0 and math.isfinite(r.loss) for r in first)


def test_trainer_fits_classes_to_task(tiny_vsn, small_task, quick_train):
    trainer = Trainer(tiny_vsn, small_task, quick_train)
    assert trainer.net_cfg.classes == 2
    assert trainer.network.head.p.weight.shape == (2, 32)
    assert trainer.steps_per_epoch == 4


def test_trainer_rejects_color_networks(small_task, quick_train):
    with pytest.raises(SpecError):
        Trainer(NetworkConfig.from_preset('vsn-tiny', in_channels=3), small_task, quick_train)


@pytest.mark.parametrize("kind", ["motion_direction", "frame_order"])
def test_flip_request_is_ignored(tiny_vsn, quick_train, kind):
    task = SyntheticTask(kind=kind, clip_length=8, frame_size=8, num_train=16, num_val=8)
    cfg = quick_train.model_copy(update={'epochs': 1})
    flipped = train(tiny_vsn, task, cfg.model_copy(update={'flip': True}))
    assert flipped == train(tiny_vsn, task, cfg)


@pytest.mark.parametrize("preset", ["vsn-toy", "tsn-toy"])
def test_untrained_network_is_at_chance(preset):
    task = SyntheticTask(kind='frame_order', clip_length=16, frame_size=16, num_train=4, num_val=800,
                         seed=1, segments=8)
    _, val_set = gen_dataset(task)
    network = build_network(NetworkConfig.from_preset(preset, classes=task.num_classes))
    assert evaluate(network, val_set) == pytest.approx(1 / task.num_classes, abs=0.05)


def _training_set_loss(trainer):
    losses = []
    for start in range(0, len(trainer.train_set), 32):
        idx = np.arange(start, min(start + 32, len(trainer.train_set)))
        x, y = sample_batch(trainer.train_set, idx, trainer.net_cfg.frames, SampleMode.EVAL_CENTER)
        loss, _ = cross_entropy(trainer.network.forward(x, training=True, cache=False), y)
        losses.append(loss * len(idx))
    return sum(losses) / len(trainer.train_set)


def test_one_epoch_lowers_motion_training_loss():
    task = SyntheticTask(kind='motion_direction', num_train=256, num_val=16)
    trainer = Trainer(NetworkConfig.from_preset('vsn-toy'), task, TrainConfig(dropout=0.0))
    before = _training_set_loss(trainer)
    trainer.train_epoch(1)
    assert _training_set_loss(trainer) < before


def test_history_file_round_trip(tmp_path, tiny_vsn, small_task, quick_train):
    history = train(tiny_vsn, small_task, quick_train.model_copy(update={'epochs': 1}))
    path = tmp_path / "metrics.jsonl"
    write_history(history, path)
    assert read_history(path) == history


def test_ensemble_averages_probabilities(rng):
    cfg = NetworkConfig.from_preset('vsn-tiny')
    nets = [build_network(cfg, seed=s) for s in (0, 1)]
    x = rng.standard_normal((3, cfg.frames, 1, 8, 8)).astype(np.float32)
    scores = ensemble_predict(nets, x)
    np.testing.assert_allclose(scores.sum(axis=1), 1.0)
    single = ensemble_predict(nets[:1], x)
    np.testing.assert_allclose(single, softmax(nets[0].predict(x).astype(np.float64)))
    with pytest.raises(ValueError):
        ensemble_predict([], x)


def test_ensemble_members_must_share_frame_count(small_task):
    _, val_set = gen_dataset(small_task)
    nets = [build_network(NetworkConfig.from_preset('vsn-tiny', classes=2)),
            build_network(NetworkConfig.from_preset('vsn-tiny', classes=2, frames=2))]
    with pytest.raises(SpecError):
        evaluate_ensemble(nets, val_set)
    assert 0.0 <= evaluate_ensemble(nets[:1], val_set) <= 1.0
