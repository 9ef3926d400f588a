import json
import math

import numpy as np
import pytest

from helpers import numeric_grad, rel_error
from zsrl.data import PHOTO, DatasetItem, SynthConfig, generate, sample_batch, \
    stack_quadruplets
from zsrl.distill import SoftLabelTable
from zsrl.encoder import EncoderConfig, init
from zsrl.errors import ConfigError, DataError, NumericError
from zsrl.losses import LossConfig
from zsrl.ndcore import Rng, softmax
from zsrl.optim import OptimizerConfig, lr_at, sgd_update
from zsrl.trainer import TrainState, batch_objective, sgd_step, train, validation_metric


def soft_table(classes, width=3, seed=0):
    rng = np.random.default_rng(seed)
    return SoftLabelTable({c: softmax(rng.normal(size=width)) for c in classes})


def net_for(items, split, width=3, seed=1, hidden=(8,), embed=4):
    return init(EncoderConfig(input_dim=len(items[0].features), hidden_dims=list(hidden),
                              embed_dim=embed, num_seen_classes=len(split.seen_classes),
                              teacher_class_count=width, init_seed=seed))


def test_plain_gradient_descent():
    p, g, v = np.array([1.0, -2.0]), np.array([0.5, 0.25]), np.zeros(2)
    sgd_update([p], [g], [v], lr=0.1, momentum=0.0, weight_decay=0.0)
    assert np.array_equal(p, [1.0 - 0.05, -2.0 - 0.025])
    assert not g.any()


def test_momentum_hand_iteration():
    p, v = np.array([1.0]), np.zeros(1)
    for _ in range(2):
        sgd_update([p], [np.array([1.0])], [v], lr=0.1, momentum=0.9, weight_decay=0.0)
    assert p[0] == pytest.approx(0.71, abs=1e-15)


def test_weight_decay_contribution():
    p0 = np.array([0.8, -1.6])
    g = np.array([0.3, 0.1])
    a, b = p0.copy(), p0.copy()
    sgd_update([a], [g.copy()], [np.zeros(2)], 0.01, 0.9, 0.0)
    sgd_update([b], [g.copy()], [np.zeros(2)], 0.01, 0.9, 5e-4)
    assert np.allclose(a - b, 0.01 * 5e-4 * p0, atol=1e-18)


def test_nan_gradient_aborts():
    p = np.ones(2)
    with pytest.raises(NumericError):
        sgd_update([p], [np.array([np.nan, 0.0])], [np.zeros(2)], 0.1, 0.9, 0.0)
    assert np.array_equal(p, np.ones(2))


def test_lr_schedule():
    cfg = OptimizerConfig()
    assert [lr_at(cfg, e) for e in range(25)] == [1e-4] * 10 + [1e-5] * 10 + [1e-6] * 5


def test_sgd_step_zeroes_grads(small_items, small_split):
    net = net_for(small_items, small_split)
    rec = net.forward(np.ones((2, 8)))
    net.backward(rec, np.ones((2, 4)), np.ones((2, 4)), np.ones((2, 3)))
    state = TrainState()
    before = net.named_parameters()[0][1].copy()
    sgd_step(net, state, OptimizerConfig(lr0=0.1))
    assert state.step == 1
    assert not np.array_equal(before, net.named_parameters()[0][1])
    assert all(not g.any() for _, _, g in net.named_parameters())


def test_validation_empty_rejected(small_items, small_split):
    with pytest.raises(ConfigError):
        validation_metric(net_for(small_items, small_split), [], {})


def _one_hot_items(c, per_class):
    return [DatasetItem(f"p{k}_{j}", PHOTO, k, np.eye(c)[k]) for k in range(c)
            for j in range(per_class)]


def test_perfect_logits_score_one():
    c = 4
    cfg = EncoderConfig(input_dim=c, hidden_dims=[], embed_dim=2, num_seen_classes=c,
                        teacher_class_count=2)
    net = init(cfg)
    net.head_cls.weight[...] = 10 * np.eye(c)
    net.head_cls.bias[...] = 0.0
    items = _one_hot_items(c, 3)
    assert validation_metric(net, items, {k: k for k in range(c)}) == 1.0


def test_equal_logits_predict_class_zero():
    c = 4
    cfg = EncoderConfig(input_dim=c, hidden_dims=[], embed_dim=2, num_seen_classes=c,
                        teacher_class_count=2)
    net = init(cfg)
    net.head_cls.weight[...] = 0.0
    net.head_cls.bias[...] = 0.0
    items = _one_hot_items(c, 5)
    # only class-0 items are right under the lowest-index tie rule
    assert validation_metric(net, items, {k: k for k in range(c)}) == 0.25


def test_untrained_net_near_chance():
    c, seeds = 5, 30
    items = generate(SynthConfig(num_classes=c, sketches_per_class=40, photos_per_class=40,
                                 feature_dim=8), Rng(0))
    accs = []
    for s in range(seeds):
        net = init(EncoderConfig(input_dim=8, hidden_dims=[16], embed_dim=4,
                                 num_seen_classes=c, teacher_class_count=2, init_seed=s))
        accs.append(validation_metric(net, items, {k: k for k in range(c)}))
    mean = float(np.mean(accs))
    sigma = float(np.std(accs, ddof=1)) / math.sqrt(seeds)
    assert abs(mean - 1 / c) <= 3 * sigma


def test_retrieval_map_mode(small_items, small_split):
    net = net_for(small_items, small_split)
    seen = [it for it in small_items if it.class_id in small_split.seen_classes]
    label = {c: i for i, c in enumerate(small_split.seen_classes)}
    v = validation_metric(net, seen, label, "retrieval_map")
    assert 0.0 < v <= 1.0
    with pytest.raises(ConfigError):
        validation_metric(net, seen, label, "bogus")


def _batch(items, split, seed=0, quads=4):
    seen = [it for it in items if it.class_id in split.seen_classes]
    x, classes = stack_quadruplets(sample_batch(seen, quads, Rng(seed)))
    label = {c: i for i, c in enumerate(split.seen_classes)}
    return x, np.array([label[c] for c in classes]), classes


@pytest.mark.parametrize("seed", range(20))
def test_full_objective_gradient(seed, small_items, small_split):
    net = net_for(small_items, small_split, hidden=(6,), seed=seed)
    assert net.num_parameters() <= 200
    table = soft_table(small_split.seen_classes)
    x, labels, classes = _batch(small_items, small_split, seed)
    soft = table.matrix(classes)
    cfg = LossConfig(margin_alpha=5.0)  # keeps every hinge active, away from the kink
    batch_objective(net, x, labels, soft, cfg)
    f = lambda: batch_objective(net, x, labels, soft, cfg, backward=False).total
    named = net.named_parameters()
    analytic = np.concatenate([g.ravel() for _, _, g in named])
    numeric = np.concatenate([numeric_grad(f, p).ravel() for _, p, _ in named])
    assert rel_error(analytic, numeric) < 1e-4


def test_triplet_mode_ignores_negative_sketch(small_items, small_split):
    net = net_for(small_items, small_split)
    x, labels, classes = _batch(small_items, small_split)
    cfg = LossConfig(enable_quadruplet=False, enable_cls=False, enable_knowledge=False)
    r1 = batch_objective(net, x, labels, None, cfg, backward=False)
    x2 = x.copy()
    x2[12:] += 100.0
    r2 = batch_objective(net, x2, labels, None, cfg, backward=False)
    assert r1.total == r2.total


def test_loss_decreases_on_fixed_batch(small_items, small_split):
    net = net_for(small_items, small_split)
    table = soft_table(small_split.seen_classes)
    x, labels, classes = _batch(small_items, small_split, quads=8)
    soft, cfg = table.matrix(classes), LossConfig()
    opt, state = OptimizerConfig(lr0=1e-3, momentum=0.0, weight_decay=0.0), TrainState()
    totals = []
    for _ in range(6):
        totals.append(batch_objective(net, x, labels, soft, cfg).total)
        sgd_step(net, state, opt)
    assert all(b <= a for a, b in zip(totals, totals[1:]))


def _train(items, split, **opt):
    net = net_for(items, split)
    cfg = OptimizerConfig(**{"max_epochs": 8, "batch_quads": 8, "seed": 3, **opt})
    return train(net, items, split, LossConfig(), cfg, soft_table(split.seen_classes))


def test_frozen_net_patience_one(small_items, small_split):
    res = _train(small_items, small_split, lr0=0.0, early_stop_patience=1)
    assert len(res.log) == 2 and res.state.stopped_early
    assert res.state.best_epoch == 0


def test_frozen_net_patience_five(small_items, small_split):
    res = _train(small_items, small_split, lr0=0.0, early_stop_patience=5, max_epochs=25)
    assert len(res.log) == 6 and res.state.stopped_early


def test_training_deterministic(small_items, small_split, tmp_path):
    a = _train(small_items, small_split, lr0=0.01)
    b = _train(small_items, small_split, lr0=0.01)
    assert a.log == b.log
    net = net_for(small_items, small_split)
    cfg = OptimizerConfig(max_epochs=3, batch_quads=8, seed=3, lr0=0.01)
    paths = [tmp_path / "a.jsonl", tmp_path / "b.jsonl"]
    for p in paths:
        train(net.copy(), small_items, small_split, LossConfig(), cfg,
              soft_table(small_split.seen_classes), log_path=p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    rec = json.loads(paths[0].read_text().splitlines()[0])
    assert set(rec) == {"epoch", "lr", "l_sim", "l_cls", "l_knowledge", "total", "val_metric"}


def test_best_checkpoint_matches_log_max(small_items, small_split):
    res = _train(small_items, small_split, lr0=0.01, max_epochs=10)
    best = max(r["val_metric"] for r in res.log)
    assert res.state.best_val_metric == best
    assert validation_metric(res.net, res.val_items, res.label_index) == best
    assert res.log[-1]["val_metric"] <= best


def test_training_learns_seen_classes(small_items, small_split):
    res = _train(small_items, small_split, lr0=0.01, max_epochs=15)
    assert res.state.best_val_metric > 0.8


def test_knowledge_without_labels_rejected(small_items, small_split):
    net = net_for(small_items, small_split)
    with pytest.raises(DataError):
        train(net, small_items, small_split, LossConfig(), OptimizerConfig(max_epochs=1), None)
    partial = soft_table(small_split.seen_classes[1:])
    with pytest.raises(DataError):
        train(net, small_items, small_split, LossConfig(), OptimizerConfig(max_epochs=1),
              partial)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_numeric_error(small_items, small_split):
    with pytest.raises(NumericError):
        _train(small_items, small_split, lr0=1e6, max_epochs=5)
