import math

import numpy as np
import pytest

from zsrl.data import PHOTO, SKETCH, DatasetItem
from zsrl.distill import (SoftLabelTable, TeacherConfig, TeacherNetwork, extract_soft_labels,
                          load_soft_labels, lookup, pretrain_teacher, save_soft_labels)
from zsrl.encoder import DenseLayer
from zsrl.errors import DataError, DomainError, ParseError
from zsrl.ndcore import Rng, softmax


def photo(i, c, feats):
    return DatasetItem(f"p{i}", PHOTO, c, np.asarray(feats, dtype=float))


def sketch(i, c, feats):
    return DatasetItem(f"s{i}", SKETCH, c, np.asarray(feats, dtype=float))


def identity_teacher(dim=2):
    return TeacherNetwork([DenseLayer(np.eye(dim), np.zeros(dim), False)])


def gaussian_photos(rng, per_class, offset=0):
    centres = np.array([[4.0, 0.0], [-4.0, 0.0], [0.0, 4.0]])
    out = []
    for c, mu in enumerate(centres):
        for j in range(per_class):
            out.append(photo(offset + c * per_class + j, c, mu + rng.normal(size=2)))
    return out


def test_teacher_on_separable_gaussians():
    rng = np.random.default_rng(0)
    teacher = pretrain_teacher(gaussian_photos(rng, 60), num_classes=3,
                               cfg=TeacherConfig(hidden_dim=16, target_accuracy=1.0,
                                                 max_epochs=30), rng=Rng(1))
    fresh = gaussian_photos(rng, 200, offset=1000)
    x = np.stack([it.features for it in fresh])
    acc = np.mean(teacher.predict(x) == [it.class_id for it in fresh])
    assert acc >= 0.95


def test_teacher_is_deterministic_and_frozen():
    items = gaussian_photos(np.random.default_rng(1), 20)
    cfg = TeacherConfig(hidden_dim=8, max_epochs=5)
    t1 = pretrain_teacher(items, cfg=cfg, rng=Rng(3))
    t2 = pretrain_teacher(items, cfg=cfg, rng=Rng(3))
    assert all(np.array_equal(a.weight, b.weight) for a, b in zip(t1.layers, t2.layers))
    with pytest.raises(ValueError):
        t1.layers[0].weight[0, 0] = 1.0


def test_teacher_rejects_sketches():
    with pytest.raises(DomainError):
        pretrain_teacher([photo(0, 0, [1, 0]), sketch(1, 1, [0, 1])])


def test_symmetric_two_photo_class():
    table = extract_soft_labels(identity_teacher(), [photo(0, 0, [1, 0]), photo(1, 0, [0, 1])])
    assert np.allclose(table[0], [0.5, 0.5], atol=1e-15)


def test_single_photo_is_its_softmax():
    table = extract_soft_labels(identity_teacher(3), [photo(0, 4, [0.3, -1.2, 2.0])])
    assert np.array_equal(table[4], softmax([0.3, -1.2, 2.0]))


def test_photo_order_does_not_matter():
    rng = np.random.default_rng(5)
    items = [photo(i, i % 3, rng.normal(size=4)) for i in range(30)]
    teacher = TeacherNetwork([DenseLayer(rng.normal(size=(4, 6)), rng.normal(size=6), False)])
    shuffled = [items[i] for i in rng.permutation(len(items))]
    assert extract_soft_labels(teacher, items) == extract_soft_labels(teacher, shuffled)


def test_logit_mean_and_prob_mean_differ():
    items = [photo(0, 0, [2.0, 0.0]), photo(1, 0, [0.0, 0.0])]
    logit = extract_soft_labels(identity_teacher(), items, mode="logit_mean")[0]
    prob = extract_soft_labels(identity_teacher(), items, mode="prob_mean")[0]
    e = math.e
    # mean logit [1, 0] -> softmax; versus the mean of softmax([2,0]) and [0.5, 0.5]
    assert logit == pytest.approx([e / (e + 1), 1 / (e + 1)], abs=1e-12)
    p2 = e * e / (e * e + 1)
    assert prob == pytest.approx([(p2 + 0.5) / 2, (1 - p2 + 0.5) / 2], abs=1e-12)
    assert abs(logit[0] - prob[0]) > 0.04


def test_sketches_never_contribute():
    items = [photo(0, 0, [1, 0]), sketch(1, 0, [9, 9])]
    with pytest.raises(DomainError):
        extract_soft_labels(identity_teacher(), items)


def test_class_without_photos_is_named():
    with pytest.raises(DataError, match="class 7"):
        extract_soft_labels(identity_teacher(), [photo(0, 0, [1, 0])], classes=[0, 7])


def test_table_rows_normalized_and_idempotent():
    rng = np.random.default_rng(8)
    teacher = TeacherNetwork([DenseLayer(rng.normal(size=(5, 1000)) * 3, np.zeros(1000), False)])
    items = [photo(i, i % 100, rng.normal(size=5)) for i in range(300)]
    t1 = extract_soft_labels(teacher, items)
    t2 = extract_soft_labels(teacher, items)
    assert len(t1) == 100 and t1.width == 1000
    assert t1 == t2
    for c in t1.classes():
        assert abs(t1[c].sum() - 1.0) <= 1e-9


def test_lookup_is_class_based():
    table = SoftLabelTable({3: [0.25, 0.75]})
    a, b = sketch(0, 3, [0, 0]), photo(1, 3, [5, 5])
    assert np.array_equal(lookup(table, a), lookup(table, b))
    with pytest.raises(KeyError):
        lookup(table, photo(2, 4, [0, 0]))


def test_table_rejects_unnormalized_and_is_read_only():
    with pytest.raises(DataError):
        SoftLabelTable({0: [0.5, 0.6]})
    table = SoftLabelTable({0: [0.5, 0.5]})
    with pytest.raises(ValueError):
        table[0][0] = 1.0


def test_tsv_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    rows = {c: softmax(rng.normal(size=7)) for c in (0, 3, 9)}
    table = SoftLabelTable(rows)
    path = tmp_path / "soft.tsv"
    save_soft_labels(table, path)
    assert load_soft_labels(path) == table


def test_tsv_parse_errors(tmp_path):
    path = tmp_path / "soft.tsv"
    path.write_text("0\t0.5,0.5\n1\t0.5\t0.5\n")
    with pytest.raises(ParseError) as err:
        load_soft_labels(path)
    assert err.value.line == 2
    path.write_text("0\t0.5,0.7\n")
    with pytest.raises(DataError):
        load_soft_labels(path)
