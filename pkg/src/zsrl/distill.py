"""Frozen teacher network and the one-off extraction of class soft labels.

The teacher only ever sees photos. A seen class's soft label is the softmax
of the teacher's mean logit vector over that class's photos, and sketches of
the class reuse the same vector.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .data import PHOTO, stratified_holdout
from .encoder import DenseLayer, build_stack
from .errors import DataError, DomainError, ParseError
from .losses import classification_loss
from .ndcore import Rng, softmax
from .optim import sgd_update

logger = logging.getLogger(__name__)

TABLE_TOL = 1e-9
SOFT_LABEL_MODES = ("logit_mean", "prob_mean")


def _logits(layers, x):
    h = np.atleast_2d(np.asarray(x, dtype=np.float64))
    for layer in layers:
        h = layer.forward(h)[1]
    return h


def _accuracy(layers, items, labels):
    if not items:
        return 0.0
    pred = np.argmax(_logits(layers, np.stack([it.features for it in items])), axis=1)
    return float(np.mean(pred == np.asarray(labels)))


class TeacherNetwork:
    """Dense classifier with read-only parameters."""

    def __init__(self, layers, proxy_accuracy=None):
        self.layers = list(layers)
        self.proxy_accuracy = proxy_accuracy
        for layer in self.layers:
            layer.weight.flags.writeable = False
            layer.bias.flags.writeable = False

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def num_classes(self):
        return self.layers[-1].out_dim

    def logits(self, x):
        return _logits(self.layers, x)

    def predict(self, x):
        return np.argmax(self.logits(x), axis=1)

    def to_dict(self):
        return {"format": "zsrl-teacher", "proxy_accuracy": self.proxy_accuracy,
                "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d):
        return cls([DenseLayer.from_dict(l) for l in d["layers"]], d.get("proxy_accuracy"))


@dataclass
class TeacherConfig:
    hidden_dim: int = 64
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 32
    max_epochs: int = 60
    target_accuracy: float = 0.9
    val_fraction: float = 0.1


def _check_photos(items):
    for it in items:
        if it.domain != PHOTO:
            raise DomainError(f"teacher input {it.id} is a {it.domain}; photos only")


def accuracy(teacher, items, labels):
    return _accuracy(teacher.layers, items, labels)


def pretrain_teacher(photo_items, proxy_labels=None, num_classes=None,
                     cfg=None, rng=None):
    """Train a one-hidden-layer photo classifier on a proxy task and freeze it.

    ``proxy_labels`` maps item id to proxy class (defaults to the items' own
    class ids). Training stops once held-out proxy accuracy reaches
    ``cfg.target_accuracy`` or after ``cfg.max_epochs``.
    """
    cfg = cfg or TeacherConfig()
    rng = rng or Rng(0)
    _check_photos(photo_items)
    if not photo_items:
        raise DataError("teacher pretraining needs at least one photo")
    label_of = ({it.id: it.class_id for it in photo_items} if proxy_labels is None
                else {k: int(v) for k, v in proxy_labels.items()})
    if num_classes is None:
        num_classes = max(label_of.values()) + 1
    train, val = stratified_holdout(photo_items, cfg.val_fraction, rng)
    x = np.stack([it.features for it in train])
    y = np.array([label_of[it.id] for it in train])
    val_y = [label_of[it.id] for it in val]

    layers = build_stack([x.shape[1], cfg.hidden_dim, num_classes], rng, final_relu=False)
    params = [a for l in layers for a in (l.weight, l.bias)]
    grads = [a for l in layers for a in (l.grad_weight, l.grad_bias)]
    vel = [np.zeros_like(p) for p in params]

    acc = 0.0
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(train))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            h, cache = x[idx], []
            for layer in layers:
                pre, out = layer.forward(h)
                cache.append((h, pre))
                h = out
            _, d = classification_loss(h, y[idx])
            for layer, (inp, pre) in zip(reversed(layers), reversed(cache)):
                d = layer.backward(inp, pre, d)
            sgd_update(params, grads, vel, cfg.lr, cfg.momentum, cfg.weight_decay)
        acc = _accuracy(layers, val, val_y) if val else _accuracy(layers, train, y)
        logger.debug("teacher epoch %d proxy accuracy %.4f", epoch, acc)
        if acc >= cfg.target_accuracy:
            break
    logger.info("teacher pretrained: proxy accuracy %.4f after %d epochs", acc, epoch + 1)
    return TeacherNetwork(layers, proxy_accuracy=acc)


class SoftLabelTable:
    """Immutable ``class_id -> probability vector`` map."""

    def __init__(self, rows):
        self._rows = {}
        for c, q in sorted(rows.items()):
            q = np.array(q, dtype=np.float64)
            if q.ndim != 1 or abs(q.sum() - 1.0) > TABLE_TOL or np.any(q < 0):
                raise DataError(f"soft label for class {c} is not normalized "
                                f"(sum={q.sum()!r})")
            q.flags.writeable = False
            self._rows[int(c)] = q
        dims = {q.size for q in self._rows.values()}
        if len(dims) > 1:
            raise DataError(f"soft labels have mixed lengths {sorted(dims)}")

    def __len__(self):
        return len(self._rows)

    def __contains__(self, class_id):
        return int(class_id) in self._rows

    def __getitem__(self, class_id):
        return self._rows[int(class_id)]

    def __eq__(self, other):
        return (isinstance(other, SoftLabelTable) and self.classes() == other.classes()
                and all(np.array_equal(self[c], other[c]) for c in self.classes()))

    def classes(self):
        return list(self._rows)

    @property
    def width(self):
        return next(iter(self._rows.values())).size if self._rows else 0

    def lookup(self, item):
        return lookup(self, item)

    def matrix(self, labels):
        """Stacked soft labels for a label array."""
        try:
            return np.stack([self._rows[int(c)] for c in labels])
        except KeyError as exc:
            raise KeyError(f"no soft label for class {exc.args[0]}") from None


def _exact_mean(rows):
    # fsum keeps the column means independent of row order
    return np.array([math.fsum(col) for col in rows.T]) / rows.shape[0]


def extract_soft_labels(teacher, photo_items, classes=None, mode="logit_mean"):
    """Per-class soft labels from teacher activations on photos.

    ``logit_mean`` averages pre-softmax logits and applies one softmax;
    ``prob_mean`` averages per-photo softmax outputs instead.
    """
    if mode not in SOFT_LABEL_MODES:
        raise ValueError(f"mode must be one of {SOFT_LABEL_MODES}")
    _check_photos(photo_items)
    by_class = defaultdict(list)
    for it in photo_items:
        by_class[it.class_id].append(it.features)
    if classes is None:
        classes = sorted(by_class)
    rows = {}
    for c in classes:
        feats = by_class.get(int(c))
        if not feats:
            raise DataError(f"class {c} has no photos to extract a soft label from")
        z = teacher.logits(np.stack(feats))
        if mode == "logit_mean":
            rows[int(c)] = softmax(_exact_mean(z))
        else:
            p = _exact_mean(softmax(z, axis=1))
            rows[int(c)] = p / p.sum()
    return SoftLabelTable(rows)


def lookup(table, item):
    """Soft label for an item's class; identical for sketches and photos."""
    if item.class_id not in table:
        raise KeyError(f"no soft label for class {item.class_id} (item {item.id})")
    return table[item.class_id]


def save_soft_labels(table, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in table.classes():
            fh.write(f"{c}\t{','.join(repr(float(v)) for v in table[c])}\n")


def load_soft_labels(path):
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ParseError("expected class_id<TAB>probabilities", line=lineno, path=path)
            try:
                c = int(fields[0])
                q = [float(v) for v in fields[1].split(",")]
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
            if c in rows:
                raise DataError(f"{path}:{lineno}: duplicate class {c}")
            rows[c] = q
    return SoftLabelTable(rows)
