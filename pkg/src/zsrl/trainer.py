"""Training loop: quadruplet batches, unit-weight objective, momentum SGD,
step learning-rate decay and early stopping on validation accuracy."""

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import PHOTO, SKETCH, QuadrupletSampler, filter_classes, stack_quadruplets, \
    stratified_holdout
from .errors import ConfigError, DataError, NumericError
from .evalrank import embed_items, mean_ap
from .losses import (LossConfig, classification_loss, combine, knowledge_loss,
                     l2_normalize, l2_normalize_backward, quadruplet_loss, triplet_loss)
from .ndcore import Rng
from .optim import OptimizerConfig, lr_at, sgd_update

logger = logging.getLogger(__name__)

VAL_MODES = ("accuracy", "retrieval_map")


def batch_objective(net, x, labels, soft, cfg, backward=True):
    """Evaluate the combined loss on one stacked quadruplet batch.

    ``x`` holds 4N rows ordered [anchors; positives; negative photos;
    negative sketches]; ``labels`` are head indices for the classification
    term and ``soft`` the per-row soft labels (ignored when the respective
    term is disabled). Gradients are accumulated into ``net`` when
    ``backward`` is set.
    """
    rec = net.forward(x)
    m = rec.embedding.shape[0]
    if m % 4:
        raise ValueError(f"batch has {m} rows, not a multiple of 4")
    n = m // 4
    emb = rec.embedding
    if cfg.normalize_embeddings:
        emb, norm = l2_normalize(emb)
    a, p, neg_p, neg_s = emb[:n], emb[n:2 * n], emb[2 * n:3 * n], emb[3 * n:]
    if cfg.enable_quadruplet:
        l_sim, grads = quadruplet_loss(a, p, neg_p, neg_s, cfg)
    else:
        l_sim, grads = triplet_loss(a, p, neg_p, cfg)
        grads = (*grads, np.zeros_like(neg_s))
    d_emb = np.concatenate(grads, axis=0)
    if cfg.normalize_embeddings:
        d_emb = l2_normalize_backward(emb, norm, d_emb)

    if cfg.enable_cls:
        l_cls, d_cls = classification_loss(rec.cls_logits, labels)
    else:
        l_cls, d_cls = 0.0, np.zeros_like(rec.cls_logits)
    if cfg.enable_knowledge:
        l_know, d_soft = knowledge_loss(rec.soft_logits, soft)
    else:
        l_know, d_soft = 0.0, np.zeros_like(rec.soft_logits)

    report = combine(l_sim, l_cls, l_know, cfg)
    if not np.isfinite(report.total):
        raise NumericError(f"non-finite loss {report}")
    if backward:
        net.backward(rec, d_emb, d_cls, d_soft)
    return report


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    velocities: list = field(default_factory=list)
    best_val_metric: float = float("-inf")
    best_epoch: int = -1
    epochs_since_improvement: int = 0
    stopped_early: bool = False
    history: list = field(default_factory=list)


def sgd_step(net, state, cfg, lr=None):
    """One momentum-SGD update of every encoder parameter; zeroes grads."""
    named = net.named_parameters()
    if not state.velocities:
        state.velocities = [np.zeros_like(p) for _, p, _ in named]
    lr = lr_at(cfg, state.epoch) if lr is None else lr
    try:
        sgd_update([p for _, p, _ in named], [g for _, _, g in named],
                   state.velocities, lr, cfg.momentum, cfg.weight_decay)
    except NumericError as exc:
        raise NumericError(f"epoch {state.epoch} step {state.step}: {exc}") from None
    state.step += 1


def validation_metric(net, val_items, label_index, mode="accuracy"):
    """Seen-class validation score in [0, 1].

    ``accuracy``: fraction of items whose argmax classification logit is the
    true class (ties go to the lowest index). ``retrieval_map``: mAP@all of
    validation sketches against validation photos.
    """
    if not val_items:
        raise ConfigError("validation set is empty")
    if mode == "accuracy":
        x = np.stack([it.features for it in val_items])
        pred = np.argmax(net.forward(x).cls_logits, axis=1)
        truth = np.array([label_index[it.class_id] for it in val_items])
        return float(np.mean(pred == truth))
    if mode == "retrieval_map":
        emb = embed_items(net, val_items)
        sketches = emb.subset(np.array([d == SKETCH for d in emb.domains]))
        photos = emb.subset(np.array([d == PHOTO for d in emb.domains]))
        if not len(sketches) or not len(photos):
            raise ConfigError("retrieval validation needs sketches and photos")
        return mean_ap(sketches, photos).value
    raise ConfigError(f"validation mode must be one of {VAL_MODES}")


@dataclass
class TrainResult:
    net: object
    state: TrainState
    log: list
    label_index: dict
    val_items: list = field(default_factory=list)


def train(net, items, split, loss_cfg=None, opt_cfg=None, soft_labels=None,
          val_mode="accuracy", val_fraction=0.1, log_path=None):
    """Train ``net`` in place on the seen classes and return the best epoch.

    Returns a ``TrainResult`` whose ``net`` is a copy taken at the epoch with
    the highest validation metric.
    """
    loss_cfg = loss_cfg or LossConfig()
    opt_cfg = opt_cfg or OptimizerConfig()
    seen = filter_classes(items, split.seen_classes)
    label_index = {c: i for i, c in enumerate(split.seen_classes)}
    if net.config.num_seen_classes != len(label_index):
        raise ConfigError(f"encoder has {net.config.num_seen_classes} class outputs "
                          f"but the split has {len(label_index)} seen classes")
    if loss_cfg.enable_knowledge:
        if soft_labels is None:
            raise DataError("knowledge loss enabled but no soft labels given")
        missing = [c for c in split.seen_classes if c not in soft_labels]
        if missing:
            raise DataError(f"soft labels missing for seen classes {missing}")
        if soft_labels.width != net.config.teacher_class_count:
            raise ConfigError(f"soft labels have width {soft_labels.width}, encoder "
                              f"expects {net.config.teacher_class_count}")

    rng = Rng(opt_cfg.seed)
    train_items, val_items = stratified_holdout(seen, val_fraction, rng.spawn("holdout"))
    sampler = QuadrupletSampler(train_items)
    sample_rng = rng.spawn("sampler")
    n_batches = sampler.batches_per_epoch(opt_cfg.batch_quads)
    logger.info("training on %d items (%d val), %d batches/epoch",
                len(train_items), len(val_items), n_batches)

    state = TrainState()
    best = net.copy()
    log = []
    log_fh = open(log_path, "w", encoding="utf-8", newline="\n") if log_path else None
    try:
        for epoch in range(opt_cfg.max_epochs):
            state.epoch = epoch
            lr = lr_at(opt_cfg, epoch)
            sums = np.zeros(4)
            for _ in range(n_batches):
                quads = sampler.sample(opt_cfg.batch_quads, sample_rng)
                x, classes = stack_quadruplets(quads)
                labels = np.array([label_index[c] for c in classes])
                soft = soft_labels.matrix(classes) if loss_cfg.enable_knowledge else None
                rep = batch_objective(net, x, labels, soft, loss_cfg)
                sgd_step(net, state, opt_cfg, lr)
                sums += (rep.l_sim, rep.l_cls, rep.l_knowledge, rep.total)
            means = sums / n_batches
            val = validation_metric(net, val_items, label_index, val_mode)
            record = {"epoch": epoch, "lr": lr, "l_sim": means[0], "l_cls": means[1],
                      "l_knowledge": means[2], "total": means[3], "val_metric": val}
            record = {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                      for k, v in record.items()}
            log.append(record)
            state.history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
            logger.info("epoch %d lr=%g total=%.5f val=%.4f", epoch, lr, means[3], val)

            if val > state.best_val_metric:
                state.best_val_metric = val
                state.best_epoch = epoch
                state.epochs_since_improvement = 0
                best = net.copy()
            else:
                state.epochs_since_improvement += 1
            if state.epochs_since_improvement >= opt_cfg.early_stop_patience:
                state.stopped_early = True
                logger.info("early stop after epoch %d (best epoch %d)", epoch,
                            state.best_epoch)
                break
    finally:
        if log_fh:
            log_fh.close()
    best.zero_grads()
    return TrainResult(best, state, log, label_index, val_items)
