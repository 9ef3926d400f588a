"""End-to-end experiment stages shared by the CLI and the acceptance tests.

Every stage draws its randomness from ``derive_seed(seed, <stage tag>)`` so
that one top-level seed pins the whole run.
"""

import dataclasses
import logging
import math

from .data import (PHOTO, filter_classes, generate, generate_proxy_photos, load_dataset,
                   load_split, make_split)
from .distill import extract_soft_labels, pretrain_teacher
from .encoder import EncoderConfig, EncoderNetwork
from .errors import EvaluationError, ShapeError
from .evalrank import MetricConfig, build_gallery, build_queries, embed_items, evaluate
from .ndcore import Rng, derive_seed
from .oracle import brute_metrics
from .trainer import train

logger = logging.getLogger(__name__)

ABLATION_ROWS = (
    # (quadruplet, classification, knowledge); all-off is the triplet baseline
    (False, False, False),
    (True, False, False),
    (True, True, False),
    (True, False, True),
    (True, True, True),
)


def load_items(cfg):
    if cfg.data_path:
        return load_dataset(cfg.data_path)
    return generate(cfg.synth, Rng(derive_seed(cfg.seed, "data")))


def load_or_make_split(cfg, items):
    sp = cfg.split
    if sp.path:
        return load_split(sp.path)
    classes = sorted({it.class_id for it in items})
    params = {"k": sp.k} if sp.protocol == "random_k" else {"heldout": sp.heldout}
    return make_split(classes, sp.protocol, params, derive_seed(cfg.seed, "split"))


def make_soft_labels(cfg, items, split):
    """Pretrain the proxy teacher and extract seen-class soft labels."""
    dim = len(items[0].features)
    synth = cfg.synth
    if synth.feature_dim != dim:
        synth = dataclasses.replace(synth, feature_dim=dim, latent_dim=0)
    proxy = generate_proxy_photos(synth, cfg.distill.proxy_classes,
                                  cfg.distill.proxy_photos_per_class,
                                  Rng(derive_seed(cfg.seed, "proxy")))
    teacher = pretrain_teacher(proxy, num_classes=cfg.distill.proxy_classes,
                               cfg=cfg.distill.teacher,
                               rng=Rng(derive_seed(cfg.seed, "teacher")))
    photos = [it for it in filter_classes(items, split.seen_classes) if it.domain == PHOTO]
    table = extract_soft_labels(teacher, photos, split.seen_classes,
                                mode=cfg.distill.soft_label_mode)
    return teacher, table


def encoder_config(cfg, items, split, teacher_class_count):
    return EncoderConfig(
        input_dim=len(items[0].features),
        hidden_dims=list(cfg.encoder.hidden_dims),
        embed_dim=cfg.encoder.embed_dim,
        num_seen_classes=len(split.seen_classes),
        teacher_class_count=teacher_class_count,
        init_seed=derive_seed(cfg.seed, "init"),
    )


def train_model(cfg, items, split, table, log_path=None):
    width = table.width if table is not None else cfg.distill.proxy_classes
    net = EncoderNetwork.init(encoder_config(cfg, items, split, width))
    opt = dataclasses.replace(cfg.optimizer, seed=derive_seed(cfg.seed, "train"))
    return train(net, items, split, cfg.losses, opt, table,
                 val_mode=cfg.training.val_mode, val_fraction=cfg.training.val_fraction,
                 log_path=log_path)


def evaluate_model(cfg, net, items, split):
    """Metrics for every configured (gallery mode, normalizer) pair.

    Returns ``(results, rankings)`` where ``rankings`` maps gallery mode to the
    ranked lists (shared by both normalizers).
    """
    if net.config.input_dim != len(items[0].features):
        raise ShapeError(f"checkpoint expects {net.config.input_dim}-dim features, "
                         f"dataset has {len(items[0].features)}")
    emb = embed_items(net, items)
    queries = build_queries(emb, split)
    results, rankings = [], {}
    for mode in cfg.eval.gallery_modes:
        gallery = build_gallery(emb, split, mode)
        for norm in cfg.eval.ap_normalizers:
            mc = MetricConfig(list(cfg.eval.precision_ks), list(cfg.eval.map_ks),
                              cfg.eval.map_mode, norm, mode)
            report, ranked = evaluate(queries, gallery, mc)
            if cfg.eval.oracle_check:
                report["oracle_check"] = oracle_cross_check(queries, gallery, mc, report)
            results.append(report)
            rankings[mode] = ranked
    return results, rankings


def oracle_cross_check(queries, gallery, mc, report):
    """Recompute mAP@all/mAP@k/P@k by brute force; raise on any mismatch."""
    checks = {}
    for k in [None, *mc.map_ks]:
        m, precs, _ = brute_metrics(queries.matrix.tolist(), queries.class_ids.tolist(),
                                    gallery.matrix.tolist(), gallery.class_ids.tolist(),
                                    gallery.ids, k, mc.ap_normalizer, mc.precision_ks)
        name = "mAP@all" if k is None else f"mAP@{k}"
        checks[name] = m
        for pk, v in precs.items():
            checks[f"P@{pk}"] = v
    for name, v in checks.items():
        if v != report["metrics"][name]:
            raise EvaluationError(f"oracle mismatch on {name}: "
                                  f"{v!r} vs {report['metrics'][name]!r}")
    return {"status": "equal", "metrics": sorted(checks)}


def run_ablation(cfg, seeds=None, rows=ABLATION_ROWS):
    """Train and evaluate each loss combination on every seed.

    Seeds are shared across rows, so every row sees the same data, split,
    teacher and initial weights. Returns a list of row dicts with per-seed
    and mean metrics (zero-shot gallery, ``total_relevant`` AP).
    """
    seeds = list(seeds if seeds is not None else (cfg.ablation_seeds or [cfg.seed]))
    eval_cfg = dataclasses.replace(cfg.eval, gallery_modes=["zero_shot"],
                                   ap_normalizers=["total_relevant"])
    prepared = {}
    for s in seeds:
        c = dataclasses.replace(cfg, seed=s)
        items = load_items(c)
        split = load_or_make_split(c, items)
        _, table = make_soft_labels(c, items, split)
        prepared[s] = (c, items, split, table)

    out = []
    for quad, cls, know in rows:
        per_seed = []
        for s in seeds:
            c, items, split, table = prepared[s]
            losses = dataclasses.replace(c.losses, enable_quadruplet=quad,
                                         enable_cls=cls, enable_knowledge=know)
            c = dataclasses.replace(c, losses=losses, eval=eval_cfg)
            result = train_model(c, items, split, table)
            report = evaluate_model(c, result.net, items, split)[0][0]
            m = dict(report["metrics"])
            m["epochs"] = len(result.log)
            per_seed.append(m)
            logger.info("ablation quad=%s cls=%s know=%s seed=%d mAP@all=%.4f",
                        quad, cls, know, s, m["mAP@all"])
        keys = [k for k in per_seed[0] if k not in ("mAP", "epochs")]
        mean = {k: math.fsum(p[k] for p in per_seed) / len(per_seed) for k in keys}
        out.append({"quad": quad, "id": cls, "know": know, "seeds": seeds,
                    "per_seed": per_seed, "mean": mean})
    return out

