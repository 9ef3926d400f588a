"""Ranked retrieval and P@K / AP@K / mAP.

Queries are unseen-class sketches; the gallery is photos, either of unseen
classes only (``zero_shot``) or of every class (``generalized``). Rankings
sort by squared L2 distance with ties broken by ascending gallery id, so
they are reproducible bit for bit.

AP@K sums ``P@i * rel(i)`` over the top K and divides by either the total
number of relevant gallery items (``total_relevant``) or ``min(N, K)``
(``min_k_relevant``). Queries with no relevant item are left out of means.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import PHOTO, SKETCH
from .errors import ConfigError, EvaluationError, ShapeError

NORMALIZERS = ("total_relevant", "min_k_relevant")
GALLERY_MODES = ("zero_shot", "generalized")


@dataclass
class EmbeddingSet:
    ids: list
    class_ids: np.ndarray
    domains: list
    matrix: np.ndarray

    def __post_init__(self):
        self.ids = list(self.ids)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        self.domains = list(self.domains)
        self.matrix = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        n = len(self.ids)
        if self.class_ids.shape != (n,) or len(self.domains) != n or (
                n and self.matrix.shape[0] != n):
            raise ShapeError("embedding set fields are not row-aligned")

    def __len__(self):
        return len(self.ids)

    def subset(self, mask):
        idx = np.flatnonzero(mask)
        return EmbeddingSet([self.ids[i] for i in idx], self.class_ids[idx],
                            [self.domains[i] for i in idx],
                            self.matrix[idx] if len(idx) else np.zeros((0, self.dim)))

    @property
    def dim(self):
        return self.matrix.shape[1]


def embed_items(net, items):
    """Run the embedding path over items in their given order."""
    x = np.stack([it.features for it in items])
    return EmbeddingSet([it.id for it in items], [it.class_id for it in items],
                        [it.domain for it in items], net.apply_embedding_only(x))


def build_gallery(embeddings, split, mode):
    if mode not in GALLERY_MODES:
        raise ConfigError(f"gallery mode must be one of {GALLERY_MODES}")
    is_photo = np.array([d == PHOTO for d in embeddings.domains], dtype=bool)
    if mode == "zero_shot":
        mask = is_photo & np.isin(embeddings.class_ids, list(split.unseen_classes))
    else:
        classes = list(split.seen_classes) + list(split.unseen_classes)
        mask = is_photo & np.isin(embeddings.class_ids, classes)
    gallery = embeddings.subset(mask)
    if len(gallery) == 0:
        raise ConfigError(f"{mode} gallery is empty")
    return gallery


def build_queries(embeddings, split):
    is_sketch = np.array([d == SKETCH for d in embeddings.domains], dtype=bool)
    queries = embeddings.subset(is_sketch & np.isin(embeddings.class_ids,
                                                    list(split.unseen_classes)))
    if len(queries) == 0:
        raise ConfigError("no unseen-class sketches to use as queries")
    return queries


@dataclass
class RankedRetrieval:
    query_id: str
    gallery_ids: list
    relevance: np.ndarray
    total_relevant: int
    distances: np.ndarray = field(default=None, repr=False)


def _id_order(gallery):
    order = sorted(range(len(gallery.ids)), key=gallery.ids.__getitem__)
    tie_rank = np.empty(len(order), dtype=np.int64)
    tie_rank[order] = np.arange(len(order))
    return tie_rank


def rank(query, query_class, gallery, query_id="", _tie_rank=None):
    """Full ranking of the gallery for one query embedding."""
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != gallery.dim:
        raise ShapeError(f"query dim {q.shape[0]} != gallery dim {gallery.dim}")
    diff = gallery.matrix - q
    dist = np.einsum("ij,ij->i", diff, diff)
    tie_rank = _id_order(gallery) if _tie_rank is None else _tie_rank
    order = np.lexsort((tie_rank, dist))
    rel = (gallery.class_ids[order] == int(query_class)).astype(np.int64)
    return RankedRetrieval(query_id, [gallery.ids[i] for i in order], rel,
                           int(rel.sum()), dist[order])


def precision_at_k(r, k):
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(np.sum(r.relevance[:k])) / k


def average_precision(r, k=None, normalizer="total_relevant"):
    """AP over the top ``k`` (all when ``k`` is None); None if N == 0."""
    if normalizer not in NORMALIZERS:
        raise ValueError(f"normalizer must be one of {NORMALIZERS}")
    n_rel = r.total_relevant
    if n_rel == 0:
        return None
    size = len(r.relevance)
    cutoff = size if k is None else min(int(k), size)
    rel = r.relevance[:cutoff]
    hits = np.cumsum(rel)
    prec = hits / np.arange(1, cutoff + 1)
    total = math.fsum(prec[rel == 1].tolist())
    denom = n_rel if normalizer == "total_relevant" else min(n_rel, size if k is None else int(k))
    return total / denom


@dataclass
class MapResult:
    value: float
    per_query: dict
    excluded: list


def rank_all(queries, gallery):
    if queries.dim != gallery.dim:
        raise ShapeError(f"query dim {queries.dim} != gallery dim {gallery.dim}")
    tie_rank = _id_order(gallery)
    return [rank(queries.matrix[i], queries.class_ids[i], gallery, queries.ids[i], tie_rank)
            for i in range(len(queries))]


def mean_ap(queries, gallery, k=None, normalizer="total_relevant", rankings=None):
    """mAP over queries with at least one relevant gallery item."""
    rankings = rank_all(queries, gallery) if rankings is None else rankings
    per_query, excluded = {}, []
    for r in rankings:
        ap = average_precision(r, k, normalizer)
        if ap is None:
            excluded.append(r.query_id)
        else:
            per_query[r.query_id] = ap
    if not per_query:
        raise EvaluationError("every query has zero relevant gallery items")
    return MapResult(math.fsum(per_query.values()) / len(per_query), per_query, excluded)


def mean_precision(rankings, k):
    vals = [precision_at_k(r, k) for r in rankings if r.total_relevant > 0]
    if not vals:
        raise EvaluationError("every query has zero relevant gallery items")
    return math.fsum(vals) / len(vals)


@dataclass
class MetricConfig:
    precision_ks: list = field(default_factory=lambda: [100, 200])
    map_ks: list = field(default_factory=lambda: [200])
    map_mode: str = "at_all"
    ap_normalizer: str = "total_relevant"
    gallery_mode: str = "zero_shot"

    def __post_init__(self):
        if any(int(k) < 1 for k in [*self.precision_ks, *self.map_ks]):
            raise ConfigError("k values must be positive")
        if self.map_mode not in ("at_all", "at_k"):
            raise ConfigError("map_mode must be at_all or at_k")
        if self.map_mode == "at_k" and not self.map_ks:
            raise ConfigError("map_mode at_k needs at least one map_ks entry")
        if self.ap_normalizer not in NORMALIZERS:
            raise ConfigError(f"ap_normalizer must be one of {NORMALIZERS}")
        if self.gallery_mode not in GALLERY_MODES:
            raise ConfigError(f"gallery_mode must be one of {GALLERY_MODES}")


def evaluate(queries, gallery, cfg=None):
    """All configured metrics for one gallery/normalizer combination.

    Returns ``(report, rankings)``. ``report["metrics"]["mAP"]`` is the
    headline value picked by ``map_mode`` (mAP@all, or mAP at the first
    entry of ``map_ks``).
    """
    cfg = cfg or MetricConfig()
    rankings = rank_all(queries, gallery)
    full = mean_ap(queries, gallery, None, cfg.ap_normalizer, rankings)
    metrics = {"mAP@all": full.value}
    for k in cfg.map_ks:
        metrics[f"mAP@{k}"] = mean_ap(queries, gallery, k, cfg.ap_normalizer, rankings).value
    for k in cfg.precision_ks:
        metrics[f"P@{k}"] = mean_precision(rankings, k)
    metrics["mAP"] = (metrics["mAP@all"] if cfg.map_mode == "at_all"
                      else metrics[f"mAP@{cfg.map_ks[0]}"])
    report = {
        "gallery_mode": cfg.gallery_mode,
        "ap_normalizer": cfg.ap_normalizer,
        "gallery_size": len(gallery),
        "num_queries": len(queries),
        "metrics": metrics,
        "per_query_ap": full.per_query,
        "excluded_queries": full.excluded,
    }
    return report, rankings


def write_topk(rankings, k, path):
    """``query_id<TAB>rank<TAB>gallery_id<TAB>relevant``, ranks 1-based."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rankings:
            for i, (gid, rel) in enumerate(zip(r.gallery_ids[:k], r.relevance[:k]), 1):
                fh.write(f"{r.query_id}\t{i}\t{gid}\t{int(rel)}\n")
