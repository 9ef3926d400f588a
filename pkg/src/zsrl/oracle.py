"""Brute-force reference for the retrieval metrics.

Deliberately naive and numpy-free: distances by explicit loops, ranking by
repeated minimum selection, and P@i recounted from scratch for every i.
Used to cross-check the main engine on small instances.
"""

import math


def sq_dist(a, b):
    return math.fsum((x - y) * (x - y) for x, y in zip(a, b))


def brute_rank(query, gallery_vectors, gallery_ids):
    """Gallery indices in (distance, id) order, O(n^2)."""
    dists = [sq_dist(query, g) for g in gallery_vectors]
    remaining = list(range(len(gallery_ids)))
    order = []
    while remaining:
        best = remaining[0]
        for j in remaining[1:]:
            if (dists[j], gallery_ids[j]) < (dists[best], gallery_ids[best]):
                best = j
        order.append(best)
        remaining.remove(best)
    return order


def brute_relevance(query_class, gallery_classes, order):
    return [1 if gallery_classes[j] == query_class else 0 for j in order]


def brute_precision(relevance, k):
    count = 0
    for i in range(min(k, len(relevance))):
        count += relevance[i]
    return count / k


def brute_ap(relevance, k=None, normalizer="total_relevant"):
    n_rel = sum(relevance)
    if n_rel == 0:
        return None
    cutoff = len(relevance) if k is None else min(k, len(relevance))
    terms = []
    for i in range(1, cutoff + 1):
        if relevance[i - 1]:
            hits = 0
            for j in range(i):
                hits += relevance[j]
            terms.append(hits / i)
    if normalizer == "total_relevant":
        denom = n_rel
    else:
        denom = min(n_rel, len(relevance) if k is None else k)
    return math.fsum(terms) / denom


def brute_metrics(queries, query_classes, gallery, gallery_classes, gallery_ids,
                  k=None, normalizer="total_relevant", precision_ks=()):
    """Return ``(mAP, {k: mean P@k}, per-query AP list)`` over queries
    with at least one relevant item."""
    aps, precs = [], {pk: [] for pk in precision_ks}
    for q, qc in zip(queries, query_classes):
        order = brute_rank(list(q), [list(g) for g in gallery], list(gallery_ids))
        rel = brute_relevance(qc, list(gallery_classes), order)
        ap = brute_ap(rel, k, normalizer)
        aps.append(ap)
        if ap is not None:
            for pk in precision_ks:
                precs[pk].append(brute_precision(rel, pk))
    kept = [a for a in aps if a is not None]
    if not kept:
        return None, {}, aps
    mean_p = {pk: math.fsum(v) / len(v) for pk, v in precs.items()}
    return math.fsum(kept) / len(kept), mean_p, aps
