"""Training objectives and their exact gradients.

Embedding batches are ``(N, D)`` arrays whose rows are aligned across the
anchor/positive/negative arguments. Distances are squared L2 throughout.
Every loss returns ``(value, gradients)``; gradients are w.r.t. the loss
*value* (i.e. already include the batch-mean factor).
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .ndcore import log_softmax

SOFT_LABEL_TOL = 1e-6


@dataclass
class LossConfig:
    margin_alpha: float = 0.2
    enable_quadruplet: bool = True
    enable_cls: bool = True
    enable_knowledge: bool = True
    normalize_embeddings: bool = False

    def __post_init__(self):
        if not self.margin_alpha >= 0:
            raise ConfigError(f"margin_alpha must be >= 0, got {self.margin_alpha}")


@dataclass
class QuadrupletDistances:
    delta_plus: np.ndarray
    delta_neg_photo: np.ndarray
    delta_neg_sketch: np.ndarray


@dataclass
class LossReport:
    l_sim: float
    l_cls: float
    l_knowledge: float
    total: float


def _batches(*arrays):
    out = [np.atleast_2d(np.asarray(a, dtype=np.float64)) for a in arrays]
    n = out[0].shape[0]
    if n == 0:
        raise ValueError("empty batch")
    for a in out[1:]:
        if a.shape != out[0].shape:
            raise ShapeError(f"batch shapes differ: {out[0].shape} vs {a.shape}")
    return out


def _sqdist_rows(a, b):
    d = a - b
    return np.einsum("ij,ij->i", d, d)


def quadruplet_distances(anchors, positives, neg_photos, neg_sketches):
    a, p, n, s = _batches(anchors, positives, neg_photos, neg_sketches)
    return QuadrupletDistances(_sqdist_rows(a, p), _sqdist_rows(a, n), _sqdist_rows(a, s))


def _hinge(a, p, n, margin):
    """Per-row hinge terms and their gradients w.r.t. (a, p, n), unscaled."""
    t = _sqdist_rows(a, p) - _sqdist_rows(a, n) + margin
    # strict inequality: subgradient 0 at the kink
    active = (t > 0.0).astype(np.float64)[:, None]
    d_a = active * 2.0 * (n - p)
    d_p = active * -2.0 * (a - p)
    d_n = active * 2.0 * (a - n)
    return np.maximum(t, 0.0), d_a, d_p, d_n


def hinge_term(anchors, positives, negatives, margin=0.2):
    """Batch sum of ``max(d(a,p) - d(a,n) + margin, 0)``."""
    a, p, n = _batches(anchors, positives, negatives)
    return float(np.sum(_hinge(a, p, n, margin)[0]))


def triplet_loss(anchors, positives, negatives, cfg=None):
    """Mean hinge over N triplets.

    Returns ``(value, (d_anchors, d_positives, d_negatives))``.
    """
    margin = (cfg or LossConfig()).margin_alpha
    a, p, n = _batches(anchors, positives, negatives)
    N = a.shape[0]
    h, d_a, d_p, d_n = _hinge(a, p, n, margin)
    return float(np.sum(h)) / N, (d_a / N, d_p / N, d_n / N)


def quadruplet_loss(anchors, positives, neg_photos, neg_sketches, cfg=None):
    """Domain-aware quadruplet loss.

    Two hinges share the anchor/positive pair: one against a negative photo
    and one against a negative sketch, averaged over ``2N`` terms.

    Returns ``(value, (d_anchors, d_positives, d_neg_photos, d_neg_sketches))``.
    """
    margin = (cfg or LossConfig()).margin_alpha
    a, p, n, s = _batches(anchors, positives, neg_photos, neg_sketches)
    N = a.shape[0]
    h1, da1, dp1, dn = _hinge(a, p, n, margin)
    h2, da2, dp2, ds = _hinge(a, p, s, margin)
    scale = 1.0 / (2 * N)
    value = (float(np.sum(h1)) + float(np.sum(h2))) * scale
    return value, ((da1 + da2) * scale, (dp1 + dp2) * scale, dn * scale, ds * scale)


def classification_loss(logits, labels):
    """Softmax cross-entropy averaged over all rows.

    Returns ``(value, d_logits)`` where each gradient row is
    ``(softmax - one_hot) / M``.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    m, c = z.shape
    if labels.shape[0] != m:
        raise ShapeError(f"{m} logit rows but {labels.shape[0]} labels")
    if m == 0:
        raise ValueError("empty batch")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"label out of range [0, {c})")
    logp = log_softmax(z, axis=1)
    rows = np.arange(m)
    value = -float(np.sum(logp[rows, labels])) / m
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return value, grad / m


def check_soft_labels(q, tol=SOFT_LABEL_TOL):
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    sums = q.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size or np.any(q < 0):
        row = int(bad[0]) if bad.size else int(np.flatnonzero((q < 0).any(axis=1))[0])
        raise DataError(f"soft label row {row} is not a probability vector "
                        f"(sum={sums[row]!r})")
    return q


def knowledge_loss(logits, soft_labels):
    """Cross-entropy against per-item soft labels, averaged over rows.

    Returns ``(value, d_logits)`` with gradient rows ``(softmax - q) / M``.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    q = check_soft_labels(soft_labels)
    if q.shape != z.shape:
        raise ShapeError(f"logits {z.shape} vs soft labels {q.shape}")
    m = z.shape[0]
    logp = log_softmax(z, axis=1)
    value = -float(np.sum(q * logp)) / m
    return value, (np.exp(logp) - q) / m


def entropy(q):
    """Shannon entropy (nats) of each row, treating 0·log 0 as 0."""
    q = np.asarray(q, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * np.log(q), 0.0)
    return -np.sum(terms, axis=-1)


def combine(l_sim, l_cls, l_knowledge, cfg=None):
    """Unit-weight sum of the enabled objectives.

    The similarity term is always on (triplet or quadruplet); disabled
    auxiliary terms are reported and summed as exactly 0.
    """
    cfg = cfg or LossConfig()
    l_cls = float(l_cls) if cfg.enable_cls else 0.0
    l_knowledge = float(l_knowledge) if cfg.enable_knowledge else 0.0
    l_sim = float(l_sim)
    return LossReport(l_sim, l_cls, l_knowledge, l_sim + l_cls + l_knowledge)


def l2_normalize(x, eps=1e-12):
    x = np.asarray(x, dtype=np.float64)
    norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    return x / np.maximum(norm, eps), norm


def l2_normalize_backward(y, norm, dy, eps=1e-12):
    """Gradient through ``y = x / ||x||`` given ``dL/dy``."""
    proj = np.sum(y * dy, axis=-1, keepdims=True)
    return (dy - y * proj) / np.maximum(norm, eps)
