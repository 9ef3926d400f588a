"""Two-domain datasets: synthetic generation, TSV/JSON I/O, seen/unseen
splits and the quadruplet sampler."""

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, ParseError, SamplingError
from .ndcore import Rng

SKETCH = "sketch"
PHOTO = "photo"
DOMAINS = (SKETCH, PHOTO)


@dataclass(frozen=True, eq=False)
class DatasetItem:
    id: str
    domain: str
    class_id: int
    features: np.ndarray

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise DataError(f"unknown domain {self.domain!r} for item {self.id}")
        if int(self.class_id) < 0:
            raise DataError(f"negative class id for item {self.id}")

    def same_as(self, other):
        return (self.id == other.id and self.domain == other.domain
                and self.class_id == other.class_id
                and np.array_equal(self.features, other.features))


@dataclass
class SynthConfig:
    """Knobs for the synthetic two-domain generator.

    Photos are a class centroid plus isotropic noise. Sketches start from the
    same kind of draw, go through one linear map shared by the whole sketch
    domain, get fresh noise, and then lose ``sparsify_fraction`` of their
    coordinates. ``transform_strength`` blends the map between the identity
    (0) and a random Gaussian matrix (1).

    Centroids live in a ``latent_dim``-dimensional subspace shared by every
    class (0 means the full feature space), so class identity occupies a few
    directions and noise fills the rest.
    """

    num_classes: int = 20
    sketches_per_class: int = 50
    photos_per_class: int = 50
    feature_dim: int = 32
    class_separation: float = 1.0
    sketch_transform_seed: int = 7
    sparsify_fraction: float = 0.25
    noise_sigma: float = 0.5
    transform_strength: float = 0.5
    latent_dim: int = 0
    basis_seed: int = 11

    def validate(self):
        if min(self.num_classes, self.sketches_per_class, self.photos_per_class,
               self.feature_dim) < 1:
            raise ConfigError("class/item counts and feature_dim must be >= 1")
        if not 0.0 <= self.sparsify_fraction < 1.0:
            raise ConfigError(f"sparsify_fraction must be in [0, 1), "
                              f"got {self.sparsify_fraction}")
        if not self.class_separation > 0:
            raise ConfigError("class_separation must be > 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if not 0.0 <= self.transform_strength <= 1.0:
            raise ConfigError("transform_strength must be in [0, 1]")
        if not 0 <= self.latent_dim <= self.feature_dim:
            raise ConfigError("latent_dim must be in [0, feature_dim]")
        return self


def sketch_map(cfg):
    """The domain-wide linear map applied to sketch draws."""
    d = cfg.feature_dim
    if cfg.transform_strength == 0.0:
        return np.eye(d)
    g = Rng(cfg.sketch_transform_seed).normal(0.0, 1.0 / math.sqrt(d), size=(d, d))
    return (1.0 - cfg.transform_strength) * np.eye(d) + cfg.transform_strength * g


def semantic_basis(cfg):
    """Orthonormal rows spanning the class subspace (identity when full)."""
    d = cfg.feature_dim
    k = cfg.latent_dim or d
    if k == d:
        return np.eye(d)
    g = Rng(cfg.basis_seed).normal(size=(k, d))
    basis = np.zeros_like(g)
    # modified Gram-Schmidt: platform-independent, unlike LAPACK sign choices
    for i in range(k):
        v = g[i].copy()
        for j in range(i):
            v -= np.dot(basis[j], v) * basis[j]
        basis[i] = v / np.linalg.norm(v)
    return basis


def class_centroids(num_classes, cfg, rng):
    basis = semantic_basis(cfg)
    latent = rng.normal(0.0, cfg.class_separation, size=(num_classes, basis.shape[0]))
    return latent @ basis


def generate(cfg, rng):
    """Deterministic synthetic dataset; items ordered by class, photos first."""
    cfg.validate()
    d = cfg.feature_dim
    centroids = class_centroids(cfg.num_classes, cfg, rng)
    m = sketch_map(cfg)
    n_zero = int(math.floor(cfg.sparsify_fraction * d))
    items = []
    for c in range(cfg.num_classes):
        mu = centroids[c]
        for j in range(cfg.photos_per_class):
            x = mu + cfg.noise_sigma * rng.normal(size=d)
            items.append(DatasetItem(f"photo_{c:04d}_{j:04d}", PHOTO, c, x))
        for j in range(cfg.sketches_per_class):
            z = mu + cfg.noise_sigma * rng.normal(size=d)
            x = m @ z + cfg.noise_sigma * rng.normal(size=d)
            if n_zero:
                x[rng.permutation(d)[:n_zero]] = 0.0
            items.append(DatasetItem(f"sketch_{c:04d}_{j:04d}", SKETCH, c, x))
    return items


def generate_proxy_photos(cfg, num_classes, per_class, rng):
    """Photo-only pretraining pool: same feature space and class subspace as
    ``cfg``, but its own independent class centroids.

    Stands in for a large generic photo-classification corpus.
    """
    cfg.validate()
    centroids = class_centroids(num_classes, cfg, rng)
    items = []
    for c in range(num_classes):
        for j in range(per_class):
            x = centroids[c] + cfg.noise_sigma * rng.normal(size=cfg.feature_dim)
            items.append(DatasetItem(f"proxy_{c:04d}_{j:04d}", PHOTO, c, x))
    return items


def feature_matrix(items):
    return np.stack([it.features for it in items]) if items else np.zeros((0, 0))


def class_ids(items):
    return sorted({it.class_id for it in items})


def counts(items):
    """{class_id: {"sketch": n, "photo": n}}"""
    out = defaultdict(lambda: {SKETCH: 0, PHOTO: 0})
    for it in items:
        out[it.class_id][it.domain] += 1
    return dict(sorted(out.items()))


# ---------------------------------------------------------------- dataset TSV

def format_float(x):
    return repr(float(x))


def save_dataset(items, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for it in items:
            feats = ",".join(format_float(v) for v in it.features)
            fh.write(f"{it.id}\t{it.domain}\t{it.class_id}\t{feats}\n")


def load_dataset(path):
    items = []
    seen_ids = set()
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ParseError(f"expected 4 tab-separated fields, got {len(fields)}",
                                 line=lineno, path=path)
            item_id, domain, cls, feats = fields
            if domain not in DOMAINS:
                raise ParseError(f"unknown domain {domain!r}", line=lineno, path=path)
            try:
                class_id = int(cls)
                vec = np.array([float(v) for v in feats.split(",")], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno, path=path) from None
            if class_id < 0:
                raise ParseError("negative class id", line=lineno, path=path)
            if not np.all(np.isfinite(vec)):
                raise ParseError("non-finite feature value", line=lineno, path=path)
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise DataError(f"{path}:{lineno}: feature dim {vec.size} != {dim}")
            if item_id in seen_ids:
                raise DataError(f"{path}:{lineno}: duplicate id {item_id!r}")
            seen_ids.add(item_id)
            items.append(DatasetItem(item_id, domain, class_id, vec))
    return items


# --------------------------------------------------------------------- splits

@dataclass
class SplitSpec:
    seen_classes: tuple
    unseen_classes: tuple
    protocol_name: str
    seed: int = 0

    def __post_init__(self):
        self.seen_classes = tuple(sorted(int(c) for c in self.seen_classes))
        self.unseen_classes = tuple(sorted(int(c) for c in self.unseen_classes))
        if not self.seen_classes or not self.unseen_classes:
            raise ConfigError("split needs at least one seen and one unseen class")
        if set(self.seen_classes) & set(self.unseen_classes):
            raise ConfigError("seen and unseen classes overlap")

    def to_dict(self):
        return {"protocol": self.protocol_name, "seed": self.seed,
                "seen": list(self.seen_classes), "unseen": list(self.unseen_classes)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["seen"], d["unseen"], d["protocol"], d.get("seed", 0))


def make_split(classes, protocol, params=None, seed=0):
    """Partition ``classes`` into seen/unseen.

    ``random_k`` holds out ``params["k"]`` classes chosen with the seed;
    ``heldout_list`` holds out exactly ``params["heldout"]``.
    """
    classes = sorted(set(int(c) for c in classes))
    params = params or {}
    if protocol == "random_k":
        k = int(params.get("k", 0))
        if not 0 < k < len(classes):
            raise ConfigError(f"random_k needs 0 < k < {len(classes)}, got {k}")
        perm = Rng(seed).permutation(len(classes))
        unseen = [classes[i] for i in perm[:k]]
    elif protocol == "heldout_list":
        unseen = [int(c) for c in params.get("heldout", [])]
        missing = set(unseen) - set(classes)
        if missing:
            raise ConfigError(f"held-out classes not in dataset: {sorted(missing)}")
    else:
        raise ConfigError(f"unknown split protocol {protocol!r}")
    unseen_set = set(unseen)
    seen = [c for c in classes if c not in unseen_set]
    return SplitSpec(seen, sorted(unseen_set), protocol, seed)


def save_split(split, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(split.to_dict(), fh, indent=2)
        fh.write("\n")


def load_split(path):
    with open(path, encoding="utf-8") as fh:
        return SplitSpec.from_dict(json.load(fh))


def filter_classes(items, classes):
    keep = set(classes)
    return [it for it in items if it.class_id in keep]


def stratified_holdout(items, fraction, rng):
    """Split items into (train, val), holding out ``fraction`` of every
    (class, domain) group. Groups of one item stay entirely in train."""
    groups = defaultdict(list)
    for it in items:
        groups[(it.class_id, it.domain)].append(it)
    val_ids = set()
    for key in sorted(groups):
        g = groups[key]
        n_val = int(round(fraction * len(g))) if len(g) > 1 else 0
        n_val = min(n_val, len(g) - 1)
        for i in rng.permutation(len(g))[:n_val]:
            val_ids.add(g[i].id)
    train = [it for it in items if it.id not in val_ids]
    val = [it for it in items if it.id in val_ids]
    return train, val


# ------------------------------------------------------------------ sampling

@dataclass(frozen=True)
class Quadruplet:
    anchor_sketch: DatasetItem
    positive_photo: DatasetItem
    negative_photo: DatasetItem
    negative_sketch: DatasetItem

    def items(self):
        return (self.anchor_sketch, self.positive_photo,
                self.negative_photo, self.negative_sketch)

    def check(self):
        a, p, n, s = self.items()
        ok = (a.domain == SKETCH and p.domain == PHOTO and n.domain == PHOTO
              and s.domain == SKETCH and a.class_id == p.class_id
              and n.class_id != a.class_id and s.class_id != a.class_id)
        if not ok:
            raise SamplingError(f"quadruplet invariant violated: "
                                f"{[(x.domain, x.class_id) for x in self.items()]}")
        return True


@dataclass
class QuadrupletSampler:
    """Domain-balanced sampler over seen-class items (with replacement)."""

    items: list
    by_class: dict = field(init=False)
    classes: list = field(init=False)

    def __post_init__(self):
        by_class = defaultdict(lambda: {SKETCH: [], PHOTO: []})
        for it in self.items:
            by_class[it.class_id][it.domain].append(it)
        self.classes = sorted(by_class)
        self.by_class = {c: by_class[c] for c in self.classes}
        if len(self.classes) < 2:
            raise SamplingError("quadruplet sampling needs at least 2 classes")
        for c in self.classes:
            if not self.by_class[c][SKETCH] or not self.by_class[c][PHOTO]:
                raise SamplingError(f"class {c} needs at least one sketch and one photo")

    def num_sketches(self):
        return sum(len(v[SKETCH]) for v in self.by_class.values())

    def batches_per_epoch(self, batch_quads):
        return math.ceil(self.num_sketches() / batch_quads)

    def _other_class(self, anchor_idx, rng):
        j = rng.randbelow(len(self.classes) - 1)
        if j >= anchor_idx:
            j += 1
        return self.classes[j]

    def sample(self, batch_quads, rng):
        if batch_quads < 1:
            raise SamplingError("batch_quads must be >= 1")
        out = []
        for _ in range(batch_quads):
            ai = rng.randbelow(len(self.classes))
            c = self.classes[ai]
            neg_photo_cls = self._other_class(ai, rng)
            neg_sketch_cls = self._other_class(ai, rng)
            out.append(Quadruplet(
                rng.choice(self.by_class[c][SKETCH]),
                rng.choice(self.by_class[c][PHOTO]),
                rng.choice(self.by_class[neg_photo_cls][PHOTO]),
                rng.choice(self.by_class[neg_sketch_cls][SKETCH]),
            ))
        return out


def sample_batch(items, batch_quads, rng):
    return QuadrupletSampler(list(items)).sample(batch_quads, rng)


def stack_quadruplets(quads):
    """Stack a batch into a ``(4N, dim)`` matrix ordered
    [anchors; positives; negative photos; negative sketches] plus labels."""
    slots = list(zip(*(q.items() for q in quads)))
    ordered = [it for slot in slots for it in slot]
    x = np.stack([it.features for it in ordered])
    labels = np.array([it.class_id for it in ordered], dtype=np.int64)
    return x, labels
