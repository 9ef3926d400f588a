"""Student encoder: dense ReLU backbone with classification, embedding and
distillation heads, plus exact manual backpropagation.

Inputs may be a single feature vector or a batch (one row per item). All
heads read the same backbone output, so the four quadruplet streams are just
rows of one batch pushed through a single parameter set.
"""

import copy
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .ndcore import Rng

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
REPORTED_EMBED_DIMS = (64, 512, 1024)


@dataclass
class EncoderConfig:
    input_dim: int
    hidden_dims: list = field(default_factory=list)
    embed_dim: int = 512
    num_seen_classes: int = 2
    teacher_class_count: int = 1000
    init_seed: int = 0

    def validate(self):
        dims = [self.input_dim, *self.hidden_dims, self.embed_dim,
                self.num_seen_classes, self.teacher_class_count]
        if any(int(d) < 1 for d in dims):
            raise ConfigError(f"encoder dimensions must be >= 1, got {dims}")
        if self.embed_dim not in REPORTED_EMBED_DIMS:
            logger.warning("embed_dim=%d is not one of the reported sizes %s",
                           self.embed_dim, REPORTED_EMBED_DIMS)
        return self


class DenseLayer:
    """Affine map ``y = x @ weight + bias`` with optional ReLU."""

    def __init__(self, weight, bias, relu):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.relu = bool(relu)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @classmethod
    def init(cls, fan_in, fan_out, relu, rng):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        return cls(w, np.zeros(fan_out), relu)

    @property
    def in_dim(self):
        return self.weight.shape[0]

    @property
    def out_dim(self):
        return self.weight.shape[1]

    def forward(self, x):
        pre = x @ self.weight + self.bias
        out = np.maximum(pre, 0.0) if self.relu else pre
        return pre, out

    def backward(self, x, pre, d_out):
        d_pre = d_out * (pre > 0.0) if self.relu else d_out
        self.grad_weight += x.T @ d_pre
        self.grad_bias += d_pre.sum(axis=0)
        return d_pre @ self.weight.T

    def zero_grads(self):
        self.grad_weight.fill(0.0)
        self.grad_bias.fill(0.0)

    def to_dict(self):
        return {
            "weight": self.weight.tolist(),
            "bias": self.bias.tolist(),
            "relu": self.relu,
        }

    @classmethod
    def from_dict(cls, d):
        w = np.asarray(d["weight"], dtype=np.float64)
        b = np.asarray(d["bias"], dtype=np.float64)
        if w.ndim != 2 or b.shape != (w.shape[1],):
            raise ShapeError(f"bad layer shapes {w.shape} / {b.shape}")
        return cls(w, b, d["relu"])


def build_stack(dims, rng, final_relu):
    """Layers mapping ``dims[0] -> ... -> dims[-1]``; ReLU on all but the
    last unless ``final_relu``."""
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        layers.append(DenseLayer.init(a, b, relu=final_relu or not last, rng=rng))
    return layers


@dataclass
class ForwardRecord:
    """Everything backward needs, plus the three head outputs.

    ``inputs[i]``/``pres[i]`` are the input and pre-activation of backbone
    layer ``i``; ``features`` is the shared backbone output.
    """

    inputs: list
    pres: list
    features: np.ndarray
    embedding: np.ndarray
    cls_logits: np.ndarray
    soft_logits: np.ndarray
    batched: bool


class EncoderNetwork:
    HEADS = ("head_cls", "head_sim", "head_soft")

    def __init__(self, config, backbone, head_cls, head_sim, head_soft):
        self.config = config
        self.backbone = list(backbone)
        self.head_cls = head_cls
        self.head_sim = head_sim
        self.head_soft = head_soft
        self._check()

    @classmethod
    def init(cls, config, rng=None):
        config.validate()
        if rng is None:
            rng = Rng(config.init_seed)
        dims = [config.input_dim, *config.hidden_dims]
        # hidden_dims=[] gives an empty backbone; heads then read the raw input
        backbone = build_stack(dims, rng, final_relu=True) if len(dims) > 1 else []
        feat = dims[-1]
        head_cls = DenseLayer.init(feat, config.num_seen_classes, False, rng)
        head_sim = DenseLayer.init(feat, config.embed_dim, False, rng)
        head_soft = DenseLayer.init(feat, config.teacher_class_count, False, rng)
        return cls(config, backbone, head_cls, head_sim, head_soft)

    def _check(self):
        cfg = self.config
        feat = cfg.hidden_dims[-1] if cfg.hidden_dims else cfg.input_dim
        expected = [cfg.input_dim, *cfg.hidden_dims]
        got = [self.backbone[0].in_dim] + [l.out_dim for l in self.backbone] \
            if self.backbone else [cfg.input_dim]
        if got != expected:
            raise ShapeError(f"backbone dims {got} do not match config {expected}")
        for head, out in zip(self.heads(), (cfg.num_seen_classes, cfg.embed_dim,
                                            cfg.teacher_class_count)):
            if head.weight.shape != (feat, out):
                raise ShapeError(f"head shape {head.weight.shape} != {(feat, out)}")

    def heads(self):
        return [self.head_cls, self.head_sim, self.head_soft]

    def layers(self):
        return [*self.backbone, *self.heads()]

    def named_parameters(self):
        """(name, param, grad) triples in a fixed order."""
        out = []
        for i, layer in enumerate(self.backbone):
            out.append((f"backbone.{i}.weight", layer.weight, layer.grad_weight))
            out.append((f"backbone.{i}.bias", layer.bias, layer.grad_bias))
        for name, layer in zip(self.HEADS, self.heads()):
            out.append((f"{name}.weight", layer.weight, layer.grad_weight))
            out.append((f"{name}.bias", layer.bias, layer.grad_bias))
        return out

    def num_parameters(self):
        return sum(p.size for _, p, _ in self.named_parameters())

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        batched = x.ndim == 2
        if not batched:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.config.input_dim:
            raise ShapeError(f"expected input_dim {self.config.input_dim}, "
                             f"got shape {np.shape(x)}")
        inputs, pres = [], []
        h = x
        for layer in self.backbone:
            pre, out = layer.forward(h)
            inputs.append(h)
            pres.append(pre)
            h = out
        cls_logits = self.head_cls.forward(h)[1]
        embedding = self.head_sim.forward(h)[1]
        soft_logits = self.head_soft.forward(h)[1]
        if not batched:
            cls_logits, embedding, soft_logits = cls_logits[0], embedding[0], soft_logits[0]
        return ForwardRecord(inputs, pres, h, embedding, cls_logits, soft_logits, batched)

    def backward(self, record, d_embedding, d_cls_logits, d_soft_logits):
        """Accumulate parameter gradients; return the gradient w.r.t. input."""
        feats = record.features
        n = feats.shape[0]
        grads = []
        for g, head in zip((d_cls_logits, d_embedding, d_soft_logits),
                           (self.head_cls, self.head_sim, self.head_soft)):
            g = np.asarray(g, dtype=np.float64)
            if g.ndim == 1:
                g = g[None, :]
            if g.shape != (n, head.out_dim):
                raise ShapeError(f"upstream gradient {g.shape} != {(n, head.out_dim)}")
            grads.append(g)
        d_h = np.zeros_like(feats)
        for g, head in zip(grads, (self.head_cls, self.head_sim, self.head_soft)):
            d_h += head.backward(feats, feats, g)
        for layer, x, pre in zip(reversed(self.backbone), reversed(record.inputs),
                                 reversed(record.pres)):
            d_h = layer.backward(x, pre, d_h)
        return d_h if record.batched else d_h[0]

    def zero_grads(self):
        for layer in self.layers():
            layer.zero_grads()

    def apply_embedding_only(self, x):
        x = np.asarray(x, dtype=np.float64)
        batched = x.ndim == 2
        h = x if batched else x[None, :]
        if h.shape[1] != self.config.input_dim:
            raise ShapeError(f"expected input_dim {self.config.input_dim}, got {x.shape}")
        for layer in self.backbone:
            h = layer.forward(h)[1]
        emb = self.head_sim.forward(h)[1]
        return emb if batched else emb[0]

    def copy(self):
        return copy.deepcopy(self)

    def to_dict(self):
        return {
            "format": "zsrl-encoder",
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "backbone": [l.to_dict() for l in self.backbone],
            "head_cls": self.head_cls.to_dict(),
            "head_sim": self.head_sim.to_dict(),
            "head_soft": self.head_soft.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "zsrl-encoder" or d.get("version") != CHECKPOINT_VERSION:
            raise ConfigError("not a version-1 encoder checkpoint")
        config = EncoderConfig(**d["config"])
        return cls(config,
                   [DenseLayer.from_dict(l) for l in d["backbone"]],
                   DenseLayer.from_dict(d["head_cls"]),
                   DenseLayer.from_dict(d["head_sim"]),
                   DenseLayer.from_dict(d["head_soft"]))


def init(config, rng=None):
    return EncoderNetwork.init(config, rng)


def save_checkpoint(net, path):
    # json writes floats with repr(), the shortest string that round-trips exactly
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(net.to_dict(), fh)
        fh.write("\n")


def load_checkpoint(path):
    with open(path, encoding="utf-8") as fh:
        return EncoderNetwork.from_dict(json.load(fh))
