"""Experiment configuration: JSON schema, validation and typed sections."""

import json
from dataclasses import dataclass, field, fields

import jsonschema

from .data import SynthConfig
from .distill import SOFT_LABEL_MODES, TeacherConfig
from .errors import ConfigError
from .evalrank import GALLERY_MODES, NORMALIZERS
from .losses import LossConfig
from .optim import OptimizerConfig
from .trainer import VAL_MODES

_INT = {"type": "integer", "minimum": 0}
_POS = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_BOOL = {"type": "boolean"}
_STR = {"type": "string"}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "zsrl experiment",
    **_obj({
        "seed": _INT,
        "output_dir": _STR,
        "data": _obj({
            "path": _STR,
            "synth": _obj({
                "num_classes": _POS, "sketches_per_class": _POS,
                "photos_per_class": _POS, "feature_dim": _POS,
                "class_separation": _NUM, "sketch_transform_seed": _INT,
                "sparsify_fraction": _NUM, "noise_sigma": _NUM,
                "transform_strength": _NUM, "latent_dim": _INT, "basis_seed": _INT,
            }),
        }),
        "split": _obj({
            "path": _STR,
            "protocol": {"enum": ["random_k", "heldout_list"]},
            "k": _POS,
            "heldout": {"type": "array", "items": _INT},
        }),
        "encoder": _obj({
            "hidden_dims": {"type": "array", "items": _POS},
            "embed_dim": _POS,
        }),
        "losses": _obj({
            "margin_alpha": {"type": "number", "minimum": 0},
            "enable_quadruplet": _BOOL, "enable_cls": _BOOL,
            "enable_knowledge": _BOOL, "normalize_embeddings": _BOOL,
        }),
        "optimizer": _obj({
            "lr0": {"type": "number", "minimum": 0},
            "momentum": _NUM, "weight_decay": _NUM, "lr_decay_factor": _NUM,
            "lr_decay_every_epochs": _POS, "max_epochs": _POS,
            "early_stop_patience": _POS, "batch_quads": _POS,
        }),
        "training": _obj({
            "val_mode": {"enum": list(VAL_MODES)},
            "val_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        }),
        "distill": _obj({
            "soft_label_path": _STR,
            "soft_label_mode": {"enum": list(SOFT_LABEL_MODES)},
            "proxy_classes": _POS, "proxy_photos_per_class": _POS,
            "hidden_dim": _POS, "lr": _NUM, "momentum": _NUM, "weight_decay": _NUM,
            "batch_size": _POS, "max_epochs": _POS, "target_accuracy": _NUM,
        }),
        "eval": _obj({
            "precision_ks": {"type": "array", "items": _POS},
            "map_ks": {"type": "array", "items": _POS},
            "map_mode": {"enum": ["at_all", "at_k"]},
            "ap_normalizers": {"type": "array", "items": {"enum": list(NORMALIZERS)},
                               "minItems": 1},
            "gallery_modes": {"type": "array", "items": {"enum": list(GALLERY_MODES)},
                              "minItems": 1},
            "topk": _INT,
            "oracle_check": _BOOL,
        }),
        "ablation": _obj({"seeds": {"type": "array", "items": _INT, "minItems": 1}}),
    }),
}


@dataclass
class SplitConfig:
    path: str = None
    protocol: str = "random_k"
    k: int = None
    heldout: list = None


@dataclass
class EncoderSection:
    hidden_dims: list = field(default_factory=lambda: [64])
    embed_dim: int = 512


@dataclass
class TrainingSection:
    val_mode: str = "accuracy"
    val_fraction: float = 0.1


@dataclass
class DistillSection:
    soft_label_path: str = None
    soft_label_mode: str = "logit_mean"
    proxy_classes: int = 16
    proxy_photos_per_class: int = 50
    teacher: TeacherConfig = field(default_factory=TeacherConfig)


@dataclass
class EvalSection:
    precision_ks: list = field(default_factory=lambda: [100, 200])
    map_ks: list = field(default_factory=lambda: [200])
    map_mode: str = "at_all"
    ap_normalizers: list = field(default_factory=lambda: ["total_relevant",
                                                          "min_k_relevant"])
    gallery_modes: list = field(default_factory=lambda: ["zero_shot", "generalized"])
    topk: int = 0
    oracle_check: bool = False


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    data_path: str = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    losses: LossConfig = field(default_factory=LossConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingSection = field(default_factory=TrainingSection)
    distill: DistillSection = field(default_factory=DistillSection)
    eval: EvalSection = field(default_factory=EvalSection)
    ablation_seeds: list = None
    raw: dict = field(default_factory=dict, repr=False)


def validate(doc):
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None


def _build(cls, section):
    try:
        return cls(**section)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def from_dict(doc):
    """Validate a config document and build typed sections."""
    validate(doc)
    data = doc.get("data", {})
    if "path" in data and "synth" in data:
        raise ConfigError("data: give either 'path' or 'synth', not both")
    synth = _build(SynthConfig, data.get("synth", {})).validate()
    split = _build(SplitConfig, doc.get("split", {}))
    if split.path is None:
        if split.protocol == "random_k" and split.k is None:
            raise ConfigError("split: random_k protocol needs 'k'")
        if split.protocol == "heldout_list" and split.heldout is None:
            raise ConfigError("split: heldout_list protocol needs 'heldout'")
    distill = dict(doc.get("distill", {}))
    teacher_keys = {f.name for f in fields(TeacherConfig)}
    teacher = _build(TeacherConfig, {k: distill.pop(k) for k in list(distill)
                                     if k in teacher_keys})
    ev = _build(EvalSection, doc.get("eval", {}))
    if ev.map_mode == "at_k" and not ev.map_ks:
        raise ConfigError("eval: map_mode at_k needs map_ks")
    return ExperimentConfig(
        seed=doc.get("seed", 0),
        output_dir=doc.get("output_dir", "runs/default"),
        data_path=data.get("path"),
        synth=synth,
        split=split,
        encoder=_build(EncoderSection, doc.get("encoder", {})),
        losses=_build(LossConfig, doc.get("losses", {})),
        optimizer=_build(OptimizerConfig, doc.get("optimizer", {})),
        training=_build(TrainingSection, doc.get("training", {})),
        distill=DistillSection(teacher=teacher, **distill),
        eval=ev,
        ablation_seeds=doc.get("ablation", {}).get("seeds"),
        raw=doc,
    )


def load(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return from_dict(doc)
