"""``zsrl`` command line: gen-data, soft-labels, train, eval, ablate.

stdout carries exactly one JSON status line per invocation; diagnostics go
to stderr (verbosity from ``ZSRL_LOG``).

Exit codes:
    0  success
    1  unexpected internal error
    2  configuration error
    3  missing or invalid input data (soft labels, class photos, files)
    4  numeric failure during training
    5  dimension mismatch between checkpoint and data
    6  evaluation impossible (no query has a relevant gallery item)
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import config as config_mod
from .data import counts, save_dataset, save_split
from .distill import load_soft_labels, save_soft_labels
from .encoder import load_checkpoint, save_checkpoint
from .errors import ConfigError, DataError, EvaluationError, NumericError, ShapeError
from .evalrank import write_topk
from .pipeline import (evaluate_model, load_items, load_or_make_split, make_soft_labels,
                       run_ablation, train_model)

logger = logging.getLogger("zsrl")

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_SHAPE, EXIT_EVAL = range(7)


class MissingInput(DataError):
    pass


def _setup_logging():
    level = os.environ.get("ZSRL_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        level = "info"
    root = logging.getLogger()
    for h in list(root.handlers):
        root.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(levels[level])


def _out(cfg, name):
    return os.path.join(cfg.output_dir, name)


def _soft_label_path(cfg):
    return cfg.distill.soft_label_path or _out(cfg, "soft_labels.tsv")


def cmd_gen_data(cfg, args):
    items = load_items(cfg)
    split = load_or_make_split(cfg, items)
    save_dataset(items, _out(cfg, "dataset.tsv"))
    save_split(split, _out(cfg, "split.json"))
    per_class = counts(items)
    for c, n in per_class.items():
        logger.info("class %d: %d sketches, %d photos", c, n["sketch"], n["photo"])
    return {"dataset": _out(cfg, "dataset.tsv"), "split": _out(cfg, "split.json"),
            "num_items": len(items), "num_classes": len(per_class),
            "num_seen": len(split.seen_classes), "num_unseen": len(split.unseen_classes),
            "sketches": sum(n["sketch"] for n in per_class.values()),
            "photos": sum(n["photo"] for n in per_class.values())}


def cmd_soft_labels(cfg, args):
    items = load_items(cfg)
    split = load_or_make_split(cfg, items)
    teacher, table = make_soft_labels(cfg, items, split)
    path = _soft_label_path(cfg)
    save_soft_labels(table, path)
    # re-read to validate what actually hit the disk
    load_soft_labels(path)
    with open(_out(cfg, "teacher.json"), "w", encoding="utf-8") as fh:
        json.dump(teacher.to_dict(), fh)
        fh.write("\n")
    return {"soft_labels": path, "classes": len(table), "width": table.width,
            "teacher_proxy_accuracy": teacher.proxy_accuracy}


def cmd_train(cfg, args):
    items = load_items(cfg)
    split = load_or_make_split(cfg, items)
    table = None
    if cfg.losses.enable_knowledge:
        path = _soft_label_path(cfg)
        if not os.path.exists(path):
            raise MissingInput(f"knowledge loss enabled but soft-label file {path} "
                               f"does not exist (run soft-labels first)")
        table = load_soft_labels(path)
    result = train_model(cfg, items, split, table, log_path=_out(cfg, "metrics.jsonl"))
    save_checkpoint(result.net, _out(cfg, "checkpoint.json"))
    st = result.state
    return {"checkpoint": _out(cfg, "checkpoint.json"),
            "metrics_log": _out(cfg, "metrics.jsonl"), "epochs_run": len(result.log),
            "best_epoch": st.best_epoch, "best_val_metric": st.best_val_metric,
            "stopped_early": st.stopped_early}


def cmd_eval(cfg, args):
    ckpt = args.checkpoint or _out(cfg, "checkpoint.json")
    if not os.path.exists(ckpt):
        raise MissingInput(f"checkpoint {ckpt} does not exist")
    net = load_checkpoint(ckpt)
    items = load_items(cfg)
    split = load_or_make_split(cfg, items)
    results, rankings = evaluate_model(cfg, net, items, split)
    doc = {"config": cfg.raw.get("eval", {}), "split": split.to_dict(), "results": results}
    with open(_out(cfg, "results.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    outputs = {"results": _out(cfg, "results.json")}
    if cfg.eval.topk:
        for mode, ranked in rankings.items():
            path = _out(cfg, f"topk_{mode}.tsv")
            write_topk(ranked, cfg.eval.topk, path)
            outputs[f"topk_{mode}"] = path
    outputs["summary"] = {f"{r['gallery_mode']}/{r['ap_normalizer']}": r["metrics"]
                          for r in results}
    return outputs


def write_ablation_csv(rows, path):
    seeds = rows[0]["seeds"]
    metric_keys = list(rows[0]["mean"])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# seeds={' '.join(str(s) for s in seeds)}\n")
        fh.write(",".join(["quad", "id", "know", *metric_keys, "mAP@all_per_seed"]) + "\n")
        for r in rows:
            flags = ["1" if r[k] else "0" for k in ("quad", "id", "know")]
            vals = [repr(r["mean"][k]) for k in metric_keys]
            per = ";".join(repr(p["mAP@all"]) for p in r["per_seed"])
            fh.write(",".join([*flags, *vals, per]) + "\n")


def cmd_ablate(cfg, args):
    rows = run_ablation(cfg)
    path = _out(cfg, "ablation.csv")
    write_ablation_csv(rows, path)
    return {"ablation": path, "rows": [
        {"quad": r["quad"], "id": r["id"], "know": r["know"],
         "mAP@all": r["mean"]["mAP@all"]} for r in rows]}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "soft-labels": cmd_soft_labels,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="zsrl", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment JSON config")
        p.add_argument("--output-dir", help="overrides output_dir in the config")
        p.add_argument("--seed", type=int, help="overrides the top-level seed")
        if name == "eval":
            p.add_argument("--checkpoint", help="defaults to <output_dir>/checkpoint.json")
    return parser


def _status(payload):
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stdout.flush()


# checked in order; ShapeError is a ValueError, so it precedes the data errors
_EXIT_CODES = (
    (ConfigError, EXIT_CONFIG),
    (ShapeError, EXIT_SHAPE),
    ((DataError, KeyError, FileNotFoundError), EXIT_DATA),
    (NumericError, EXIT_NUMERIC),
    (EvaluationError, EXIT_EVAL),
)


def _exit_code(exc):
    for types, code in _EXIT_CODES:
        if isinstance(exc, types):
            return code
    return EXIT_INTERNAL


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code:
            _status({"status": "error", "exit_code": EXIT_CONFIG, "error": "bad arguments"})
            return EXIT_CONFIG
        return EXIT_OK
    _setup_logging()
    try:
        cfg = config_mod.load(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = replace(cfg, seed=args.seed)
        if args.output_dir:
            cfg = replace(cfg, output_dir=args.output_dir)
        os.makedirs(cfg.output_dir, exist_ok=True)
        outputs = COMMANDS[args.command](cfg, args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an exit code
        code = _exit_code(exc)
        if code == EXIT_INTERNAL:
            logger.exception("internal error")
        else:
            logger.error("%s", exc)
        _status({"status": "error", "command": args.command, "exit_code": code,
                 "error": str(exc)})
        return code
    _status({"status": "ok", "command": args.command, "outputs": outputs})
    return EXIT_OK

if __name__ == "__main__":
    sys.exit(main())
