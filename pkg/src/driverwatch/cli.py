"""Command-line entry point: classify, eval, bench, params, split, train-head.

Exit codes: 0 success, 2 bad arguments or dataset layout, 3 weight-file
failure, 4 image failure. Error messages go to stderr; machine output is
versioned JSON/CSV. All randomness flows from --seed; DW_WORKERS is the
environment fallback for --workers.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import benchmark as B
from . import data as D
from . import graph as G
from . import metrics as M
from . import trainer as TR
from .tensor import softmax
from .weights import WeightFormatError, load_dwt, save_dwt

PREDICTION_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_WEIGHTS = 3
EXIT_IMAGE = 4


class WeightLoadError(Exception):
    pass


@dataclass(frozen=True)
class Prediction:
    class_id: int
    label: str
    probs: tuple[float, ...]
    topk: tuple[tuple[int, float], ...]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": PREDICTION_SCHEMA_VERSION,
            "class_id": self.class_id,
            "label": self.label,
            "probs": list(self.probs),
            "topk": [
                {"class_id": c, "label": _label(c, len(self.probs)), "prob": p}
                for c, p in self.topk
            ],
        }


def _label(class_id: int, nc: int) -> str:
    if nc == D.NUM_CLASSES:
        return D.label_for(class_id)
    return f"class{class_id}"


def predict(logits_row: np.ndarray, topk: int) -> Prediction:
    probs = softmax(logits_row)
    order = np.argsort(-probs, kind="stable")  # ties resolve to the lower class id
    best = int(order[0])
    return Prediction(
        class_id=best,
        label=_label(best, len(probs)),
        probs=tuple(float(p) for p in probs),
        topk=tuple((int(i), float(probs[i])) for i in order[:topk]),
    )


def _load_bound_model(weights_path) -> tuple[G.Model, dict]:
    try:
        store = load_dwt(weights_path)
    except OSError as e:
        raise WeightLoadError(f"cannot read weight file {weights_path}: {e}") from e
    except WeightFormatError as e:
        raise WeightLoadError(f"malformed weight file {weights_path}: {e}") from e
    arch = store.metadata.get("arch", "yolov8n-cls")
    nc = int(store.metadata.get("nc", D.NUM_CLASSES))
    try:
        model = G.build_model(arch, nc).bind(store)
    except (ValueError, G.BindError) as e:
        raise WeightLoadError(f"weight file {weights_path} does not fit the graph: {e}") from e
    return model, store.metadata


def _parse_ratios(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"need three comma-separated ratios, got {text!r}")
    try:
        ratios = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"ratios must be numbers, got {text!r}")
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-6:
        raise argparse.ArgumentTypeError(f"ratios must be positive and sum to 1, got {text!r}")
    return ratios  # type: ignore[return-value]


def _workers(args) -> int:
    if getattr(args, "workers", None) is not None:
        return args.workers
    return int(os.environ.get("DW_WORKERS", "1"))


def _scan_and_split(args) -> tuple[D.DatasetIndex, D.Split]:
    index = D.scan(args.data_root, subject_csv=getattr(args, "subject_csv", None))
    strategy = "grouped_by_subject" if args.group_by_subject else "stratified_random"
    spec = D.SplitSpec(ratios=args.ratios, seed=args.seed, strategy=strategy)
    return index, D.split(index, spec)


# ---------------------------------------------------------------------------
# subcommands


def cmd_classify(args) -> int:
    model, _ = _load_bound_model(args.weights)
    batch = D.preprocess(args.image)
    logits = G.forward(model, batch)[0]
    pred = predict(logits, min(args.topk, model.config.num_classes))
    if args.json:
        print(json.dumps(pred.to_json_dict(), sort_keys=True))
    else:
        print(f"c{pred.class_id} {pred.label} p={pred.probs[pred.class_id]:.4f}")
        for class_id, prob in pred.topk:
            print(f"  c{class_id} {_label(class_id, len(pred.probs))} p={prob:.4f}")
    return EXIT_OK


def cmd_params(args) -> int:
    model = G.build_model(args.arch, args.classes)
    counters = G.count_macs(model, args.input_size)
    total = G.count_params(model)
    if args.json:
        print(json.dumps({
            "arch": args.arch,
            "num_classes": args.classes,
            "total_params": total,
            "input_size": args.input_size,
            "macs": counters["macs"],
            "flops": counters["flops"],
            "aux_ops": counters["aux_ops"],
            "flops_at_640_probe_scaled": G.stride_probe_flops(model, 640),
            "layers": [{"layer": desc, "params": p} for desc, p in G.per_layer_params(model)],
            "tensors": [
                {"name": name, "shape": list(shape)}
                for name, shape in sorted(G.expected_tensors(model).items())
            ],
        }, sort_keys=True))
        return EXIT_OK
    for desc, p in G.per_layer_params(model):
        print(f"{desc:<40} {p:>10}")
    print(f"input {args.input_size}: macs={counters['macs']} flops={counters['flops']} "
          f"aux_ops={counters['aux_ops']}")
    print(f"probe-scaled flops at 640: {G.stride_probe_flops(model, 640)}")
    print(total)
    return EXIT_OK


def cmd_split(args) -> int:
    index, sp = _scan_and_split(args)
    paths = D.write_split_manifests(sp, index, args.out)
    print(f"total={len(index)} train={len(sp.train)} val={len(sp.val)} test={len(sp.test)}")
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = _load_bound_model(args.weights)
    _, sp = _scan_and_split(args)
    samples = list(sp.part(args.split))
    report = M.evaluate(model, samples, workers=_workers(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    M.write_report_json(report, out / "report.json")
    M.write_confusion_csv(report.confusion, out / "confusion.csv")
    print(f"macro precision={report.macro.precision:.6f} recall={report.macro.recall:.6f} "
          f"f1={report.macro.f1:.6f} top1={report.top1:.6f} top5={report.top5:.6f} "
          f"n={report.n_evaluated}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.weights:
        model, _ = _load_bound_model(args.weights)
    else:
        base = G.build_model(args.arch, args.classes)
        model = base.bind(G.random_weight_store(base, seed=args.seed))
    report = B.bench(model, input_size=args.input_size, iters=args.iters,
                     warmup=args.warmup, threads=args.threads, seed=args.seed)
    if args.json:
        print(json.dumps(report.to_json_dict(), sort_keys=True))
    else:
        print(report.table_row())
    if args.out:
        B.write_bench_json(report, args.out)
    return EXIT_OK


def cmd_train_head(args) -> int:
    model, metadata = _load_bound_model(args.weights)
    _, sp = _scan_and_split(args)
    config = TR.TrainConfig(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                            seed=args.seed, l2=args.l2)
    weight, bias, records = TR.train_head(
        model, list(sp.train), list(sp.val), config,
        cache_dir=args.cache_dir, workers=_workers(args),
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    TR.write_epoch_csv(records, out / "epochs.csv")
    TR.save_head_weights(weight, bias, out / "head.dwt", metadata)
    merged = TR.merge_head(model.weights, weight, bias)
    save_dwt(merged, out / "merged.dwt", dtype="f32")
    last = records[-1]
    print(f"epoch={last.epoch} train_loss={last.train_loss:.6f} "
          f"val_loss={last.val_loss:.6f} top1={last.top1:.6f} top5={last.top5:.6f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driverwatch",
        description="Distracted-driving classifier: inference, evaluation, benchmarking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="classify a single image")
    p.add_argument("--weights", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--topk", type=int, default=5)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("params", help="print parameter and FLOP accounting")
    p.add_argument("--classes", type=int, default=D.NUM_CLASSES)
    p.add_argument("--arch", default="yolov8n-cls", choices=sorted(G.ARCHITECTURES))
    p.add_argument("--input-size", type=int, default=224)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("split", help="write deterministic split manifests")
    p.add_argument("--data-root", required=True)
    p.add_argument("--ratios", type=_parse_ratios, default=(0.70, 0.15, 0.15))
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--group-by-subject", action="store_true")
    p.add_argument("--subject-csv", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("eval", help="evaluate a split and write report files")
    p.add_argument("--weights", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--ratios", type=_parse_ratios, default=(0.70, 0.15, 0.15))
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--group-by-subject", action="store_true")
    p.add_argument("--subject-csv", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="latency benchmark")
    p.add_argument("--weights", default=None)
    p.add_argument("--arch", default="yolov8n-cls", choices=sorted(G.ARCHITECTURES))
    p.add_argument("--classes", type=int, default=D.NUM_CLASSES)
    p.add_argument("--input-size", type=int, default=224)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train-head", help="train the linear head on frozen features")
    p.add_argument("--weights", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--ratios", type=_parse_ratios, default=(0.70, 0.15, 0.15))
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--l2", type=float, default=0.0)
    p.add_argument("--group-by-subject", action="store_true")
    p.add_argument("--subject-csv", default=None)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_head)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    try:
        return args.func(args)
    except WeightLoadError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_WEIGHTS
    except D.ImageDecodeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IMAGE
    except (D.DatasetError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
