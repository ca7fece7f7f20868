"""Command-line entry points: gen, train, eval, compare.

Exit codes: 0 success; 2 usage or input errors (bad flags, missing files);
3 external model unreachable or handshake failure; 4 capability mismatch
between method and model; 5 training divergence; 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import AugmentationPolicy, generate_dataset, load_manifest
from .explain import METHODS, make_explainer, write_explanation
from .model import ReferenceCNN, TrainingDivergedError, UnsupportedCapabilityError
from .protocols import EvalOptions, evaluate
from .render import RenderConfig, load_image_png
from .report import (
    build_report,
    compare_table,
    dataset_hash,
    hashes_match,
    load_report,
    radar_from_reports,
    radar_svg,
    write_report,
)
from .wire import WireError, connect_external

EXIT_USAGE = 2
EXIT_CONNECT = 3
EXIT_CAPABILITY = 4
EXIT_DIVERGED = 5


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funnybench",
        description="Generate the synthetic part-annotated bird dataset, train the "
        "reference model, and score explanation methods against "
        "intervention-derived part importances.",
    )
    parser.add_argument("--version", action="version", version=f"funnybench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a dataset")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--train", type=int, default=5000)
    gen.add_argument("--test", type=int, default=500)
    gen.add_argument("--resolution", type=int, default=64)
    gen.add_argument("--frac-removals", type=float, default=0.5,
                     help="fraction of train samples with parts removed")

    train = sub.add_parser("train", help="train the reference CNN")
    train.add_argument("--dataset", required=True)
    train.add_argument("--out", required=True, help="weights file to write")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--epochs", type=int, default=20)
    train.add_argument("--lr", type=float, default=0.01)
    train.add_argument("--batch-size", type=int, default=64)
    train.add_argument("--metrics", help="write the per-epoch metrics log to this JSON file")
    train.add_argument("--quiet", action="store_true")

    ev = sub.add_parser("eval", help="run the protocol suite")
    ev.add_argument("--dataset", required=True)
    group = ev.add_mutually_exclusive_group(required=True)
    group.add_argument("--model", help="weights file of the builtin model")
    group.add_argument("--external", help="external model endpoint (tcp://host:port or stdio:CMD)")
    ev.add_argument("--method", required=True, choices=sorted(METHODS))
    ev.add_argument("--report", required=True, help="report JSON output path")
    ev.add_argument("--radar", help="optional radar SVG output path")
    ev.add_argument("--threshold", default="auto",
                    help="importance threshold t, or 'auto' to calibrate (default)")
    ev.add_argument("--limit", type=int, help="evaluate only the first N test samples")
    ev.add_argument("--threads", type=int, default=1)
    ev.add_argument("--seed", type=int, default=0, help="seed for stochastic methods")
    ev.add_argument("--method-config", action="append", default=[], metavar="KEY=VALUE",
                    help="method hyperparameter override (repeatable)")
    ev.add_argument("--dump-explanations", metavar="DIR",
                    help="write raw explanation containers for the first 8 samples")

    cmp_ = sub.add_parser("compare", help="compare evaluation reports")
    cmp_.add_argument("reports", nargs="+", help="report JSON files")
    cmp_.add_argument("--radar", help="optional multi-series radar SVG")
    return parser


def cmd_gen(args) -> int:
    if args.train < 1 or args.test < 1:
        raise CliError("--train and --test must be >= 1")
    if not 0.0 <= args.frac_removals <= 1.0:
        raise CliError("--frac-removals must lie in [0, 1]")
    try:
        config = RenderConfig(resolution=args.resolution)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    started = time.time()
    manifest = generate_dataset(
        args.out,
        sizes={"train": args.train, "test": args.test},
        seed=args.seed,
        policy=AugmentationPolicy(fraction_with_removals=args.frac_removals),
        render_config=config,
    )
    print(
        f"wrote {len(manifest.train)} train / {len(manifest.test)} test samples to "
        f"{args.out} in {time.time() - started:.1f}s "
        f"(mean background objects: {manifest.mean_bg_objects:.2f})"
    )
    return 0


def _load_split_images(manifest, root: Path, split: str):
    samples = manifest.split(split)
    images = np.stack([load_image_png(root / s.image_path) for s in samples])
    return samples, images


def cmd_train(args) -> int:
    root = Path(args.dataset)
    try:
        manifest = load_manifest(root)
    except (FileNotFoundError, ValueError) as exc:
        raise CliError(str(exc)) from exc
    train_samples, train_images = _load_split_images(manifest, root, "train")
    test_samples, test_images = _load_split_images(manifest, root, "test")
    targets = [sorted(s.valid_target_set) for s in train_samples]
    test_targets = [s.primary_class for s in test_samples]

    model = ReferenceCNN(
        resolution=manifest.render_config.resolution,
        n_classes=len(manifest.class_space),
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    started = time.time()
    model.fit(train_images, targets, eval_set=(test_images, test_targets),
              verbose=not args.quiet)
    model.save(args.out)
    final = model.history_[-1]
    print(
        f"trained {args.epochs} epochs in {time.time() - started:.1f}s; "
        f"test accuracy {final['test_accuracy']:.4f}; weights -> {args.out}"
    )
    if args.metrics:
        Path(args.metrics).write_text(
            json.dumps(model.history_, indent=1) + "\n", encoding="utf-8"
        )
    return 0


def _parse_method_config(pairs: list[str], seed: int, method: str) -> dict:
    config: dict = {}
    for pair in pairs:
        if "=" not in pair:
            raise CliError(f"--method-config expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value
        config[key.replace("-", "_")] = parsed
    if method in ("rise", "lime") and "seed" not in config:
        config["seed"] = seed
    return config


def cmd_eval(args) -> int:
    root = Path(args.dataset)
    try:
        manifest = load_manifest(root)
    except (FileNotFoundError, ValueError) as exc:
        raise CliError(str(exc)) from exc

    if args.model:
        if not Path(args.model).is_file():
            raise CliError(f"no weights file at {args.model}")
        model = ReferenceCNN.load(args.model)
        model_spec = {"builtin": str(args.model)}
    else:
        try:
            model = connect_external(args.external)
        except (WireError, ValueError, OSError) as exc:
            raise CliError(f"cannot use external model: {exc}", EXIT_CONNECT) from exc
        model_spec = {"external": args.external}

    method_config = _parse_method_config(args.method_config, args.seed, args.method)
    try:
        explainer = make_explainer(args.method, **method_config)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad method configuration: {exc}") from exc

    if args.threshold == "auto":
        threshold = None
    else:
        try:
            threshold = float(args.threshold)
        except ValueError as exc:
            raise CliError("--threshold must be 'auto' or a fraction in (0,1)") from exc
        if not 0.0 < threshold < 1.0:
            raise CliError("--threshold must lie in (0,1)")

    options = EvalOptions(threshold=threshold, limit=args.limit, threads=max(args.threads, 1))
    started = time.time()
    try:
        result = evaluate(model, explainer, manifest, root, options)
    except UnsupportedCapabilityError as exc:
        raise CliError(f"method {args.method!r} needs a capability the model lacks: {exc}",
                       EXIT_CAPABILITY) from exc
    elapsed = time.time() - started

    run_config = {
        "dataset": str(args.dataset),
        "model": model_spec,
        "method": args.method,
        "method_config": method_config,
        "threshold": args.threshold,
        "limit": args.limit,
        "seed": args.seed,
        "threads": args.threads,
    }
    report = build_report(
        run_config, result.scores, result.records, dataset_hash(root),
        timing={"eval_seconds": elapsed},
    )
    write_report(args.report, report)
    if args.radar:
        Path(args.radar).write_text(radar_svg([(args.method, result.scores.as_dict())]),
                                    encoding="utf-8")
    if args.dump_explanations:
        _dump_explanations(args, manifest, root, model, explainer)

    s = result.scores
    print(f"evaluated {result.n_evaluated} samples in {elapsed:.1f}s (t* = {s.t_star})")
    print(
        f"A={s.a:.3f} BI={s.bi:.3f} CSDC={s.csdc:.3f} PC={s.pc:.3f} DC={s.dc:.3f} "
        f"D={s.d:.3f} SD={s.sd:.3f} TS={s.ts:.3f}"
    )
    print(f"Com={s.com:.3f} Cor={s.cor:.3f} Con={s.con:.3f} mX={s.mx:.3f}")
    if hasattr(model, "close"):
        model.close()
    return 0


def _dump_explanations(args, manifest, root: Path, model, explainer) -> None:
    from .interfaces import entity_masks  # local import keeps cli light
    from .protocols import SampleContext
    from .render import load_labels_png

    out_dir = Path(args.dump_explanations)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sample in manifest.test[:8]:
        image = load_image_png(root / sample.image_path)
        labels = load_labels_png(root / sample.partmap_path)
        context = SampleContext(sample.sample_id, sample.scene, labels, manifest.class_space)
        expl = explainer.explain(model, image, sample.primary_class, context)
        write_explanation(out_dir / f"{sample.sample_id}.xmap", expl)


def cmd_compare(args) -> int:
    try:
        reports = [load_report(p) for p in args.reports]
    except (FileNotFoundError, ValueError, json.JSONDecodeError) as exc:
        raise CliError(str(exc)) from exc
    if not hashes_match(reports):
        print("warning: reports were produced from different datasets "
              "(manifest hashes differ)", file=sys.stderr)
    print(compare_table(reports))
    if args.radar:
        Path(args.radar).write_text(radar_from_reports(reports), encoding="utf-8")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare}
    try:
        return handlers[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
