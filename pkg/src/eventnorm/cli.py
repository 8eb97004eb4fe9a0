"""Command-line front end.

Subcommands bind the library into reproducible runs: simulate a dataset,
voxelize a stream, train/evaluate the classifier, run the verification suite,
or describe an event file.  Exit codes: 0 success, 2 I/O failure, 3 parse
failure, 4 validation failure, 5 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import FormatError, ValidationError
from .events import read_evt1
from .nn import (
    Model,
    TrainConfig,
    evaluate,
    load_model,
    normalize_input,
    save_model,
    train,
    write_metrics_csv,
)
from .sim import DatasetConfig, generate_dataset, load_manifest
from .tnt import CENTER_MODES, VARIANTS, TntOptions, prepare
from .verify import run_suite
from .voxel import build, read_vol1, write_vol1

EXIT_OK = 0
EXIT_IO = 2
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_VERIFY = 5

_VARIANT_CODES = {name: i for i, name in enumerate(VARIANTS)}
_CENTER_CODES = {name: i for i, name in enumerate(CENTER_MODES)}


def _volume_for(stream, variant: str, opts: TntOptions):
    return build(prepare(stream, opts, variant), stream.geometry, opts.bins)


def filter_samples(samples: list, motions: str) -> list:
    """Restrict manifest samples to a motion selection ("all" or id list)."""
    if motions == "all":
        return list(samples)
    try:
        wanted = {int(tok) for tok in motions.split(",")}
    except ValueError:
        raise ValidationError(f"bad motion filter {motions!r}") from None
    picked = [s for s in samples if s["motion_id"] in wanted]
    if not picked:
        raise ValidationError(f"motion filter {motions!r} selects no samples")
    return picked


def load_inputs(manifest_path, variant: str, opts: TntOptions,
                motions: str = "all", input_scale: float = 1.0):
    """Load manifest samples as normalized network inputs plus labels."""
    manifest = load_manifest(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))
    samples = filter_samples(manifest["samples"], motions)
    inputs = np.empty(
        (len(samples), opts.bins,
         manifest["geometry"]["height"], manifest["geometry"]["width"])
    )
    labels = np.empty(len(samples), dtype=np.int64)
    for i, sample in enumerate(samples):
        stream = read_evt1(os.path.join(base, sample["path"]))
        volume = _volume_for(stream, variant, opts)
        inputs[i] = normalize_input(volume.data, input_scale)
        labels[i] = sample["label"]
    return inputs, labels, manifest


def cmd_simulate(args) -> int:
    with open(args.config) as fh:
        try:
            raw_cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"config is not valid JSON: {exc}") from None
    if args.seed is not None:
        raw_cfg["seed"] = args.seed
    config = DatasetConfig.from_dict(raw_cfg)
    manifest = generate_dataset(config, args.out)
    print(f"wrote {len(manifest['samples'])} samples to {args.out}")
    return EXIT_OK


def cmd_voxelize(args) -> int:
    stream = read_evt1(args.input)
    opts = TntOptions(bins=args.bins, center_mode=args.center)
    volume = _volume_for(stream, args.variant, opts)
    write_vol1(volume, args.out)
    print(f"wrote {args.out}: {volume.bins}x{volume.geometry.height}"
          f"x{volume.geometry.width}, sum {volume.data.sum():g}")
    return EXIT_OK


def cmd_train(args) -> int:
    opts = TntOptions(bins=args.bins, center_mode=args.center)
    config = TrainConfig(
        learning_rate=args.lr,
        momentum=args.momentum,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    inputs, labels, manifest = load_inputs(
        args.manifest, args.variant, opts, args.train_motions, config.input_scale
    )
    geometry_kwargs = manifest["geometry"]
    from .events import SensorGeometry

    model = Model.init(
        SensorGeometry(geometry_kwargs["width"], geometry_kwargs["height"]),
        bins=opts.bins,
        num_classes=len(manifest["classes"]),
        seed=args.seed,
    )
    model, metrics = train(model, inputs, labels, config)
    pipeline = np.array([
        _VARIANT_CODES[args.variant], _CENTER_CODES[args.center], opts.bins
    ], dtype=np.float64)
    save_model(model, args.out, extra={"pipeline": pipeline})
    if args.metrics:
        write_metrics_csv(metrics, args.metrics)
    final = metrics[-1] if metrics else {"loss": float("nan"), "accuracy": float("nan")}
    print(f"trained {args.variant} on {len(labels)} samples: "
          f"loss {final['loss']:.4f}, accuracy {final['accuracy']:.4f}")
    return EXIT_OK


def _pipeline_from_model(extra: dict, args) -> tuple[str, str, int]:
    if args.variant is not None:
        return args.variant, args.center, args.bins
    if "pipeline" not in extra:
        raise ValidationError(
            "model stores no pipeline tensor; pass --variant/--center/--bins"
        )
    variant_code, center_code, bins = (int(v) for v in np.asarray(extra["pipeline"]))
    return VARIANTS[variant_code], CENTER_MODES[center_code], bins


def cmd_eval(args) -> int:
    model, extra = load_model(args.model)
    variant, center, bins = _pipeline_from_model(extra, args)
    opts = TntOptions(bins=bins, center_mode=center)
    inputs, labels, _ = load_inputs(args.manifest, variant, opts, args.motions)
    accuracy, confusion = evaluate(model, inputs, labels)
    if args.report:
        with open(args.report, "w", newline="") as fh:
            fh.write("name,value\n")
            fh.write(f"accuracy,{accuracy!r}\n")
            fh.write(f"samples,{len(labels)}\n")
            for i in range(confusion.shape[0]):
                row = ";".join(str(v) for v in confusion[i])
                fh.write(f"confusion_row_{i},{row}\n")
    print(f"accuracy {accuracy:.4f} over {len(labels)} samples ({variant}/{center})")
    return EXIT_OK


def cmd_verify(args) -> int:
    results, all_pass = run_suite(seed=args.seed, out_path=args.out)
    for r in results:
        print(f"{r.status.upper():4s} {r.name}: measured {r.measured:.3e} "
              f"(threshold {r.threshold:.3e})")
    return EXIT_OK if all_pass else EXIT_VERIFY


def cmd_info(args) -> int:
    stream = read_evt1(args.input)
    pos = int((stream.p == 1).sum())
    neg = int((stream.p == -1).sum())
    print(f"events: {len(stream)}")
    print(f"geometry: {stream.geometry.width}x{stream.geometry.height}")
    if len(stream):
        print(f"time span: {stream.t.min():.0f}..{stream.t.max():.0f} us")
    else:
        print("time span: empty")
    print(f"polarity: +1: {pos}, -1: {neg}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eventnorm",
        description="Event streams, temporal normalization, and the desk-scale classifier.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a dataset from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("voxelize", help="turn an EVT1 file into a VOL1 volume")
    p.add_argument("--input", required=True)
    p.add_argument("--variant", choices=VARIANTS, default="baseline")
    p.add_argument("--center", choices=CENTER_MODES, default="canvas")
    p.add_argument("--bins", type=int, default=9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("train", help="train the classifier on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", choices=VARIANTS, default="baseline")
    p.add_argument("--center", choices=CENTER_MODES, default="centroid")
    p.add_argument("--bins", type=int, default=9)
    p.add_argument("--train-motions", default="all",
                   help='"all" or comma-separated motion ids')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model on a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--motions", default="all")
    p.add_argument("--variant", choices=VARIANTS, default=None,
                   help="override the pipeline stored in the model")
    p.add_argument("--center", choices=CENTER_MODES, default="centroid")
    p.add_argument("--bins", type=int, default=9)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the equivariance verification suite")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("info", help="describe an EVT1 file")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_info)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
