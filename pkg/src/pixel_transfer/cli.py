"""Command-line entry points: train, infer, eval, gradcheck, synth.

Exit codes: 0 success, 1 usage error, 2 runtime or numeric failure.
"""

from __future__ import annotations

import os

# single-threaded BLAS keeps reductions in a fixed order across runs
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
import warnings  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}

# flag name -> (TrainingConfig field, type)
TRAIN_KEYS = {
    "mode": ("mode", str),
    "epochs": ("total_epochs", int),
    "batch": ("batch_size", int),
    "lr": ("lr", float),
    "lr_drop_epoch": ("lr_drop_epoch", int),
    "lr_after": ("lr_after_drop", float),
    "momentum": ("momentum", float),
    "seed": ("seed", int),
    "width": ("width", float),
    "optimizer": ("optimizer", str),
    "non_saturating": ("non_saturating", lambda v: str(v).lower() in ("1", "true", "yes", "on")),
    "val_frac": ("val_frac", float),
    "test_frac": ("test_frac", float),
}
DEFAULT_LR_DROP_EPOCH = 25


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_shared(p: argparse.ArgumentParser, *names: str) -> None:
    S = argparse.SUPPRESS
    table = {
        "data": dict(help="dataset root (LookBook layout)"),
        "out": dict(help="output path"),
        "ckpt": dict(help="checkpoint file"),
        "seed": dict(type=int, default=S, help="master seed"),
        "mode": dict(choices=["rf", "mse", "rf_dd", "rf_dd_noneg"], default=S),
        "epochs": dict(type=int, default=S),
        "batch": dict(type=int, default=S),
        "lr": dict(type=float, default=S),
        "lr-drop-epoch": dict(type=int, default=S),
        "lr-after": dict(type=float, default=S),
        "momentum": dict(type=float, default=S),
        "width": dict(type=float, default=S, help="channel width multiplier in (0, 1]"),
        "split": dict(choices=["train", "val", "test"], default="test"),
        "bits": dict(type=int, choices=[32, 64], default=None, help="float width"),
    }
    for name in names:
        p.add_argument(f"--{name}", **table[name])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pixel-transfer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train a converter and its discriminators")
    _add_shared(p, "data", "out", "ckpt", "seed", "mode", "epochs", "batch", "lr", "lr-drop-epoch",
                "lr-after", "momentum", "width", "bits")
    p.add_argument("--optimizer", choices=["sgd", "adam"], default=argparse.SUPPRESS)
    p.add_argument("--non-saturating", action="store_const", const=True, default=argparse.SUPPRESS,
                   help="converter maximizes log D on its own outputs instead of the literal minimax loss")
    p.add_argument("--val-frac", type=float, default=argparse.SUPPRESS)
    p.add_argument("--test-frac", type=float, default=argparse.SUPPRESS)
    p.add_argument("--config", help="file of key=value lines using flag names; flags win")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("infer", help="convert source images with a trained converter")
    _add_shared(p, "ckpt", "out")
    p.add_argument("inputs", nargs="+", help="image files or directories")

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    _add_shared(p, "ckpt", "data", "out", "split")
    p.add_argument("--retrieval", action="store_true", help="also report domain-discriminator retrieval accuracy")
    p.add_argument("--gallery", default="all", help="retrieval candidates: 'all' or a split name")
    p.add_argument("--oracle", action="store_true", help="score ground truth against itself instead of a converter")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    _add_shared(p, "seed", "bits")
    p.add_argument("--coords", type=int, default=20, help="coordinates checked per input")
    p.add_argument("--inject-fault", action="store_true", help="add an op with a deliberately wrong gradient")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    _add_shared(p, "out", "seed")
    p.add_argument("--products", type=int, default=200)
    p.add_argument("--colors", type=int, default=6)
    return parser


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

def read_config_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        if key not in TRAIN_KEYS and key not in ("data", "out", "bits"):
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def resolve_train_config(args: argparse.Namespace):
    """TrainingConfig from built-in defaults, then the config file, then flags."""
    from .training import TrainingConfig

    file_values = read_config_file(args.config) if args.config else {}
    for key in ("data", "out", "bits"):
        if getattr(args, key, None) is None and key in file_values:
            setattr(args, key, int(file_values[key]) if key == "bits" else file_values[key])
    values = {}
    for key, (field, cast) in TRAIN_KEYS.items():
        if hasattr(args, key):
            values[field] = getattr(args, key)
        elif key in file_values:
            try:
                values[field] = cast(file_values[key])
            except ValueError as exc:
                raise UsageError(f"config key {key}: {exc}") from exc
    epochs = values.get("total_epochs", TrainingConfig.total_epochs)
    values.setdefault("lr_drop_epoch", min(DEFAULT_LR_DROP_EPOCH, epochs))
    values.setdefault("lr_after_drop", min(TrainingConfig.lr_after_drop, values.get("lr", TrainingConfig.lr)))
    try:
        return TrainingConfig(**values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def print_config(pairs: dict, stream=None) -> None:
    stream = stream or sys.stdout
    print("# resolved config", file=stream)
    for key in sorted(pairs):
        print(f"config\t{key}\t{pairs[key]}", file=stream)
    stream.flush()


def _require(args, *names):
    missing = [f"--{n}" for n in names if not getattr(args, n, None)]
    if missing:
        raise UsageError(f"missing required flag(s): {', '.join(missing)}")


def _dtype(bits):
    return np.float64 if bits == 64 else np.float32


def _load_dataset(root, config):
    from .dataset import DatasetError, load_lookbook, split_dataset

    root = Path(root)
    if not root.is_dir():
        raise UsageError(f"dataset root {root} is not a directory")
    try:
        return split_dataset(load_lookbook(root), config.val_frac, config.test_frac, config.seed)
    except DatasetError as exc:
        raise RuntimeFailure(str(exc)) from exc


def _load_ckpt(path, dataset=None):
    from .checkpoint import CheckpointError, load_checkpoint

    path = Path(path)
    if not path.is_file():
        raise UsageError(f"checkpoint {path} not found")
    try:
        return load_checkpoint(path, dataset)
    except CheckpointError as exc:
        raise RuntimeFailure(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .training import NonFiniteLossError, Trainer

    config = resolve_train_config(args)
    _require(args, "data", "out")
    bits = args.bits or 32
    print_config({**config.to_dict(), "data": args.data, "out": args.out, "bits": bits})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset(args.data, config)
    if args.ckpt:
        trainer = _load_ckpt(args.ckpt, dataset)
        if trainer.config.to_dict() != config.to_dict():
            trainer.config = config
    else:
        trainer = Trainer(config, dataset, _dtype(bits))

    log_path = out / "losses.jsonl"
    records: list[dict] = []
    if args.ckpt and log_path.exists():
        records = [json.loads(line) for line in log_path.read_text().splitlines() if line]
        records = [r for r in records if r["epoch"] <= trainer.epoch]
    width = len(str(config.total_epochs))

    def on_report(rep):
        records.append(json.loads(rep.to_json()))

    def on_epoch_end(tr):
        reps = [r for r in records if r["epoch"] == tr.epoch]
        means = {k: _mean([r[k] for r in reps]) for k in ("loss_rf", "loss_da", "loss_c")}
        print(f"epoch\t{tr.epoch}\tsteps\t{len(reps)}\tlr\t{reps[-1]['lr']:g}\t"
              + "\t".join(f"{k}\t{v}" for k, v in means.items()), flush=True)
        log_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
        save_checkpoint(tr, out / f"epoch_{tr.epoch:0{width}d}.ckpt")

    try:
        trainer.train(on_report=on_report, on_epoch_end=on_epoch_end)
    except NonFiniteLossError as exc:
        log_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
        raise RuntimeFailure(f"{exc}; last complete epoch checkpoint kept in {out}") from exc
    final = save_checkpoint(trainer, out / "final.ckpt")
    print(f"checkpoint\t{final}")
    if records and not args.no_plots:
        from .plotting import plot_losses

        print(f"figure\t{plot_losses(records, out / 'losses.png')}")
    return EXIT_OK


def _mean(vals):
    vals = [v for v in vals if v is not None]
    return f"{np.mean(vals):.6f}" if vals else "-"


def _collect_inputs(inputs) -> list[tuple[Path, Path]]:
    """(image path, output path relative to --out); directory inputs mirror their layout."""
    pairs = []
    for raw in inputs:
        p = Path(raw)
        if p.is_dir():
            for f in sorted(q for q in p.rglob("*") if q.suffix.lower() in IMAGE_SUFFIXES):
                pairs.append((f, f.relative_to(p).with_suffix(".png")))
        elif p.is_file():
            pairs.append((p, Path(p.name).with_suffix(".png")))
        else:
            raise UsageError(f"input {p} not found")
    if not pairs:
        raise UsageError("no input images found")
    return pairs


def cmd_infer(args) -> int:
    from PIL import Image

    from .dataset import DatasetError, preprocess_image, to_pixels
    from .evaluation import converter_fn

    _require(args, "ckpt", "out")
    pairs = _collect_inputs(args.inputs)
    trainer = _load_ckpt(args.ckpt)
    print_config({"ckpt": args.ckpt, "out": args.out, "inputs": len(pairs), "mode": trainer.config.mode.value})
    try:
        src = np.stack([preprocess_image(p) for p, _ in pairs]).astype(trainer.dtype)
    except DatasetError as exc:
        raise RuntimeFailure(str(exc)) from exc
    generated = converter_fn(trainer.converter)(src)
    out = Path(args.out)
    for (p, rel), img in zip(pairs, generated):
        dest = out / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(to_pixels(img), "RGB").save(dest)
        print(f"wrote\t{p}\t{dest}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate_model, retrieval_eval

    _require(args, "ckpt", "data")
    trainer = _load_ckpt(args.ckpt)
    config = trainer.config
    print_config({"ckpt": args.ckpt, "data": args.data, "split": args.split, "out": args.out,
                  "retrieval": args.retrieval, "oracle": args.oracle, "mode": config.mode.value})
    dataset = _load_dataset(args.data, config)
    trainer.dataset = dataset
    if not dataset.pairs(args.split):
        raise RuntimeFailure(f"split {args.split!r} is empty")

    if args.oracle:
        # the generator only sees pixels, so map each source back to its product
        by_image = {dataset.image(p).tobytes(): pid for pid, p in dataset.pairs(args.split)}

        def generate(src):
            return np.stack([dataset.target(by_image[s.tobytes()]) for s in src])

        report = evaluate_model(generate, dataset, args.split, mode="oracle")
    else:
        report = evaluate_model(trainer.converter, dataset, args.split, mode=config.mode.value)
    if args.retrieval:
        if args.gallery != "all" and args.gallery not in ("train", "val", "test"):
            raise UsageError(f"--gallery must be 'all' or a split name, got {args.gallery!r}")
        acc, ret = retrieval_eval(dataset, trainer.disc_da, args.split, args.gallery)
        report.extra.update(ret.extra)
        report.extra["retrieval_mean_rmse"] = ret.mean_rmse
        report.extra["retrieval_mean_c_ssim"] = ret.mean_c_ssim
    text = report.to_text()
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        print(f"report\t{out}")
        if not args.no_plots:
            _eval_figures(report, dataset, trainer, args, out)
    sys.stdout.write("---\n" + text + "---\n")
    return EXIT_OK


def _eval_figures(report, dataset, trainer, args, out: Path) -> None:
    from .evaluation import converter_fn
    from .plotting import image_grid, plot_metric_histograms

    hist = plot_metric_histograms(report.rmse, report.c_ssim, out.with_suffix(".hist.png"))
    pairs = dataset.pairs(args.split)[:8]
    src = np.stack([dataset.image(p) for _, p in pairs])
    gt = np.stack([dataset.target(pid) for pid, _ in pairs])
    gen = gt if args.oracle else converter_fn(trainer.converter)(src)
    grid = image_grid([src, gen, gt], out.with_suffix(".grid.png"))
    print(f"figure\t{hist}\nfigure\t{grid}")


def cmd_gradcheck(args) -> int:
    from .gradsuite import format_table, run_suite

    bits = args.bits or 64
    seed = getattr(args, "seed", 0)
    print_config({"bits": bits, "seed": seed, "coords": args.coords, "inject_fault": args.inject_fault})
    results = run_suite(bits=bits, seed=seed, inject_fault=args.inject_fault, n_coords=args.coords)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    print(f"summary\t{len(results) - len(failed)}/{len(results)} passed")
    return EXIT_OK if not failed else EXIT_RUNTIME


def cmd_synth(args) -> int:
    from .synthetic import SyntheticConfig, generate_synthetic

    _require(args, "out")
    seed = getattr(args, "seed", 0)
    try:
        cfg = SyntheticConfig(n_products=args.products, colors=args.colors, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print_config({"out": args.out, "products": args.products, "colors": args.colors, "seed": seed})
    ds = generate_synthetic(args.out, cfg)
    print(f"products\t{len(ds)}\nsources\t{ds.n_sources}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "gradcheck": cmd_gradcheck, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", category=DeprecationWarning)
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"pixel-transfer {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeFailure, OSError, ValueError) as exc:
        print(f"pixel-transfer {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
