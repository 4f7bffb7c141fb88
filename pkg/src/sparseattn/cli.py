"""Command-line entry point: train runs, FLOPs tables, run analysis, data gen.

Exit codes: 0 success, 2 flag/config errors, 3 data errors, 4 training errors.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import save_checkpoint
from .data import build_vocab, encode_corpus, gen_synthetic, load_tsv, split_corpus, write_tsv
from .errors import ConfigError, DataError, TrainingError, ZeroVarianceError
from .metrics import flops_report, pearson
from .model import DESK_PRESET, DISTILBERT_PRESET, ModelConfig
from .schedule import PRESET_NAMES, SparsityConfig, build_schedule, preset_configs
from .training import TrainConfig, TrainResult, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_TRAINING = 4

METRICS_COLUMNS = (
    "step", "epoch", "train_loss", "val_loss", "val_accuracy",
    "mean_sparsity", "mean_entropy",
)

SCALE_NOTE = (
    "Measurements come from the desk-scale encoder on its bundled task; they "
    "are reports, not reproductions of full-scale DistilBERT/SST-2 fine-tuning "
    "accuracies or their entropy/loss orderings."
)
RAMP_NOTE = (
    "Adaptive per-layer ratios follow a constructed linear ramp (width 0.2) "
    "chosen to match the target mean and the depth-increasing shape; they are "
    "a stand-in, not recovered per-layer values."
)


def _fmt(value: float) -> str:
    """Fixed 6-significant-digit float formatting for CSV artifacts."""
    return f"{value:.6g}"


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: tuple[str, ...], rows: list[tuple]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(str(cell) for cell in row) for row in rows)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _default_seed() -> int:
    return int(os.environ.get("SPARSEATTN_SEED", "7"))


def _resolve_sparsity(name_or_path: str, layers: int) -> tuple[str, SparsityConfig]:
    presets = preset_configs(layers)
    if name_or_path in presets:
        return name_or_path, presets[name_or_path]
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read sparsity config {path}: {exc}") from exc
        try:
            config = SparsityConfig(
                mode=raw["mode"],
                target=float(raw["target"]),
                ramp_width=float(raw.get("ramp_width", 0.0)),
                layers=int(raw.get("layers", layers)),
            )
        except KeyError as exc:
            raise ConfigError(f"{path}: missing config key {exc}") from exc
        return path.stem, config
    raise ConfigError(
        f"unknown config {name_or_path!r}: valid names are "
        f"{', '.join(PRESET_NAMES)}, or pass a .json config file"
    )


def _load_corpus(data: str, seed: int, size: int, vocab_size: int, max_len: int):
    if data == "synthetic":
        return gen_synthetic(seed, size, vocab_size=vocab_size, max_len=max_len)
    corpus = load_tsv(data, max_len)
    if not corpus.validation:
        corpus = split_corpus(corpus)
    return corpus


def cmd_train(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    preset = DISTILBERT_PRESET if args.model_preset == "distilbert" else DESK_PRESET
    layers = args.layers if args.layers is not None else preset["layers"]
    config_name, sparsity = _resolve_sparsity(args.config, layers)
    if args.layers is not None and sparsity.layers != args.layers:
        raise ConfigError(
            f"--layers {args.layers} conflicts with config file layers {sparsity.layers}"
        )
    layers = sparsity.layers

    heads = args.heads if args.heads is not None else preset["heads"]
    dim = args.model_dim if args.model_dim is not None else preset["dim"]
    ffn_dim = args.ffn_dim if args.ffn_dim is not None else preset["ffn_dim"]
    max_len = args.max_len if args.max_len is not None else preset["max_len"]

    corpus = _load_corpus(args.data, seed, args.data_size, args.vocab_size, max_len)
    vocab = build_vocab(corpus, args.vocab_size)
    encode_corpus(corpus, vocab, max_len)

    model_config = ModelConfig(
        layers=layers, heads=heads, dim=dim, ffn_dim=ffn_dim,
        vocab_size=vocab.size, max_len=max_len, seed=seed,
    )
    if args.model_preset == "distilbert":
        defaults = {"lr": 2e-5, "batch_size": 16, "accum_steps": 4}
    else:
        defaults = {"lr": 3e-3, "batch_size": 32, "accum_steps": 1}
    train_config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size if args.batch_size is not None else defaults["batch_size"],
        lr=args.lr if args.lr is not None else defaults["lr"],
        weight_decay=args.weight_decay,
        accum_steps=args.accum_steps if args.accum_steps is not None else defaults["accum_steps"],
        eval_every=args.eval_every,
        seed=seed,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_name": config_name,
        "version": __version__,
        "seed": seed,
        "data": {
            "source": args.data,
            "size": args.data_size if args.data == "synthetic" else None,
            "vocab_size": vocab.size,
        },
        "model": {
            "layers": layers, "heads": heads, "dim": dim, "ffn_dim": ffn_dim,
            "vocab_size": vocab.size, "max_len": max_len, "num_classes": 2,
        },
        "sparsity": {
            "mode": sparsity.mode, "target": sparsity.target,
            "ramp_width": sparsity.ramp_width, "layers": sparsity.layers,
            "schedule": list(build_schedule(sparsity).per_layer),
            "pool": sparsity.pool,
        },
        "train": {
            "epochs": train_config.epochs, "batch_size": train_config.batch_size,
            "lr": train_config.lr, "weight_decay": train_config.weight_decay,
            "accum_steps": train_config.accum_steps,
            "eval_every": train_config.eval_every,
        },
        "out_dir": str(out),
    }
    _write_json(out / "manifest.json", manifest)

    result = train(model_config, sparsity, corpus, train_config)
    _write_metrics(out / "metrics.csv", result)
    _write_summary(out / "summary.json", config_name, seed, result)
    save_checkpoint(out / "checkpoint.bin", result.params)
    if not args.no_plots:
        from . import plots

        rows = [_record_dict(r) for r in result.records]
        plots.plot_training_curves({config_name: rows}, out / "training_curves.png")

    final = result.final_record
    print(
        f"{config_name}: step {final.step} val_accuracy {final.val_accuracy:.4f} "
        f"val_loss {final.val_loss:.4f} sparsity {final.mean_sparsity:.3f}"
    )
    print(f"artifacts written to {out}")
    return EXIT_OK


def _record_dict(record) -> dict:
    return {
        "step": record.step,
        "epoch": record.epoch,
        "train_loss": record.train_loss,
        "val_loss": record.val_loss,
        "val_accuracy": record.val_accuracy,
        "mean_sparsity": record.mean_sparsity,
        "mean_entropy": record.mean_entropy,
    }


def _write_metrics(path: Path, result: TrainResult) -> None:
    rows = []
    for r in result.records:
        rows.append((
            r.step, r.epoch, _fmt(r.train_loss), _fmt(r.val_loss),
            _fmt(r.val_accuracy), _fmt(r.mean_sparsity), _fmt(r.mean_entropy),
        ))
    _write_csv(path, METRICS_COLUMNS, rows)


def _write_summary(path: Path, config_name: str, seed: int, result: TrainResult) -> None:
    final = result.final_record
    stats = result.final_stats
    _write_json(path, {
        "config_name": config_name,
        "seed": seed,
        "final_step": final.step,
        "final_epoch": final.epoch,
        "val_accuracy": final.val_accuracy,
        "val_loss": final.val_loss,
        "train_loss": final.train_loss,
        "overall_sparsity": stats.overall_sparsity,
        "layer_sparsity": list(stats.layer_sparsity),
        "schedule_target": list(result.schedule),
        "layer_entropy": list(stats.layer_entropy),
        "head_entropy": [list(map(float, row)) for row in stats.head_entropy],
        "mean_entropy": stats.mean_entropy,
        "notes": [SCALE_NOTE, RAMP_NOTE],
    })


def cmd_flops(args: argparse.Namespace) -> int:
    if args.n < 1 or args.d < 1:
        raise ConfigError(f"--n and --d must be >= 1, got n={args.n}, d={args.d}")
    targets = {name: cfg.target for name, cfg in preset_configs(1).items()}
    ordered = {k: targets[k] for k in ("baseline", "light_sparse", "uniform_sparse", "aggressive_sparse")}
    report = flops_report(args.n, args.d, ordered, d_ff=args.ffn_dim)

    header = (
        f"{'config':<20} {'attn sparsity':>13} {'attn FLOPs':>14} "
        f"{'attn reduction':>15} {'layer reduction':>16} {'with-FFN (ext.)':>16}"
    )
    print(f"FLOPs model for one attention sublayer: n={report.n} d={report.d} "
          f"(d_ff={report.d_ff} for the extension column)")
    print(report.convention)
    print(header)
    print("-" * len(header))
    for row in report.rows:
        print(
            f"{row.name:<20} {row.attention_sparsity:>13.2f} "
            f"{row.sparse_attention_flops:>14.3e} "
            f"{row.attention_reduction_pct:>14.1f}% "
            f"{row.total_layer_reduction_pct:>15.1f}% "
            f"{row.with_ffn_reduction_pct:>15.1f}%"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "flops.json", report.to_dict())
    print(f"wrote {out / 'flops.json'}")
    return EXIT_OK


def _load_run(run_dir: Path) -> dict:
    summary_path = run_dir / "summary.json"
    metrics_path = run_dir / "metrics.csv"
    if not summary_path.exists() or not metrics_path.exists():
        raise DataError(f"run directory {run_dir} is missing summary.json or metrics.csv")
    try:
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt summary in {run_dir}: {exc}") from exc
    lines = metrics_path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].split(",") != list(METRICS_COLUMNS):
        raise DataError(f"corrupt metrics.csv in {run_dir}")
    records = []
    for line in lines[1:]:
        cells = line.split(",")
        if len(cells) != len(METRICS_COLUMNS):
            raise DataError(f"corrupt metrics.csv row in {run_dir}: {line!r}")
        records.append({
            "step": int(cells[0]), "epoch": int(cells[1]),
            "train_loss": float(cells[2]), "val_loss": float(cells[3]),
            "val_accuracy": float(cells[4]), "mean_sparsity": float(cells[5]),
            "mean_entropy": float(cells[6]),
        })
    required = ("config_name", "val_accuracy", "overall_sparsity", "layer_sparsity")
    for key in required:
        if key not in summary:
            raise DataError(f"summary.json in {run_dir} lacks {key!r}")
    return {"dir": run_dir, "summary": summary, "records": records}


def cmd_analyze(args: argparse.Namespace) -> int:
    runs = [_load_run(Path(r)) for r in args.runs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    points = [{
        "run": str(run["dir"]),
        "config": run["summary"]["config_name"],
        "sparsity": float(run["summary"]["overall_sparsity"]),
        "accuracy": float(run["summary"]["val_accuracy"]),
    } for run in runs]

    r_value: float | None = None
    note = ""
    if len(points) < 2:
        note = "insufficient points"
    else:
        try:
            r_value = pearson(
                [p["sparsity"] for p in points], [p["accuracy"] for p in points]
            ).r
        except ZeroVarianceError as exc:
            note = str(exc)

    _write_csv(
        out / "analysis.csv",
        ("run", "config", "sparsity", "accuracy"),
        [(p["run"], p["config"], _fmt(p["sparsity"]), _fmt(p["accuracy"])) for p in points],
    )

    layer_rows = []
    entropy_rows = []
    layer_sparsity_map: dict[str, list[float]] = {}
    layer_entropy_map: dict[str, list[float]] = {}
    for run in runs:
        summary = run["summary"]
        name = summary["config_name"]
        achieved = [float(x) for x in summary["layer_sparsity"]]
        target = [float(x) for x in summary.get("schedule_target", [])] or [float("nan")] * len(achieved)
        layer_sparsity_map[name] = achieved
        for layer, (a, t) in enumerate(zip(achieved, target)):
            layer_rows.append((name, layer, _fmt(t), _fmt(a)))
        layer_entropy = [float(x) for x in summary.get("layer_entropy", [])]
        layer_entropy_map[name] = layer_entropy
        head_entropy = summary.get("head_entropy", [])
        for layer, layer_value in enumerate(layer_entropy):
            entropy_rows.append((name, layer, "all", _fmt(layer_value)))
            heads = head_entropy[layer] if layer < len(head_entropy) else []
            for head, value in enumerate(heads):
                entropy_rows.append((name, layer, head, _fmt(float(value))))
    _write_csv(out / "layer_sparsity.csv",
               ("config", "layer", "target", "achieved"), layer_rows)
    _write_csv(out / "entropy.csv",
               ("config", "layer", "head", "entropy_nats"), entropy_rows)

    _write_json(out / "analysis.json", {
        "points": points,
        "point_count": len(points),
        "pearson_r": r_value,
        "pearson_note": note or None,
        "layer_sparsity": layer_sparsity_map,
        "layer_entropy": layer_entropy_map,
        "head_entropy": {
            run["summary"]["config_name"]: run["summary"].get("head_entropy", [])
            for run in runs
        },
        "notes": [SCALE_NOTE, RAMP_NOTE],
    })

    if not args.no_plots:
        from . import plots

        plots.plot_sparsity_vs_accuracy(points, r_value, out / "sparsity_vs_accuracy.png")
        plots.plot_layer_sparsity(layer_sparsity_map, out / "layer_sparsity.png")
        plots.plot_entropy(layer_entropy_map, out / "entropy.png")
        plots.plot_training_curves(
            {run["summary"]["config_name"]: run["records"] for run in runs},
            out / "training_curves.png",
        )

    if r_value is not None:
        print(f"pearson r = {r_value:.6f} over {len(points)} runs")
    else:
        print(f"pearson r unavailable: {note}")
    print(f"analysis written to {out}")
    return EXIT_OK


def cmd_gen_data(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    corpus = gen_synthetic(seed, args.size, vocab_size=args.vocab_size, max_len=args.max_len)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    write_tsv(corpus.train, out / "train.tsv")
    write_tsv(corpus.validation, out / "validation.tsv")
    print(f"wrote {len(corpus.train)} train / {len(corpus.validation)} validation "
          f"examples to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparseattn",
        description="Desk-scale lab for structured pre-softmax attention sparsification.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one configuration and write run artifacts")
    p_train.add_argument("--config", required=True,
                         help=f"one of {', '.join(PRESET_NAMES)} or a .json config file")
    p_train.add_argument("--data", default="synthetic",
                         help="'synthetic' or a TSV file / directory with train.tsv+validation.tsv")
    p_train.add_argument("--seed", type=int, default=None,
                         help="run seed (default: $SPARSEATTN_SEED or 7)")
    p_train.add_argument("--epochs", type=int, default=3)
    p_train.add_argument("--out", required=True, help="output directory for run artifacts")
    p_train.add_argument("--model-preset", choices=("desk", "distilbert"), default="desk")
    p_train.add_argument("--layers", type=int, default=None)
    p_train.add_argument("--heads", type=int, default=None)
    p_train.add_argument("--model-dim", type=int, default=None)
    p_train.add_argument("--ffn-dim", type=int, default=None)
    p_train.add_argument("--max-len", type=int, default=None)
    p_train.add_argument("--vocab-size", type=int, default=1000)
    p_train.add_argument("--data-size", type=int, default=2000,
                         help="synthetic corpus size (ignored for TSV data)")
    p_train.add_argument("--batch-size", type=int, default=None)
    p_train.add_argument("--lr", type=float, default=None)
    p_train.add_argument("--weight-decay", type=float, default=0.01)
    p_train.add_argument("--accum-steps", type=int, default=None)
    p_train.add_argument("--eval-every", type=int, default=50)
    p_train.add_argument("--no-plots", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_flops = sub.add_parser("flops", help="closed-form FLOPs table for one attention sublayer")
    p_flops.add_argument("--n", type=int, default=512, help="sequence length")
    p_flops.add_argument("--d", type=int, default=768, help="model dimension")
    p_flops.add_argument("--ffn-dim", type=int, default=None,
                         help="feed-forward width for the extension column (default 4*d)")
    p_flops.add_argument("--out", default=".", help="directory for flops.json")
    p_flops.set_defaults(func=cmd_flops)

    p_analyze = sub.add_parser("analyze", help="aggregate completed run directories")
    p_analyze.add_argument("--runs", nargs="+", required=True)
    p_analyze.add_argument("--out", default="analysis")
    p_analyze.add_argument("--no-plots", action="store_true")
    p_analyze.set_defaults(func=cmd_analyze)

    p_gen = sub.add_parser("gen-data", help="write a synthetic corpus as TSV files")
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--size", type=int, default=2000)
    p_gen.add_argument("--vocab-size", type=int, default=1000)
    p_gen.add_argument("--max-len", type=int, default=64)
    p_gen.add_argument("--out", required=True)
    p_gen.set_defaults(func=cmd_gen_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
