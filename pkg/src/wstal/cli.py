"""Command-line entry points: train, evaluate, infer, synth-data, ablate, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io as wio
from .config import ConfigFileError, RunConfig
from .data import load_dataset, save_dataset
from .evaluate import EvaluationError, mean_ap
from .proposals import proposals_to_records, records_to_proposals, run_inference
from .synthetic import SyntheticSpec, generate_dataset, split_dataset
from .train import Trainer, TrainingError, load_checkpoint

TOGGLES = ("rmgcl", "gks", "gka", "pseudo")

# flag destination -> dotted config path
_OVERRIDE_MAP = {
    "seed": "train.seed",
    "epochs": "train.epochs",
    "warmup": "train.warmup_epochs",
    "tau": "contrast.temperature",
    "lam": "contrast.density_weight",
    "q_rob": "contrast.robustness",
    "alpha": "memory.momentum",
    "zeta": "memory.mask_threshold",
    "queue_len": "memory.queue_len",
    "codewords": "model.num_codewords",
    "topk_ratio": "model.topk_ratio",
    "rho": "pseudo.variance_weight",
    "gamma": "train.gamma",
    "mu": "train.mu",
    "nms_tiou": "inference.nms_tiou",
    "class_thresh": "inference.class_threshold",
    "data": "data.dataset_dir",
}


def _shared_flags(parser: argparse.ArgumentParser) -> None:
    add = parser.add_argument
    add("--config", type=Path, default=None, help="YAML run configuration")
    add("--seed", type=int, default=None)
    add("--epochs", type=int, default=None)
    add("--warmup", type=int, default=None, help="epochs before the memory bank activates")
    add("--tau", type=float, default=None, help="contrastive temperature")
    add("--lambda", dest="lam", type=float, default=None, help="contrastive density weight")
    add("--q-rob", type=float, default=None, help="contrastive robustness exponent")
    add("--alpha", type=float, default=None, help="memory momentum")
    add("--zeta", type=float, default=None, help="confidence mask threshold")
    add("--queue-len", type=int, default=None)
    add("--codewords", type=int, default=None)
    add("--topk-ratio", type=int, default=None)
    add("--rho", type=float, default=None, help="uncertainty variance weight")
    add("--gamma", type=float, default=None, help="pseudo-label loss weight")
    add("--mu", type=float, default=None, help="contrastive loss weight")
    add("--enable", action="append", choices=TOGGLES, default=None, metavar="COMPONENT")
    add("--disable", action="append", choices=TOGGLES, default=None, metavar="COMPONENT")
    add("--nms-tiou", type=float, default=None)
    add("--class-thresh", type=float, default=None)
    add("--data", type=Path, default=None, help="dataset directory")
    add("--out", type=Path, default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wstal",
        description="Weakly supervised temporal action localization on segment features.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write checkpoints")
    _shared_flags(p_train)

    p_eval = sub.add_parser("evaluate", help="compute the mAP table")
    _shared_flags(p_eval)
    p_eval.add_argument("--checkpoint", type=Path, default=None, help="run directory to score")
    p_eval.add_argument("--proposals", type=Path, default=None, help="score an existing proposal file")
    p_eval.add_argument("--split", default=None, help="dataset split with ground truth")

    p_infer = sub.add_parser("infer", help="write a proposal file from a checkpoint")
    _shared_flags(p_infer)
    p_infer.add_argument("--checkpoint", type=Path, required=True)
    p_infer.add_argument("--split", default=None)

    p_synth = sub.add_parser("synth-data", help="generate a synthetic dataset directory")
    _shared_flags(p_synth)
    p_synth.add_argument("--num-classes", type=int, default=8)
    p_synth.add_argument("--num-train", type=int, default=200)
    p_synth.add_argument("--num-test", type=int, default=50)
    p_synth.add_argument("--segments", type=int, default=75)
    p_synth.add_argument("--dim", type=int, default=64)
    p_synth.add_argument("--noise", type=float, default=0.1)
    p_synth.add_argument("--separation", type=float, default=0.5)

    p_ablate = sub.add_parser("ablate", help="train/evaluate the component toggle grid")
    _shared_flags(p_ablate)

    p_report = sub.add_parser("report", help="render tables and plots from a run directory")
    _shared_flags(p_report)
    p_report.add_argument("--run", type=Path, required=True, help="directory written by train")

    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {}
    for dest, dotted in _OVERRIDE_MAP.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[dotted] = str(value) if isinstance(value, Path) else value
    for name in args.enable or []:
        if name in (args.disable or []):
            raise ConfigFileError(f"component '{name}' both enabled and disabled")
        overrides[f"train.enable_{name}"] = True
    for name in args.disable or []:
        overrides[f"train.enable_{name}"] = False
    return config.with_overrides(overrides)


def _require_out(args) -> Path:
    if args.out is None:
        raise ConfigFileError("this command needs --out DIR")
    args.out.mkdir(parents=True, exist_ok=True)
    return args.out


def _load_split(config: RunConfig, split: str):
    if not config.data.dataset_dir:
        raise ConfigFileError("no dataset directory configured (use --data or data.dataset_dir)")
    return load_dataset(config.data.dataset_dir, split)


def cmd_train(args) -> int:
    config = resolve_config(args)
    out = _require_out(args)
    train_data = _load_split(config, config.data.train_split)
    try:
        eval_data = _load_split(config, config.data.eval_split)
    except FileNotFoundError:
        eval_data = None
    trainer = Trainer(config, train_data, eval_data)
    trainer.fit(out)
    last = trainer.metrics[-1]
    print(f"trained {trainer.epoch} epochs; final loss {last['loss']:.4f}")
    print(f"checkpoint written to {out}")
    return 0


def cmd_evaluate(args) -> int:
    config = resolve_config(args)
    split = args.split or config.data.eval_split
    dataset = _load_split(config, split)
    if not dataset.ground_truth:
        raise EvaluationError(f"split '{split}' has no ground truth")
    if args.proposals is not None:
        records = wio.read_proposals(args.proposals)
        proposals = records_to_proposals(records, dataset.class_names)
    elif args.checkpoint is not None:
        bundle = load_checkpoint(args.checkpoint)
        proposals = run_inference(
            bundle.model, dataset, bundle.num_segments, config.inference, summary=bundle.summary
        )
    else:
        raise ConfigFileError("evaluate needs --checkpoint or --proposals")
    result = mean_ap(proposals, dataset.ground_truth, dataset.num_classes, config.eval)
    print(result.format_table())
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "results.jsonl", "w") as fh:
            for record in result.to_records():
                fh.write(json.dumps(record) + "\n")
        (args.out / "results.txt").write_text(result.format_table() + "\n")
    return 0


def cmd_infer(args) -> int:
    config = resolve_config(args)
    out = _require_out(args)
    split = args.split or config.data.eval_split
    dataset = _load_split(config, split)
    bundle = load_checkpoint(args.checkpoint)
    proposals = run_inference(
        bundle.model, dataset, bundle.num_segments, config.inference, summary=bundle.summary
    )
    records = proposals_to_records(proposals, dataset.class_names)
    path = out / "proposals.jsonl"
    wio.write_proposals(path, records)
    total = sum(len(v) for v in proposals.values())
    print(f"wrote {total} proposals for {len(proposals)} videos to {path}")
    return 0


def cmd_synth_data(args) -> int:
    config = resolve_config(args)
    out = _require_out(args)
    spec = SyntheticSpec(
        num_classes=args.num_classes,
        num_videos=args.num_train + args.num_test,
        num_segments=args.segments,
        feature_dim=args.dim,
        noise_scale=args.noise,
        prototype_separation=args.separation,
        seed=config.train.seed,
    )
    dataset, _ = generate_dataset(spec)
    train, test = split_dataset(dataset, args.num_train)
    save_dataset(out, train, "train")
    save_dataset(out, test, "test")
    print(
        f"generated {args.num_train}+{args.num_test} videos, "
        f"{args.num_classes} classes, T={args.segments}, D={args.dim} at {out}"
    )
    return 0


ABLATION_ROWS = (
    (),
    ("rmgcl",),
    ("rmgcl", "gka"),
    ("rmgcl", "gka", "pseudo"),
    ("rmgcl", "gks", "gka"),
    ("rmgcl", "gks", "gka", "pseudo"),
)


def cmd_ablate(args) -> int:
    base = resolve_config(args)
    out = _require_out(args)
    train_data = _load_split(base, base.data.train_split)
    eval_data = _load_split(base, base.data.eval_split)
    if not eval_data.ground_truth:
        raise EvaluationError("ablation needs ground truth on the eval split")
    rows = []
    for row in ABLATION_ROWS:
        overrides = {f"train.enable_{name}": name in row for name in TOGGLES}
        config = base.with_overrides(overrides)
        tag = "+".join(row) if row else "baseline"
        run_dir = out / tag.replace("+", "_")
        trainer = Trainer(config, train_data, eval_data)
        trainer.fit(run_dir)
        score = trainer.evaluate()
        rows.append({"components": tag, "avg_map": score})
        print(f"{tag:30s} avg mAP {score:.4f}")
    with open(out / "ablation.jsonl", "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return 0


def cmd_report(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = args.out or args.run
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = args.run / "metrics.jsonl"
    if not metrics_path.exists():
        raise ConfigFileError(f"no metric log at {metrics_path}")
    records = [json.loads(line) for line in metrics_path.read_text().splitlines() if line.strip()]
    if not records:
        raise ConfigFileError(f"metric log {metrics_path} is empty")

    epochs = [r["epoch"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4))
    for key, label in [
        ("loss", "total"),
        ("loss_cls", "classification"),
        ("loss_contrast", "contrastive"),
        ("loss_pseudo", "pseudo"),
    ]:
        ax.plot(epochs, [r[key] for r in records], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "losses.png", dpi=120)
    plt.close(fig)

    lines = ["epoch  total_loss  cls_loss  contrast  pseudo  mAP"]
    for r in records:
        map_text = f"{r['map']:.4f}" if r.get("map") is not None else "-"
        lines.append(
            f"{r['epoch']:5d}  {r['loss']:10.4f}  {r['loss_cls']:8.4f}  "
            f"{r['loss_contrast']:8.4f}  {r['loss_pseudo']:6.4f}  {map_text}"
        )
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")

    results_path = args.run / "results.jsonl"
    if results_path.exists():
        rows = [json.loads(line) for line in results_path.read_text().splitlines() if line.strip()]
        grid = [(str(r["tiou"]), float(r["map"])) for r in rows if r["tiou"] != "average"]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar([g[0] for g in grid], [g[1] for g in grid])
        ax.set_xlabel("tIoU threshold")
        ax.set_ylabel("mAP")
        fig.tight_layout()
        fig.savefig(out / "map.png", dpi=120)
        plt.close(fig)

    print(f"report written to {out}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "infer": cmd_infer,
    "synth-data": cmd_synth_data,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (
        ConfigFileError,
        EvaluationError,
        TrainingError,
        wio.FeatureFileError,
        wio.ManifestError,
        FileNotFoundError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
