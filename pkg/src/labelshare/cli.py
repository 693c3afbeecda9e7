"""Command-line pipeline: synth -> stats -> build-space -> remap -> train
-> add-task -> train-il -> eval -> report.

Exit codes: 0 success, 1 failure, 2 specifically when a new task has more
labels than the shared space has groups.
"""

import argparse
import json
import os
import sys

from . import checkpoint as ckpt_io
from . import data, metrics, synth, training
from .errors import LabelShareError, TaskTooLarge
from .labelspace import (
    LabelDescriptor,
    SizeTable,
    TaskSpec,
    assign_task,
    build_shared_space,
    load_space,
    save_space,
)
from .net import ModelConfig


def _task_spec_from_manifest(manifest, stats):
    labels = tuple(
        LabelDescriptor(
            task_id=manifest.task_id,
            local_index=i,
            name=manifest.label_names.get(i, str(i)),
            avg_relative_size=stats[i]["avg_relative_size"],
        )
        for i in sorted(stats)
    )
    return TaskSpec(task_id=manifest.task_id, name=manifest.task_id, labels=labels)


def _collect_task(manifest_path):
    manifest = data.load_manifest(manifest_path)
    stats = data.size_stats(manifest)
    task = _task_spec_from_manifest(manifest, stats)
    sizes = {i: s["avg_relative_size"] for i, s in stats.items()}
    return manifest, task, sizes


def _print_group_table(space):
    print(f"n_star = {space.n_star}")
    print("k  representative_size  members")
    for g in space.groups:
        members = ", ".join(f"{t}:{i}" for t, i in g.members)
        print(f"{g.shared_index}  {g.representative_size:.6f}  {members}")


def _load_config_file(args):
    if getattr(args, "config", None):
        with open(args.config) as fh:
            return json.load(fh)
    return {}


def _train_config(args, mode, extra=None):
    doc = _load_config_file(args)
    doc.update(extra or {})
    fields = {
        k: doc[k]
        for k in (
            "epochs", "il_finetune_epochs", "il_combined_epochs", "batch_size",
            "learning_rate", "missing_channel_policy",
        )
        if k in doc
    }
    cfg = training.TrainConfig(mode=mode, seed=args.seed, **fields)
    if getattr(args, "epochs", None) is not None:
        cfg.epochs = args.epochs
    return cfg


def _model_config(args, out_channels):
    doc = _load_config_file(args)
    return ModelConfig(
        out_channels=out_channels,
        depth=doc.get("depth", args.depth),
        base_width=doc.get("base_width", args.width),
        seed=args.seed,
    )


# --- subcommands ------------------------------------------------------------


def cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    specs = []
    if args.spec:
        with open(args.spec) as fh:
            doc = json.load(fh)
        docs = doc if isinstance(doc, list) else [doc]
        specs = [synth.TaskGenSpec.from_json(d) for d in docs]
    else:
        base, il = synth.default_suite(
            args.seed, n_train=args.n_train, n_test=args.n_test
        )
        specs = base + [il]
    for spec in specs:
        train_m, test_m = synth.generate_task(spec, args.out)
        print(
            f"{spec.task_id}: {len(train_m)} train / {len(test_m)} test, "
            f"train fingerprint {train_m.fingerprint[:12]}"
        )
    return 0


def cmd_stats(args):
    manifest = data.load_manifest(args.manifest)
    stats = data.size_stats(manifest)
    print(f"task {manifest.task_id} ({len(manifest)} samples)")
    print("label  avg_relative_size  presence  mean_pixels")
    for i, s in sorted(stats.items()):
        name = manifest.label_names.get(i, str(i))
        print(
            f"{i} ({name})  {s['avg_relative_size']:.6f}  "
            f"{s['presence_count']}  {s['mean_pixel_count']:.1f}"
        )
    return 0


def cmd_build_space(args):
    tasks, table = [], SizeTable()
    for path in args.manifests:
        manifest, task, sizes = _collect_task(path)
        tasks.append(task)
        table.add_task(
            manifest.task_id, sizes,
            fingerprint=manifest.fingerprint, sample_count=len(manifest),
        )
    space = build_shared_space(tasks, table)
    save_space(space, table, args.out)
    _print_group_table(space)
    return 0


def cmd_add_task(args):
    space, table = load_space(args.space)
    manifest, task, sizes = _collect_task(args.manifest)
    table.add_task(
        manifest.task_id, sizes,
        fingerprint=manifest.fingerprint, sample_count=len(manifest),
    )
    space = assign_task(space, task, table)
    save_space(space, table, args.space)
    _print_group_table(space)
    return 0


def cmd_remap(args):
    space, _ = load_space(args.space)
    manifests = [data.load_manifest(p) for p in args.manifests]
    if args.multichannel:
        merged = data.multichannel_merge(manifests, args.out)
    else:
        merged = data.merge_datasets(manifests, space, args.out)
    data.save_manifest(merged, os.path.join(args.out, "manifest.json"))
    print(f"{len(merged)} entries -> {args.out}/manifest.json")
    return 0


def cmd_train(args):
    manifests = [data.load_manifest(p) for p in args.manifests]
    space = None
    if args.mode == "individual":
        if len(manifests) != 1:
            raise LabelShareError("individual mode takes exactly one manifest")
        merged = manifests[0]
        out_channels = len(merged.label_names) + 1
    elif args.mode == "multichannel":
        merged = data.multichannel_merge(manifests, args.workdir)
        out_channels = sum(len(m.label_names) for m in manifests) + 1
    else:
        space, _ = load_space(args.space)
        merged = data.merge_datasets(manifests, space, args.workdir)
        out_channels = space.n_star + 1
    cfg = _train_config(args, args.mode)
    ckpt = training.train(cfg, _model_config(args, out_channels), merged, space)
    ckpt_io.save_checkpoint(ckpt, args.out)
    final = ckpt.history[-1]["loss"] if ckpt.history else float("nan")
    print(f"trained {args.mode} for {cfg.epochs} epochs, final loss {final:.4f}")
    return 0


def cmd_train_il(args):
    base = ckpt_io.load_checkpoint(args.base)
    space, _ = load_space(args.space)
    new_manifest = data.load_manifest(args.new)
    old_manifests = [data.load_manifest(p) for p in args.old]
    new_merged = data.merge_datasets(
        [new_manifest], space, os.path.join(args.workdir, "new")
    )
    old_merged = data.merge_datasets(
        old_manifests, space, os.path.join(args.workdir, "old")
    )
    cfg = _train_config(
        args, "label_sharing_il",
        extra={
            k: v
            for k, v in (
                ("il_finetune_epochs", args.finetune_epochs),
                ("il_combined_epochs", args.combined_epochs),
            )
            if v is not None
        },
    )
    ckpt = training.train_incremental(base, new_merged, old_merged, space, cfg)
    ckpt_io.save_checkpoint(ckpt, args.out)
    print(
        f"incremental training done: {cfg.il_finetune_epochs} fine-tune + "
        f"{cfg.il_combined_epochs} combined epochs"
    )
    return 0


def cmd_eval(args):
    ckpt = ckpt_io.load_checkpoint(args.checkpoint)
    manifests = [data.load_manifest(p) for p in args.manifests]
    space = None
    relabels = None
    if args.space:
        space, _ = load_space(args.space)
    if ckpt.mode == "multichannel":
        relabels = {
            t: {start + j: j + 1 for j in range(end - start + 1)}
            for t, (start, end) in ckpt.channel_blocks.items()
        }
    report = metrics.evaluate(ckpt, manifests, space=space, relabels=relabels)
    metrics.write_report_csv(report, args.out + ".csv")
    metrics.write_report_json(report, args.out + ".json")
    for task_id, agg in sorted(report.task_aggregates.items()):
        print(f"{task_id}: mean dice {agg.get('dice', float('nan')):.4f}")
    return 0


def cmd_report(args):
    reports = [metrics.load_report_json(p) for p in args.reports]
    tasks = sorted({t for r in reports for t in r.task_aggregates})
    header = ["method"] + tasks
    print("  ".join(header))
    lines = [header]
    for r in reports:
        cells = [r.mode]
        for t in tasks:
            value = r.task_aggregates.get(t, {}).get(args.metric)
            cells.append("-" if value is None else f"{value:.4f}")
        print("  ".join(cells))
        lines.append(cells)
    if args.out:
        with open(args.out, "w") as fh:
            for row in lines:
                fh.write(",".join(row) + "\n")
    return 0


# --- argument parsing ---------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="labelshare",
        description="Label-sharing multi-task segmentation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workspace", default="")
        p.add_argument("--config", default="", help="JSON file with config fields")

    p = sub.add_parser("synth", help="generate synthetic task datasets")
    common(p)
    p.add_argument("--suite", default="default", choices=["default"])
    p.add_argument("--spec", default="", help="TaskGenSpec JSON (overrides --suite)")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-test", type=int, default=40)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="per-label size statistics of a dataset")
    common(p)
    p.add_argument("manifest")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("build-space", help="build the shared label space")
    common(p)
    p.add_argument("manifests", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_space)

    p = sub.add_parser("add-task", help="assign a new task into an existing space")
    common(p)
    p.add_argument("space")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_add_task)

    p = sub.add_parser("remap", help="merge datasets into the shared domain")
    common(p)
    p.add_argument("manifests", nargs="+")
    p.add_argument("--space", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--multichannel", action="store_true")
    p.set_defaults(func=cmd_remap)

    p = sub.add_parser("train", help="train a model in one of the four modes")
    common(p)
    p.add_argument("manifests", nargs="+", help="task-local train manifests")
    p.add_argument("--mode", required=True,
                   choices=["individual", "multichannel", "label_sharing"])
    p.add_argument("--space", default="", help="space.json (label_sharing)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--workdir", default="remapped")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-il", help="two-phase incremental task addition")
    common(p)
    p.add_argument("--base", required=True, help="pre-addition checkpoint")
    p.add_argument("--space", required=True, help="post-addition space.json")
    p.add_argument("--new", required=True, help="new task train manifest")
    p.add_argument("--old", nargs="+", required=True, help="old train manifests")
    p.add_argument("--finetune-epochs", type=int, default=None)
    p.add_argument("--combined-epochs", type=int, default=None)
    p.add_argument("--workdir", default="remapped_il")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_il)

    p = sub.add_parser("eval", help="evaluate a checkpoint on test manifests")
    common(p)
    p.add_argument("manifests", nargs="+", help="task-local test manifests")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--space", default="")
    p.add_argument("--out", required=True, help="report path prefix (.csv/.json)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="merge mode reports into one table")
    common(p)
    p.add_argument("reports", nargs="+", help="report JSON files")
    p.add_argument("--metric", default="dice", choices=list(metrics.METRICS))
    p.add_argument("--out", default="")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.workspace:
            # every relative path argument resolves inside the workspace
            os.makedirs(args.workspace, exist_ok=True)
            os.chdir(args.workspace)
        return args.func(args)
    except TaskTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LabelShareError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
