"""Command-line entry points.

Subcommands: gen-toy, train, eval, analyze (saliency/embed/report),
dump-rotations. Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .data import (DatasetManifest, ManifestRecord, PairedSample,
                   load_dataset, load_manifest, save_manifest,
                   write_color_png, write_raw_depth_png)
from .errors import ConfigError, DataError, NumericalError
from .rotation import ABSOLUTE, RELATIVE, make_absolute_rotation_batch, make_rotation_batch
from .toyshift import SHAPE_NAMES, ToyShiftSpec, render_arrays, spec_from_toml
from .training import (TrainConfig, checkpoint_load, checkpoint_save,
                       evaluate, train)

_OVERRIDE_FIELDS = ("method", "seed", "pretext_domains", "pretext_head")


def _cmd_gen_toy(args) -> int:
    spec = spec_from_toml(args.spec) if args.spec else ToyShiftSpec()
    if not 0.0 <= args.test_fraction < 1.0:
        raise ConfigError(f"--test-fraction must be in [0, 1), got {args.test_fraction}")
    os.makedirs(args.out, exist_ok=True)
    n = spec.samples_per_domain
    n_test = int(round(args.test_fraction * n))
    class_names = SHAPE_NAMES[:spec.num_classes]
    for domain in ("source", "target"):
        color_dir = os.path.join(args.out, domain, "color")
        depth_dir = os.path.join(args.out, domain, "depth")
        os.makedirs(color_dir, exist_ok=True)
        os.makedirs(depth_dir, exist_ok=True)
        records = []
        for index in range(n):
            color, raw_depth, _, _, label = render_arrays(spec, domain, index)
            name = f"{index:06d}.png"
            write_color_png(os.path.join(color_dir, name), color)
            write_raw_depth_png(os.path.join(depth_dir, name), raw_depth)
            split = "test" if index >= n - n_test else "train"
            if domain == "target" and args.strip_target_labels:
                label = -1
            records.append(ManifestRecord(
                color_path=f"{domain}/color/{name}",
                depth_path=f"{domain}/depth/{name}",
                label=label, split=split))
        manifest = DatasetManifest(root=args.out, records=records,
                                   class_names=class_names)
        save_manifest(os.path.join(args.out, f"{domain}.manifest"), manifest)
        print(f"wrote {n} {domain} samples ({n - n_test} train / {n_test} test)")
    return 0


def _load_split(manifest_path: str, domain: str, split: str | None):
    manifest = load_manifest(manifest_path)
    return load_dataset(manifest, domain, split=split)


def _maybe_load_split(manifest_path: str, domain: str, split: str):
    try:
        return _load_split(manifest_path, domain, split)
    except DataError:
        return None


def _cmd_train(args) -> int:
    config = TrainConfig.from_toml(args.config) if args.config else TrainConfig()
    overrides = {name: getattr(args, name) for name in _OVERRIDE_FIELDS
                 if getattr(args, name) is not None}
    if overrides:
        d = config.to_dict()
        d.update(overrides)
        config = TrainConfig.from_dict(d)
    source = _load_split(args.source, "source", "train")
    target = _load_split(args.target, "target", "train") if args.target else None
    source_eval = _maybe_load_split(args.source, "source", "test")
    target_eval = _maybe_load_split(args.target, "target", "test") if args.target else None
    bundle, metrics = train(config, source, target,
                            source_eval=source_eval, target_eval=target_eval,
                            resume_from=args.resume)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.resolved"), "w") as fh:
        fh.write(config.to_toml())
    metrics.save(os.path.join(args.out, "metrics.csv"))
    checkpoint_save(os.path.join(args.out, "checkpoint.pt"), bundle, config,
                    config.epochs)
    # wall clock lives outside metrics.csv so fixed-seed runs stay byte-identical
    with open(os.path.join(args.out, "timing.txt"), "w") as fh:
        fh.write(f"{metrics.wall_clock_s:.3f}\n")
    final = metrics.rows[-1]
    summary = {k: final.get(k) for k in ("epoch", "loss_total", "acc_source", "acc_target")}
    print(json.dumps(summary))
    return 0


def _cmd_eval(args) -> int:
    bundle, _, _ = checkpoint_load(args.checkpoint)
    split = None if args.split == "all" else args.split
    samples = _load_split(args.data, args.domain, split)
    result = evaluate(bundle, samples)
    print(json.dumps({"accuracy": result.accuracy, "per_class": result.per_class,
                      "count": result.count}))
    return 0


def _episode_samples(samples, n, rng, task):
    picked_idx = rng.choice(len(samples), size=min(n, len(samples)), replace=False)
    picked = [samples[int(i)] for i in picked_idx]
    maker = make_rotation_batch if task == RELATIVE else make_absolute_rotation_batch
    batch = maker(picked, rng)
    episodes = []
    for i, s in enumerate(picked):
        episodes.append((PairedSample(color=batch.color[i], depth=batch.depth[i],
                                      label=None, domain=s.domain, id=s.id),
                         int(batch.z[i]), int(batch.j[i]), int(batch.k[i])))
    return episodes


def _cmd_analyze_saliency(args) -> int:
    from .analysis import guided_backprop, save_saliency_panel

    bundle, config, _ = checkpoint_load(args.checkpoint)
    task = ABSOLUTE if config.method == "absolute-rotation" else RELATIVE
    split = None if args.split == "all" else args.split
    samples = _load_split(args.data, args.domain, split)
    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)
    sidecar = []
    for i, (episode, z, j, k) in enumerate(_episode_samples(samples, args.n, rng, task)):
        saliency = guided_backprop(bundle, episode, z, task=task)
        name = f"saliency_{i:03d}.png"
        save_saliency_panel(episode, saliency, os.path.join(args.out, name),
                            percentile=args.percentile)
        sidecar.append({"image": name, "sample_id": episode.id, "true_label": z,
                        "predicted_label": saliency.predicted_label,
                        "color_rotation": j, "depth_rotation": k})
    with open(os.path.join(args.out, "saliency.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2)
    print(f"wrote {len(sidecar)} saliency panels to {args.out}")
    return 0


def _cmd_analyze_embed(args) -> int:
    from .analysis import embed_features_2d, plot_embedding

    bundle, _, _ = checkpoint_load(args.checkpoint)
    split = None if args.split == "all" else args.split
    source = _load_split(args.source, "source", split)
    target = _load_split(args.target, "target", split)
    rng = np.random.default_rng(args.seed)
    if len(source) > args.max_per_domain:
        idx = rng.choice(len(source), size=args.max_per_domain, replace=False)
        source = [source[int(i)] for i in sorted(idx)]
    if len(target) > args.max_per_domain:
        idx = rng.choice(len(target), size=args.max_per_domain, replace=False)
        target = [target[int(i)] for i in sorted(idx)]
    embedding = embed_features_2d(bundle, source, target,
                                  perplexity=args.perplexity, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    plot_embedding(embedding, os.path.join(args.out, "embedding.png"))
    with open(os.path.join(args.out, "embedding.json"), "w") as fh:
        json.dump({"ids": embedding.ids,
                   "domains": embedding.domains.tolist(),
                   "labels": embedding.labels,
                   "points": embedding.points.tolist()}, fh)
    print(f"wrote embedding plot for {len(embedding.ids)} samples to {args.out}")
    return 0


def _cmd_analyze_report(args) -> int:
    from .analysis import emit_report

    path = emit_report(args.run)
    print(path)
    return 0


def _cmd_dump_rotations(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    split = None if args.split == "all" else args.split
    samples = _load_split(args.data, args.domain, split)
    rng = np.random.default_rng(args.seed)
    episodes = _episode_samples(samples, args.n, rng, RELATIVE)
    os.makedirs(args.out, exist_ok=True)
    rows = len(episodes)
    fig, axes = plt.subplots(rows, 2, figsize=(4.6, 2.3 * rows), squeeze=False)
    sidecar = []
    for i, (episode, z, j, k) in enumerate(episodes):
        axes[i][0].imshow(episode.color)
        axes[i][0].set_title(f"color, rotated {90 * j}°", fontsize=8)
        axes[i][1].imshow(episode.depth)
        axes[i][1].set_title(f"depth, rotated {90 * k}° → label {z}", fontsize=8)
        for ax in axes[i]:
            ax.axis("off")
        sidecar.append({"sample_id": episode.id, "j": j, "k": k, "z": z})
    fig.tight_layout()
    out_png = os.path.join(args.out, "rotations.png")
    fig.savefig(out_png, dpi=110)
    plt.close(fig)
    with open(os.path.join(args.out, "rotations.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2)
    print(out_png)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rotadapt",
        description="Domain adaptation for paired color+depth images via "
                    "rotation self-supervision.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="generate the procedural toy-shift dataset")
    p.add_argument("--spec", help="generator spec TOML (defaults if omitted)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--strip-target-labels", action="store_true",
                   help="write -1 labels in the target manifest")
    p.set_defaults(func=_cmd_gen_toy)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="TrainConfig TOML (defaults if omitted)")
    p.add_argument("--source", required=True, help="source manifest path")
    p.add_argument("--target", help="target manifest path")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--method", choices=("source-only", "relative-rotation",
                                        "absolute-rotation", "grl", "mmd", "afn"))
    p.add_argument("--seed", type=int)
    p.add_argument("--pretext-domains", dest="pretext_domains",
                   choices=("both", "target-only"))
    p.add_argument("--pretext-head", dest="pretext_head", choices=("conv", "fc"))
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on labeled data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--domain", choices=("source", "target"), default="target")
    p.add_argument("--split", default="test", help="train, test, or all")
    p.set_defaults(func=_cmd_eval)

    pa = sub.add_parser("analyze", help="post-hoc analysis of a trained run")
    asub = pa.add_subparsers(dest="analysis", required=True)

    p = asub.add_parser("saliency", help="guided-backprop saliency panels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--domain", choices=("source", "target"), default="source")
    p.add_argument("--split", default="test")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--percentile", type=float, default=95.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_analyze_saliency)

    p = asub.add_parser("embed", help="2-D feature embedding scatter")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--max-per-domain", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_analyze_embed)

    p = asub.add_parser("report", help="single-file HTML run summary")
    p.add_argument("--run", required=True, help="run directory with metrics.csv")
    p.set_defaults(func=_cmd_analyze_report)

    p = sub.add_parser("dump-rotations", help="image grid of rotation episodes")
    p.add_argument("--data", required=True)
    p.add_argument("--domain", choices=("source", "target"), default="source")
    p.add_argument("--split", default="train")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_dump_rotations)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
