"""Command-line entry point.

Stages (in dependency order): synth, features, dict, agf, train, transfer,
eval; grid runs train/transfer/eval over many task combinations. Every
stage resolves its configuration from profile defaults, an optional
key=value config file, and explicit flags (highest precedence), and logs
the resolved configuration to the run log.
"""

import argparse
import os
import sys

from . import pipeline
from .config import load_config_file, resolve_config
from .errors import PipelineError


def _add_common(parser):
    parser.add_argument("--data", default=None, help="data directory (default: data)")
    parser.add_argument("--profile", default=None, choices=["desk", "paper"])
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--force", action="store_true",
                        help="rebuild even if outputs look fresh")


_FLAG_KEYS = [
    ("k", "k_codebook"), ("topics", "n_topics"), ("genres_n", "n_genres"),
    ("epochs_stn", "epochs_stn"), ("epochs_mtn", "epochs_mtn"),
    ("epochs_mlp", "epochs_mlp"), ("batch_size", "batch_size"), ("lr", "lr"),
    ("width_scale", "width_scale"), ("duration", "duration_s"),
]


def _resolve(args):
    overrides = {}
    if args.data is not None:
        overrides["data_dir"] = args.data
    env_cache = os.environ.get("AGFPIPE_DATA")
    if "data_dir" not in overrides and env_cache:
        overrides["data_dir"] = env_cache
    if args.seed is not None:
        overrides["seed"] = args.seed
    for flag, key in _FLAG_KEYS:
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = val
    file_values = load_config_file(args.config) if args.config else None
    profile = args.profile or (file_values or {}).get("profile") or "desk"
    return resolve_config(profile=profile, file_values=file_values,
                          overrides=overrides)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="agfpipe",
        description="Artist-group-factor transfer learning pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--genres", type=int, default=4)
    p.add_argument("--artists", type=int, default=8, help="artists per genre")
    p.add_argument("--tracks", type=int, default=5, help="tracks per artist")
    p.add_argument("--duration", type=float, default=None, help="seconds per track")
    p.add_argument("--out", default=None, help="output directory (alias of --data)")

    p = sub.add_parser("features", help="extract mel/mfcc/dmfcc caches")
    _add_common(p)

    p = sub.add_parser("dict", help="fit codebooks and artist BoW tables")
    _add_common(p)
    p.add_argument("--k", type=int, default=None, help="codebook size")

    p = sub.add_parser("agf", help="fit topic models and assign artist groups")
    _add_common(p)
    p.add_argument("--topics", type=int, default=None, help="number of artist groups")
    p.add_argument("--tasks", default=pipeline.AGF_TASKS,
                   help="feature sets to model (subset of mdes)")

    for name, extra in (("train", True), ("transfer", False), ("eval", False)):
        p = sub.add_parser(name, help=f"{name} stage for one task combo")
        _add_common(p)
        p.add_argument("--tasks", required=True, help="task combo, e.g. gs")
        p.add_argument("--variant", default="mtn", choices=["stn", "mtn", "wstn"])
        if name == "train":
            p.add_argument("--epochs-stn", dest="epochs_stn", type=int, default=None)
            p.add_argument("--epochs-mtn", dest="epochs_mtn", type=int, default=None)
            p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
            p.add_argument("--lr", type=float, default=None)
            p.add_argument("--width-scale", dest="width_scale", type=float, default=None)
        if name == "transfer":
            p.add_argument("--epochs-mlp", dest="epochs_mlp", type=int, default=None)
            p.add_argument("--permute-labels", action="store_true",
                           help="shuffle training labels (leakage control)")
        if name == "eval":
            p.add_argument("--permuted", action="store_true",
                           help="evaluate the permuted-label control MLP")

    p = sub.add_parser("grid", help="run many (combo, variant) cases")
    _add_common(p)
    p.add_argument("--tasks", default=None,
                   help="comma-separated combos (e.g. gs,gse) or 'all' for "
                        "every non-empty subset")
    p.add_argument("--wstn", action="store_true",
                   help="add width-matched controls per combo size")
    p.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            if args.out is not None:
                args.data = args.out
            cfg = _resolve(args)
            manifest = pipeline.synth_stage(cfg, args.genres, args.artists, args.tracks)
            print(f"wrote {len(manifest.records)} tracks under {cfg.data_dir}")
        elif args.command == "features":
            cfg = _resolve(args)
            n = pipeline.features_stage(cfg, force=args.force)
            print(f"extracted features for {n} track(s)")
        elif args.command == "dict":
            cfg = _resolve(args)
            sizes = pipeline.dict_stage(cfg, force=args.force)
            print(f"dictionaries ready: {sizes}")
        elif args.command == "agf":
            cfg = _resolve(args)
            hists = pipeline.agf_stage(cfg, tasks=args.tasks, force=args.force)
            for task, hist in hists.items():
                print(f"agf[{task}] group sizes: {list(hist)}")
        elif args.command == "train":
            cfg = _resolve(args)
            out = pipeline.train_stage(cfg, args.tasks, args.variant, force=args.force)
            print(f"trained {args.tasks}/{args.variant}: {out['files']}")
        elif args.command == "transfer":
            cfg = _resolve(args)
            out = pipeline.transfer_stage(cfg, args.tasks, args.variant,
                                          permute_labels=args.permute_labels)
            print(f"transfer MLP saved: {out['checkpoint']}")
        elif args.command == "eval":
            cfg = _resolve(args)
            row = pipeline.eval_stage(cfg, args.tasks, args.variant,
                                      permuted=args.permuted)
            print(f"{row.task_combo},{row.variant}: "
                  f"log_loss={row.log_loss:.4f} f1={row.f1:.4f}")
        elif args.command == "grid":
            cfg = _resolve(args)
            combos = None
            if args.tasks and args.tasks != "all":
                combos = args.tasks.split(",")
            rows = pipeline.run_grid(cfg, combos=combos, with_wstn=args.wstn,
                                     jobs=args.jobs)
            for row in rows:
                print(f"{row.task_combo},{row.variant}: "
                      f"log_loss={row.log_loss:.4f} f1={row.f1:.4f}")
        else:  # pragma: no cover - argparse enforces the choices
            parser.error(f"unknown command {args.command!r}")
    except PipelineError as e:
        print(f"error [{args.command}]: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
