"""Command-line interface.

Verbs: synth, preprocess, train, eval, predict, grid, plot. Exit codes:
0 success, 1 I/O failure, 2 bad input or contract violation.

Every verb accepts ``--config FILE`` with ``key=value`` lines (keys are
flag names with underscores); explicit flags win over the file. The
environment variable ``RECOG_SEED`` overrides every seed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .data import (
    SyntheticSceneSpec,
    generate_scene,
    parse_track_file,
    read_pgm,
    rows_from_tracks,
    split_dataset,
    tracks_from_rows,
    write_pgm,
    write_track_file,
)
from .errors import ConfigError, ContractError
from .geometry import (
    adapt_samples,
    build_sample,
    load_samples,
    save_samples,
    segment_tracks,
)
from .metrics import table_to_csv
from .model import ModelConfig
from .training import (
    TrainConfig,
    evaluate,
    load_grid_records,
    per_scene_table,
    run_grid,
    train,
)


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _str_list(text: str) -> list[str]:
    return [v for v in text.split(",") if v]


def _add_config_flag(parser):
    parser.add_argument("--config", default=None,
                        help="key=value file; flags override it")


def _apply_config_file(parser, args, argv):
    """Fill args from --config for every flag not given on the command line."""
    if not args.config:
        return args
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    explicit = set()
    for token in argv:
        if token.startswith("--"):
            explicit.add(token[2:].split("=")[0].replace("-", "_"))
    types = {a.dest: a.type for a in parser._actions}
    flags = {a.dest: a for a in parser._actions}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key not in flags:
            raise ConfigError(f"{path}:{lineno}: unknown option {key!r}")
        if key in explicit:
            continue
        action = flags[key]
        if isinstance(action, argparse._StoreTrueAction):
            setattr(args, key, value.lower() in ("1", "true", "yes"))
        else:
            convert = types[key] or str
            setattr(args, key, convert(value))
    return args


def _apply_env_seed(args):
    env = os.environ.get("RECOG_SEED")
    if env is not None and hasattr(args, "seed"):
        args.seed = int(env)
    return args


# -- synth ----------------------------------------------------------------------


def cmd_synth(argv) -> int:
    parser = argparse.ArgumentParser(prog="trajgnn synth")
    parser.add_argument("--out", required=True)
    parser.add_argument("--scenes", type=int, default=10)
    parser.add_argument("--kind", choices=["straight", "intersection",
                                           "roundabout-arc", "mixed"],
                        default="intersection")
    parser.add_argument("--neighbors", type=int, default=1)
    parser.add_argument("--noise", type=float, default=0.0)
    parser.add_argument("--duration", type=float, default=10.0)
    parser.add_argument("--seed", type=int, default=0)
    _add_config_flag(parser)
    args = _apply_env_seed(_apply_config_file(parser, parser.parse_args(argv), argv))

    out = Path(args.out)
    kinds = (["straight", "intersection", "roundabout-arc"]
             if args.kind == "mixed" else [args.kind])
    for i in range(args.scenes):
        spec = SyntheticSceneSpec(
            kind=kinds[i % len(kinds)], n_neighbors=args.neighbors,
            noise=args.noise, seed=args.seed + i, duration_s=args.duration,
            case_id=i,
        )
        scene = generate_scene(spec)
        write_track_file(out / "tracks" / f"case_{i:04d}.csv",
                         rows_from_tracks(scene.case_id, scene.tracks))
        write_pgm(out / "maps" / f"case_{i:04d}.pgm", scene.world_raster())
    print(f"wrote {args.scenes} scenes under {out}")
    return 0


# -- preprocess ---------------------------------------------------------------------


def cmd_preprocess(argv) -> int:
    parser = argparse.ArgumentParser(prog="trajgnn preprocess")
    parser.add_argument("--tracks", required=True)
    parser.add_argument("--maps", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--th", type=int, default=30)
    parser.add_argument("--tf", type=int, default=50)
    parser.add_argument("--stride", type=int, default=10)
    parser.add_argument("--dims", type=int, choices=[2, 4, 5], default=4)
    parser.add_argument("--split-ratio", type=float, default=0.8)
    parser.add_argument("--seed", type=int, default=0)
    _add_config_flag(parser)
    args = _apply_env_seed(_apply_config_file(parser, parser.parse_args(argv), argv))

    track_files = sorted(Path(args.tracks).glob("*.csv"))
    samples = []
    for path in track_files:
        cases = tracks_from_rows(parse_track_file(path))
        map_path = Path(args.maps) / f"{path.stem}.pgm"
        if not map_path.exists():
            raise ConfigError(f"no map {map_path} for track file {path}")
        world = read_pgm(map_path)
        for case_id, tracks in cases.items():
            for window in segment_tracks(tracks, args.th, args.tf, args.stride):
                samples.append(build_sample(
                    tracks, window, world, args.th, args.tf, args.dims,
                    scene_id=case_id,
                ))
    if not samples:
        print("warning: no samples produced (empty or short tracks)",
              file=sys.stderr)
        save_samples(Path(args.out) / "train", [])
        save_samples(Path(args.out) / "val", [])
        print("train samples: 0\nval samples: 0")
        return 0
    train_set, val_set = split_dataset(samples, args.split_ratio, args.seed)
    save_samples(Path(args.out) / "train", train_set)
    save_samples(Path(args.out) / "val", val_set)
    print(f"train samples: {len(train_set)}")
    print(f"val samples: {len(val_set)}")
    return 0


# -- train ---------------------------------------------------------------------------


def _model_flags(parser):
    parser.add_argument("--variant", choices=["R", "GR", "GH"], default="GH")
    parser.add_argument("--dims", type=int, choices=[2, 4, 5], default=4)
    parser.add_argument("--th", type=int, default=30)
    parser.add_argument("--tf", type=int, default=50)
    parser.add_argument("--rnn", choices=["GRU", "LSTM"], default="GRU")
    parser.add_argument("--gnn", choices=["GCN", "GAT"], default="GAT")
    parser.add_argument("--dtype", choices=["float32", "float64"],
                        default="float32")
    parser.add_argument("--no-target-self-loop", action="store_true")


def _model_config(args, seed) -> ModelConfig:
    return ModelConfig(
        variant=args.variant, state_dims=args.dims, history_len=args.th,
        future_len=args.tf, rnn_kind=args.rnn, gnn_kind=args.gnn,
        dtype=args.dtype, target_self_loop=not args.no_target_self_loop,
        seed=seed,
    )


def cmd_train(argv) -> int:
    parser = argparse.ArgumentParser(prog="trajgnn train")
    parser.add_argument("--data", required=True)
    parser.add_argument("--out", required=True)
    _model_flags(parser)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--lr-milestones", type=_int_list, default=[1, 2, 4, 6])
    parser.add_argument("--seed", type=int, default=0)
    _add_config_flag(parser)
    args = _apply_env_seed(_apply_config_file(parser, parser.parse_args(argv), argv))

    train_set = adapt_samples(
        load_samples(Path(args.data) / "train"), args.th, args.tf, args.dims
    )
    val_set = adapt_samples(
        load_samples(Path(args.data) / "val"), args.th, args.tf, args.dims
    )
    config = TrainConfig(
        model=_model_config(args, args.seed), epochs=args.epochs,
        batch_size=args.batch_size, base_lr=args.lr,
        lr_milestones=tuple(args.lr_milestones), seed=args.seed,
    )
    record = train(config, train_set, val_set, args.out)
    print(f"run {record.name}")
    print(f"final train loss: {record.train_losses[-1]!r}")
    for key, value in sorted(record.val_metrics.items()):
        print(f"val {key}: {value!r}")
    print(f"checkpoint: {record.checkpoint_path}")
    return 0


# -- eval ------------------------------------------------------------------------------


def cmd_eval(argv) -> int:
    from .checkpoint import load_checkpoint

    parser = argparse.ArgumentParser(prog="trajgnn eval")
    parser.add_argument("--ckpt", required=True)
    parser.add_argument("--data", required=True)
    parser.add_argument("--split", default="val")
    parser.add_argument("--out", default=None)
    _add_config_flag(parser)
    args = _apply_config_file(parser, parser.parse_args(argv), argv)

    model = load_checkpoint(args.ckpt)
    c = model.config
    samples = adapt_samples(
        load_samples(Path(args.data) / args.split),
        c.history_len, c.future_len, c.state_dims,
    )
    summary, results = evaluate(model, samples)
    for key, value in sorted(summary.items()):
        print(f"{key}: {value!r}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "per_scene.csv").write_text(table_to_csv(per_scene_table(results)))
        from .metrics import aggregate

        (out / "per_horizon.csv").write_text(
            table_to_csv(aggregate(results, "horizon"))
        )
        print(f"tables written to {out}")
    return 0


# -- predict ------------------------------------------------------------------------


def cmd_predict(argv) -> int:
    from .checkpoint import load_checkpoint
    from .plots import trajectory_overlay

    parser = argparse.ArgumentParser(prog="trajgnn predict")
    parser.add_argument("--ckpt", required=True)
    parser.add_argument("--data", required=True)
    parser.add_argument("--split", default="val")
    parser.add_argument("--sample", type=int, required=True)
    parser.add_argument("--out", required=True)
    _add_config_flag(parser)
    args = _apply_config_file(parser, parser.parse_args(argv), argv)

    model = load_checkpoint(args.ckpt)
    c = model.config
    samples = load_samples(Path(args.data) / args.split)
    if not 0 <= args.sample < len(samples):
        raise ContractError(
            f"sample index {args.sample} outside 0..{len(samples) - 1}"
        )
    sample = adapt_samples(
        [samples[args.sample]], c.history_len, c.future_len, c.state_dims
    )[0]
    prediction = model.predict(sample)
    path = trajectory_overlay(sample, prediction, args.out)
    print(f"wrote {path} and {path.with_suffix('.csv')}")
    return 0


# -- grid -------------------------------------------------------------------------------


def cmd_grid(argv) -> int:
    parser = argparse.ArgumentParser(prog="trajgnn grid")
    parser.add_argument("--data", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--variants", type=_str_list, default=["R", "GR", "GH"])
    parser.add_argument("--dims-list", type=_int_list, default=[4])
    parser.add_argument("--th-list", type=_int_list, default=[30])
    parser.add_argument("--rnn-list", type=_str_list, default=["GRU"])
    parser.add_argument("--gnn-list", type=_str_list, default=["GAT"])
    parser.add_argument("--seeds", type=_int_list, default=[0])
    parser.add_argument("--tf", type=int, default=50)
    parser.add_argument("--dtype", choices=["float32", "float64"],
                        default="float32")
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--lr-milestones", type=_int_list, default=[1, 2, 4, 6])
    _add_config_flag(parser)
    args = _apply_config_file(parser, parser.parse_args(argv), argv)

    cells = []
    for variant in args.variants:
        for dims in args.dims_list:
            for th in args.th_list:
                for rnn in args.rnn_list:
                    for gnn in args.gnn_list:
                        for seed in args.seeds:
                            cells.append(TrainConfig(
                                model=ModelConfig(
                                    variant=variant, state_dims=dims,
                                    history_len=th, future_len=args.tf,
                                    rnn_kind=rnn, gnn_kind=gnn,
                                    dtype=args.dtype, seed=seed,
                                ),
                                epochs=args.epochs, batch_size=args.batch_size,
                                base_lr=args.lr,
                                lr_milestones=tuple(args.lr_milestones),
                                seed=seed,
                            ))
    train_set = load_samples(Path(args.data) / "train")
    val_set = load_samples(Path(args.data) / "val")
    records = run_grid(cells, train_set, val_set, args.out)
    width = max(len(r.name) for r in records)
    for r in records:
        print(f"{r.name:<{width}}  ade={r.val_metrics.get('ade')!r}  "
              f"fde={r.val_metrics.get('fde')!r}")
    print(f"manifest: {Path(args.out) / 'grid_manifest.json'}")
    return 0


# -- plot -------------------------------------------------------------------------------


def cmd_plot(argv) -> int:
    from . import plots

    parser = argparse.ArgumentParser(prog="trajgnn plot")
    parser.add_argument("--runs", required=True, help="grid manifest path")
    parser.add_argument("--kind", choices=["horizon-curve", "ablation-bars",
                                           "loss-curves"],
                        required=True)
    parser.add_argument("--out", required=True)
    _add_config_flag(parser)
    args = _apply_config_file(parser, parser.parse_args(argv), argv)

    records = load_grid_records(args.runs)
    if not records:
        raise ContractError(f"manifest {args.runs} lists no runs")
    fn = {"horizon-curve": plots.horizon_curve,
          "ablation-bars": plots.ablation_bars,
          "loss-curves": plots.loss_curves}[args.kind]
    path = fn(records, args.out)
    print(f"wrote {path} and {path.with_suffix('.csv')}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "grid": cmd_grid,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        print(__doc__.strip())
        print("\ncommands:", ", ".join(COMMANDS))
        return 0 if argv else 2
    verb, rest = argv[0], argv[1:]
    if verb not in COMMANDS:
        print(f"unknown command {verb!r}; expected one of "
              f"{', '.join(COMMANDS)}", file=sys.stderr)
        return 2
    try:
        return COMMANDS[verb](rest)
    except SystemExit as exc:  # argparse usage errors / --help
        return int(exc.code or 0)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
