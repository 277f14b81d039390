"""Command-line interface wiring the full pipeline.

Subcommands: gen-data, train, eval, simulate, sweep, ablate-merge,
component. Every command writes exactly one `manifest.txt` next to its
outputs recording the resolved parameters, seeds, paths, wall time, and
build id. All randomness flows from the single --seed through named
substreams, so reruns are byte-identical.

Exit codes: 0 success, 2 bad arguments, 3 missing file, 4 invalid file
content, 5 condition out of operating range.
"""

import argparse
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    POWER_RANGE,
    SPEED_RANGE,
    Condition,
    OracleParams,
    PowderBedSpec,
    bed_to_track,
    generate_track,
    load_pairs,
    rain_deposit,
    sample_conditions,
    write_pairs,
)
from .model import (
    MERGE_STRATEGIES,
    ModelConfig,
    WeightsFormatError,
    build,
    count_parameters,
    load,
    save,
)
from .patches import (
    ComponentSpec,
    CropPlan,
    crop_track,
    infer_track,
    mean_sinter_depth,
    simulate_component,
    tile_offsets,
)
from .pgm import read_pgm, write_pgm
from .seeding import substream
from .training import (
    TrainConfig,
    dataset_hash,
    evaluate_pairs,
    manifest_text,
    split_by_condition,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_INVALID_FILE = 4
EXIT_RANGE = 5

_thread_limiter = None


def build_id() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5,
        )
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+{desc.stdout.strip()}"
    except OSError:
        pass
    return __version__


def _limit_threads(n):
    global _thread_limiter
    if n is None:
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return
    _thread_limiter = threadpool_limits(limits=n)


def _write_manifest(out_dir: Path, command: str, entries: dict, wall: float) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    full = {"command": command, **entries,
            "wall_time_s": f"{wall:.3f}", "build": build_id()}
    (out_dir / "manifest.txt").write_text(manifest_text(full))


def _check_range(power: float, speed: float) -> None:
    if not POWER_RANGE[0] <= power <= POWER_RANGE[1]:
        raise ConditionRangeError(f"power {power} outside {POWER_RANGE}")
    if not SPEED_RANGE[0] <= speed <= SPEED_RANGE[1]:
        raise ConditionRangeError(f"speed {speed} outside {SPEED_RANGE}")


class ConditionRangeError(ValueError):
    pass


def _derived_seed(seed: int, name: str) -> int:
    return int(substream(seed, name).integers(2 ** 31))


# ---------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> int:
    t0 = time.perf_counter()
    ratio = args.split.split(":")
    if len(ratio) != 2:
        print(f"bad split {args.split!r}, expected like 75:25", file=sys.stderr)
        return EXIT_USAGE
    a, b = int(ratio[0]), int(ratio[1])
    n_train = round(args.conditions * a / (a + b))
    n_test = args.conditions - n_train
    if n_train < 1 or n_test < 1:
        print(f"split {args.split} leaves an empty side for {args.conditions} conditions",
              file=sys.stderr)
        return EXIT_USAGE

    out = Path(args.out)
    conds = sample_conditions(args.conditions, args.seed)
    spec = PowderBedSpec(track_length_px=args.track_length)
    plan = CropPlan()
    counts = {"train": 0, "test": 0}
    for ci, cond in enumerate(conds):
        split = "train" if ci < n_train else "test"
        pairs = []
        for t in range(args.tracks):
            track_seed = _derived_seed(args.seed, f"data/cond{ci}/track{t}")
            track_in, track_out = generate_track(cond, track_seed, spec=spec)
            pairs.extend(crop_track(track_in, track_out, cond, plan))
        counts[split] = write_pairs(out / split, pairs, start_index=counts[split])

    _write_manifest(out, "gen-data", {
        "conditions": args.conditions, "tracks": args.tracks,
        "track_length": args.track_length, "split": args.split,
        "train_conditions": n_train, "test_conditions": n_test,
        "train_pairs": counts["train"], "test_pairs": counts["test"],
        "seed": args.seed, "out": out,
    }, time.perf_counter() - t0)
    print(f"wrote {counts['train']} train and {counts['test']} test pairs under {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    pairs = load_pairs(args.data)
    train_pairs, val_pairs = split_by_condition(pairs, args.val_conditions, args.seed)
    config = ModelConfig(merge_strategy=args.strategy, scale=args.scale)
    weights = build(config, args.seed)
    tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                     lr=args.lr, seed=args.seed)
    best, history = train(weights, train_pairs, val_pairs, tc)
    for i, (tl, vl) in enumerate(history, 1):
        print(f"epoch={i} train_loss={tl:.6f} val_loss={vl:.6f}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save(best, out / "weights.ynw")
    _write_manifest(out, "train", {
        "data": args.data, "seed": tc.seed, "epochs": tc.epochs,
        "batch_size": tc.batch_size, "lr": tc.lr,
        "beta1": tc.beta1, "beta2": tc.beta2,
        "scale": args.scale, "strategy": args.strategy,
        "val_conditions": args.val_conditions,
        "train_pairs": len(train_pairs), "val_pairs": len(val_pairs),
        "data_hash": dataset_hash(pairs),
        "best_val_loss": f"{min(v for _, v in history):.6f}",
        "weights": out / "weights.ynw",
    }, time.perf_counter() - t0)
    print(f"saved best checkpoint to {out / 'weights.ynw'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    weights = load(args.model)
    pairs = load_pairs(args.data)
    acc = evaluate_pairs(weights, pairs)
    print(f"mean_global_accuracy={acc:.6f}")
    _write_manifest(Path(args.out), "eval", {
        "model": args.model, "data": args.data, "pairs": len(pairs),
        "mean_global_accuracy": f"{acc:.6f}",
    }, time.perf_counter() - t0)
    return EXIT_OK


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    _check_range(args.power, args.speed)
    cond = Condition(power=args.power, speed=args.speed)
    weights = load(args.model)
    track = read_pgm(args.input)
    out = Path(args.out)
    t_inf = time.perf_counter()
    evolved = infer_track(weights, track, cond)
    wall_inf = time.perf_counter() - t_inf
    frames = len(tile_offsets(track.shape[1]))
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "evolved.pgm", evolved)
    fps = frames / wall_inf if wall_inf > 0 else float("inf")
    print(f"frames={frames} frames_per_second={fps:.1f}")
    _write_manifest(out, "simulate", {
        "model": args.model, "input": args.input,
        "power": args.power, "speed": args.speed,
        "frames": frames, "frames_per_second": f"{fps:.1f}",
        "evolved": out / "evolved.pgm",
    }, time.perf_counter() - t0)
    return EXIT_OK


def cmd_sweep(args) -> int:
    t0 = time.perf_counter()
    powers = [float(v) for v in args.powers.split(",")]
    speeds = [float(v) for v in args.speeds.split(",")]
    for p in powers:
        _check_range(p, SPEED_RANGE[0])
    for s in speeds:
        _check_range(POWER_RANGE[0], s)
    weights = load(args.model)
    bed = rain_deposit(PowderBedSpec(track_length_px=args.track_length,
                                     seed=_derived_seed(args.seed, "sweep/bed")))
    track = bed_to_track(bed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["power,speed,depth"]
    for p in powers:
        for s in speeds:
            cond = Condition(power=p, speed=s)
            evolved = infer_track(weights, track, cond)
            depth = mean_sinter_depth(track, evolved)
            rows.append(f"{p},{s},{depth}")
    (out / "sweep.csv").write_text("\n".join(rows) + "\n")
    _write_manifest(out, "sweep", {
        "model": args.model, "powers": args.powers, "speeds": args.speeds,
        "track_length": args.track_length, "seed": args.seed,
        "csv": out / "sweep.csv",
    }, time.perf_counter() - t0)
    print(f"wrote {len(rows) - 1} sweep rows to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_ablate_merge(args) -> int:
    t0 = time.perf_counter()
    strategies = args.strategies.split(",")
    for s in strategies:
        if s not in MERGE_STRATEGIES:
            print(f"unknown merge strategy {s!r}; choose from {MERGE_STRATEGIES}",
                  file=sys.stderr)
            return EXIT_USAGE
    pairs = load_pairs(args.data)
    train_pairs, val_pairs = split_by_condition(pairs, args.val_conditions, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ["strategy,parameters,final_train_loss,val_accuracy,wall_time_s"]
    for strategy in strategies:
        t_s = time.perf_counter()
        config = ModelConfig(merge_strategy=strategy, scale=args.scale)
        weights = build(config, args.seed)
        tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         lr=args.lr, seed=args.seed)
        best, history = train(weights, train_pairs, val_pairs, tc)
        acc = evaluate_pairs(best, val_pairs)
        wall = time.perf_counter() - t_s
        rows.append(f"{strategy},{count_parameters(weights)},"
                    f"{history[-1][0]:.6f},{acc:.6f},{wall:.1f}")
        print(rows[-1])
    (out / "ablation.csv").write_text("\n".join(rows) + "\n")
    _write_manifest(out, "ablate-merge", {
        "data": args.data, "strategies": args.strategies, "scale": args.scale,
        "epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr,
        "seed": args.seed, "csv": out / "ablation.csv",
    }, time.perf_counter() - t0)
    return EXIT_OK


def cmd_component(args) -> int:
    t0 = time.perf_counter()
    _check_range(args.power, args.speed)
    cond = Condition(power=args.power, speed=args.speed)
    weights = load(args.model)
    mask = read_pgm(args.mask)
    spec = ComponentSpec(mask=mask, layer_height_px=args.layer_height,
                         segment_length_px=args.segment_length)
    comp, stats = simulate_component(weights, spec, cond, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "component.pgm", comp)
    summary = manifest_text({
        "layers": stats["layers"], "frames": stats["frames"],
        "wall_time_s": f"{stats['wall_time_s']:.3f}",
        "frames_per_second": f"{stats['frames_per_second']:.1f}",
    })
    (out / "summary.txt").write_text(summary)
    print(summary, end="")
    _write_manifest(out, "component", {
        "model": args.model, "mask": args.mask,
        "power": args.power, "speed": args.speed,
        "layer_height": args.layer_height, "segment_length": args.segment_length,
        "seed": args.seed, "frames": stats["frames"],
        "frames_per_second": f"{stats['frames_per_second']:.1f}",
        "component": out / "component.pgm",
    }, time.perf_counter() - t0)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sinternet",
        description="Condition-aware surrogate simulation of sintering porosity.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS threads (default: machine parallelism)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a train/test dataset")
    p.add_argument("--conditions", type=int, default=100)
    p.add_argument("--tracks", type=int, default=30)
    p.add_argument("--track-length", type=int, default=700)
    p.add_argument("--split", default="75:25")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--strategy", default="gating", choices=MERGE_STRATEGIES)
    p.add_argument("--val-conditions", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="mean global accuracy over a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="sinter one track PGM under a condition")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--power", type=float, required=True)
    p.add_argument("--speed", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="depth response over a condition grid")
    p.add_argument("--model", required=True)
    p.add_argument("--powers", required=True, help="comma-separated watts")
    p.add_argument("--speeds", required=True, help="comma-separated m/s")
    p.add_argument("--track-length", type=int, default=700)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate-merge", help="compare merge strategies")
    p.add_argument("--data", required=True)
    p.add_argument("--strategies", default=",".join(MERGE_STRATEGIES))
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--batch-size", type=int, default=2)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--scale", type=float, default=0.125)
    p.add_argument("--val-conditions", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate_merge)

    p = sub.add_parser("component", help="layer-by-layer component simulation")
    p.add_argument("--model", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--power", type=float, required=True)
    p.add_argument("--speed", type=float, required=True)
    p.add_argument("--layer-height", type=int, default=70)
    p.add_argument("--segment-length", type=int, default=700)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_component)

    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    _limit_threads(args.threads)
    try:
        return args.func(args)
    except ConditionRangeError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RANGE
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except (WeightsFormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_FILE


if __name__ == "__main__":
    sys.exit(main())
