"""Command-line interface.

One binary with subcommands covering the whole toolkit::

    dopplertrack simulate        synthesize labeled datasets
    dopplertrack track-heuristic velocity-based tracking
    dopplertrack track-embed     embedding-based tracking (needs a checkpoint)
    dopplertrack train           train the embedding head
    dopplertrack eval            metrics against ground truth
    dopplertrack ablate          window-size / input-feature ablation tables
    dopplertrack serve           annotation HTTP service + UI

Every run writes a ``run.json`` with the resolved configuration next to
its outputs; re-running any subcommand with ``--config run.json`` on the
same data reproduces the outputs bit-identically.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset_io
from .config import ConfigError, RunConfig, load_config
from .core import InstanceLabeling
from .learn import load_checkpoint, save_checkpoint, train_toy_head
from .metrics import EvalReport, evaluate
from .pipelines import build_training_windows, embed_track, heuristic_track
from .report import metric_rows, write_eval_report, write_loss_curve, write_table
from .sim import SceneConfig, acceptance_scene, generate_sequence, highway_scene, paper_scene_set, urban_scene

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _write_run_json(out_dir: Path, command: str, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"command": command, "argv": sys.argv[1:], "config": cfg}
    (out_dir / "run.json").write_text(json.dumps(payload, indent=2, sort_keys=True))


def _load_cfg(args: argparse.Namespace, overrides: dict | None = None) -> dict:
    return load_config(getattr(args, "config", None), overrides)


# ---------------------------------------------------------------------------
# simulate


def _scene_for(section: dict, name: str, seed: int, n_actors: int, noisy: bool) -> SceneConfig:
    preset = section["preset"]
    if preset == "highway" or (preset == "paper7" and name.startswith("highway")):
        cfg = highway_scene(seed, n_actors=n_actors, noisy=noisy)
    elif preset == "urban" or (preset == "paper7" and name.startswith("urban")):
        cfg = urban_scene(seed, n_actors=n_actors, noisy=noisy)
    elif preset == "acceptance":
        cfg = acceptance_scene(seed, n_actors=n_actors, noisy=noisy)
    else:
        raise ConfigError(f"unknown simulate preset {preset!r}")
    # apply sensor/noise overrides from the section
    return dataclasses.replace(
        cfg,
        rate_hz=section["rate_hz"],
        h_fov_deg=section["h_fov_deg"],
        v_fov_deg=section["v_fov_deg"],
        max_range_m=section["max_range_m"],
        v_noise_sigma=section["v_noise_sigma"] if noisy else 0.0,
        pos_noise_sigma=section["pos_noise_sigma"] if noisy else 0.0,
        outlier_rate=section["outlier_rate"] if noisy else 0.0,
        duration_s=section["duration_s"],
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    overrides: dict = {"simulate": {}}
    for key in ("preset", "count", "seed", "n_actors", "duration_s"):
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            overrides["simulate"][key] = val
    if args.no_noise:
        overrides["simulate"]["noisy"] = False
    cfg = _load_cfg(args, overrides)
    s = cfg["simulate"]
    out = Path(args.out)

    if s["preset"] == "paper7":
        jobs = [
            (name, scene.seed, len(scene.actors))
            for name, scene in paper_scene_set(s["seed"], noisy=s["noisy"])
        ]
    else:
        jobs = [(f"seq_{i:03d}", s["seed"] + i, s["n_actors"]) for i in range(s["count"])]

    for name, seed, n_actors in jobs:
        scene = _scene_for(s, name, seed, n_actors, s["noisy"])
        gt = generate_sequence(scene)
        meta = {
            "name": name,
            "seed": seed,
            "n_actors": n_actors,
            "noisy": s["noisy"],
            "rate_hz": scene.rate_hz,
            "h_fov_deg": scene.h_fov_deg,
            "v_fov_deg": scene.v_fov_deg,
            "max_range_m": scene.max_range_m,
            "v_noise_sigma": scene.v_noise_sigma,
        }
        dataset_io.write_sequence(out / name, gt.frames, gt.labels, meta=meta)
        print(f"wrote {out / name}: {len(gt.frames)} frames")
    _write_run_json(out, "simulate", cfg)
    return EXIT_OK


# ---------------------------------------------------------------------------
# tracking


def _sequence_dirs(dataset: str) -> list[Path]:
    dirs = dataset_io.list_sequences(dataset)
    if not dirs:
        raise FileNotFoundError(f"no sequences found under {dataset}")
    return dirs


def _track_one(seq_dir: str, out_dir: str, cfg: dict, mode: str, checkpoint: str | None, tau: int | None) -> dict:
    run = RunConfig(cfg)
    seq = dataset_io.load_sequence(seq_dir)
    t0 = time.time()
    if mode == "heuristic":
        pred = heuristic_track(
            seq.frames,
            pre_params=run.preprocess_params(),
            trk_params=run.tracker_params(tau),
        )
    else:
        head, _, _ = load_checkpoint(checkpoint)
        pred = embed_track(
            seq.frames,
            head,
            pre_params=run.preprocess_params(),
            trk_params=run.tracker_params(tau),
            infer_params=run.infer_params(),
        )
    elapsed = time.time() - t0
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, lab in enumerate(pred.per_frame):
        dataset_io.write_labels(out / f"{i:06d}.label", lab)
    return {
        "sequence": Path(seq_dir).name,
        "frames": len(seq.frames),
        "points": int(sum(len(f) for f in seq.frames)),
        "seconds": round(elapsed, 3),
    }


def _cmd_track(args: argparse.Namespace, mode: str) -> int:
    overrides: dict = {"tracker": {}}
    for key in ("eps", "min_pts", "assoc_dist", "tau"):
        val = getattr(args, key, None)
        if val is not None:
            overrides["tracker"][key] = val
    cfg = _load_cfg(args, overrides)
    out = Path(args.out)
    seq_dirs = _sequence_dirs(args.dataset)
    tasks = [(str(d), str(out / d.name), cfg, mode, args.checkpoint if mode == "embed" else None, None) for d in seq_dirs]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            timings = list(pool.map(_track_one_star, tasks))
    else:
        timings = [_track_one_star(t) for t in tasks]
    _write_run_json(out, f"track-{mode}", cfg)
    (out / "timing.json").write_text(json.dumps(timings, indent=2))
    for row in timings:
        print(f"{row['sequence']}: {row['frames']} frames, {row['points']} points, {row['seconds']} s")
    return EXIT_OK


def _track_one_star(t):
    return _track_one(*t)


def cmd_track_heuristic(args: argparse.Namespace) -> int:
    return _cmd_track(args, "heuristic")


def cmd_track_embed(args: argparse.Namespace) -> int:
    if not args.checkpoint:
        raise FileNotFoundError("track-embed requires --checkpoint")
    if not Path(args.checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    return _cmd_track(args, "embed")


# ---------------------------------------------------------------------------
# train


def _collect_windows(dataset: str, cfg: dict, include_velocity: bool | None = None):
    run = RunConfig(cfg)
    t = cfg["train"]
    spec = run.feature_spec(include_velocity)
    windows = []
    for seq_dir in _sequence_dirs(dataset):
        seq = dataset_io.load_sequence(seq_dir)
        if seq.labels is None:
            raise ValueError(f"{seq_dir} has no labels; training needs ground truth")
        windows.extend(
            build_training_windows(
                seq.frames,
                seq.labels,
                spec,
                pre_params=run.preprocess_params(),
                trk_params=run.tracker_params(t["window_size"]),
                stride=t["stride"],
            )
        )
    windows = [w for w in windows if len(w.clusters) >= 2]
    if t["max_windows"] and len(windows) > t["max_windows"]:
        windows = windows[: t["max_windows"]]
    return windows, spec


def cmd_train(args: argparse.Namespace) -> int:
    overrides: dict = {"train": {}}
    for arg_name, key in (
        ("epochs", "epochs"),
        ("lr", "learning_rate"),
        ("seed", "seed"),
        ("window_size", "window_size"),
        ("stride", "stride"),
    ):
        val = getattr(args, arg_name, None)
        if val is not None:
            overrides["train"][key] = val
    if args.no_velocity:
        overrides["train"]["include_velocity"] = False
    cfg = _load_cfg(args, overrides)
    run = RunConfig(cfg)
    t = cfg["train"]

    windows, spec = _collect_windows(args.dataset, cfg)
    if not windows:
        raise ValueError("no usable training windows in the dataset")
    result = train_toy_head(
        windows,
        epochs=t["epochs"],
        learning_rate=t["learning_rate"],
        seed=t["seed"],
        weights=run.loss_weights(),
        supcon=run.supcon_params(),
        batch_size=t["batch_size"],
        feature_spec=spec,
        hidden=tuple(t["hidden"]),
        embed_dim=t["embed_dim"],
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        out / "head.json",
        result.head,
        run.supcon_params(),
        extra={
            "epochs": t["epochs"],
            "learning_rate": t["learning_rate"],
            "seed": t["seed"],
            "window_size": t["window_size"],
            "windows": len(windows),
            "final_loss": result.loss_curve[-1],
        },
    )
    write_loss_curve(out, result.loss_curve, result.part_curves)
    _write_run_json(out, "train", cfg)
    print(
        f"trained on {len(windows)} windows for {t['epochs']} epochs; "
        f"loss {result.loss_curve[0]:.2f} -> {result.loss_curve[-1]:.2f}"
    )
    print(f"checkpoint: {out / 'head.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def aggregate_reports(reports: list[EvalReport]) -> EvalReport:
    """Pool per-sequence reports into one (tubes and counts concatenate)."""
    tp = sum(r.tp for r in reports)
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    ids = sum(r.ids for r in reports)
    gt = sum(r.gt_instances for r in reports)
    soft = sum(r.soft_tp for r in reports)
    tube_counts = [r.notes.get("gt_tubes", 0) for r in reports]
    if all(tube_counts):
        as_score = float(
            np.average([r.association_score for r in reports], weights=tube_counts)
        )
    else:
        as_score = float(np.mean([r.association_score for r in reports]))
    return EvalReport(
        association_score=as_score,
        motsa=(tp - fp - ids) / gt if gt else 0.0,
        motsp=soft / tp if tp else 1.0,
        smotsa=(soft - fp - ids) / gt if gt else 0.0,
        tp=tp,
        fp=fp,
        fn=fn,
        ids=ids,
        gt_instances=gt,
        soft_tp=soft,
        per_frame=[],
        notes={"aggregated": len(reports)},
    )


def _load_predictions(pred_dir: Path, n_frames: int) -> InstanceLabeling:
    labels = []
    for i in range(n_frames):
        path = pred_dir / f"{i:06d}.label"
        if not path.exists():
            raise FileNotFoundError(f"missing prediction file {path}")
        labels.append(dataset_io.read_labels(path))
    return InstanceLabeling(labels)


def evaluate_dataset(dataset: str, pred_root: str) -> tuple[list[tuple[str, EvalReport]], EvalReport]:
    per_seq = []
    for seq_dir in _sequence_dirs(dataset):
        seq = dataset_io.load_sequence(seq_dir)
        if seq.labels is None:
            raise ValueError(f"{seq_dir} has no ground-truth labels")
        pred_dir = Path(pred_root)
        if (pred_dir / seq_dir.name).is_dir():
            pred_dir = pred_dir / seq_dir.name
        pred = _load_predictions(pred_dir, len(seq.frames))
        for i, lab in enumerate(pred.per_frame):
            if len(lab) != len(seq.frames[i]):
                raise ValueError(
                    f"{seq_dir.name} frame {i}: prediction has {len(lab)} labels, "
                    f"scan has {len(seq.frames[i])} points"
                )
        report = evaluate(seq.labels, pred)
        report.notes["gt_tubes"] = len(seq.labels.instance_ids())
        per_seq.append((seq_dir.name, report))
    overall = aggregate_reports([r for _, r in per_seq])
    return per_seq, overall


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    per_seq, overall = evaluate_dataset(args.dataset, args.pred)
    rows = metric_rows(per_seq + [("overall", overall)], scale_100=cfg["eval"]["scale_100"])
    if args.out:
        out = Path(args.out)
        write_eval_report(out, per_seq + [("overall", overall)], scale_100=cfg["eval"]["scale_100"])
        _write_run_json(out, "eval", cfg)
    from .report import format_table

    text = format_table(rows)
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    run = RunConfig(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t = cfg["train"]

    if args.axis == "window":
        if args.checkpoint:
            ckpt_path = Path(args.checkpoint)
        elif args.train:
            code = cmd_train(
                argparse.Namespace(
                    config=getattr(args, "config", None),
                    dataset=args.train_data,
                    out=out / "head_window",
                    epochs=None,
                    lr=None,
                    seed=None,
                    window_size=None,
                    stride=None,
                    no_velocity=False,
                )
            )
            if code != EXIT_OK:
                return code
            ckpt_path = out / "head_window" / "head.json"
        else:
            raise ConfigError("ablate --axis window needs --checkpoint or --train")
        rows = []
        for tau in (4, 6, 8, 10):
            label = f"{tau} scans"
            pred_out = out / f"pred_tau{tau}"
            for seq_dir in _sequence_dirs(args.dataset):
                _track_one(str(seq_dir), str(pred_out / seq_dir.name), cfg, "embed", str(ckpt_path), tau)
            _, overall = evaluate_dataset(args.dataset, str(pred_out))
            rows.append((label, overall))
    elif args.axis == "velocity":
        rows = []
        for label, include_v in (("xyz", False), ("xyz+v", True)):
            if args.train:
                windows, spec = _collect_windows(args.train_data, cfg, include_velocity=include_v)
                result = train_toy_head(
                    windows,
                    epochs=t["epochs"],
                    learning_rate=t["learning_rate"],
                    seed=t["seed"],
                    weights=run.loss_weights(),
                    supcon=run.supcon_params(),
                    batch_size=t["batch_size"],
                    feature_spec=spec,
                    hidden=tuple(t["hidden"]),
                    embed_dim=t["embed_dim"],
                )
                ckpt_path = out / f"head_{label.replace('+', '_')}.json"
                save_checkpoint(ckpt_path, result.head, run.supcon_params())
            else:
                raw = args.checkpoint if include_v else args.checkpoint_xyz
                if not raw or not Path(raw).exists():
                    raise ConfigError(
                        "ablate --axis velocity needs --train or both --checkpoint/--checkpoint-xyz"
                    )
                ckpt_path = Path(raw)
            pred_out = out / f"pred_{label.replace('+', '_')}"
            for seq_dir in _sequence_dirs(args.dataset):
                _track_one(str(seq_dir), str(pred_out / seq_dir.name), cfg, "embed", str(ckpt_path), None)
            _, overall = evaluate_dataset(args.dataset, str(pred_out))
            rows.append((label, overall))
    else:
        raise ConfigError(f"unknown ablation axis {args.axis!r}")

    table_rows = metric_rows(rows, scale_100=True)
    stem = f"ablation_{args.axis}"
    write_table(out, stem, table_rows, f"ablation: {args.axis}")
    _write_run_json(out, "ablate", cfg)
    from .report import format_table

    if args.json:
        print(json.dumps(table_rows, indent=2))
    else:
        print(format_table(table_rows), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# serve


def cmd_serve(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    import uvicorn

    from .service import create_app

    s = cfg["serve"]
    app = create_app(args.data, cfg)
    host = args.host or s["host"]
    port = args.port or s["port"]
    print(f"annotation service on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dopplertrack",
        description="Moving-object tracking toolkit for Doppler (FMCW) LiDAR point clouds",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file (or a previous run.json)")
        p.add_argument("--json", action="store_true", help="print tables as JSON")

    p = sub.add_parser("simulate", help="generate synthetic labeled sequences")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=["highway", "urban", "paper7", "acceptance"])
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-actors", dest="n_actors", type=int)
    p.add_argument("--duration-s", dest="duration_s", type=float)
    p.add_argument("--no-noise", action="store_true")
    p.set_defaults(func=cmd_simulate)

    for mode in ("heuristic", "embed"):
        p = sub.add_parser(f"track-{mode}", help=f"run the {mode} tracker")
        common(p)
        p.add_argument("--dataset", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--eps", type=float)
        p.add_argument("--min-pts", dest="min_pts", type=int)
        p.add_argument("--assoc-dist", dest="assoc_dist", type=float)
        p.add_argument("--tau", type=int)
        if mode == "embed":
            p.add_argument("--checkpoint", required=True)
            p.set_defaults(func=cmd_track_embed)
        else:
            p.set_defaults(func=cmd_track_heuristic)

    p = sub.add_parser("train", help="train the embedding head on labeled data")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--window-size", dest="window_size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--no-velocity", action="store_true", help="drop the Doppler input channel")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation axis and emit the table")
    common(p)
    p.add_argument("--axis", required=True, choices=["window", "velocity"])
    p.add_argument("--dataset", required=True, help="evaluation dataset (with GT labels)")
    p.add_argument("--train-data", dest="train_data", help="training dataset for --train")
    p.add_argument("--train", action="store_true", help="train checkpoints as needed")
    p.add_argument("--checkpoint", help="trained head (with velocity channel)")
    p.add_argument("--checkpoint-xyz", dest="checkpoint_xyz", help="trained head without velocity")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve", help="run the annotation service")
    common(p)
    p.add_argument("--data", required=True, help="dataset root to annotate")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
