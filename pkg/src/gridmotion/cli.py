"""Command-line driver: simulate, encode, train, eval, label, ssl, sweep, serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import frame_io
from .config import (
    DEFAULTS,
    encoder_config_from,
    filter_params_from,
    load_config,
    train_config_from,
    write_manifest,
)
from .grid import DynamicGridMap, GridSpec, StatsMap, stats_map


def _stats_to_array(sm: StatsMap) -> np.ndarray:
    return np.stack([
        sm.mean_vx, sm.mean_vy, sm.var_vx, sm.var_vy, sm.cov_xy,
        sm.mahalanobis, sm.overall_var, sm.speed,
        sm.valid.astype(np.float64), sm.occupancy,
    ]).astype(np.float32)


def _stats_from_array(arr: np.ndarray) -> StatsMap:
    a = arr.astype(np.float64)
    return StatsMap(valid=a[8] > 0.5, mean_vx=a[0], mean_vy=a[1], var_vx=a[2],
                    var_vy=a[3], cov_xy=a[4], mahalanobis=a[5],
                    overall_var=a[6], speed=a[7], occupancy=a[9])


# -- simulate -----------------------------------------------------------------------


def cmd_simulate(args, cfg, argv) -> int:
    from .filter import DogFilter
    from .sim import ground_truth, load_scenario, render_measurement, step_world

    out = Path(args.out)
    frames_dir = out / "frames"
    truth_dir = out / "truth"
    frames_dir.mkdir(parents=True, exist_ok=True)
    truth_dir.mkdir(parents=True, exist_ok=True)

    spec = GridSpec(cfg["grid"]["side_cells"], cfg["grid"]["cell_size"])
    scenario = load_scenario(args.scenario, extent=spec.extent, seed=cfg["seed"])
    params = filter_params_from(cfg)
    filt = DogFilter(params)
    gmap = DynamicGridMap(spec)
    hit = tuple(cfg["sensor"]["hit"])
    free = tuple(cfg["sensor"]["free"])

    ids = []
    for k in range(args.frames):
        step_world(scenario, params.dt)
        meas = render_measurement(scenario, spec, cfg["sensor"]["beams"],
                                  hit_pair=hit, free_pair=free)
        filt.step(gmap, meas)
        fid = f"{scenario.name}-{k:05d}"
        frame_io.save_frame(gmap, frames_dir / f"{fid}.dgf")
        labels, heading = ground_truth(scenario, spec)
        np.save(truth_dir / f"{fid}.labels.npy", labels)
        np.save(truth_dir / f"{fid}.heading.npy", heading)
        ids.append(fid)
    (out / "frames.json").write_text(json.dumps(
        {"scenario": scenario.name, "ids": ids}, sort_keys=True, indent=1))
    write_manifest(out, "simulate", cfg, argv)
    print(f"simulate: wrote {len(ids)} frames to {out}")
    return 0


# -- encode -------------------------------------------------------------------------


def _load_sim_index(sim_dir: Path) -> list[str]:
    index = json.loads((sim_dir / "frames.json").read_text())
    return index["ids"]


def cmd_encode(args, cfg, argv) -> int:
    from .encode import augment_rotations, encode, save_encoded
    from .labeling import split_dataset

    out = Path(args.out)
    frames_out = out / "frames"
    frames_out.mkdir(parents=True, exist_ok=True)
    enc_cfg = encoder_config_from(cfg)

    sim_dirs = [Path(p) for p in args.sim]
    all_ids = []
    sources = {}
    for sim in sim_dirs:
        for fid in _load_sim_index(sim):
            all_ids.append(fid)
            sources[fid] = sim
    ds = split_dataset(all_ids, tuple(cfg["labeling"]["fractions"]),
                       min_gap=args.min_gap
                       if args.min_gap is not None else cfg["labeling"]["min_gap"],
                       seed=cfg["seed"])

    index = {"frames": [], "combo": enc_cfg.combo, "range_t": enc_cfg.range_t}
    for split in ("train", "validation", "test"):
        for fid in ds.splits[split]:
            sim = sources[fid]
            gmap = frame_io.load_frame(sim / "frames" / f"{fid}.dgf")
            labels = np.load(sim / "truth" / f"{fid}.labels.npy")
            heading = np.load(sim / "truth" / f"{fid}.heading.npy")
            sm = stats_map(gmap)
            frame = encode(gmap, sm, enc_cfg, labels, heading)
            variants = [(fid, frame, 0)]
            if args.augment and split != "test":
                variants = [(f"{fid}-r{a * 10:03d}", fr, a * 10)
                            for a, fr in enumerate(augment_rotations(frame))]
            for vid, vframe, rotation in variants:
                save_encoded(vframe, frames_out, vid)
                index["frames"].append({"id": vid, "source": fid,
                                        "split": split, "rotation": rotation})
            np.save(frames_out / f"{fid}.stats.npy", _stats_to_array(sm))
    (out / "index.json").write_text(json.dumps(index, sort_keys=True, indent=1))
    write_manifest(out, "encode", cfg, argv)
    print(f"encode: wrote {len(index['frames'])} encoded frames to {out}")
    return 0


# -- train --------------------------------------------------------------------------


def _load_dataset(data_dir: Path, split: str, dtype=np.float32, limit=None):
    from .encode import load_encoded, network_input
    from .net.train import TrainSample

    index = json.loads((data_dir / "index.json").read_text())
    samples = []
    entries = [e for e in index["frames"] if e["split"] == split]
    if limit:
        entries = entries[:limit]
    for entry in entries:
        frame = load_encoded(data_dir / "frames", entry["id"])
        samples.append((entry, TrainSample(
            x=network_input(frame, dtype=dtype),
            labels=frame.labels,
            occupied=frame.occupied_mask,
            heading=frame.heading)))
    return samples


def cmd_train(args, cfg, argv) -> int:
    from .net import build_network, init_from_coarser, load_network, save_network, train

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = Path(args.data)
    samples = [s for _, s in _load_dataset(data_dir, "train")]
    if not samples:
        print("train: no training frames found", file=sys.stderr)
        return 2
    tc = train_config_from(cfg)
    lr_scale = 1.0
    if args.incremental:
        coarse = load_network(args.incremental)
        net = init_from_coarser(cfg["train"]["arch"], coarse,
                                lr_scale=args.lr_scale)
        lr_scale = args.lr_scale
    else:
        net = build_network(cfg["train"]["arch"], heads=cfg["train"]["heads"],
                            rng_seed=cfg["seed"])
    train(net, samples, tc, log_path=out / "curve.csv", lr_scale=lr_scale)
    save_network(net, out / "net.ckpt")
    write_manifest(out, "train", cfg, argv)
    print(f"train: {cfg['train']['arch']} for {tc.iterations} iterations "
          f"on {len(samples)} frames -> {out / 'net.ckpt'}")
    return 0


# -- eval ---------------------------------------------------------------------------


def _pool_scores(net, data_dir: Path, split: str):
    scores, mahals, truths, occs = [], [], [], []
    for entry, sample in _load_dataset(data_dir, split, dtype=np.dtype(net.dtype)):
        out = net.predict(sample.x)
        scores.append(out["prob_dynamic"])
        truths.append(sample.labels == 1)
        occs.append(sample.occupied)
        stats_path = data_dir / "frames" / f"{entry['source']}.stats.npy"
        if stats_path.exists() and entry["rotation"] == 0:
            mahals.append((np.load(stats_path)[5].astype(np.float64),
                           sample.labels == 1, sample.occupied))
    return scores, truths, occs, mahals


def cmd_eval(args, cfg, argv) -> int:
    from .evaluate import (metric_spread, pixel_metrics, plot_roc_svg,
                           plot_series_svg, roc, rotation_sweep,
                           write_roc_csv, write_sweep_csv)
    from .net import load_network

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = Path(args.data)
    net = load_network(args.net)
    split = args.split

    scores, truths, occs, mahals = _pool_scores(net, data_dir, split)
    if not scores:
        print(f"eval: no frames in split {split!r}", file=sys.stderr)
        return 2
    s = np.concatenate([x.ravel() for x in scores])
    t = np.concatenate([x.ravel() for x in truths])
    o = np.concatenate([x.ravel() for x in occs])
    curve = roc(s, t, o)
    write_roc_csv(curve, out / "roc.csv")
    plot_roc_svg(curve, out / "roc.svg")
    report = {"auc": curve.auc, "n_frames": len(scores), "split": split}

    if mahals:
        bs = np.concatenate([m[0].ravel() for m in mahals])
        bt = np.concatenate([m[1].ravel() for m in mahals])
        bo = np.concatenate([m[2].ravel() for m in mahals])
        bcurve = roc(bs, bt, bo)
        write_roc_csv(bcurve, out / "roc_baseline.csv")
        report["auc_baseline"] = bcurve.auc

    if not curve.degenerate:
        thr = curve.youden_threshold()
        m = pixel_metrics(s >= thr, t, o)
        report.update({"youden_threshold": thr, "accuracy": m.accuracy,
                       "precision": m.precision, "recall": m.recall})

    if args.rotation_sweep:
        from .encode import load_encoded

        index = json.loads((data_dir / "index.json").read_text())
        entry = next(e for e in index["frames"] if e["split"] == split)
        frame = load_encoded(data_dir / "frames", entry["id"])
        rows = rotation_sweep(net, frame)
        write_sweep_csv(rows, out / "sweep.csv")
        plot_series_svg(
            {"acc": [(r[0], r[1]) for r in rows],
             "prec": [(r[0], r[2]) for r in rows],
             "rec": [(r[0], r[3]) for r in rows]},
            out / "sweep.svg", "rotation sweep", "angle (deg)")
        report["rotation_spread"] = metric_spread(rows)

    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=1))
    write_manifest(out, "eval", cfg, argv)
    print(f"eval: AUC {report['auc']:.4f}"
          + (f" baseline {report['auc_baseline']:.4f}" if "auc_baseline" in report
             else ""))
    return 0


# -- label --------------------------------------------------------------------------


def cmd_label(args, cfg, argv) -> int:
    from .clusters import DbscanConfig
    from .labeling import (BaselineClassifier, CnnClassifier, FrameData,
                           LabelStore, auto_label, split_dataset)

    sim = Path(args.sim)
    ids = _load_sim_index(sim)
    ds = split_dataset(ids, tuple(cfg["labeling"]["fractions"]),
                       min_gap=cfg["labeling"]["min_gap"], seed=cfg["seed"])
    store = LabelStore(args.out)
    db = DbscanConfig(eps=cfg["cluster"]["eps"], min_pts=cfg["cluster"]["min_pts"])
    if args.mode == "baseline":
        classifier = BaselineClassifier(
            args.threshold if args.threshold is not None
            else cfg["cluster"]["baseline_threshold"],
            cfg["cluster"]["occupied_threshold"])
        provenance = "baseline-auto"
    else:
        from .net import load_network

        net = load_network(args.net)
        classifier = CnnClassifier(net, cfg["labeling"]["prob_threshold"])
        provenance = "cnn-auto"

    n = 0
    for split in ("train", "validation", "test"):
        for fid in ds.splits[split]:
            gmap = frame_io.load_frame(sim / "frames" / f"{fid}.dgf")
            sm = stats_map(gmap)
            frame = FrameData(stats=sm,
                              occupied=sm.occupancy > cfg["cluster"]["occupied_threshold"])
            if args.mode == "cnn":
                from .encode import encode
                frame.encoded = encode(gmap, sm, encoder_config_from(cfg))
            labels, clusters = auto_label(frame, classifier, db)
            store.add_frame(fid, labels, clusters, split, provenance,
                            timestamp=gmap.timestamp)
            n += 1
    write_manifest(args.out, "label", cfg, argv)
    print(f"label: {n} frames auto-labeled into {args.out} ({provenance})")
    return 0


# -- ssl ----------------------------------------------------------------------------


def cmd_ssl(args, cfg, argv) -> int:
    from .clusters import DbscanConfig
    from .encode import encode
    from .labeling import (Dataset, FrameData, SuppressionConfig, ssl_round)
    from .net import load_network, save_network, train
    from .net.train import scaled_iterations

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = Path(args.data)
    net = load_network(args.net)
    unlabeled_sim = Path(args.unlabeled)
    unlabeled_ids = _load_sim_index(unlabeled_sim)

    base = _load_dataset(data_dir, "train", dtype=np.dtype(net.dtype))
    train_ds = Dataset()
    train_ds.splits["train"] = [e["id"] for e, _ in base]

    enc_cfg = encoder_config_from(cfg)
    frames_cache = {}

    def loader(fid):
        gmap = frame_io.load_frame(unlabeled_sim / "frames" / f"{fid}.dgf")
        sm = stats_map(gmap)
        frame = FrameData(stats=sm,
                          occupied=sm.occupancy > cfg["cluster"]["occupied_threshold"],
                          encoded=encode(gmap, sm, enc_cfg))
        frames_cache[fid] = frame
        return frame

    suppression = SuppressionConfig(
        mode=args.suppress_mode or cfg["labeling"]["suppress_mode"],
        threshold=args.suppress_threshold
        if args.suppress_threshold is not None
        else cfg["labeling"]["suppress_threshold"],
        min_cluster_cells=cfg["labeling"]["min_cluster_cells"])
    merged, results = ssl_round(
        train_ds, unlabeled_ids, net, suppression,
        take_every=args.take_every or cfg["labeling"]["take_every"],
        frame_loader=loader, db=DbscanConfig(eps=cfg["cluster"]["eps"],
                                             min_pts=cfg["cluster"]["min_pts"]),
        prob_threshold=cfg["labeling"]["prob_threshold"])

    from .encode import network_input
    from .net.train import TrainSample

    samples = [s for _, s in base]
    for fid, (labels, _) in sorted(results.items()):
        frame = frames_cache[fid]
        samples.append(TrainSample(
            x=network_input(frame.encoded, dtype=np.dtype(net.dtype)),
            labels=labels, occupied=frame.occupied,
            heading=frame.encoded.heading))
    tc = train_config_from(cfg)
    iters = scaled_iterations(tc.iterations, len(base), len(samples))
    from dataclasses import replace

    tc = replace(tc, iterations=iters)
    train(net, samples, tc, log_path=out / "curve.csv")
    save_network(net, out / "net.ckpt")
    summary = {"auto_frames": len(results),
               "train_frames": len(samples), "iterations": iters,
               "suppress_mode": suppression.mode}
    (out / "ssl.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    write_manifest(out, "ssl", cfg, argv)
    print(f"ssl: merged {len(results)} auto-labeled frames, "
          f"retrained {iters} iterations")
    return 0


# -- sweep --------------------------------------------------------------------------

SWEEP_GRIDS = {
    "combo": [1, 2, 3, 4, 5],
    "range": [5, 10, 15, 20, 25],
    "structure": ["TOY-32s", "TOY-16s", "TOY-8s"],
    "crop": [300, 400, 500, 600],
    "lr": [2.14e-6, 7.14e-6, 2.14e-5, 3.6e-5, 7.14e-5, 2.14e-4],
    "weight": [1, 20, 40, 60, 80, 100, 120, 140, 160, 180, 200],
}


def _sweep_overrides(param: str, value):
    if param == "combo":
        return {"encoder": {"combo": value}}
    if param == "range":
        return {"encoder": {"range_t": value}}
    if param == "structure":
        return {"train": {"arch": value}}
    if param == "crop":
        return {"encoder": {"crop": value}}
    if param == "lr":
        return {"train": {"base_lr": value}}
    if param == "weight":
        return {"train": {"c_dynamic": float(value)}}
    raise ValueError(param)


def cmd_sweep(args, cfg, argv) -> int:
    from dataclasses import replace

    from .config import _deep_merge
    from .net import build_network, save_network, train

    grid = SWEEP_GRIDS[args.param]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plan = [{"param": args.param, "value": v,
             "point": f"{args.param}-{str(v).replace('.', 'p')}"} for v in grid]
    (out / "plan.json").write_text(json.dumps(plan, sort_keys=True, indent=1))
    print(f"sweep {args.param}: {[p['value'] for p in plan]}")
    if args.plan_only:
        write_manifest(out, "sweep", cfg, argv)
        return 0

    from .evaluate import roc, write_roc_csv

    results = []
    for point in plan:
        pcfg = _deep_merge(cfg, _sweep_overrides(args.param, point["value"]))
        pdir = out / point["point"]
        pdir.mkdir(exist_ok=True)
        if args.param in ("combo", "range", "crop"):
            enc_args = argparse.Namespace(sim=args.sim, out=pdir / "data",
                                          augment=False, min_gap=args.min_gap)
            cmd_encode(enc_args, pcfg, argv)
            data_dir = pdir / "data"
        else:
            data_dir = Path(args.data)
        targs = argparse.Namespace(data=data_dir, out=pdir,
                                   incremental=None, lr_scale=1.0)
        cmd_train(targs, pcfg, argv)
        net_path = pdir / "net.ckpt"
        from .net import load_network

        net = load_network(net_path)
        scores, truths, occs, _ = _pool_scores(net, Path(data_dir), "validation")
        if scores:
            curve = roc(np.concatenate([x.ravel() for x in scores]),
                        np.concatenate([x.ravel() for x in truths]),
                        np.concatenate([x.ravel() for x in occs]))
            write_roc_csv(curve, pdir / "roc.csv")
            results.append({"point": point["point"], "value": point["value"],
                            "auc": curve.auc})
    (out / "results.json").write_text(json.dumps(results, sort_keys=True, indent=1))
    write_manifest(out, "sweep", cfg, argv)
    return 0


# -- serve --------------------------------------------------------------------------


def cmd_serve(args, cfg, argv) -> int:
    from .service import serve

    serve(args.store, args.frames, ui_dir=args.ui, host=args.host, port=args.port)
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridmotion",
        description="dynamic occupancy grid workbench: simulate, encode, "
                    "train, evaluate, label, self-train, sweep, serve")
    parser.add_argument("--config", help="YAML config or a previous manifest.json")
    parser.add_argument("--seed", type=int, help="master RNG seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario through the filter")
    p.add_argument("--scenario", required=True)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("encode", help="encode simulated frames into a dataset")
    p.add_argument("--sim", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--augment", action="store_true",
                   help="add the 36 rotated variants (train/validation only)")
    p.add_argument("--min-gap", type=int, default=None)
    p.add_argument("--combo", type=int)
    p.add_argument("--range-t", type=int)
    p.add_argument("--crop", type=int)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train a network on an encoded dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--arch")
    p.add_argument("--iters", type=int)
    p.add_argument("--heads", action="store_true", default=None)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-policy", choices=["fixed", "step"])
    p.add_argument("--c-dynamic", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--incremental", help="checkpoint of the coarser net")
    p.add_argument("--lr-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="ROC and pixel metrics on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--net", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--rotation-sweep", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("label", help="auto-label simulated frames into a store")
    p.add_argument("--sim", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["baseline", "cnn"], default="baseline")
    p.add_argument("--threshold", type=float)
    p.add_argument("--net")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("ssl", help="one self-training round plus retraining")
    p.add_argument("--data", required=True)
    p.add_argument("--net", required=True)
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--take-every", type=int)
    p.add_argument("--suppress-mode",
                   choices=["none", "normalized-speed", "combined-p"])
    p.add_argument("--suppress-threshold", type=float)
    p.set_defaults(func=cmd_ssl)

    p = sub.add_parser("sweep", help="run one optimization axis")
    p.add_argument("--param", required=True, choices=sorted(SWEEP_GRIDS))
    p.add_argument("--out", required=True)
    p.add_argument("--sim", nargs="+")
    p.add_argument("--data")
    p.add_argument("--min-gap", type=int, default=None)
    p.add_argument("--iters", type=int)
    p.add_argument("--plan-only", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="serve frames/labels to the annotation UI")
    p.add_argument("--store", required=True)
    p.add_argument("--frames", required=True)
    p.add_argument("--ui")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def _flag_overrides(args) -> dict:
    over: dict = {}
    if args.seed is not None:
        over["seed"] = args.seed
    enc = {}
    for name, key in (("combo", "combo"), ("range_t", "range_t"), ("crop", "crop")):
        if getattr(args, name, None) is not None:
            enc[key] = getattr(args, name)
    if enc:
        over["encoder"] = enc
    tr = {}
    for name, key in (("arch", "arch"), ("iters", "iterations"),
                      ("lr", "base_lr"), ("lr_policy", "lr_policy"),
                      ("c_dynamic", "c_dynamic"), ("weight_decay", "weight_decay"),
                      ("heads", "heads")):
        if getattr(args, name, None) is not None:
            tr[key] = getattr(args, name)
    if tr:
        over["train"] = tr
    return over


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, _flag_overrides(args))
        if cfg["encoder"]["combo"] == 3 and cfg["encoder"].get("include_freespace"):
            parser.error("combo 3 excludes freespace information")
        return args.func(args, cfg, argv)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
