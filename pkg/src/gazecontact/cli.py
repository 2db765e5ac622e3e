"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _limit_threads() -> None:
    """Apply GC_THREADS to the BLAS thread pools (effective only before numpy loads)."""
    n = os.environ.get("GC_THREADS")
    if n and n.isdigit() and int(n) > 0:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, n)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gazecontact", description="Eye-contact detection toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed: bool):
        sp.add_argument("--config", help="key = value configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
        if seed:
            sp.add_argument("--seed", type=int, required=True, help="random seed (required)")

    sp = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    common(sp, True)
    sp.add_argument("--out", required=True, help="existing output directory")
    sp.add_argument("--n", type=int, help="number of frames (default synth.n)")
    sp.add_argument("--stream", type=int, default=0, metavar="FRAMES",
                    help="also write a two-identity detection stream of this many frames")

    sp = sub.add_parser("train", help="train a detector on a manifest")
    common(sp, True)
    sp.add_argument("method", choices=["picnn", "alexnet", "peec", "gazelock"])
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="model file to write")
    sp.add_argument("--log", help="training-log CSV (default: <out>.log.csv for networks)")

    sp = sub.add_parser("predict", help="score every frame of a manifest")
    common(sp, False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="score CSV to write")

    sp = sub.add_parser("eval", help="threshold sweep, report, PR curve and plot")
    common(sp, False)
    sp.add_argument("--scores", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--label", default="", help="title for the PR plot")

    sp = sub.add_parser("select", help="pick the child's face in a detection stream")
    common(sp, False)
    sp.add_argument("--detections", required=True, help="detections JSON lines")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--patches", help="directory of <frame>_<k>.ppm crops in box order")
    src.add_argument("--frames", help="directory of <frame>.ppm full frames to crop from")
    sp.add_argument("--out", required=True, help="child-box CSV to write")
    sp.add_argument("--truth", help="ground-truth child boxes (JSON lines) for precision/recall")

    sp = sub.add_parser("stats", help="dataset histograms and landmark availability")
    common(sp, False)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out-dir", required=True)

    sp = sub.add_parser("viz", help="dump conv1 filters and conv1-3 activations")
    common(sp, False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--frame", type=int, default=0, help="row of the manifest to visualise")
    sp.add_argument("--out-dir", required=True)

    sp = sub.add_parser("sweep", help="precision/recall against training-set size")
    common(sp, True)
    sp.add_argument("method", choices=["picnn", "alexnet", "peec", "gazelock"])
    sp.add_argument("--manifest", required=True, help="training pool")
    sp.add_argument("--test-manifest", help="held-out frames (default: test side of fold 0)")
    sp.add_argument("--counts", help="comma-separated session counts (default sweep.counts)")
    sp.add_argument("--out-dir", required=True)

    sp = sub.add_parser("folds", help="subject-disjoint stratified folds for a manifest")
    common(sp, True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="CSV of session_id,subject_id,fold")
    return p


# ---------------------------------------------------------------------------


def _config(args):
    from .config import load_config
    from .errors import ConfigError

    cfg = load_config(args.config)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v)
    if getattr(args, "seed", None) is not None:
        cfg.set("seed", args.seed)
    return cfg


def _need_dir(path):
    from .errors import IoError

    if not os.path.isdir(path):
        raise IoError(f"output directory does not exist: {path}")


def cmd_synth(args, cfg):
    from .numerics import Rng, atomic_write_text
    from .synthface import generate_dataset, generate_selection_stream, write_dataset

    _need_dir(args.out)
    n = args.n if args.n is not None else cfg["synth.n"]
    rng = Rng(cfg["seed"])
    frames = generate_dataset(n, cfg.synth_config(), rng.substream(1))
    path = write_dataset(frames, args.out)
    print(f"wrote {len(frames)} frames, manifest {path}")
    if args.stream:
        from .imaging import write_netpbm
        from .selection import DetectionBox, detections_jsonl

        stream = generate_selection_stream(args.stream, rng.substream(2))
        pdir = os.path.join(args.out, "stream_patches")
        os.makedirs(pdir, exist_ok=True)
        dets, truth = {}, {}
        for f, frame in enumerate(stream):
            dets[f] = [DetectionBox(*d.box, frame_index=f) for d in frame]
            truth[f] = [DetectionBox(*d.box, frame_index=f) for d in frame if d.is_child]
            for k, d in enumerate(frame):
                write_netpbm(os.path.join(pdir, f"{f:05d}_{k}.ppm"), d.patch.pixels)
        atomic_write_text(os.path.join(args.out, "stream_detections.jsonl"), detections_jsonl(dets))
        atomic_write_text(os.path.join(args.out, "stream_truth.jsonl"), detections_jsonl(truth))
        print(f"wrote detection stream of {args.stream} frames")
    return EXIT_OK


def cmd_train(args, cfg):
    from . import models
    from .numerics import Rng
    from .pipeline import load_table, train_method
    from .picnn.train import write_train_log

    size = cfg["picnn.input_size"] if args.method in ("picnn", "alexnet") else None
    table = load_table(args.manifest, size)
    model, log = train_method(args.method, table, cfg, Rng(cfg["seed"]))
    models.save(args.out, model)
    print(f"{args.method}: model {args.out} sha256 {models.model_digest(model)}")
    if getattr(model, "n_excluded", 0):
        print(f"{model.n_excluded} frames without head pose excluded from training")
    if log is not None:
        from .plotting import plot_training_log

        log_path = args.log or args.out + ".log.csv"
        write_train_log(log_path, log)
        plot_training_log(os.path.splitext(log_path)[0] + ".svg", log)
        print(f"training log {log_path}")
    return EXIT_OK


def cmd_predict(args, cfg):
    from . import models
    from .evaluation.scoreio import ScoredFrame, write_scores
    from .picnn.model import PicnnModel
    from .pipeline import load_table, score_table

    model = models.load(args.model)
    size = model.cfg.input_size if isinstance(model, PicnnModel) else None
    table = load_table(args.manifest, size)
    scores = score_table(model, table)
    frames = [ScoredFrame(r.session_id, r.frame_index, r.label, float(s)) for r, s in zip(table.rows, scores)]
    write_scores(args.out, frames)
    missing = sum(not f.has_prediction for f in frames)
    print(f"scored {len(frames)} frames ({missing} without prediction) -> {args.out}")
    return EXIT_OK


def cmd_eval(args, cfg):
    from .evaluation.metrics import sweep_thresholds
    from .evaluation.scoreio import frames_arrays, pr_curve_csv, read_scores, report_csv
    from .numerics import atomic_write_text
    from .plotting import plot_pr_curve

    _need_dir(args.out_dir)
    truth, scores = frames_arrays(read_scores(args.scores))
    rep = sweep_thresholds(truth, scores)
    atomic_write_text(os.path.join(args.out_dir, "report.csv"), report_csv(rep))
    atomic_write_text(os.path.join(args.out_dir, "pr_curve.csv"), pr_curve_csv(rep))
    plot_pr_curve(os.path.join(args.out_dir, "pr_curve.svg"), rep.recall, rep.precision, args.label, rep.auc_pr)
    print(report_csv(rep), end="")
    return EXIT_OK


def _stream_inputs(args):
    from .errors import IoError
    from .imaging import FacePatch, read_netpbm
    from .selection import crop_box, read_detections

    dets = read_detections(args.detections)
    stream = []
    for frame in sorted(dets):
        boxes = dets[frame]
        items = []
        if args.patches:
            for k, b in enumerate(boxes):
                path = os.path.join(args.patches, f"{frame:05d}_{k}.ppm")
                if not os.path.isfile(path):
                    raise IoError(f"missing patch {path}")
                img = read_netpbm(path)
                items.append((b, FacePatch(img if img.ndim == 3 else img[..., None])))
        else:
            path = os.path.join(args.frames, f"{frame:05d}.ppm")
            if not os.path.isfile(path):
                path = os.path.join(args.frames, f"{frame:05d}.pgm")
            if boxes and not os.path.isfile(path):
                raise IoError(f"missing frame image for frame {frame}")
            img = read_netpbm(path) if boxes else None
            items = [(b, crop_box(img, b)) for b in boxes]
        stream.append((frame, items))
    return stream


def cmd_select(args, cfg):
    from .numerics import atomic_write_text
    from .selection import HistogramEmbedding, SelectionState, evaluate_detections, read_detections, select_step

    stream = _stream_inputs(args)
    embed = HistogramEmbedding()
    state = SelectionState.create(cfg["select.classes"], embed.dim, cfg["select.learning_rate"],
                                  cfg["select.bootstrap_frames"])
    lines = ["frame,x,y,w,h,score"]
    picks = {}
    for frame, items in stream:
        pick, state = select_step(state, items, embed)
        if pick is not None:
            picks[frame] = [pick]
            lines.append(f"{frame},{pick.x!r},{pick.y!r},{pick.w!r},{pick.h!r},{pick.score!r}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"child face chosen in {len(picks)} of {len(stream)} frames -> {args.out}")
    if args.truth:
        truth = read_detections(args.truth)
        p, r = evaluate_detections(picks, truth, cfg["eval.iou_threshold"])
        print(f"precision {p:.4f} recall {r:.4f} at IoU {cfg['eval.iou_threshold']}")
    return EXIT_OK


def cmd_stats(args, cfg):
    import numpy as np

    from .evaluation.availability import availability_csv, availability_rates
    from .evaluation.stats import dataset_stats, stats_csv
    from .manifest import read_manifest
    from .numerics import atomic_write_text
    from .plotting import plot_histograms

    _need_dir(args.out_dir)
    rows = read_manifest(args.manifest)
    nan = float("nan")

    def col(fn):
        return np.array([fn(r) for r in rows], dtype=np.float64)

    stats = dataset_stats(
        col(lambda r: r.box[0] + r.box[2] / 2 if r.box else nan) if rows else (),
        col(lambda r: r.box[1] + r.box[3] / 2 if r.box else nan) if rows else (),
        col(lambda r: r.yaw if r.yaw is not None else nan) if rows else (),
        col(lambda r: r.pitch if r.pitch is not None else nan) if rows else (),
        col(lambda r: r.roll if r.roll is not None else nan) if rows else (),
    )
    atomic_write_text(os.path.join(args.out_dir, "stats.csv"), stats_csv(stats))
    plot_histograms(os.path.join(args.out_dir, "stats.svg"), stats)
    labels = [r.label for r in rows]
    if any(labels):
        table = availability_rates([r.session_id for r in rows], [r.diagnosis for r in rows], labels,
                                   [True] * len(rows), [r.landmark_available for r in rows])
        atomic_write_text(os.path.join(args.out_dir, "availability.csv"), availability_csv(table))
        print(availability_csv(table), end="")
    print(f"histograms for {len(rows)} frames -> {args.out_dir}")
    return EXIT_OK


def cmd_viz(args, cfg):
    from . import models
    from .errors import DegenerateInput
    from .picnn.model import PicnnModel
    from .picnn.viz import dump_filters_and_activations
    from .pipeline import load_table

    _need_dir(args.out_dir)
    model = models.load(args.model)
    if not isinstance(model, PicnnModel):
        raise DegenerateInput("viz needs a network model (picnn or alexnet)")
    table = load_table(args.manifest, model.cfg.input_size)
    if not 0 <= args.frame < len(table):
        raise DegenerateInput(f"frame {args.frame} outside manifest of {len(table)} rows")
    for p in dump_filters_and_activations(model, table.images[args.frame], args.out_dir):
        print(p)
    return EXIT_OK


def _folds_for(rows, cfg, rng):
    from .evaluation.folds import SessionInfo, make_folds

    info = {}
    for r in rows:
        info.setdefault(r.session_id, SessionInfo(r.session_id, r.subject_id, r.diagnosis, r.protocol))
    return make_folds([info[k] for k in sorted(info)], cfg["eval.folds"], rng)


def cmd_sweep(args, cfg):
    from .numerics import Rng, atomic_write_text
    from .pipeline import load_table, size_curve_csv, training_size_sweep
    from .plotting import plot_size_curve

    _need_dir(args.out_dir)
    if args.counts:
        cfg.set("sweep.counts", args.counts)
    rng = Rng(cfg["seed"])
    size = cfg["picnn.input_size"] if args.method in ("picnn", "alexnet") else None
    pool = load_table(args.manifest, size)
    if args.test_manifest:
        train_t, test_t = pool, load_table(args.test_manifest, size)
    else:
        split = _folds_for(pool.rows, cfg, rng.substream(1))
        test_t = pool.sessions(split.test_sessions(0))
        train_t = pool.sessions(split.train_sessions(0))
    points = training_size_sweep(args.method, train_t, test_t, cfg["sweep.counts"], cfg, rng.substream(2))
    text = size_curve_csv(points)
    atomic_write_text(os.path.join(args.out_dir, f"sweep_{args.method}.csv"), text)
    plot_size_curve(os.path.join(args.out_dir, f"sweep_{args.method}.svg"), [p.sessions for p in points],
                    [p.precision for p in points], [p.recall for p in points], args.method)
    print(text, end="")
    return EXIT_OK


def cmd_folds(args, cfg):
    from .evaluation.folds import check_folds
    from .errors import DegenerateInput
    from .manifest import read_manifest
    from .numerics import Rng, atomic_write_text

    rows = read_manifest(args.manifest)
    split = _folds_for(rows, cfg, Rng(cfg["seed"]))
    problems = check_folds(split)
    if problems:
        raise DegenerateInput("; ".join(problems))
    fold_of = split.fold_of()
    lines = ["session_id,subject_id,fold"]
    for s in split.sessions:
        lines.append(f"{s.session_id},{s.subject_id},{fold_of[s.session_id]}")
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"{len(split.sessions)} sessions in {split.n_folds} folds -> {args.out}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "train": cmd_train, "predict": cmd_predict, "eval": cmd_eval, "select": cmd_select,
    "stats": cmd_stats, "viz": cmd_viz, "sweep": cmd_sweep, "folds": cmd_folds,
}


def main(argv=None) -> int:
    _limit_threads()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK

    from .errors import GazeContactError

    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except GazeContactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
