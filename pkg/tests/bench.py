"""Shared builders for the synthetic end-to-end benchmarks."""

import os
import time

import numpy as np

from gazecontact.config import RunConfig
from gazecontact.evaluation.metrics import sweep_thresholds
from gazecontact.numerics import Rng
from gazecontact.pipeline import eye_features, load_table, score_table, train_method
from gazecontact.synthface import generate_dataset, write_dataset

# share of frames with a hand over the lower face, enough to defeat the
# landmark detector on about a quarter of the eye-contact frames while the
# eyes stay visible
BENCH_OCCLUSION_RATE = 0.22


PROTOCOLS = ("ESCS", "v-BOSCC", "nv-BOSCC", "R-ABC", "Marcus")


def roster(seed: int, subjects: int = 100, sessions: int = 156):
    """Session metadata: every subject has one session, the rest go to random subjects."""
    from gazecontact.evaluation.folds import SessionInfo

    r = np.random.default_rng(seed)
    owners = list(range(subjects)) + [int(o) for o in r.integers(0, subjects, sessions - subjects)]
    diag = r.integers(0, 2, subjects)
    return [SessionInfo(f"s{i:03d}", f"c{o:03d}", ("TD", "ASD")[diag[o]], PROTOCOLS[r.integers(0, 5)])
            for i, o in enumerate(owners)]


def as_stream(frames):
    """Selection-stream frames as lists of (box, patch) pairs."""
    from gazecontact.selection import DetectionBox

    return [[(DetectionBox(*d.box, frame_index=i), d.patch) for d in f] for i, f in enumerate(frames)]


def child_scores(frames, picks):
    """Child-class precision and recall of the per-frame picks, by IoU matching."""
    from gazecontact.selection import DetectionBox, evaluate_detections

    pred = {i: [p] for i, p in enumerate(picks) if p is not None}
    truth = {i: [DetectionBox(*d.box) for d in f if d.is_child] for i, f in enumerate(frames)}
    return evaluate_detections(pred, truth, 0.5)


def bench_config(seed: int = 7, **overrides) -> RunConfig:
    cfg = RunConfig({"seed": seed, "synth.occlusion_rate": BENCH_OCCLUSION_RATE})
    for k, v in overrides.items():
        cfg.set(k, v)
    return cfg


def make_tables(root, cfg: RunConfig, n_train: int = 5000, n_test: int = 1000):
    """Generate disjoint train/test datasets on disk and load them."""
    seed = cfg["seed"]
    base = cfg.synth_config()
    tables = []
    for name, n, offset in (("train", n_train, 0), ("test", n_test, 10_000)):
        out = os.path.join(root, name)
        os.makedirs(out, exist_ok=True)
        synth = type(base)(**{**base.__dict__, "session_offset": offset})
        frames = generate_dataset(n, synth, Rng(seed).substream(1 if name == "train" else 2))
        manifest = write_dataset(frames, out)
        tables.append(load_table(manifest))
    return tables


def availability_on_positives(table) -> float:
    y = table.labels
    feats = eye_features(table)
    return float(feats.valid[y == 1].mean())


def run_benchmark(root, cfg: RunConfig, methods=("picnn", "peec", "gazelock"), n_train=5000, n_test=1000, log=print):
    """Train each method on the synthetic train split; report test metrics per method."""
    t0 = time.time()
    train_t, test_t = make_tables(root, cfg, n_train, n_test)
    log(f"generated {len(train_t)}+{len(test_t)} frames in {time.time() - t0:.0f}s")
    train_f, test_f = eye_features(train_t), eye_features(test_t)
    out = {"availability": float(test_f.valid[test_t.labels == 1].mean())}
    for m in methods:
        t = time.time()
        model, _ = train_method(m, train_t, cfg, Rng(cfg["seed"]), feats=train_f)
        scores = score_table(model, test_t, test_f)
        rep = sweep_thresholds(test_t.labels, scores)
        out[m] = rep
        log(f"{m}: auc_pr={rep.auc_pr:.4f} max_f1={rep.max_f1:.4f} precision={rep.precision_at_max_f1:.4f} "
            f"recall={rep.recall_at_max_f1:.4f} ({time.time() - t:.0f}s)")
    out["seconds"] = time.time() - t0
    return out


if __name__ == "__main__":
    import sys
    import tempfile

    with tempfile.TemporaryDirectory() as d:
        res = run_benchmark(d, bench_config(int(sys.argv[1]) if len(sys.argv) > 1 else 7),
                            log=lambda s: print(s, flush=True))
        print("availability", res["availability"], "total", round(res["seconds"]), flush=True)
