import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazecontact.errors import DegenerateInput, IoError
from gazecontact.imaging import FacePatch
from gazecontact.numerics import Rng
from gazecontact.selection import (
    DetectionBox, HistogramEmbedding, SelectionState, crop_box, detections_jsonl, evaluate_detections, iou,
    match_boxes, read_detections, run_selection, select_step,
)
from gazecontact.synthface import generate_selection_stream

from bench import as_stream, child_scores

boxes = st.builds(DetectionBox, st.floats(-50, 50), st.floats(-50, 50), st.floats(0.5, 40), st.floats(0.5, 40))


# --- IoU --------------------------------------------------------------------

def test_iou_cases():
    a = DetectionBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, DetectionBox(20, 20, 5, 5)) == 0.0
    assert iou(a, DetectionBox(5, 0, 10, 10)) == pytest.approx(1 / 3)


@settings(max_examples=200)
@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


def test_evaluate_detections_cases():
    a = {0: [DetectionBox(0, 0, 10, 10)], 1: [DetectionBox(3, 3, 4, 4), DetectionBox(30, 30, 5, 5)]}
    assert evaluate_detections(a, a, 0.5) == (1.0, 1.0)
    half = {0: [DetectionBox(5, 0, 10, 10)]}
    assert evaluate_detections(half, {0: [DetectionBox(0, 0, 10, 10)]}, 0.5) == (0.0, 0.0)
    far = {0: [DetectionBox(100, 100, 3, 3)]}
    assert evaluate_detections(far, {0: [DetectionBox(0, 0, 10, 10)]}, 0.5) == (0.0, 0.0)
    with pytest.raises(DegenerateInput):
        evaluate_detections(a, a, 1.5)


@settings(max_examples=100)
@given(st.lists(boxes, max_size=6), st.lists(boxes, max_size=6))
def test_evaluate_detections_range(p, t):
    prec, rec = evaluate_detections({0: p}, {0: t}, 0.5)
    assert 0 <= prec <= 1 and 0 <= rec <= 1


def test_greedy_matching_is_one_to_one():
    t = [DetectionBox(0, 0, 10, 10)]
    p = [DetectionBox(0, 0, 10, 10), DetectionBox(1, 0, 10, 10)]
    m = match_boxes(p, t, 0.5)
    assert m == [(0, 0, 1.0)]


def test_box_validation():
    with pytest.raises(DegenerateInput):
        DetectionBox(0, 0, 0, 5)


# --- detections on disk -----------------------------------------------------

def test_jsonl_roundtrip(tmp_path):
    frames = {0: [DetectionBox(1, 2, 3, 4, 0.9)], 3: [], 5: [DetectionBox(0, 0, 8, 8, 0.5), DetectionBox(9, 9, 2, 2, 1)]}
    (tmp_path / "d.jsonl").write_text(detections_jsonl(frames))
    back = read_detections(tmp_path / "d.jsonl")
    assert sorted(back) == [0, 3, 5]
    assert [b.as_list() for b in back[5]] == [b.as_list() for b in frames[5]]


def test_jsonl_errors(tmp_path):
    (tmp_path / "bad.jsonl").write_text('{"frame": 1}\n')
    with pytest.raises(DegenerateInput):
        read_detections(tmp_path / "bad.jsonl")
    (tmp_path / "dup.jsonl").write_text('{"frame": 1, "boxes": []}\n{"frame": 1, "boxes": []}\n')
    with pytest.raises(DegenerateInput):
        read_detections(tmp_path / "dup.jsonl")
    with pytest.raises(IoError):
        read_detections(tmp_path / "none.jsonl")


def test_crop_box_clips_to_image():
    img = np.zeros((40, 60, 3), np.uint8)
    img[:, 30:] = 200
    p = crop_box(img, DetectionBox(50, -10, 30, 30), 16)
    assert p.pixels.shape == (16, 16, 3) and np.all(p.pixels == 200)


# --- embedding --------------------------------------------------------------

def test_embedding_is_unit_length():
    e = HistogramEmbedding()
    v = e(FacePatch(np.random.default_rng(0).integers(0, 256, (48, 48, 3)).astype(np.uint8)))
    assert v.shape == (e.dim,) and np.linalg.norm(v) == pytest.approx(1.0)


# --- online selection -------------------------------------------------------

def test_empty_frame_leaves_state():
    st0 = SelectionState.create(2, HistogramEmbedding().dim)
    pick, st1 = select_step(st0, [])
    assert pick is None and st1 is st0


def test_single_class_takes_everything():
    frames = generate_selection_stream(30, Rng(3))
    picks, state = run_selection(as_stream(frames), classes=1)
    assert all(p is not None for p in picks)
    assert state.counts[0] == sum(len(f) for f in frames)


def test_selection_is_deterministic():
    frames = as_stream(generate_selection_stream(60, Rng(4)))
    a, sa = run_selection(frames, 2)
    b, sb = run_selection(frames, 2)
    assert [p.as_list() if p else None for p in a] == [p.as_list() if p else None for p in b]
    assert sa.model.weights.tobytes() == sb.model.weights.tobytes()


def test_two_identity_stream_short():
    frames = generate_selection_stream(150, Rng(1))
    picks, _ = run_selection(as_stream(frames), 2)
    prec, rec = child_scores(frames, picks)
    assert prec > 0.9 and rec > 0.9


def test_spurious_detections_use_third_class():
    frames = generate_selection_stream(150, Rng(2), spurious_rate=0.3)
    picks, state = run_selection(as_stream(frames), 3)
    prec, rec = child_scores(frames, picks)
    assert prec > 0.9 and rec > 0.9
