import filecmp
import os

import numpy as np
import pytest

from gazecontact.errors import DegenerateInput, IoError
from gazecontact.imaging import align_eyes
from gazecontact.manifest import read_manifest
from gazecontact.numerics import Rng
from gazecontact.synthface import (
    SceneParams, SynthConfig, contact_angle, generate_dataset, generate_selection_stream, is_eye_contact,
    landmark_available, render_face, write_dataset,
)


def test_frontal_neutral_is_contact_with_centred_iris():
    s = render_face(SceneParams(identity_id=3), 96, Rng(0), noise_std=0.0)
    assert s.eye_contact and s.landmark_available
    (lx, ly), (rx, ry) = s.eye_centers
    left, right = align_eyes(s.patch, (lx, ly), (rx, ry), 0.0)
    for crop in (left, right):
        y, x = np.unravel_index(np.argmin(crop), crop.shape)
        assert abs(x - (crop.shape[1] - 1) / 2) <= 3
        assert abs(y - (crop.shape[0] - 1) / 2) <= 3


def test_iris_moves_with_gaze():
    a = render_face(SceneParams(identity_id=3), 96, Rng(0), noise_std=0.0)
    b = render_face(SceneParams(identity_id=3, gaze_offset=(20.0, 0.0)), 96, Rng(0), noise_std=0.0)
    (lx, ly), (rx, ry) = a.eye_centers
    xa = np.argmin(align_eyes(a.patch, (lx, ly), (rx, ry), 0.0)[0].min(axis=0))
    xb = np.argmin(align_eyes(b.patch, (lx, ly), (rx, ry), 0.0)[0].min(axis=0))
    assert xb > xa + 3


def test_large_yaw_loses_landmarks():
    assert not landmark_available(SceneParams(yaw=60.0))
    assert not render_face(SceneParams(yaw=60.0), 48, Rng(1)).landmark_available


def test_gaze_outside_threshold_is_not_contact():
    p = SceneParams(gaze_offset=(10.0, 0.0))
    assert not is_eye_contact(p, 5.0)
    assert contact_angle(p) == pytest.approx(10.0)


def test_scene_param_validation():
    with pytest.raises(DegenerateInput):
        SceneParams(yaw=95.0)
    with pytest.raises(DegenerateInput):
        SceneParams(occlusion_fraction=1.5)


def test_positive_count_binomial_bound():
    frames = generate_dataset(1000, SynthConfig(size=32), Rng(5))
    pos = sum(f.sample.eye_contact for f in frames)
    assert 60 <= pos <= 100


def test_zero_positive_rate():
    frames = generate_dataset(200, SynthConfig(size=32, positive_rate=0.0), Rng(5))
    assert not any(f.sample.eye_contact for f in frames)


def test_labels_match_stored_parameters():
    cfg = SynthConfig(size=32)
    frames = generate_dataset(400, cfg, Rng(2))
    for f in frames:
        assert f.sample.eye_contact == is_eye_contact(f.sample.params, cfg.contact_threshold_deg)
        assert f.sample.landmark_available == landmark_available(f.sample.params)


def test_availability_shrinks_with_yaw_range():
    rates = []
    for yr in (30.0, 45.0, 60.0, 80.0):
        frames = generate_dataset(300, SynthConfig(size=32, yaw_range=yr, occlusion_rate=0.0), Rng(4))
        rates.append(np.mean([f.sample.landmark_available for f in frames]))
    assert all(a >= b for a, b in zip(rates, rates[1:]))
    assert rates[-1] < rates[0]


def test_sessions_and_subjects():
    frames = generate_dataset(450, SynthConfig(size=32, frames_per_session=100), Rng(0))
    sessions = {f.session_id for f in frames}
    assert len(sessions) == 5
    by_session = {}
    for f in frames:
        by_session.setdefault(f.session_id, set()).add(f.subject_id)
    assert all(len(v) == 1 for v in by_session.values())


def tree_equal(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.diff_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(
        tree_equal(os.path.join(a, d), os.path.join(b, d)) for d in cmp.common_dirs)


def test_dataset_is_byte_reproducible(tmp_path):
    for name in ("a", "b"):
        (tmp_path / name).mkdir()
        write_dataset(generate_dataset(150, SynthConfig(size=32), Rng(9)), tmp_path / name)
    assert tree_equal(tmp_path / "a", tmp_path / "b")
    rows = read_manifest(tmp_path / "a" / "manifest.csv")
    assert len(rows) == 150
    assert all((r.yaw is None) == (not r.landmark_available) for r in rows)


def test_write_dataset_missing_dir(tmp_path):
    with pytest.raises(IoError):
        write_dataset(generate_dataset(2, SynthConfig(size=32), Rng(0)), tmp_path / "nope")


def test_selection_stream_has_one_child_per_frame():
    stream = generate_selection_stream(30, Rng(1))
    assert all(sum(d.is_child for d in frame) == 1 for frame in stream)
    assert any(len(frame) == 2 for frame in stream)
