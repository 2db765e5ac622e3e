"""Procedural face patches with exact head-pose and gaze ground truth.

The renderer is deliberately simple: a shaded head ellipse, hair, brows, nose,
mouth and two almond eyes whose iris moves with the gaze direction. All angles
are degrees. Image coordinates have x to the right and y down.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateInput, IoError
from .imaging import FacePatch, write_netpbm
from .numerics import Rng, mix_seed

LANDMARK_MAX_YAW = 45.0
LANDMARK_MAX_PITCH = 30.0
LANDMARK_MAX_OCCLUSION = 0.3
DIAGNOSES = ("TD", "ASD")
PROTOCOLS = ("ESCS", "v-BOSCC", "nv-BOSCC", "R-ABC", "Marcus")


@dataclass(frozen=True)
class SceneParams:
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    gaze_offset: tuple = (0.0, 0.0)  # eye-in-head (azimuth, elevation)
    identity_id: int = 0
    occlusion_fraction: float = 0.0
    illumination: float = 1.0

    def __post_init__(self):
        if not (-90 <= self.yaw <= 90 and -90 <= self.pitch <= 90):
            raise DegenerateInput("yaw and pitch must lie in [-90, 90]")
        if not -45 <= self.roll <= 45:
            raise DegenerateInput("roll must lie in [-45, 45]")
        if not 0.0 <= self.occlusion_fraction <= 1.0:
            raise DegenerateInput("occlusion_fraction must lie in [0, 1]")

    @property
    def gaze_direction(self) -> tuple:
        """Total gaze (azimuth, elevation) relative to the camera axis."""
        return self.yaw + self.gaze_offset[0], self.pitch + self.gaze_offset[1]


@dataclass(frozen=True)
class HeadPose:
    yaw: float
    pitch: float
    roll: float = 0.0


@dataclass
class SynthSample:
    patch: FacePatch
    pose: HeadPose
    eye_contact: bool
    landmark_available: bool
    eye_centers: tuple  # ((lx, ly), (rx, ry)) in patch pixels
    params: SceneParams


def contact_angle(params: SceneParams) -> float:
    """Angle between the gaze ray and the camera axis."""
    az, el = (math.radians(a) for a in params.gaze_direction)
    c = max(-1.0, min(1.0, math.cos(az) * math.cos(el)))
    return math.degrees(math.acos(c))


def is_eye_contact(params: SceneParams, threshold_deg: float = 5.0) -> bool:
    return contact_angle(params) <= threshold_deg


def landmark_available(params: SceneParams) -> bool:
    return (
        abs(params.yaw) <= LANDMARK_MAX_YAW
        and abs(params.pitch) <= LANDMARK_MAX_PITCH
        and params.occlusion_fraction < LANDMARK_MAX_OCCLUSION
    )


@dataclass(frozen=True)
class Identity:
    face_a: float
    face_b: float
    skin: np.ndarray
    hair: np.ndarray
    iris: np.ndarray
    hair_line: float
    eye_sep: float
    eye_y: float
    eye_w: float
    mouth_w: float


def identity_traits(identity_id: int) -> Identity:
    r = Rng(mix_seed(int(identity_id), 0xFACE))
    tone = r.uniform(0.45, 1.0)
    skin = np.array([0.95, 0.75, 0.6]) * tone + r.uniform(-0.06, 0.06, 3)
    return Identity(
        face_a=float(r.uniform(0.6, 0.72)),
        face_b=float(r.uniform(0.76, 0.9)),
        skin=np.clip(skin, 0.1, 1.0),
        hair=np.clip(r.uniform(0.02, 0.45) * np.array([1.0, 0.8, 0.6]) + r.uniform(0, 0.1, 3), 0, 1),
        iris=np.clip(r.uniform(0.05, 0.4, 3), 0, 1),
        hair_line=float(r.uniform(-0.62, -0.45)),
        eye_sep=float(r.uniform(0.28, 0.34)),
        eye_y=float(r.uniform(-0.16, -0.08)),
        eye_w=float(r.uniform(0.17, 0.2)),
        mouth_w=float(r.uniform(0.17, 0.26)),
    )


def _rotate_head(p: np.ndarray, yaw: float, pitch: float) -> np.ndarray:
    """Apply pitch (about x) then yaw (about y) to head-frame points (..., 3)."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    y1 = y * cp - z * sp
    z1 = y * sp + z * cp
    x2 = x * cy + z1 * sy
    z2 = -x * sy + z1 * cy
    return np.stack([x2, y1, z2], axis=-1)


def _unrotate_head(p: np.ndarray, yaw: float, pitch: float) -> np.ndarray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    x1 = x * cy - z * sy
    z1 = x * sy + z * cy
    y2 = y * cp + z1 * sp
    z2 = -y * sp + z1 * cp
    return np.stack([x1, y2, z2], axis=-1)


def _surface_point(ident: Identity, x: float, y: float, bulge: float = 1.0) -> np.ndarray:
    a = ident.face_a
    b = ident.face_b
    z = a * math.sqrt(max(0.0, 1.0 - (x / a) ** 2 - (y / b) ** 2)) * bulge
    return np.array([x, y, z])


def _direction(az_deg: float, el_deg: float) -> np.ndarray:
    az, el = math.radians(az_deg), math.radians(el_deg)
    return np.array([math.cos(el) * math.sin(az), -math.sin(el)])


def _ellipse_mask(u, v, cx, cy, rx, ry, soft):
    d = ((u - cx) / rx) ** 2 + ((v - cy) / ry) ** 2
    return np.clip((1.0 - d) / soft, 0.0, 1.0)


def render_face(
    params: SceneParams,
    size: int = 64,
    rng=None,
    contact_threshold_deg: float = 5.0,
    pose_coupling: float = 0.2,
    iris_gain: float = 2.5,
    noise_std: float = 2.0,
    supersample: int = 2,
) -> SynthSample:
    """Render one RGB face patch of ``size`` x ``size`` pixels.

    The iris offset inside the eye opening is
    ``iris_gain * eye_width * (gaze_dir - pose_coupling * head_dir)`` where both
    directions are projected unit vectors, so the look of eye contact shifts
    with head pose.
    """
    if size < 32:
        raise DegenerateInput("render size must be at least 32")
    rng = rng if rng is not None else Rng(0)
    ident = identity_traits(params.identity_id)
    yaw, pitch = math.radians(params.yaw), math.radians(params.pitch)
    roll = math.radians(params.roll)
    n = size * supersample
    half = size / 2.0

    # pixel grid in the un-rolled normalized frame (unit = half patch width)
    g = (np.arange(n) + 0.5) / supersample - 0.5
    gx, gy = np.meshgrid(g, g)
    px = (gx - (half - 0.5)) / half
    py = (gy - (half - 0.5)) / half
    cr, sr = math.cos(roll), math.sin(roll)
    u = cr * px + sr * py
    v = -sr * px + cr * py

    bg_tint = rng.uniform(0.25, 0.75, 3)
    img = np.broadcast_to(bg_tint, (n, n, 3)).copy()
    img *= 0.85 + 0.15 * np.sin(3.0 * px + 2.0 * py + rng.uniform(0, 6.3))[..., None]

    a, b = ident.face_a, ident.face_b
    face = _ellipse_mask(u, v, 0.0, 0.0, a, b, 0.04)
    inside = np.clip(1.0 - (u / a) ** 2 - (v / b) ** 2, 0.0, 1.0)
    nz = np.sqrt(inside)
    light = np.array([-0.35, -0.45, 0.82])
    light /= np.linalg.norm(light)
    lambert = np.clip((u / a) * light[0] + (v / b) * light[1] + nz * light[2], 0.0, 1.0)
    shade = params.illumination * (0.45 + 0.6 * lambert)

    # hair: the part of the head surface above the hair line or behind the ears
    view = np.stack([u, v, a * nz], axis=-1)
    head = _unrotate_head(view, yaw, pitch)
    hair = np.clip((ident.hair_line - head[..., 1]) / 0.04, 0.0, 1.0)
    hair = np.maximum(hair, np.clip((0.12 * a - head[..., 2]) / 0.04, 0.0, 1.0))
    albedo = ident.skin * (1.0 - hair[..., None]) + ident.hair * hair[..., None]
    img = img * (1.0 - face[..., None]) + (albedo * shade[..., None]) * face[..., None]

    def project(p3):
        q = _rotate_head(p3, yaw, pitch)
        return q[0], q[1], q[2]

    fore_x = max(math.cos(yaw), 0.25)
    fore_y = max(math.cos(pitch), 0.25)

    # nose: protruding tip gives strong parallax with pose
    nx, ny, nzz = project(_surface_point(ident, 0.0, 0.12, bulge=1.25))
    nose = _ellipse_mask(u, v, nx, ny, 0.07, 0.09, 0.3) * float(nzz > 0)
    img = img * (1.0 - 0.35 * nose[..., None])

    mx, my, mz = project(_surface_point(ident, 0.0, 0.45))
    mouth = _ellipse_mask(u, v, mx, my, ident.mouth_w * fore_x, 0.045 * fore_y, 0.3) * float(mz > 0)
    img = img * (1.0 - mouth[..., None]) + np.array([0.45, 0.12, 0.12]) * mouth[..., None]

    head_dir = _direction(params.yaw, params.pitch)
    gaze_dir = _direction(*params.gaze_direction)
    ew = ident.eye_w
    eh = 0.45 * ew
    iris_r = 0.85 * eh
    offset = iris_gain * ew * (gaze_dir - pose_coupling * head_dir)
    centers = []
    for side in (-1.0, 1.0):
        ex, ey, ez = project(_surface_point(ident, side * ident.eye_sep, ident.eye_y))
        centers.append((ex, ey))
        if ez <= 0:
            continue
        bx, by, _ = project(_surface_point(ident, side * ident.eye_sep, ident.eye_y - 0.12))
        brow = _ellipse_mask(u, v, bx, by, 0.9 * ew * fore_x, 0.035, 0.4)
        img = img * (1.0 - 0.8 * brow[..., None]) + ident.hair * 0.8 * brow[..., None]
        rx, ry = ew * fore_x, eh * fore_y
        aperture = _ellipse_mask(u, v, ex, ey, rx, ry, 0.15)
        ox = float(np.clip(offset[0] * fore_x, -rx, rx))
        oy = float(np.clip(offset[1] * fore_y, -ry, ry))
        iris = _ellipse_mask(u, v, ex + ox, ey + oy, iris_r * fore_x, iris_r, 0.25) * aperture
        pupil = _ellipse_mask(u, v, ex + ox, ey + oy, 0.45 * iris_r * fore_x, 0.45 * iris_r, 0.3) * aperture
        eye_rgb = np.array([0.95, 0.95, 0.93]) * params.illumination
        img = img * (1.0 - aperture[..., None]) + eye_rgb * aperture[..., None]
        img = img * (1.0 - iris[..., None]) + ident.iris * iris[..., None]
        img = img * (1.0 - pupil[..., None]) + 0.02 * pupil[..., None]

    if params.occlusion_fraction > 0:
        top = b - 2.0 * b * params.occlusion_fraction
        occ = np.clip((py - top) / 0.03, 0.0, 1.0)
        hand = ident.skin * 0.8 + np.array([0.05, 0.0, -0.05])
        img = img * (1.0 - occ[..., None]) + hand * (0.7 + 0.1 * np.sin(8 * px))[..., None] * occ[..., None]

    img = img.reshape(size, supersample, size, supersample, 3).mean(axis=(1, 3))
    img = img * 255.0 + rng.normal(0.0, noise_std, img.shape)
    patch = FacePatch(np.clip(np.rint(img), 0, 255).astype(np.uint8))

    eye_px = []
    for ex, ey in centers:
        ix = cr * ex - sr * ey
        iy = sr * ex + cr * ey
        eye_px.append((ix * half + half - 0.5, iy * half + half - 0.5))
    eye_px.sort()
    return SynthSample(
        patch=patch,
        pose=HeadPose(params.yaw, params.pitch, params.roll),
        eye_contact=is_eye_contact(params, contact_threshold_deg),
        landmark_available=landmark_available(params),
        eye_centers=(eye_px[0], eye_px[1]),
        params=params,
    )


# ---------------------------------------------------------------------------
# datasets


@dataclass
class SynthConfig:
    positive_rate: float = 0.08
    contact_threshold_deg: float = 5.0
    negative_margin_deg: float = 10.0
    max_gaze_deg: float = 30.0
    yaw_range: float = 45.0
    pitch_range: float = 30.0
    roll_range: float = 15.0
    pose_step_deg: float = 4.0
    occlusion_rate: float = 0.05
    frames_per_session: int = 100
    sessions_per_subject: float = 1.56
    size: int = 64
    pose_coupling: float = 0.2
    iris_gain: float = 2.5
    noise_std: float = 2.0
    session_offset: int = 0


@dataclass
class SynthFrame:
    sample: SynthSample
    session_id: str
    subject_id: str
    frame_index: int
    diagnosis: str
    protocol: str
    box: tuple  # normalized (x, y, w, h) of the face in the POV frame


def _reflect_walk(value, step, limit):
    value = value + step
    if limit <= 0:
        return 0.0
    while abs(value) > limit:
        value = math.copysign(2 * limit - abs(value), value)
    return value


def sample_gaze(rng, pose_yaw, pose_pitch, positive: bool, cfg: SynthConfig) -> tuple:
    """Draw an eye-in-head offset whose total gaze lands inside (positive) or
    outside (negative) the contact cone."""
    phi = rng.uniform(0.0, 2.0 * math.pi)
    if positive:
        radius = cfg.contact_threshold_deg * math.sqrt(rng.uniform(0.0, 1.0)) * 0.999
    else:
        lo = cfg.contact_threshold_deg + cfg.negative_margin_deg
        radius = rng.uniform(lo, max(lo, cfg.max_gaze_deg))
    # pick a total direction at the requested angle from the camera axis
    c = math.cos(math.radians(radius))
    az = math.degrees(math.atan2(math.sin(math.radians(radius)) * math.cos(phi), c))
    el = math.degrees(math.asin(math.sin(math.radians(radius)) * math.sin(phi)))
    return (az - pose_yaw, el - pose_pitch), (az, el)


def generate_dataset(n: int, cfg: SynthConfig | None = None, rng=None) -> list:
    """Generate ``n`` frames split into sessions of correlated head motion.

    Each session uses its own substream so sessions are independent of the
    order they are produced in.
    """
    if n < 1:
        raise DegenerateInput("n must be at least 1")
    cfg = cfg or SynthConfig()
    rng = rng if rng is not None else Rng(0)
    fps = max(1, cfg.frames_per_session)
    n_sessions = math.ceil(n / fps)
    frames = []
    subject_rng = rng.substream(0)
    n_subjects = max(1, round(n_sessions / max(cfg.sessions_per_subject, 1.0)))
    # every subject gets at least one session; remaining sessions go to random subjects
    owners = list(range(n_subjects))
    extra = subject_rng.integers(0, n_subjects, size=max(0, n_sessions - n_subjects))
    owners = sorted(owners + [int(e) for e in extra])[:n_sessions]
    subj_diag = subject_rng.integers(0, 2, size=n_subjects)
    for s in range(n_sessions):
        sess_no = s + cfg.session_offset
        srng = rng.substream(1000 + sess_no)
        subject = owners[s] + cfg.session_offset
        diagnosis = DIAGNOSES[int(subj_diag[owners[s]])]
        protocol = PROTOCOLS[int(srng.integers(0, len(PROTOCOLS)))]
        yaw = srng.uniform(-cfg.yaw_range, cfg.yaw_range)
        pitch = srng.uniform(-cfg.pitch_range, cfg.pitch_range)
        roll = srng.uniform(-cfg.roll_range, cfg.roll_range) * 0.5
        bx, by = srng.uniform(0.35, 0.65), srng.uniform(0.3, 0.7)
        illum = srng.uniform(0.8, 1.15)
        count = min(fps, n - s * fps)
        for f in range(count):
            yaw = _reflect_walk(yaw, srng.normal(0, cfg.pose_step_deg), cfg.yaw_range)
            pitch = _reflect_walk(pitch, srng.normal(0, cfg.pose_step_deg), cfg.pitch_range)
            roll = _reflect_walk(roll, srng.normal(0, cfg.pose_step_deg / 2), cfg.roll_range)
            bx = min(0.95, max(0.05, bx + srng.normal(0, 0.01)))
            by = min(0.95, max(0.05, by + srng.normal(0, 0.01)))
            positive = bool(srng.random() < cfg.positive_rate)
            offset, _ = sample_gaze(srng, yaw, pitch, positive, cfg)
            if srng.random() < cfg.occlusion_rate:
                occl = srng.uniform(0.3, 0.5)
            else:
                occl = srng.uniform(0.0, 0.2) if srng.random() < 0.3 else 0.0
            params = SceneParams(
                yaw=float(yaw), pitch=float(pitch), roll=float(roll),
                gaze_offset=(float(offset[0]), float(offset[1])),
                identity_id=int(subject), occlusion_fraction=float(occl),
                illumination=float(illum * srng.uniform(0.95, 1.05)),
            )
            sample = render_face(
                params, cfg.size, srng,
                contact_threshold_deg=cfg.contact_threshold_deg,
                pose_coupling=cfg.pose_coupling, iris_gain=cfg.iris_gain,
                noise_std=cfg.noise_std,
            )
            frames.append(SynthFrame(
                sample=sample,
                session_id=f"s{sess_no:04d}",
                subject_id=f"c{subject:04d}",
                frame_index=f,
                diagnosis=diagnosis,
                protocol=protocol,
                box=(bx, by, 0.18, 0.24),
            ))
    return frames


def write_dataset(frames: list, out_dir, manifest_name: str = "manifest.csv") -> str:
    """Write images and the manifest CSV; returns the manifest path."""
    from .manifest import ManifestRow, write_manifest

    if not os.path.isdir(out_dir):
        raise IoError(f"output directory does not exist: {out_dir}")
    img_dir = os.path.join(out_dir, "images")
    try:
        os.makedirs(img_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(str(exc)) from exc
    rows = []
    for fr in frames:
        rel = os.path.join("images", f"{fr.session_id}_{fr.frame_index:05d}.ppm")
        write_netpbm(os.path.join(out_dir, rel), fr.sample.patch.pixels)
        s = fr.sample
        avail = s.landmark_available
        (lx, ly), (rx, ry) = s.eye_centers
        rows.append(ManifestRow(
            session_id=fr.session_id,
            subject_id=fr.subject_id,
            frame_index=fr.frame_index,
            image_path=rel,
            label=int(s.eye_contact),
            yaw=s.pose.yaw if avail else None,
            pitch=s.pose.pitch if avail else None,
            roll=s.pose.roll if avail else None,
            landmark_available=avail,
            diagnosis=fr.diagnosis,
            protocol=fr.protocol,
            eyes=(lx, ly, rx, ry) if avail else None,
            box=fr.box,
        ))
    path = os.path.join(out_dir, manifest_name)
    write_manifest(path, rows)
    return path


# ---------------------------------------------------------------------------
# multi-face streams for child selection


@dataclass
class StreamDetection:
    box: tuple  # (x, y, w, h, score) in frame pixels
    patch: FacePatch
    is_child: bool


def generate_selection_stream(n_frames: int, rng=None, child_id: int = 11, other_id: int = 42,
                              other_rate: float = 0.7, spurious_rate: float = 0.0,
                              frame_size=(640, 480), patch_size: int = 48) -> list:
    """Frames of face detections with a known child identity.

    The child is present in every frame, usually large and central; the other
    person appears in a fraction of frames, smaller and off-centre.
    """
    rng = rng if rng is not None else Rng(0)
    fw, fh = frame_size
    frames = []
    cyaw = oyaw = 0.0
    for t in range(n_frames):
        dets = []
        cyaw = _reflect_walk(cyaw, rng.normal(0, 4), 40)
        oyaw = _reflect_walk(oyaw, rng.normal(0, 4), 40)
        people = [(child_id, True)]
        if rng.random() < other_rate:
            people.append((other_id, False))
        for pid, child in people:
            if child:
                w = rng.uniform(150, 200)
                cx, cy = fw / 2 + rng.normal(0, 30), fh / 2 + rng.normal(0, 20)
                yaw = cyaw
            else:
                w = rng.uniform(90, 140)
                cx = rng.choice([fw * 0.15, fw * 0.85]) + rng.normal(0, 20)
                cy = fh * 0.4 + rng.normal(0, 20)
                yaw = oyaw
            params = SceneParams(yaw=float(yaw), pitch=float(rng.uniform(-15, 15)),
                                 roll=float(rng.uniform(-10, 10)), identity_id=pid,
                                 illumination=float(rng.uniform(0.85, 1.1)))
            s = render_face(params, patch_size, rng)
            h = w * 1.2
            dets.append(StreamDetection(
                box=(float(cx - w / 2), float(cy - h / 2), float(w), float(h), float(rng.uniform(0.8, 1.0))),
                patch=s.patch, is_child=child))
        if spurious_rate and rng.random() < spurious_rate:
            noise = rng.integers(0, 256, size=(patch_size, patch_size, 3)).astype(np.uint8)
            dets.append(StreamDetection(box=(float(rng.uniform(0, fw - 60)), float(rng.uniform(0, fh - 60)),
                                             50.0, 60.0, 0.5), patch=FacePatch(noise), is_child=False))
        order = rng.permutation(len(dets))
        frames.append([dets[i] for i in order])
    return frames
