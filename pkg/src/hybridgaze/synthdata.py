"""Procedural hybrid-domain gaze world.

Two domains share one geometry: a bright sclera ellipse with a dark iris
disc whose centre encodes the gaze direction. Source samples are sharp
near-eye renders with per-eye labels; target samples are full faces (two
embedded eyes plus a nose mark) pushed through a degradation pipeline
(half-resolution render, box blur, noise, brightness jitter), from which
the eye crops are taken. Everything is a pure function of (seed, purpose,
index), so generation is reproducible and parallelizable.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

DEG = np.pi / 180.0

EYE_SIZE = 16
FACE_SIZE = 32

# geometry constants, in pixels at the stated canvas size
IRIS_SHIFT_EYE = 4.0          # iris displacement per unit sin(angle), 16x16 eye
SCLERA_AXES_FRAC = (0.45, 0.30)
IRIS_RADIUS_FRAC = 0.18
FACE_EYE_SPAN = 12.0          # sclera width of an eye embedded in the face
EYE_OFFSET_X = 6.0            # face-eye centres sit this far from face centre
EYE_OFFSET_Y = -3.0
NOSE_OFFSET_Y = 4.0
CORNER_OFFSET = 4.2           # outer eye corner, relative to the eye centre
POSE_SHIFT_PX = 8.0           # landmark shift per radian of head yaw/pitch
ROLL_SPLIT_PX = 4.0           # differential vertical shift per radian of roll
POSE_GAZE_COUPLING = 0.1      # per-eye gaze = face gaze + this * head pose

BACKGROUND = 0.35
SCLERA_VALUE = 0.85
IRIS_VALUE = 0.12
NOSE_VALUE = 0.15
NOSE_RADIUS = 1.6


class GazeAngles(NamedTuple):
    pitch: float
    yaw: float


@dataclass
class WorldConfig:
    """Knobs of the synthetic world, including the source/target quality gap."""

    pitch_range: float = 30.0 * DEG
    yaw_range: float = 30.0 * DEG
    pose_range: float = 15.0 * DEG          # head pitch/yaw/roll, symmetric
    sigma_source: float = 0.01
    sigma_target: float = 0.05
    blur_width: int = 3                     # box kernel, odd
    brightness_jitter: float = 0.2
    eye_size: int = EYE_SIZE
    face_size: int = FACE_SIZE
    supersample: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.sigma_source < 0 or self.sigma_target < 0:
            raise ValueError("noise levels must be non-negative")
        if self.pitch_range <= 0 or self.yaw_range <= 0 or self.pose_range < 0:
            raise ValueError("angle ranges must be non-degenerate")
        if self.blur_width < 1 or self.blur_width % 2 == 0:
            raise ValueError("blur_width must be a positive odd integer")
        if self.supersample < 1:
            raise ValueError("supersample must be at least 1")


def shifted_world(world):
    """Cross-domain evaluation world: same geometry, harsher degradation."""
    return WorldConfig(
        pitch_range=world.pitch_range, yaw_range=world.yaw_range,
        pose_range=world.pose_range, sigma_source=world.sigma_source,
        sigma_target=world.sigma_target * 2.0,
        blur_width=world.blur_width + 2,
        brightness_jitter=world.brightness_jitter * 1.5,
        eye_size=world.eye_size, face_size=world.face_size,
        supersample=world.supersample, seed=world.seed)


@dataclass
class Sample:
    """One rendered observation; labels depend on the domain.

    Source samples carry a single sharp eye in ``left_eye`` plus per-eye gaze
    labels; target samples carry both degraded eye crops, the face image, the
    face gaze label, landmarks and head pose, but no per-eye labels.
    """

    domain: str
    left_eye: np.ndarray
    right_eye: np.ndarray | None
    face: np.ndarray | None
    face_gaze: np.ndarray                  # (pitch, yaw) radians
    eye_gaze: np.ndarray | None            # (2, 2): per-eye labels, source only
    landmarks: np.ndarray | None           # (5, 2) pixel coordinates (x, y)
    head_pose: np.ndarray = field(default_factory=lambda: np.zeros(3))


def child_rng(seed, purpose, index=0):
    """Independent generator derived from (seed, purpose, index)."""
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF,
                                zlib.crc32(purpose.encode("utf-8")),
                                int(index)]))


# -- rendering primitives ----------------------------------------------------

def _pixel_grid(size, supersample):
    coords = (np.arange(size * supersample) + 0.5) / supersample
    return np.meshgrid(coords, coords)   # (x, y), both (S, S)


def _downsample(img, factor):
    if factor == 1:
        return img
    size = img.shape[0] // factor
    return img.reshape(size, factor, size, factor).mean(axis=(1, 3))


def _box_blur(img, width):
    """Separable box blur with edge padding.

    Mirrored taps are added pairwise before the centre tap, so the result of
    blurring a left-right mirrored image is the bitwise mirror of blurring
    the original.
    """
    if width == 1:
        return img
    pad = width // 2
    out = img
    for axis in (1, 0):
        span = out.shape[axis]
        pad_spec = [(0, 0), (0, 0)]
        pad_spec[axis] = (pad, pad)
        padded = np.pad(out, pad_spec, mode="edge")

        def tap(offset):
            sl = [slice(None), slice(None)]
            sl[axis] = slice(offset, offset + span)
            return padded[tuple(sl)]

        acc = np.zeros_like(out)
        for d in range(pad, 0, -1):
            acc += tap(pad - d) + tap(pad + d)
        acc += tap(pad)
        out = acc / width
    return out


def _draw_eye(canvas_x, canvas_y, img, center_x, center_y, span, gaze):
    """Paint a sclera ellipse and gaze-shifted iris disc onto a canvas."""
    ax, ay = SCLERA_AXES_FRAC[0] * span, SCLERA_AXES_FRAC[1] * span
    sclera = (((canvas_x - center_x) / ax) ** 2
              + ((canvas_y - center_y) / ay) ** 2) <= 1.0
    img[sclera] = SCLERA_VALUE
    shift = IRIS_SHIFT_EYE * span / EYE_SIZE
    iris_x = center_x + shift * np.sin(gaze.yaw)
    iris_y = center_y - shift * np.sin(gaze.pitch)
    radius = IRIS_RADIUS_FRAC * span
    iris = ((canvas_x - iris_x) ** 2 + (canvas_y - iris_y) ** 2) <= radius ** 2
    img[iris] = IRIS_VALUE


def _render_eye_sharp(gaze, size, supersample):
    x, y = _pixel_grid(size, supersample)
    img = np.full_like(x, BACKGROUND)
    _draw_eye(x, y, img, size / 2.0, size / 2.0, size, gaze)
    return _downsample(img, supersample)


def _degrade(img, world, rng):
    """Target-quality pipeline: box blur, additive noise, brightness shift."""
    img = _box_blur(img, world.blur_width)
    if world.sigma_target > 0:
        img = img + rng.normal(0.0, world.sigma_target, size=img.shape)
    if world.brightness_jitter > 0:
        img = img + rng.uniform(-world.brightness_jitter,
                                world.brightness_jitter)
    return np.clip(img, 0.0, 1.0)


def render_eye(gaze, quality, rng, world=None):
    """Stand-alone eye image at the configured quality level."""
    world = world or WorldConfig()
    img = _render_eye_sharp(gaze, world.eye_size, world.supersample)
    if quality == "source":
        if world.sigma_source > 0:
            img = img + rng.normal(0.0, world.sigma_source, size=img.shape)
        return np.clip(img, 0.0, 1.0)
    if quality == "target":
        # target eyes additionally lose resolution: rendered at half size and
        # brought back up by pixel duplication before the shared degradation
        sharp_half = _render_eye_sharp(gaze, world.eye_size // 2,
                                       world.supersample)
        img = np.repeat(np.repeat(sharp_half, 2, axis=0), 2, axis=1)
        return _degrade(img, world, rng)
    raise ValueError(f"unknown quality {quality!r}")


def face_landmarks(head_pose, face_size=FACE_SIZE):
    """Five landmarks (eye centres, outer corners, nose) as (5, 2) pixels.

    All positions move linearly with the head pose: POSE_SHIFT_PX per radian
    of yaw (x) and pitch (y), plus an opposite vertical split of
    ROLL_SPLIT_PX per radian of roll between the two eyes.
    """
    pitch, yaw, roll = (float(a) for a in head_pose)
    cx = cy = face_size / 2.0
    dx = POSE_SHIFT_PX * yaw
    dy = POSE_SHIFT_PX * pitch
    left_center = (cx - EYE_OFFSET_X + dx, cy + EYE_OFFSET_Y + dy
                   + ROLL_SPLIT_PX * roll)
    right_center = (cx + EYE_OFFSET_X + dx, cy + EYE_OFFSET_Y + dy
                    - ROLL_SPLIT_PX * roll)
    left_corner = (left_center[0] - CORNER_OFFSET, left_center[1])
    right_corner = (right_center[0] + CORNER_OFFSET, right_center[1])
    nose = (cx + dx, cy + NOSE_OFFSET_Y + dy)
    return np.array([left_center, right_center, left_corner, right_corner,
                     nose])


def per_eye_gaze(face_gaze, head_pose):
    """Per-eye gaze: the face gaze plus a fixed linear head-pose coupling."""
    pitch = face_gaze[0] + POSE_GAZE_COUPLING * head_pose[0]
    yaw = face_gaze[1] + POSE_GAZE_COUPLING * head_pose[1]
    return GazeAngles(float(pitch), float(yaw))


def render_face(face_gaze, head_pose, rng, world=None):
    """Degraded face image plus its landmarks and per-eye gaze labels."""
    world = world or WorldConfig()
    face_gaze = GazeAngles(*np.asarray(face_gaze, dtype=float))
    landmarks = face_landmarks(head_pose, world.face_size)
    eye_gaze = per_eye_gaze(face_gaze, head_pose)
    x, y = _pixel_grid(world.face_size, world.supersample)
    img = np.full_like(x, BACKGROUND)
    for center in (landmarks[0], landmarks[1]):
        _draw_eye(x, y, img, center[0], center[1], FACE_EYE_SPAN, eye_gaze)
    nose = landmarks[4]
    mark = ((x - nose[0]) ** 2 + (y - nose[1]) ** 2) <= NOSE_RADIUS ** 2
    img[mark] = NOSE_VALUE
    sharp = _downsample(img, world.supersample)
    degraded = _degrade(sharp, world, rng)
    return degraded, landmarks, np.array([[eye_gaze.pitch, eye_gaze.yaw],
                                          [eye_gaze.pitch, eye_gaze.yaw]])


def crop_eye(face_img, center, size=EYE_SIZE):
    """Axis-aligned crop around a landmark, rounded to the pixel grid."""
    half = size // 2
    cx = int(round(center[0]))
    cy = int(round(center[1]))
    cx = min(max(cx, half), face_img.shape[1] - half)
    cy = min(max(cy, half), face_img.shape[0] - half)
    return face_img[cy - half:cy + half, cx - half:cx + half].copy()


def _draw_gaze(rng, world):
    return np.array([rng.uniform(-world.pitch_range, world.pitch_range),
                     rng.uniform(-world.yaw_range, world.yaw_range)])


def make_source_sample(rng, world):
    gaze = _draw_gaze(rng, world)
    img = render_eye(GazeAngles(*gaze), "source", rng, world)
    return Sample(domain="source", left_eye=img, right_eye=None, face=None,
                  face_gaze=gaze, eye_gaze=np.array([gaze, gaze]),
                  landmarks=None)


def make_target_sample(rng, world):
    gaze = _draw_gaze(rng, world)
    head_pose = rng.uniform(-world.pose_range, world.pose_range, size=3)
    face, landmarks, _ = render_face(gaze, head_pose, rng, world)
    left = crop_eye(face, landmarks[0], world.eye_size)
    right = crop_eye(face, landmarks[1], world.eye_size)
    return Sample(domain="target", left_eye=left, right_eye=right, face=face,
                  face_gaze=gaze, eye_gaze=None, landmarks=landmarks,
                  head_pose=head_pose)


def sample_batch(domain, count, world, batch_index, stream="train"):
    """Deterministic batch of samples: a pure function of its arguments."""
    if count < 1:
        raise ValueError("count must be at least 1")
    if domain not in ("source", "target"):
        raise ValueError(f"unknown domain {domain!r}")
    rng = child_rng(world.seed, f"{stream}-{domain}-batch", batch_index)
    maker = make_source_sample if domain == "source" else make_target_sample
    return [maker(rng, world) for _ in range(count)]


# -- label geometry -----------------------------------------------------------

def gaze_to_vector(angles):
    """Unit 3-vector for (pitch, yaw) angles; supports batched input."""
    angles = np.asarray(angles, dtype=float)
    pitch, yaw = angles[..., 0], angles[..., 1]
    return np.stack([np.cos(pitch) * np.sin(yaw),
                     np.sin(pitch),
                     np.cos(pitch) * np.cos(yaw)], axis=-1)


def angular_error(a, b):
    """Angle in degrees between the gaze vectors of two (pitch, yaw) pairs."""
    va, vb = gaze_to_vector(a), gaze_to_vector(b)
    dots = np.clip(np.sum(va * vb, axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(dots))


# -- array bridging for the model --------------------------------------------

def batch_arrays(samples):
    """Stack a batch of samples into flat model-ready float arrays."""
    out = {
        "left": np.stack([s.left_eye.reshape(-1) for s in samples]),
        "face_gaze": np.stack([s.face_gaze for s in samples]),
    }
    if samples[0].right_eye is not None:
        out["right"] = np.stack([s.right_eye.reshape(-1) for s in samples])
    if samples[0].face is not None:
        out["face"] = np.stack([s.face.reshape(-1) for s in samples])
    if samples[0].eye_gaze is not None:
        out["eye_gaze"] = np.stack([s.eye_gaze[0] for s in samples])
    if samples[0].landmarks is not None:
        out["landmarks"] = np.stack([s.landmarks.reshape(-1) for s in samples])
    return out


def write_pgm(path, img):
    """8-bit binary PGM dump of a [0, 1] grayscale image."""
    data = np.clip(np.asarray(img) * 255.0, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
