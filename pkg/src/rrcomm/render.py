"""Procedural rasterizer turning trajectories into labeled video clips.

The robot is a 3:2:1 box with a contrasting nose band, drawn with a pinhole
camera and painter's-algorithm quad fill over a procedural water backdrop.
Environmental conditions control backdrop texture, visibility (fog + blur),
robot color, brightness and sensor noise. Everything is deterministic given
the condition and a render seed; the seed drives only pixel noise.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsl import MessageId
from .kinematics import Trajectory, quat_to_matrix

BODY_HALF = np.array([0.45, 0.30, 0.15])  # 3:2:1 box, meters
BODY_LENGTH = 2 * BODY_HALF[0]
NOSE_FRACTION = 0.3      # front band of each side face in marker color
NEAR_PLANE = 0.05
FOV_DEG = 60.0


class DegenerateProjection(Exception):
    """Camera placed inside or behind the subject at frame zero."""


class Viewpoint(enum.Enum):
    """Camera pose relative to the robot's starting attitude.

    HEAD_ON watches the gesture from the side it sweeps across (profile
    view, nose at one image edge), YAW_90 looks straight down the robot's
    nose, PITCH_90 looks down from overhead.
    """

    HEAD_ON = "HEAD_ON"
    YAW_90 = "YAW_90"
    PITCH_90 = "PITCH_90"


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray

    def project(self, points: np.ndarray, res: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        """Pinhole-project world points to pixel coords; also return depths."""
        h, w = res
        d = points - self.position
        x = d @ self.right
        y = d @ self.up
        z = d @ self.forward
        focal = (w / 2.0) / np.tan(np.radians(FOV_DEG) / 2.0)
        safe_z = np.where(np.abs(z) < 1e-9, 1e-9, z)
        px = w / 2.0 + focal * x / safe_z
        py = h / 2.0 - focal * y / safe_z
        return np.stack([px, py], axis=-1), z


def make_camera(viewpoint: Viewpoint, distance: float | None = None) -> Camera:
    """Camera for a canonical viewpoint, default 3 body lengths away."""
    d = distance if distance is not None else 3.0 * BODY_LENGTH
    if viewpoint is Viewpoint.HEAD_ON:
        pos, fwd, up = np.array([0.0, -d, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0])
    elif viewpoint is Viewpoint.YAW_90:
        pos, fwd, up = np.array([d, 0.0, 0.0]), np.array([-1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0])
    else:  # PITCH_90, overhead
        pos, fwd, up = np.array([0.0, 0.0, d]), np.array([0.0, 0.0, -1.0]), np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    return Camera(position=pos, right=right, up=np.cross(right, fwd), forward=fwd)


@dataclass(frozen=True)
class EnvCondition:
    """One environmental preset: backdrop, water clarity, robot paint, sensor noise."""

    condition_id: int
    background_texture: int
    visibility: float
    robot_color: tuple[float, float, float]
    brightness: float
    pixel_noise_std: float

    def __post_init__(self):
        if not 0 <= self.condition_id <= 24:
            raise ValueError("condition_id must be in 0..24")
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must be in [0, 1]")
        if not 0.0 <= self.brightness <= 1.0:
            raise ValueError("brightness must be in [0, 1]")
        if not 0.0 <= self.pixel_noise_std <= 0.1:
            raise ValueError("pixel_noise_std must be in [0, 0.1]")


_PAINTS = [
    (0.95, 0.85, 0.10),  # yellow
    (0.90, 0.45, 0.10),  # orange
    (0.80, 0.15, 0.12),  # red
    (0.75, 0.75, 0.78),  # silver
    (0.15, 0.65, 0.30),  # green
]


def standard_conditions() -> list[EnvCondition]:
    """The fixed table of 25 rendering conditions used for the main corpus."""
    rng = np.random.default_rng(411)
    out = []
    for i in range(25):
        out.append(EnvCondition(
            condition_id=i,
            background_texture=1000 + i,
            visibility=1.0 if i == 0 else float(rng.uniform(0.55, 1.0)),
            robot_color=_PAINTS[i % len(_PAINTS)],
            brightness=1.0 if i == 0 else float(rng.uniform(0.6, 1.0)),
            pixel_noise_std=0.005 if i == 0 else float(rng.uniform(0.005, 0.04)),
        ))
    return out


def hard_conditions(count: int = 10) -> list[EnvCondition]:
    """Harsher held-out conditions: unseen textures, murkier water, more noise."""
    rng = np.random.default_rng(9177)
    out = []
    for i in range(count):
        out.append(EnvCondition(
            condition_id=i,
            background_texture=5000 + i,
            visibility=float(rng.uniform(0.35, 0.6)),
            robot_color=_PAINTS[(i + 2) % len(_PAINTS)],
            brightness=float(rng.uniform(0.45, 0.75)),
            pixel_noise_std=float(rng.uniform(0.05, 0.1)),
        ))
    return out


@dataclass
class VideoClip:
    """Frame tensor T x C x H x W with values in [0, 1]."""

    frames: np.ndarray
    fps: float
    label: MessageId | None = None
    truncated: bool = False

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ValueError("frames must be T x 3 x H x W")
        if self.frames.shape[0] < 1:
            raise ValueError("clip needs at least one frame")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return tuple(self.frames.shape)


# ---------------------------------------------------------------------------
# backdrop and filters

def background(env: EnvCondition, res: tuple[int, int]) -> np.ndarray:
    """Procedural water backdrop (3, H, W) from the condition's texture seed."""
    h, w = res
    rng = np.random.default_rng(env.background_texture)
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    fld = np.zeros((h, w))
    for _ in range(6):
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(1.0, 6.0)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.3, 1.0)
        fld += amp * np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
    fld = (fld - fld.min()) / (np.ptp(fld) + 1e-9)
    deep = np.array([0.02, 0.10, 0.22]) + rng.uniform(-0.01, 0.03, size=3)
    shallow = np.array([0.10, 0.35, 0.45]) + rng.uniform(-0.05, 0.08, size=3)
    img = deep[:, None, None] * (1 - fld) + shallow[:, None, None] * fld
    # light falls off with depth
    img *= (1.15 - 0.3 * yy)[None, :, :]
    return np.clip(img, 0.0, 1.0)


def box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    """Separable box blur with edge clamping; img is (3, H, W)."""
    if radius <= 0:
        return img
    k = 2 * radius + 1
    out = img
    for axis in (1, 2):
        padded = np.pad(out, [(0, 0)] + [(radius, radius) if a == axis else (0, 0)
                                         for a in (1, 2)], mode="edge")
        csum = np.cumsum(padded, axis=axis)
        zero = np.zeros_like(np.take(csum, [0], axis=axis))
        csum = np.concatenate([zero, csum], axis=axis)
        hi = np.take(csum, range(k, csum.shape[axis]), axis=axis)
        lo = np.take(csum, range(0, csum.shape[axis] - k), axis=axis)
        out = (hi - lo) / k
    return out


# ---------------------------------------------------------------------------
# geometry

def _body_quads() -> list[tuple[np.ndarray, bool]]:
    """Body-frame quads as (4, 3) corner arrays with a marker-color flag.

    The +x face and a front band of the four side faces carry the marker
    color, so the nose end reads from any viewpoint.
    """
    hx, hy, hz = BODY_HALF
    xb = hx - NOSE_FRACTION * 2 * hx  # band boundary along the long axis

    def quad(pts):
        return np.array(pts, dtype=float)

    quads: list[tuple[np.ndarray, bool]] = []
    quads.append((quad([(hx, -hy, -hz), (hx, hy, -hz), (hx, hy, hz), (hx, -hy, hz)]), True))
    quads.append((quad([(-hx, -hy, -hz), (-hx, -hy, hz), (-hx, hy, hz), (-hx, hy, -hz)]), False))
    for sign in (+1, -1):
        y = sign * hy
        quads.append((quad([(hx, y, -hz), (hx, y, hz), (xb, y, hz), (xb, y, -hz)]), True))
        quads.append((quad([(xb, y, -hz), (xb, y, hz), (-hx, y, hz), (-hx, y, -hz)]), False))
        z = sign * hz
        quads.append((quad([(hx, -hy, z), (hx, hy, z), (xb, hy, z), (xb, -hy, z)]), True))
        quads.append((quad([(xb, -hy, z), (xb, hy, z), (-hx, hy, z), (-hx, -hy, z)]), False))
    return quads


_QUADS = _body_quads()
_LIGHT = np.array([0.35, -0.25, 0.9]) / np.linalg.norm([0.35, -0.25, 0.9])


def marker_color(robot_color: tuple[float, float, float]) -> np.ndarray:
    """High-contrast nose color for a given body paint."""
    luminance = 0.299 * robot_color[0] + 0.587 * robot_color[1] + 0.114 * robot_color[2]
    return np.array([0.08, 0.08, 0.10]) if luminance > 0.5 else np.array([0.95, 0.92, 0.75])


def nose_center_world(position: np.ndarray, orientation: np.ndarray) -> np.ndarray:
    """World position of the nose face center for a pose."""
    return position + quat_to_matrix(orientation) @ np.array([BODY_HALF[0], 0.0, 0.0])


def _fill_quad(img: np.ndarray, pts: np.ndarray, color: np.ndarray) -> None:
    """Paint a projected convex quad onto (3, H, W) pixel centers."""
    h, w = img.shape[1:]
    x0 = max(int(np.floor(pts[:, 0].min())), 0)
    x1 = min(int(np.ceil(pts[:, 0].max())) + 1, w)
    y0 = max(int(np.floor(pts[:, 1].min())), 0)
    y1 = min(int(np.ceil(pts[:, 1].max())) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    # orient winding so all edge cross-products share sign for interior points
    area = 0.0
    for i in range(4):
        xa, ya = pts[i]
        xb, yb = pts[(i + 1) % 4]
        area += xa * yb - xb * ya
    if area < 0:
        pts = pts[::-1]
    xs = np.arange(x0, x1) + 0.5
    ys = np.arange(y0, y1) + 0.5
    px, py = np.meshgrid(xs, ys)
    inside = np.ones(px.shape, dtype=bool)
    for i in range(4):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % 4]
        inside &= (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0
    if inside.any():
        img[:, y0:y1, x0:x1][:, inside] = color[:, None]


def render_frame(position: np.ndarray, orientation: np.ndarray, camera: Camera,
                 env: EnvCondition, res: tuple[int, int],
                 backdrop: np.ndarray | None = None) -> np.ndarray | None:
    """Rasterize one pose; returns (3, H, W) or None when behind the near plane."""
    if backdrop is None:
        backdrop = background(env, res)
    rot = quat_to_matrix(orientation)
    img = backdrop.copy()

    body = np.array(env.robot_color)
    nose = marker_color(env.robot_color)
    drawn = []
    for corners, is_marker in _QUADS:
        world = position + corners @ rot.T
        pix, depth = camera.project(world, res)
        if depth.min() <= NEAR_PLANE:
            return None
        normal = rot @ np.cross(corners[1] - corners[0], corners[2] - corners[0])
        normal /= np.linalg.norm(normal) + 1e-12
        shade = 0.55 + 0.45 * abs(float(normal @ _LIGHT))
        base = nose if is_marker else body
        drawn.append((float(depth.mean()), pix, np.clip(base * shade, 0, 1)))
    drawn.sort(key=lambda item: -item[0])  # far quads first
    for _, pix, color in drawn:
        _fill_quad(img, pix, color)

    water = backdrop.mean(axis=(1, 2))
    img = env.visibility * img + (1 - env.visibility) * water[:, None, None]
    img = box_blur(img, int(round((1 - env.visibility) * 0.1 * min(res))))
    img = img * env.brightness
    return img


def render_clip(traj: Trajectory, viewpoint: Viewpoint, env: EnvCondition,
                res: tuple[int, int] = (32, 32), seed: int = 0,
                label: MessageId | None = None,
                camera_distance: float | None = None) -> VideoClip:
    """Rasterize every trajectory sample from one viewpoint.

    If the robot crosses the camera's near plane the clip is truncated at
    that frame and flagged, rather than raising; crossing on the very first
    frame raises DegenerateProjection since an empty clip is not a clip.
    """
    h, w = res
    if h < 16 or w < 16:
        raise ValueError("resolution must be at least 16 x 16")
    camera = make_camera(viewpoint, camera_distance)
    backdrop = background(env, res)
    rng = np.random.default_rng(seed)
    frames = []
    truncated = False
    for state in traj.samples:
        img = render_frame(state.position, state.orientation, camera, env, res, backdrop)
        if img is None:
            if not frames:
                raise DegenerateProjection("subject behind camera at first frame")
            truncated = True
            break
        if env.pixel_noise_std > 0:
            img = img + rng.normal(0.0, env.pixel_noise_std, size=img.shape)
        frames.append(np.clip(img, 0.0, 1.0).astype(np.float32))
    return VideoClip(frames=np.stack(frames), fps=traj.fps, label=label, truncated=truncated)


# ---------------------------------------------------------------------------
# clip file I/O: magic "RRCV1", u32 T C H W, u32 fps_milli, u8 label, f32 data

_MAGIC = b"RRCV1"


def write_clip(clip: VideoClip, path: Path | str) -> None:
    t, c, h, w = clip.shape
    label = 255 if clip.label is None else int(clip.label)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIII", t, c, h, w, int(round(clip.fps * 1000))))
        fh.write(struct.pack("<B", label))
        fh.write(np.ascontiguousarray(clip.frames, dtype="<f4").tobytes())


def read_clip(path: Path | str) -> VideoClip:
    with open(path, "rb") as fh:
        magic = fh.read(5)
        if magic != _MAGIC:
            raise ValueError(f"not a clip file: bad magic {magic!r}")
        t, c, h, w, fps_milli = struct.unpack("<IIIII", fh.read(20))
        (label_code,) = struct.unpack("<B", fh.read(1))
        data = np.frombuffer(fh.read(4 * t * c * h * w), dtype="<f4")
    if data.size != t * c * h * w:
        raise ValueError("clip file truncated")
    frames = data.reshape(t, c, h, w).copy()
    label = None if label_code == 255 else MessageId(label_code)
    return VideoClip(frames=frames, fps=fps_milli / 1000.0, label=label)
