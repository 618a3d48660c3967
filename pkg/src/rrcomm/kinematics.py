"""Rigid-body execution of gesture scripts.

World frame: x forward, y left, z up. Body frame matches at the start.
Positive command senses: roll = right side down, pitch = nose up,
yaw = nose left, surge = forward, heave = up. A script's percentage
commands are scaled by the profile's maximum rates, passed through the
controller-imperfection model, and integrated with a quaternion
exponential-map update. Integration substeps are split at segment
boundaries so piecewise-constant commands are integrated exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsl import GestureScript

_IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


# ---------------------------------------------------------------------------
# quaternion helpers (w, x, y, z convention)

def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("cannot normalize zero quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_rotvec(phi: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle) to unit quaternion."""
    angle = np.linalg.norm(phi)
    if angle < 1e-12:
        # second-order small-angle expansion
        return quat_normalize(np.array([1.0 - angle * angle / 8.0,
                                        0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2]]))
    axis = phi / angle
    half = 0.5 * angle
    s = math.sin(half)
    return np.array([math.cos(half), s * axis[0], s * axis[1], s * axis[2]])


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Logarithm map: unit quaternion to rotation vector."""
    q = quat_normalize(q)
    if q[0] < 0:
        q = -q
    v = q[1:]
    s = np.linalg.norm(v)
    if s < 1e-12:
        return 2.0 * v
    angle = 2.0 * math.atan2(s, q[0])
    return angle * v / s


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def integrate_orientation(q: np.ndarray, body_rates: np.ndarray, dt: float) -> np.ndarray:
    """Advance a unit quaternion by body-frame angular velocity over dt."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    dq = quat_from_rotvec(np.asarray(body_rates, dtype=float) * dt)
    return quat_normalize(quat_mul(q, dq))


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class ControllerModel:
    """Imperfection knobs for the rate controller.

    A first-order lag state tracks each commanded rate; the achieved rate is
    the command plus ``overshoot_gain`` times the lag deficit, plus Gaussian
    noise. All-zero values reproduce the ideal controller, and any positive
    gain with a positive time constant makes step responses overshoot the
    commanded angle before settling back.
    """

    overshoot_gain: float = 0.0
    lag_time_constant: float = 0.0
    rate_noise_std: float = 0.0

    def __post_init__(self):
        if self.overshoot_gain < 0 or self.lag_time_constant < 0 or self.rate_noise_std < 0:
            raise ValueError("controller parameters must be >= 0")

    @property
    def is_ideal(self) -> bool:
        return self.overshoot_gain == 0 and self.rate_noise_std == 0


@dataclass(frozen=True)
class RobotProfile:
    """Maximum axis rates mapping script percentages to physical commands."""

    max_roll_rate: float
    max_pitch_rate: float
    max_yaw_rate: float
    max_surge: float
    max_heave: float
    controller: ControllerModel = field(default_factory=ControllerModel)

    def __post_init__(self):
        for name in ("max_roll_rate", "max_pitch_rate", "max_yaw_rate",
                     "max_surge", "max_heave"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    def to_json(self) -> str:
        data = {
            "max_roll_rate": self.max_roll_rate,
            "max_pitch_rate": self.max_pitch_rate,
            "max_yaw_rate": self.max_yaw_rate,
            "max_surge": self.max_surge,
            "max_heave": self.max_heave,
            "controller": {
                "overshoot_gain": self.controller.overshoot_gain,
                "lag_time_constant": self.controller.lag_time_constant,
                "rate_noise_std": self.controller.rate_noise_std,
            },
        }
        return json.dumps(data, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RobotProfile":
        data = json.loads(text)
        ctrl = ControllerModel(**data.pop("controller", {}))
        return cls(controller=ctrl, **data)


def default_profile(controller: ControllerModel | None = None) -> RobotProfile:
    """Rate limits calibrated so the bundled scripts hit their nominal durations.

    Yaw tops out at 2*pi/3 rad/s so a full-speed 6 s spin covers exactly two
    revolutions; roll is fast (the robot flips quickly about its long axis)
    while translation is slow, keeping gestures inside a close camera frame.
    """
    return RobotProfile(
        max_roll_rate=4.0,
        max_pitch_rate=1.2,
        max_yaw_rate=2.0 * math.pi / 3.0,
        max_surge=0.4,
        max_heave=0.25,
        controller=controller or ControllerModel(),
    )


@dataclass
class BodyState:
    """Pose and commanded rates at one sample instant."""

    position: np.ndarray          # world xyz, meters
    orientation: np.ndarray       # unit quaternion wxyz
    commanded_rates: np.ndarray   # roll, pitch, yaw (rad/s), surge, heave (m/s)


@dataclass
class Trajectory:
    """Uniformly sampled pose sequence at ``fps`` samples per second."""

    fps: float
    samples: list[BodyState]

    def __post_init__(self):
        if not self.samples:
            raise ValueError("trajectory must have at least one sample")

    def __len__(self) -> int:
        return len(self.samples)

    def positions(self) -> np.ndarray:
        return np.stack([s.position for s in self.samples])

    def orientations(self) -> np.ndarray:
        return np.stack([s.orientation for s in self.samples])

    def to_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "px", "py", "pz", "qw", "qx", "qy", "qz"])
            for k, s in enumerate(self.samples):
                writer.writerow([k / self.fps, *s.position, *s.orientation])

    @classmethod
    def from_csv(cls, path: Path | str, fps: float) -> "Trajectory":
        samples = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                samples.append(BodyState(
                    position=np.array([float(row["px"]), float(row["py"]), float(row["pz"])]),
                    orientation=np.array([float(row["qw"]), float(row["qx"]),
                                          float(row["qy"]), float(row["qz"])]),
                    commanded_rates=np.zeros(5),
                ))
        return cls(fps=fps, samples=samples)


def accumulated_rotation(traj: Trajectory) -> np.ndarray:
    """Sum of per-step body-frame rotation vectors.

    For motion about a fixed body axis this is the exact net angle on that
    axis (e.g. total yaw for a flat spin), which a final quaternion alone
    cannot reveal past half a turn.
    """
    total = np.zeros(3)
    qs = traj.orientations()
    for k in range(len(qs) - 1):
        rel = quat_mul(quat_conjugate(qs[k]), qs[k + 1])
        total += quat_to_rotvec(rel)
    return total


# ---------------------------------------------------------------------------
# simulation

def _segment_rates(script: GestureScript, profile: RobotProfile) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment commanded rates (5 channels) and segment end times."""
    rates = np.array([
        [seg.roll_pct / 100.0 * profile.max_roll_rate,
         seg.pitch_pct / 100.0 * profile.max_pitch_rate,
         seg.yaw_pct / 100.0 * profile.max_yaw_rate,
         seg.surge_pct / 100.0 * profile.max_surge,
         seg.heave_pct / 100.0 * profile.max_heave]
        for seg in script.segments
    ])
    ends = np.cumsum([seg.duration for seg in script.segments])
    return rates, ends


def simulate(script: GestureScript, profile: RobotProfile, fps: float,
             seed: int = 0) -> Trajectory:
    """Execute a script as a trajectory sampled at ``fps``.

    Sample count is floor(total_duration * fps) + 1. Deterministic for a
    given (script, profile, fps, seed); the seed only feeds controller noise.
    """
    if not fps > 0:
        raise ValueError("fps must be > 0")
    rates, ends = _segment_rates(script, profile)
    duration = float(ends[-1])
    n_steps = int(math.floor(duration * fps + 1e-9))
    rng = np.random.default_rng(seed)
    ctrl = profile.controller

    position = np.zeros(3)
    q = _IDENTITY_QUAT.copy()
    lag = np.zeros(5)

    def command_at(t: float) -> np.ndarray:
        idx = int(np.searchsorted(ends, t, side="right"))
        return rates[min(idx, len(rates) - 1)]

    def substeps(t0: float, t1: float):
        # split [t0, t1) at segment boundaries
        cuts = [t0] + [float(e) for e in ends if t0 < e < t1 - 1e-12] + [t1]
        for a, b in zip(cuts[:-1], cuts[1:]):
            yield a, b - a

    samples = [BodyState(position=position.copy(), orientation=q.copy(),
                         commanded_rates=command_at(0.0).copy())]
    for k in range(n_steps):
        t0, t1 = k / fps, (k + 1) / fps
        for t, dt in substeps(t0, t1):
            cmd = command_at(t)
            if ctrl.lag_time_constant > 0:
                alpha = min(1.0, dt / ctrl.lag_time_constant)
                lag = lag + alpha * (cmd - lag)
            else:
                lag = cmd.copy()
            achieved = cmd + ctrl.overshoot_gain * (cmd - lag)
            if ctrl.rate_noise_std > 0:
                achieved = achieved + rng.normal(0.0, ctrl.rate_noise_std, size=5)
            # command senses to body angular velocity: pitch-up is a negative
            # rotation about the leftward y axis
            omega = np.array([achieved[0], -achieved[1], achieved[2]])
            v_body = np.array([achieved[3], 0.0, achieved[4]])
            position = position + quat_to_matrix(q) @ v_body * dt
            q = integrate_orientation(q, omega, dt)
        samples.append(BodyState(position=position.copy(), orientation=q.copy(),
                                 commanded_rates=command_at(min(t1, duration)).copy()))
    return Trajectory(fps=fps, samples=samples)
