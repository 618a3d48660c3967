"""Corpus generation, stratified splitting, chunking and augmentation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsl import GestureScript, MessageId
from .kinematics import ControllerModel, RobotProfile, default_profile, simulate
from .render import EnvCondition, VideoClip, Viewpoint, read_clip, render_clip, write_clip


class TooFewInstances(ValueError):
    """A class cannot provide at least one train and one test clip."""


class IoFailure(OSError):
    """Dataset directory could not be written."""


@dataclass
class ManifestEntry:
    clip_path: str
    message: MessageId
    env: int
    viewpoint: Viewpoint
    split: str
    seed: int

    def to_dict(self) -> dict:
        return {"clip_path": self.clip_path, "message": self.message.name,
                "env": self.env, "viewpoint": self.viewpoint.value,
                "split": self.split, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        return cls(clip_path=d["clip_path"], message=MessageId[d["message"]],
                   env=d["env"], viewpoint=Viewpoint(d["viewpoint"]),
                   split=d["split"], seed=d["seed"])


@dataclass
class DatasetManifest:
    root: Path | None   # None for in-memory manifests without clip files
    fps: float
    resolution: tuple[int, int]
    seed: int
    entries: list[ManifestEntry] = field(default_factory=list)
    stats: dict | None = None   # per-channel mean/std over the training split

    def path_for(self, entry: ManifestEntry) -> Path:
        return self.root / entry.clip_path

    def by_split(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def save(self, path: Path | str | None = None) -> Path:
        path = Path(path) if path else self.root / "manifest.json"
        payload = {"fps": self.fps, "resolution": list(self.resolution),
                   "seed": self.seed, "stats": self.stats,
                   "entries": [e.to_dict() for e in self.entries]}
        path.write_text(json.dumps(payload, indent=1))
        return path

    @classmethod
    def load(cls, path: Path | str) -> "DatasetManifest":
        path = Path(path)
        payload = json.loads(path.read_text())
        return cls(root=path.parent, fps=payload["fps"],
                   resolution=tuple(payload["resolution"]), seed=payload["seed"],
                   stats=payload["stats"],
                   entries=[ManifestEntry.from_dict(d) for d in payload["entries"]])

    def validate(self) -> None:
        paths = [e.clip_path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("duplicate clip paths in manifest")
        for e in self.entries:
            if not self.path_for(e).exists():
                raise IoFailure(f"missing clip file {e.clip_path}")


@dataclass
class Chunk:
    """A fixed-length window of clip frames fed to the network."""

    frames: np.ndarray
    clip_id: str = ""
    start: int = 0
    skip: bool = False


class _DirLock:
    """Crude single-writer lock on a dataset directory during generation."""

    def __init__(self, root: Path):
        self.path = root / ".lock"

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise IoFailure(f"dataset directory locked by another generator: {self.path}")
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def training_controller() -> ControllerModel:
    """Mild controller imperfection so repeated performances differ."""
    return ControllerModel(overshoot_gain=0.15, lag_time_constant=0.08, rate_noise_std=0.02)


def hard_controller() -> ControllerModel:
    """Strong imperfection for the held-out hard condition set."""
    return ControllerModel(overshoot_gain=0.8, lag_time_constant=0.3, rate_noise_std=0.08)


def generate_dataset(library: dict[MessageId, GestureScript],
                     conditions: list[EnvCondition],
                     instances_per_class: int,
                     fps: float,
                     resolution: tuple[int, int],
                     seed: int,
                     out_dir: Path | str,
                     viewpoint: Viewpoint = Viewpoint.HEAD_ON,
                     profile: RobotProfile | None = None) -> DatasetManifest:
    """Render len(library) * len(conditions) * instances clips and a manifest.

    Every clip gets a fresh simulation/render seed derived from the master
    seed, so the whole corpus is reproducible from (inputs, seed).
    """
    if not conditions:
        raise ValueError("need at least one condition")
    out_dir = Path(out_dir)
    clips_dir = out_dir / "clips"
    try:
        clips_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(str(e)) from e
    profile = profile or default_profile(controller=training_controller())
    manifest = DatasetManifest(root=out_dir, fps=fps, resolution=resolution, seed=seed)

    with _DirLock(out_dir):
        seq = np.random.SeedSequence(seed)
        for message in sorted(library):
            script = library[message]
            for cond_idx, env in enumerate(conditions):
                for inst in range(instances_per_class):
                    sim_seed, render_seed = (int(s.generate_state(1)[0]) for s in seq.spawn(2))
                    traj = simulate(script, profile, fps=fps, seed=sim_seed)
                    clip = render_clip(traj, viewpoint, env, res=resolution,
                                       seed=render_seed, label=message)
                    rel = f"clips/{message.name.lower()}_c{env.condition_id:02d}_i{inst}.clip"
                    try:
                        write_clip(clip, out_dir / rel)
                    except OSError as e:
                        raise IoFailure(str(e)) from e
                    manifest.entries.append(ManifestEntry(
                        clip_path=rel, message=message, env=env.condition_id,
                        viewpoint=viewpoint, split="TRAIN", seed=sim_seed))
        manifest.save()
    return manifest


def split(manifest: DatasetManifest, train_fraction: float = 0.73,
          seed: int = 0) -> DatasetManifest:
    """Assign per-class stratified TRAIN/TEST labels and compute train stats.

    The train count targets round(fraction * total): each class contributes
    floor(fraction * n) and the remainder goes to the classes with the
    largest fractional parts (seed breaks ties). Every class keeps at least
    one clip on each side.
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    by_class: dict[MessageId, list[ManifestEntry]] = {}
    for e in manifest.entries:
        by_class.setdefault(e.message, []).append(e)

    for message, group in by_class.items():
        if len(group) < 2:
            raise TooFewInstances(f"{message.name} has {len(group)} clip(s); "
                                  "need at least 2 for a split")

    classes = sorted(by_class)
    target_total = round(train_fraction * len(manifest.entries))
    counts = {}
    remainders = []
    for m in classes:
        n = len(by_class[m])
        base = int(np.floor(train_fraction * n))
        base = min(max(base, 1), n - 1)
        counts[m] = base
        remainders.append(train_fraction * n - base)
    order = np.lexsort((rng.random(len(classes)), -np.asarray(remainders)))
    leftover = target_total - sum(counts.values())
    for idx in order:
        if leftover <= 0:
            break
        m = classes[idx]
        if counts[m] < len(by_class[m]) - 1:
            counts[m] += 1
            leftover -= 1

    for m in classes:
        group = by_class[m]
        picks = rng.permutation(len(group))
        chosen = set(picks[:counts[m]].tolist())
        for i, entry in enumerate(group):
            entry.split = "TRAIN" if i in chosen else "TEST"

    if manifest.root is not None:
        manifest.stats = compute_channel_stats(manifest, "TRAIN")
    return manifest


def compute_channel_stats(manifest: DatasetManifest, split_name: str = "TRAIN") -> dict:
    """Streaming per-channel mean/std over one split's pixels."""
    total = np.zeros(3)
    total_sq = np.zeros(3)
    count = 0
    for entry in manifest.by_split(split_name):
        frames = read_clip(manifest.path_for(entry)).frames.astype(np.float64)
        total += frames.sum(axis=(0, 2, 3))
        total_sq += (frames ** 2).sum(axis=(0, 2, 3))
        count += frames.shape[0] * frames.shape[2] * frames.shape[3]
    if count == 0:
        raise ValueError(f"no clips in split {split_name}")
    mean = total / count
    var = total_sq / count - mean ** 2
    return {"mean": mean.tolist(), "std": np.sqrt(np.maximum(var, 1e-12)).tolist()}


# ---------------------------------------------------------------------------
# chunking and augmentation

def chunk(clip: VideoClip | np.ndarray, t_in: int = 64, skip: bool = False,
          clip_id: str = "") -> list[Chunk]:
    """Slice a clip into consecutive t_in windows (stride t_in).

    The last partial window is padded by repeating the final frame. With
    skip enabled each window keeps only its even-index frames, halving the
    frame count while spanning the same time context.
    """
    frames = clip.frames if isinstance(clip, VideoClip) else clip
    total = frames.shape[0]
    chunks = []
    for start in range(0, max(total, 1), t_in):
        window = frames[start:start + t_in]
        if window.shape[0] == 0:
            break
        if window.shape[0] < t_in:
            pad = np.repeat(window[-1:], t_in - window.shape[0], axis=0)
            window = np.concatenate([window, pad], axis=0)
        if skip:
            window = window[::2]
        chunks.append(Chunk(frames=window, clip_id=clip_id, start=start, skip=skip))
    return chunks


def bilinear_resize(frames: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear resample over the trailing two axes."""
    h, w = frames.shape[-2:]
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return frames.copy()

    def grid(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (src - lo)

    ylo, yhi, yf = grid(h, oh)
    xlo, xhi, xf = grid(w, ow)
    top = frames[..., ylo, :][..., :, xlo] * (1 - xf) + frames[..., ylo, :][..., :, xhi] * xf
    bot = frames[..., yhi, :][..., :, xlo] * (1 - xf) + frames[..., yhi, :][..., :, xhi] * xf
    return top * (1 - yf[:, None]) + bot * yf[:, None]


def standardize(frames: np.ndarray, stats: dict) -> np.ndarray:
    """Per-channel standardization with corpus statistics."""
    mean = np.asarray(stats["mean"], dtype=frames.dtype)[:, None, None]
    std = np.asarray(stats["std"], dtype=frames.dtype)[:, None, None]
    return (frames - mean) / std


AUGMENT_SCALES = (1.0, 0.875, 0.75)


def sample_augment_params(rng: np.random.Generator, in_hw: tuple[int, int]) -> dict:
    """Draw the crop scale, crop offset and flip decision for one chunk."""
    h, w = in_hw
    scale = AUGMENT_SCALES[rng.integers(len(AUGMENT_SCALES))]
    ch, cw = max(1, round(scale * h)), max(1, round(scale * w))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return {"scale": scale, "crop": (ch, cw), "top": top, "left": left,
            "flip": bool(rng.random() < 0.5)}


def augment(chunk_frames: np.ndarray, seed: int, stats: dict,
            out_hw: tuple[int, int]) -> np.ndarray:
    """Training-time transform: multi-scale crop, random flip, standardize."""
    rng = np.random.default_rng(seed)
    params = sample_augment_params(rng, chunk_frames.shape[-2:])
    ch, cw = params["crop"]
    top, left = params["top"], params["left"]
    out = chunk_frames[..., top:top + ch, left:left + cw]
    out = bilinear_resize(out, out_hw)
    if params["flip"]:
        out = out[..., ::-1]
    return standardize(np.ascontiguousarray(out, dtype=np.float32), stats)
