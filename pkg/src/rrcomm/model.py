"""The gesture recognition network and its training loop.

A strided spatio-temporal conv stack encodes a frame chunk, spatial mean
pooling and per-step channel standardization flatten it to a T' x C'
sequence, and a single multi-head self-attention block with a prepended
classification embedding, learnable location embeddings, random key masking
(training only) and a position-wise feed-forward network produces the
feature the linear classifier reads. The skip variant consumes the
even-index frames of the same chunk, halving the temporal input.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import nn
from .dataset import DatasetManifest, augment, bilinear_resize, standardize
from .nn import Tensor
from .optim import AdamW, load_arrays, save_params
from .render import read_clip


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and training hyperparameters.

    Defaults are the desk-scale preset; ``full_scale()`` is the full-size
    preset (64-frame 112x112 chunks, 512-wide features).
    """

    frames: int = 16                 # chunk length T before any skipping
    skip: bool = False               # halve temporal input (even-index frames)
    height: int = 32
    width: int = 32
    channels: int = 3
    encoder_channels: tuple[int, ...] = (16, 32, 64)
    temporal_strides: tuple[int, ...] = (2, 2, 1)
    spatial_strides: tuple[int, ...] = (2, 2, 2)
    kernel: int = 3
    heads: int = 4
    pffn_hidden: int = 256
    n_classes: int = 15
    mask_rate: float = 0.10
    dropout: float = 0.1
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 0.01
    epochs: int = 60
    lr_decay: float = 0.1
    lr_decay_every: int = 80

    def __post_init__(self):
        if not 0.0 <= self.mask_rate < 1.0:
            raise ValueError("mask_rate must be in [0, 1)")
        if self.d_k * self.heads > self.d_model:
            raise ValueError("d_k * heads must not exceed d_model")
        if len(self.encoder_channels) != len(self.temporal_strides) or \
           len(self.encoder_channels) != len(self.spatial_strides):
            raise ValueError("encoder widths and strides must align")

    @property
    def d_model(self) -> int:
        return self.encoder_channels[-1]

    @property
    def d_k(self) -> int:
        return self.d_model // self.heads

    @property
    def input_frames(self) -> int:
        return self.frames // 2 if self.skip else self.frames

    @staticmethod
    def _conv_out(n: int, kernel: int, stride: int) -> int:
        return (n + 2 * (kernel // 2) - kernel) // stride + 1

    @property
    def t_prime(self) -> int:
        t = self.input_frames
        for s in self.temporal_strides:
            t = self._conv_out(t, self.kernel, s)
        return t

    @property
    def seq_len(self) -> int:
        return self.t_prime + 1  # classification slot + time steps

    @property
    def masked_locations(self) -> int:
        return int(math.floor(self.mask_rate * self.seq_len))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        data = json.loads(text)
        for key in ("encoder_channels", "temporal_strides", "spatial_strides"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    @classmethod
    def full_scale(cls) -> "ModelConfig":
        """Full-size preset: 64-frame 112x112 chunks, d_model 512, d_k 128."""
        return cls(frames=64, height=112, width=112,
                   encoder_channels=(64, 128, 512), temporal_strides=(2, 2, 1),
                   spatial_strides=(2, 2, 2), pffn_hidden=2048, epochs=200)


@dataclass
class AttentionTrace:
    """Raw scores, normalized weights, per-head outputs and mask locations."""

    a_self: np.ndarray        # (heads, S, S) pre-softmax scores
    a_weights: np.ndarray     # (heads, S, S) softmax weights, post-masking
    A_self: np.ndarray        # (heads, S, d_k) weighted value sums
    mask_indices: np.ndarray  # key locations zeroed this pass (empty in eval)


def init_params(config: ModelConfig, seed: int = 0,
                dtype=np.float32) -> dict[str, Tensor]:
    """Fresh parameter dict. Embeddings start at N(0, 0.02^2)."""
    rng = np.random.default_rng(seed)

    def tensor(arr, trainable=True):
        return Tensor(arr.astype(dtype), requires_grad=trainable)

    params: dict[str, Tensor] = {}
    c_in = config.channels
    k = config.kernel
    for i, c_out in enumerate(config.encoder_channels):
        fan_in = c_in * k ** 3
        params[f"enc{i}.kernel"] = tensor(
            rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k, k)))
        params[f"enc{i}.bias"] = tensor(np.zeros(c_out))
        c_in = c_out
    d, dk = config.d_model, config.d_k
    for h in range(config.heads):
        for name in ("wq", "wk", "wv"):
            params[f"attn.h{h}.{name}"] = tensor(
                rng.normal(0.0, math.sqrt(1.0 / d), size=(d, dk)))
    params["pffn.w1"] = tensor(rng.normal(0.0, math.sqrt(1.0 / d),
                                          size=(d, config.pffn_hidden)))
    params["pffn.b1"] = tensor(np.zeros(config.pffn_hidden))
    params["pffn.w2"] = tensor(rng.normal(0.0, math.sqrt(1.0 / config.pffn_hidden),
                                          size=(config.pffn_hidden, d)))
    params["pffn.b2"] = tensor(np.zeros(d))
    params["embed.cls"] = tensor(rng.normal(0.0, 0.02, size=(d,)))
    params["embed.loc"] = tensor(rng.normal(0.0, 0.02, size=(config.seq_len, d)))
    params["head.w"] = tensor(rng.normal(0.0, math.sqrt(1.0 / d),
                                         size=(d, config.n_classes)))
    params["norm.mean"] = tensor(np.zeros(3), trainable=False)
    params["norm.std"] = tensor(np.ones(3), trainable=False)
    return params


def save_checkpoint(params: dict[str, Tensor], config: ModelConfig,
                    directory: Path | str, name: str = "best") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.ckpt"
    save_params(params, path)
    (directory / "config.json").write_text(config.to_json())
    return path


def load_checkpoint(path: Path | str) -> tuple[dict[str, Tensor], ModelConfig]:
    path = Path(path)
    arrays = load_arrays(path)
    config = ModelConfig.from_json((path.parent / "config.json").read_text())
    params = {name: Tensor(arr, requires_grad=not name.startswith("norm."))
              for name, arr in arrays.items()}
    return params, config


# ---------------------------------------------------------------------------
# forward pieces

def encode(chunk: np.ndarray, params: dict[str, Tensor], config: ModelConfig) -> Tensor:
    """Conv-encode a (T, C, h, w) chunk into a (T', d_model) feature sequence.

    Spatial information is mean-pooled away and each time step is
    standardized across channels (eps 1e-5), de-emphasizing backdrop and
    paint in favor of motion.
    """
    t, c, h, w = chunk.shape
    if t != config.input_frames or c != config.channels or \
            (h, w) != (config.height, config.width):
        raise nn.ShapeMismatch(
            f"chunk {chunk.shape} does not match config "
            f"({config.input_frames}, {config.channels}, {config.height}, {config.width})")
    x = Tensor(np.ascontiguousarray(chunk.transpose(1, 0, 2, 3)))
    for i in range(len(config.encoder_channels)):
        x = nn.conv3d(x, params[f"enc{i}.kernel"], params[f"enc{i}.bias"],
                      stride=(config.temporal_strides[i],
                              config.spatial_strides[i], config.spatial_strides[i]),
                      pad_mode="edge")
        x = nn.leaky_relu(x)
    pooled = nn.mean_pool(x, axes=(2, 3))          # (C', T')
    seq = pooled.transpose(1, 0)                   # (T', C')
    return nn.channel_standardize(seq, axis=1, eps=1e-5)


def attend(features: Tensor | np.ndarray, params: dict[str, Tensor],
           config: ModelConfig, train_mode: bool = False,
           rng: np.random.Generator | None = None) -> tuple[Tensor, AttentionTrace]:
    """Multi-head self-attention over the class-slot-prefixed sequence.

    Returns the residual sum of the input sequence and the concatenated
    head outputs, plus a trace of scores/weights. In training mode,
    floor(mask_rate * S) key locations are zeroed after the softmax with no
    renormalization.
    """
    features = features if isinstance(features, Tensor) else Tensor(features)
    if train_mode and rng is None:
        raise ValueError("training mode needs an rng")
    loc = params["embed.loc"]
    s = features.shape[0] + 1
    if loc.shape[0] != s:
        raise nn.ShapeMismatch(f"sequence length {s} vs location table {loc.shape[0]}")
    cls_row = params["embed.cls"].reshape(1, -1)
    seq = nn.embedding_add(nn.concat([cls_row, features], axis=0), loc)

    n_mask = int(math.floor(config.mask_rate * s)) if train_mode else 0
    if n_mask > 0:
        mask_indices = np.sort(rng.choice(s, size=n_mask, replace=False))
        column_mask = np.ones((1, s), dtype=seq.data.dtype)
        column_mask[0, mask_indices] = 0.0
    else:
        mask_indices = np.empty(0, dtype=int)
        column_mask = None

    scale = 1.0 / math.sqrt(config.d_k)
    raw_scores, weights, head_outs = [], [], []
    for h in range(config.heads):
        q = seq @ params[f"attn.h{h}.wq"]
        k = seq @ params[f"attn.h{h}.wk"]
        v = seq @ params[f"attn.h{h}.wv"]
        scores = (q @ k.transpose(1, 0)) * scale
        w = nn.softmax(scores, axis=1)
        if column_mask is not None:
            w = w * Tensor(column_mask)
        raw_scores.append(scores.detach())
        weights.append(w.detach())
        head_outs.append(w @ v)
    attended = nn.concat(head_outs, axis=1)
    if train_mode and config.dropout > 0:
        attended = nn.dropout(attended, config.dropout, rng)
    out = seq + attended
    trace = AttentionTrace(
        a_self=np.stack(raw_scores),
        a_weights=np.stack(weights),
        A_self=np.stack([h.detach() for h in head_outs]),
        mask_indices=mask_indices,
    )
    return out, trace


def pffn(x: Tensor | np.ndarray, params: dict[str, Tensor]) -> Tensor:
    """Position-wise feed-forward: relu(x W1 + b1) W2 + b2."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    hidden = nn.relu(x @ params["pffn.w1"] + params["pffn.b1"])
    return hidden @ params["pffn.w2"] + params["pffn.b2"]


def forward(chunk: np.ndarray, params: dict[str, Tensor], config: ModelConfig,
            train_mode: bool = False, seed: int = 0) -> Tensor:
    """Class logits (length n_classes) for one preprocessed chunk."""
    logits, _ = forward_with_trace(chunk, params, config, train_mode, seed)
    return logits


def forward_with_trace(chunk: np.ndarray, params: dict[str, Tensor],
                       config: ModelConfig, train_mode: bool = False,
                       seed: int = 0) -> tuple[Tensor, AttentionTrace]:
    rng = np.random.default_rng(seed)
    features = encode(chunk, params, config)
    attended, trace = attend(features, params, config, train_mode, rng)
    ffn_out = pffn(attended, params)
    if train_mode and config.dropout > 0:
        ffn_out = nn.dropout(ffn_out, config.dropout, rng)
    final = attended + ffn_out
    logits = final[0] @ params["head.w"]
    return logits, trace


# ---------------------------------------------------------------------------
# training

class TrainingError(RuntimeError):
    pass


def _load_clip_cache(manifest: DatasetManifest,
                     entries) -> dict[str, np.ndarray]:
    return {e.clip_path: read_clip(manifest.path_for(e)).frames for e in entries}


def sample_training_window(frames: np.ndarray, t_in: int,
                           rng: np.random.Generator | None) -> np.ndarray:
    """A t_in-frame window, padded if the clip is short.

    With an rng the start is jittered (temporal augmentation); without one
    the window starts at frame zero.
    """
    total = frames.shape[0]
    if total >= t_in:
        start = int(rng.integers(0, total - t_in + 1)) if rng is not None else 0
        return frames[start:start + t_in]
    pad = np.repeat(frames[-1:], t_in - total, axis=0)
    return np.concatenate([frames, pad], axis=0)


def _validation_logits(frames: np.ndarray, params: dict[str, Tensor],
                       config: ModelConfig) -> np.ndarray:
    """Mean center-crop logits over consecutive chunks of a standardized clip."""
    from .dataset import chunk as make_chunks
    logits = np.zeros(config.n_classes)
    chunks = make_chunks(frames, t_in=config.frames, skip=config.skip)
    for ch in chunks:
        window = _center_crop(ch.frames, (config.height, config.width))
        logits += forward(window, params, config).data
    return logits / len(chunks)


def _center_crop(frames: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    h, w = frames.shape[-2:]
    oh, ow = out_hw
    if (h, w) == (oh, ow):
        return frames
    if h < oh or w < ow:
        return bilinear_resize(frames, out_hw)
    top, left = (h - oh) // 2, (w - ow) // 2
    return frames[..., top:top + oh, left:left + ow]


def train(manifest: DatasetManifest, config: ModelConfig, seed: int = 0,
          out_dir: Path | str | None = None, augment_data: bool = True,
          log=None) -> tuple[dict[str, Tensor], list[dict]]:
    """Train on the manifest's TRAIN split, validating on its TEST split.

    Returns the parameters with the best validation top-1 accuracy and the
    per-epoch history (loss, top1, top3, lr). A checkpoint is written on
    every improvement when out_dir is given. Deterministic for a given seed.
    """
    train_entries = manifest.by_split("TRAIN")
    val_entries = manifest.by_split("TEST")
    if not train_entries:
        raise TrainingError("manifest has no TRAIN entries")
    labels = {e.clip_path: int(e.message) for e in manifest.entries}
    if max(labels[e.clip_path] for e in train_entries) >= config.n_classes:
        raise TrainingError("a label exceeds the configured class count")
    stats = manifest.stats or {"mean": [0.0, 0.0, 0.0], "std": [1.0, 1.0, 1.0]}

    params = init_params(config, seed=seed)
    params["norm.mean"].data = np.asarray(stats["mean"], dtype=np.float32)
    params["norm.std"].data = np.asarray(stats["std"], dtype=np.float32)
    opt = AdamW(params, lr=config.lr, weight_decay=config.weight_decay,
                decay_factor=config.lr_decay, decay_every=config.lr_decay_every)

    cache = _load_clip_cache(manifest, manifest.entries)
    master = np.random.SeedSequence(seed)
    epoch_seeds = master.spawn(config.epochs)
    history: list[dict] = []
    best_top1 = -1.0
    best_params: dict[str, Tensor] | None = None
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "history.jsonl").unlink(missing_ok=True)

    for epoch in range(config.epochs):
        opt.set_epoch(epoch)
        rng = np.random.default_rng(epoch_seeds[epoch])
        order = rng.permutation(len(train_entries))
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, len(order), config.batch_size):
            batch = [train_entries[i] for i in order[lo:lo + config.batch_size]]
            opt.zero_grad()
            loss = None
            for entry in batch:
                frames = cache[entry.clip_path]
                window = sample_training_window(frames, config.frames,
                                                rng if augment_data else None)
                if config.skip:
                    window = window[::2]
                if augment_data:
                    window = augment(window, int(rng.integers(2 ** 31)), stats,
                                     (config.height, config.width))
                else:
                    window = standardize(
                        _center_crop(window, (config.height, config.width)), stats)
                logits = forward(window, params, config, train_mode=True,
                                 seed=int(rng.integers(2 ** 31)))
                ce = nn.cross_entropy(logits, labels[entry.clip_path])
                loss = ce if loss is None else loss + ce
            loss = loss * (1.0 / len(batch))
            nn.backward(loss)
            opt.step()
            epoch_loss += float(loss.data)
            n_batches += 1

        top1, top3 = _validate(val_entries, cache, labels, stats, params, config)
        record = {"epoch": epoch, "loss": epoch_loss / max(n_batches, 1),
                  "top1": top1, "top3": top3, "lr": opt.lr}
        history.append(record)
        if log:
            log(record)
        if out_dir is not None:
            _append_history(Path(out_dir), record)
        if top1 > best_top1:
            best_top1 = top1
            best_params = {k: Tensor(t.data.copy(), requires_grad=t.requires_grad)
                           for k, t in params.items()}
            if out_dir is not None:
                save_checkpoint(params, config, out_dir, name="best")
    return best_params or params, history


def _validate(entries, cache, labels, stats, params, config) -> tuple[float, float]:
    if not entries:
        return 0.0, 0.0
    top1 = top3 = 0
    for entry in entries:
        frames = standardize(cache[entry.clip_path], stats)
        logits = _validation_logits(frames, params, config)
        ranked = np.argsort(logits)[::-1]
        label = labels[entry.clip_path]
        top1 += int(ranked[0] == label)
        top3 += int(label in ranked[:3])
    return top1 / len(entries), top3 / len(entries)


def _append_history(out_dir: Path, record: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "history.jsonl", "a") as fh:
        fh.write(json.dumps(record) + "\n")
