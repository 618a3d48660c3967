"""Adaptive-moment optimizer with decoupled weight decay, plus checkpoints.

The decay term is applied straight to the parameters, never through the
gradient moments, and the learning rate steps down by a fixed factor on a
fixed epoch interval.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nn import Tensor


class AdamW:
    """Per-parameter moment tracking over a named parameter dict.

    Tensors with requires_grad False (e.g. baked normalization stats) are
    left untouched.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01, decay_factor: float = 0.1,
                 decay_every: int = 80):
        self.params = params
        self.base_lr = lr
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_factor = decay_factor
        self.decay_every = decay_every
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items() if t.requires_grad}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items() if t.requires_grad}

    def set_epoch(self, epoch: int) -> None:
        """Step-decay schedule: lr = base * factor ** (epoch // interval)."""
        self.lr = self.base_lr * self.decay_factor ** (epoch // self.decay_every)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, t in self.params.items():
            if not t.requires_grad:
                continue
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            m_hat = m / bias1
            v_hat = v / bias2
            t.data = t.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay > 0:
                t.data = t.data - self.lr * self.weight_decay * t.data


# ---------------------------------------------------------------------------
# checkpoint archive: magic "RRCK1", u32 count, then per parameter
# u32 name_len + utf8 name, u32 rank, u32 dims..., little-endian f32 data

_MAGIC = b"RRCK1"


def save_params(params: dict[str, Tensor], path: Path | str) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            data = np.ascontiguousarray(params[name].data, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_arrays(path: Path | str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(5) != _MAGIC:
            raise ValueError("not a checkpoint file")
        (count,) = struct.unpack("<I", fh.read(4))
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            size = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(fh.read(4 * size), dtype="<f4")
            out[name] = data.reshape(dims).copy()
    return out
