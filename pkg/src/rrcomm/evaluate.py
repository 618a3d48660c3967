"""Test-time prediction protocol, metrics and model comparison.

A clip is chunked, each chunk is expanded into ten crops (four corners, the
center, and the horizontal mirror of each), logits are averaged per crop
slot over chunks and then across crops, and class probabilities come from a
softmax over the averaged logits. Metrics are per-message recognition
accuracy, mean softmax probability on correct predictions, and wall-clock
inference time.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import DatasetManifest, chunk as make_chunks, standardize
from .dsl import MessageId
from .model import ModelConfig, forward
from .nn import Tensor
from .render import VideoClip, read_clip

#: Reference benchmark accuracy (percent, simulated / real footage) kept for
#: context in generated reports; not recomputed here.
REFERENCE_ACCURACY = {
    "slow_fast": {"simulated": 74.67, "real": 64.29},
    "late_temporal_3d_bert": {"simulated": 94.67, "real": 71.42},
    "full": {"simulated": 94.67, "real": 83.33},
    "skip": {"simulated": 88.00, "real": 73.81},
}

#: Reference overall recognition probability (percent) and per-prediction
#: inference time (seconds) for the full and skip variants.
REFERENCE_TRADEOFF = {
    "full": {"probability": 78.97, "time_s": 1.45},
    "skip": {"probability": 78.88, "time_s": 0.80},
}


class CropTooLarge(ValueError):
    """Requested crop exceeds the frame dimensions."""


class EmptyTestSet(ValueError):
    """Manifest has no entries in the requested split."""


class MismatchedTestSets(ValueError):
    """Reports being compared do not cover the same test set."""


def ten_crop(frames: np.ndarray, crop_hw: tuple[int, int]) -> list[np.ndarray]:
    """Corner/center crops plus their horizontal mirrors, in fixed order.

    Order: top-left, top-right, bottom-left, bottom-right, center, then the
    same five positions on the horizontally flipped frames.
    """
    h, w = frames.shape[-2:]
    ch, cw = crop_hw
    if ch > h or cw > w:
        raise CropTooLarge(f"crop {crop_hw} exceeds frame {(h, w)}")
    offsets = [(0, 0), (0, w - cw), (h - ch, 0), (h - ch, w - cw),
               ((h - ch) // 2, (w - cw) // 2)]
    crops = [frames[..., top:top + ch, left:left + cw] for top, left in offsets]
    flipped = frames[..., ::-1]
    crops += [flipped[..., top:top + ch, left:left + cw] for top, left in offsets]
    return crops


def crop_offsets(full_hw: tuple[int, int], crop_hw: tuple[int, int]) -> list[tuple[int, int]]:
    """(row, col) offsets of the five unflipped crops."""
    h, w = full_hw
    ch, cw = crop_hw
    return [(0, 0), (0, w - cw), (h - ch, 0), (h - ch, w - cw),
            ((h - ch) // 2, (w - cw) // 2)]


@dataclass
class PredictionResult:
    x_preds: np.ndarray          # (10, N) per-crop logits, chunk-averaged
    x_mean: np.ndarray           # (N,) logits averaged across crops
    probabilities: np.ndarray    # (N,) softmax of x_mean
    predicted: MessageId
    inference_time: float


def class_probabilities(x_mean: np.ndarray) -> np.ndarray:
    """Softmax over averaged logits."""
    shifted = x_mean - x_mean.max()
    e = np.exp(shifted)
    return e / e.sum()


def predict(clip: VideoClip | np.ndarray, params: dict[str, Tensor],
            config: ModelConfig) -> PredictionResult:
    """Ten-crop, chunk-averaged prediction for one clip."""
    start = time.perf_counter()
    frames = clip.frames if isinstance(clip, VideoClip) else clip
    stats = {"mean": params["norm.mean"].data, "std": params["norm.std"].data}
    frames = standardize(frames.astype(np.float32), stats)
    chunks = make_chunks(frames, t_in=config.frames, skip=config.skip)
    x_preds = np.zeros((10, config.n_classes))
    for ch in chunks:
        for i, crop in enumerate(ten_crop(ch.frames, (config.height, config.width))):
            logits = forward(np.ascontiguousarray(crop), params, config)
            x_preds[i] += logits.data
    x_preds /= len(chunks)
    x_mean = x_preds.mean(axis=0)
    probabilities = class_probabilities(x_mean)
    predicted = MessageId(int(np.argmax(probabilities))) if config.n_classes == 15 \
        else int(np.argmax(probabilities))
    return PredictionResult(x_preds=x_preds, x_mean=x_mean,
                            probabilities=probabilities, predicted=predicted,
                            inference_time=time.perf_counter() - start)


@dataclass
class MetricsReport:
    class_names: list[str]
    test_counts: dict[str, int]
    per_class_accuracy: dict[str, float]
    per_class_probability: dict[str, float | None]
    per_class_time: dict[str, float]
    overall_accuracy: float
    overall_probability: float | None
    overall_time: float
    confusion: np.ndarray        # rows = truth, columns = prediction

    def to_dict(self) -> dict:
        return {
            "class_names": self.class_names,
            "test_counts": self.test_counts,
            "per_class_accuracy": self.per_class_accuracy,
            "per_class_probability": self.per_class_probability,
            "per_class_time": self.per_class_time,
            "overall_accuracy": self.overall_accuracy,
            "overall_probability": self.overall_probability,
            "overall_time": self.overall_time,
            "confusion": self.confusion.tolist(),
            "reference_accuracy_pct": REFERENCE_ACCURACY,
        }

    def save_json(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    def save_confusion_csv(self, path: Path | str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["truth\\prediction"] + self.class_names)
            for i, name in enumerate(self.class_names):
                writer.writerow([name] + self.confusion[i].tolist())


def evaluate(manifest: DatasetManifest, params: dict[str, Tensor],
             config: ModelConfig, split: str = "TEST") -> MetricsReport:
    """Run the prediction protocol over a split and aggregate the metrics."""
    entries = manifest.by_split(split)
    if not entries:
        raise EmptyTestSet(f"no {split} entries in manifest")
    n = config.n_classes
    confusion = np.zeros((n, n), dtype=int)
    probs: dict[int, list[float]] = {}
    times: dict[int, list[float]] = {}
    for entry in entries:
        clip = read_clip(manifest.path_for(entry))
        result = predict(clip, params, config)
        truth = int(entry.message)
        pred = int(result.predicted)
        confusion[truth, pred] += 1
        times.setdefault(truth, []).append(result.inference_time)
        if pred == truth:
            probs.setdefault(truth, []).append(float(result.probabilities[pred]))

    names = [MessageId(i).name if n == 15 else str(i) for i in range(n)]
    counts = {names[i]: int(confusion[i].sum()) for i in range(n)}
    per_acc = {names[i]: (confusion[i, i] / confusion[i].sum() if confusion[i].sum() else 0.0)
               for i in range(n)}
    per_prob = {names[i]: (float(np.mean(probs[i])) if i in probs else None)
                for i in range(n)}
    per_time = {names[i]: (float(np.mean(times[i])) if i in times else 0.0)
                for i in range(n)}
    correct_probs = [p for values in probs.values() for p in values]
    all_times = [t for values in times.values() for t in values]
    return MetricsReport(
        class_names=names,
        test_counts=counts,
        per_class_accuracy=per_acc,
        per_class_probability=per_prob,
        per_class_time=per_time,
        overall_accuracy=float(np.trace(confusion) / confusion.sum()),
        overall_probability=float(np.mean(correct_probs)) if correct_probs else None,
        overall_time=float(np.mean(all_times)),
        confusion=confusion,
    )


def compare_variants(report_a: MetricsReport, report_b: MetricsReport) -> dict:
    """Accuracy/probability deltas and the speed ratio time_a / time_b."""
    if report_a.test_counts != report_b.test_counts:
        raise MismatchedTestSets("reports cover different test sets")
    per_class = {}
    for name in report_a.class_names:
        pa, pb = report_a.per_class_probability[name], report_b.per_class_probability[name]
        per_class[name] = {
            "accuracy_delta": report_a.per_class_accuracy[name] - report_b.per_class_accuracy[name],
            "probability_delta": (pa - pb) if pa is not None and pb is not None else None,
        }
    return {
        "per_class": per_class,
        "overall_accuracy_delta": report_a.overall_accuracy - report_b.overall_accuracy,
        "speedup": report_a.overall_time / report_b.overall_time,
        "reference_tradeoff": REFERENCE_TRADEOFF,
    }
