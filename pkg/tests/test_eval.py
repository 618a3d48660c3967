import numpy as np
import pytest

from rrcomm.dataset import generate_dataset, split
from rrcomm.dsl import MessageId
from rrcomm.evaluate import (
    REFERENCE_ACCURACY, REFERENCE_TRADEOFF, CropTooLarge, EmptyTestSet,
    MetricsReport, MismatchedTestSets, class_probabilities, compare_variants,
    crop_offsets, evaluate, predict, ten_crop,
)
from rrcomm.model import ModelConfig, init_params
from rrcomm.render import standard_conditions


def test_ten_crop_full_size_is_identity_plus_mirror(rng):
    frames = rng.random((4, 3, 20, 20)).astype(np.float32)
    crops = ten_crop(frames, (20, 20))
    assert len(crops) == 10
    for crop in crops[:5]:
        assert np.array_equal(crop, frames)
    for crop in crops[5:]:
        assert np.array_equal(crop, frames[..., ::-1])


def test_ten_crop_corner_markers():
    frames = np.zeros((1, 3, 10, 12), dtype=np.float32)
    frames[..., 0, 0] = 1.0      # TL
    frames[..., 0, -1] = 2.0     # TR
    frames[..., -1, 0] = 3.0     # BL
    frames[..., -1, -1] = 4.0    # BR
    crops = ten_crop(frames, (4, 4))
    assert crops[0][0, 0, 0, 0] == 1.0
    assert crops[1][0, 0, 0, -1] == 2.0
    assert crops[2][0, 0, -1, 0] == 3.0
    assert crops[3][0, 0, -1, -1] == 4.0
    # flipped versions mirror the columns
    assert crops[5][0, 0, 0, 0] == 2.0
    assert crops[6][0, 0, 0, -1] == 1.0


def test_ten_crop_published_scale_offsets():
    """Published-scale case: 112x112 crops from a 256-high, 320-wide frame."""
    h, w, c = 256, 320, 112
    # oracle: plain index arithmetic
    expected = [(0, 0), (0, w - c), (h - c, 0), (h - c, w - c),
                ((h - c) // 2, (w - c) // 2)]
    assert expected == [(0, 0), (0, 208), (144, 0), (144, 208), (72, 104)]
    assert crop_offsets((h, w), (c, c)) == expected
    marker = np.arange(h * w, dtype=np.float32).reshape(1, 1, h, w)
    crops = ten_crop(marker, (c, c))
    for crop, (top, left) in zip(crops[:5], expected):
        assert crop[0, 0, 0, 0] == marker[0, 0, top, left]


def test_ten_crop_too_large():
    with pytest.raises(CropTooLarge):
        ten_crop(np.zeros((1, 3, 8, 8)), (9, 9))


def test_class_probabilities_uniform():
    probs = class_probabilities(np.zeros(15))
    assert np.allclose(probs, 1 / 15, atol=1e-9)
    assert probs.sum() == pytest.approx(1.0, abs=1e-6)


def test_class_probabilities_match_direct_formula(rng):
    x = rng.normal(size=15)
    probs = class_probabilities(x)
    direct = np.exp(x) / np.exp(x).sum()   # oracle: the definition, unshifted
    assert np.allclose(probs, direct, atol=1e-7)


def test_class_probabilities_shift_invariance(rng):
    x = rng.normal(size=15)
    shifted = class_probabilities(x + 123.4)
    assert np.allclose(shifted, class_probabilities(x), atol=1e-9)
    assert np.argmax(shifted) == np.argmax(class_probabilities(x))


@pytest.fixture(scope="module")
def eval_setup(tmp_path_factory, library):
    out = tmp_path_factory.mktemp("evalcorpus")
    manifest = generate_dataset(library, standard_conditions()[:1], 2,
                                fps=3.0, resolution=(32, 32), seed=4, out_dir=out)
    manifest = split(manifest, train_fraction=0.5, seed=0)
    config = ModelConfig(frames=8, encoder_channels=(4, 8, 16), pffn_hidden=16)
    params = init_params(config, seed=0)
    params["norm.mean"].data = np.asarray(manifest.stats["mean"], dtype=np.float32)
    params["norm.std"].data = np.asarray(manifest.stats["std"], dtype=np.float32)
    return manifest, params, config


def test_predict_result_contract(eval_setup, rng):
    manifest, params, config = eval_setup
    from rrcomm.render import read_clip
    clip = read_clip(manifest.path_for(manifest.entries[0]))
    result = predict(clip, params, config)
    assert result.x_preds.shape == (10, 15)
    assert result.x_mean.shape == (15,)
    assert result.probabilities.sum() == pytest.approx(1.0, abs=1e-6)
    assert result.predicted == MessageId(int(np.argmax(result.probabilities)))
    assert np.allclose(result.x_mean, result.x_preds.mean(axis=0), atol=1e-7)
    assert result.inference_time > 0
    # probabilities equal the direct softmax of x_mean
    direct = np.exp(result.x_mean) / np.exp(result.x_mean).sum()
    assert np.allclose(result.probabilities, direct, atol=1e-7)


def test_predict_deterministic_except_timing(eval_setup):
    manifest, params, config = eval_setup
    from rrcomm.render import read_clip
    clip = read_clip(manifest.path_for(manifest.entries[1]))
    a = predict(clip, params, config)
    b = predict(clip, params, config)
    assert np.array_equal(a.x_preds, b.x_preds)
    assert np.array_equal(a.probabilities, b.probabilities)
    assert a.predicted == b.predicted


def test_evaluate_report_integrity(eval_setup):
    manifest, params, config = eval_setup
    report = evaluate(manifest, params, config)
    n_test = len(manifest.by_split("TEST"))
    assert report.confusion.sum() == n_test
    for i, name in enumerate(report.class_names):
        assert report.confusion[i].sum() == report.test_counts[name]
    assert 0.0 <= report.overall_accuracy <= 1.0
    again = evaluate(manifest, params, config)
    assert np.array_equal(report.confusion, again.confusion)
    assert report.per_class_accuracy == again.per_class_accuracy


def test_evaluate_empty_split(eval_setup):
    manifest, params, config = eval_setup
    with pytest.raises(EmptyTestSet):
        evaluate(manifest, params, config, split="NOPE")


def test_report_serialization(eval_setup, tmp_path):
    manifest, params, config = eval_setup
    report = evaluate(manifest, params, config)
    report.save_json(tmp_path / "report.json")
    report.save_confusion_csv(tmp_path / "confusion.csv")
    import json
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["reference_accuracy_pct"]["full"]["simulated"] == 94.67
    lines = (tmp_path / "confusion.csv").read_text().splitlines()
    assert len(lines) == 16
    assert lines[0].split(",")[1] == "BATTERY_LOW"


def all_correct_report():
    names = [m.name for m in MessageId]
    confusion = np.diag([2] * 15)
    return MetricsReport(
        class_names=names,
        test_counts={n: 2 for n in names},
        per_class_accuracy={n: 1.0 for n in names},
        per_class_probability={n: 0.9 for n in names},
        per_class_time={n: 0.5 for n in names},
        overall_accuracy=1.0, overall_probability=0.9, overall_time=0.5,
        confusion=confusion)


def test_all_correct_is_diagonal():
    report = all_correct_report()
    assert np.array_equal(report.confusion, np.diag(np.diag(report.confusion)))
    assert report.overall_accuracy == 1.0


def test_compare_identical_reports():
    result = compare_variants(all_correct_report(), all_correct_report())
    assert result["speedup"] == pytest.approx(1.0)
    assert result["overall_accuracy_delta"] == 0.0
    assert all(v["accuracy_delta"] == 0.0 for v in result["per_class"].values())


def test_compare_mismatched_sets():
    other = all_correct_report()
    other.test_counts = dict(other.test_counts)
    other.test_counts["NO"] = 3
    with pytest.raises(MismatchedTestSets):
        compare_variants(all_correct_report(), other)


def test_reference_tradeoff_speedup():
    # stored reference pair: overall probability ~equal, skip ~1.81x faster
    full = REFERENCE_TRADEOFF["full"]
    skip = REFERENCE_TRADEOFF["skip"]
    assert full["probability"] == pytest.approx(78.97)
    assert skip["probability"] == pytest.approx(78.88)
    assert full["time_s"] / skip["time_s"] == pytest.approx(1.8125, abs=1e-4)


def test_reference_accuracy_table():
    assert REFERENCE_ACCURACY["full"] == {"simulated": 94.67, "real": 83.33}
    assert REFERENCE_ACCURACY["skip"] == {"simulated": 88.00, "real": 73.81}
    assert REFERENCE_ACCURACY["slow_fast"]["simulated"] == 74.67
    assert REFERENCE_ACCURACY["late_temporal_3d_bert"]["real"] == 71.42
