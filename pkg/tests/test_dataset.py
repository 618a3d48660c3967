import numpy as np
import pytest

from rrcomm.dataset import (
    DatasetManifest, IoFailure, ManifestEntry, TooFewInstances, augment,
    bilinear_resize, chunk, compute_channel_stats, generate_dataset,
    sample_augment_params, split, standardize,
)
from rrcomm.dsl import MessageId
from rrcomm.render import Viewpoint, read_clip, standard_conditions


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory, library):
    out = tmp_path_factory.mktemp("corpus")
    conditions = standard_conditions()[:2]
    return generate_dataset(library, conditions, instances_per_class=2,
                            fps=3.0, resolution=(32, 32), seed=5, out_dir=out)


def fake_manifest(per_class: dict[MessageId, int]) -> DatasetManifest:
    entries = []
    for message, count in per_class.items():
        for i in range(count):
            entries.append(ManifestEntry(clip_path=f"{message.name}_{i}.clip",
                                         message=message, env=0,
                                         viewpoint=Viewpoint.HEAD_ON,
                                         split="TRAIN", seed=i))
    manifest = DatasetManifest(root=None, fps=4.0, resolution=(32, 32), seed=0,
                               entries=entries)
    return manifest


def test_generate_counts_single(library, tmp_path):
    manifest = generate_dataset(library, standard_conditions()[:1], 1,
                                fps=2.0, resolution=(32, 32), seed=1, out_dir=tmp_path)
    assert len(manifest.entries) == 15


def test_generate_counts_and_labels(small_corpus):
    assert len(small_corpus.entries) == 15 * 2 * 2
    per_class = {}
    for entry in small_corpus.entries:
        per_class[entry.message] = per_class.get(entry.message, 0) + 1
    assert all(count == 4 for count in per_class.values())
    small_corpus.validate()
    # the clip files carry their labels
    sample = small_corpus.entries[3]
    assert read_clip(small_corpus.path_for(sample)).label is sample.message


def test_generate_deterministic(library, tmp_path):
    conditions = standard_conditions()[:1]
    m1 = generate_dataset(library, conditions, 1, fps=2.0, resolution=(32, 32),
                          seed=9, out_dir=tmp_path / "a")
    m2 = generate_dataset(library, conditions, 1, fps=2.0, resolution=(32, 32),
                          seed=9, out_dir=tmp_path / "b")
    for e1, e2 in zip(m1.entries, m2.entries):
        assert np.array_equal(read_clip(m1.path_for(e1)).frames,
                              read_clip(m2.path_for(e2)).frames)


def test_manifest_json_round_trip(small_corpus):
    path = small_corpus.save()
    restored = DatasetManifest.load(path)
    assert [e.to_dict() for e in restored.entries] == \
        [e.to_dict() for e in small_corpus.entries]
    assert restored.fps == small_corpus.fps


def test_split_large_remainder_rule():
    """375 clips at 0.73: oracle is the largest-remainder allocation.

    round(0.73 * 375) = 274 total; each class of 25 contributes
    floor(18.25) = 18, and 274 - 270 = 4 classes get one more.
    """
    manifest = fake_manifest({m: 25 for m in MessageId})
    result = split(manifest, train_fraction=0.73, seed=3)
    train = [e for e in result.entries if e.split == "TRAIN"]
    assert len(train) == 274
    assert 273 <= len(train) <= 275
    per_class = {m: sum(1 for e in train if e.message == m) for m in MessageId}
    assert all(c in (18, 19) for c in per_class.values())
    assert sum(1 for c in per_class.values() if c == 19) == 4
    for m in MessageId:
        total = sum(1 for e in result.entries if e.message == m)
        assert 1 <= per_class[m] <= total - 1


def test_split_half_of_two_per_class():
    manifest = fake_manifest({m: 2 for m in MessageId})
    result = split(manifest, train_fraction=0.5, seed=0)
    for m in MessageId:
        group = [e for e in result.entries if e.message == m]
        assert sorted(e.split for e in group) == ["TEST", "TRAIN"]


def test_split_single_instance_fails():
    manifest = fake_manifest({MessageId.NO: 1, MessageId.YES: 4})
    with pytest.raises(TooFewInstances):
        split(manifest, train_fraction=0.73, seed=0)


def test_split_deterministic_and_stratified(small_corpus):
    a = split(small_corpus, train_fraction=0.73, seed=21)
    assignments_a = [(e.clip_path, e.split) for e in a.entries]
    b = split(small_corpus, train_fraction=0.73, seed=21)
    assert assignments_a == [(e.clip_path, e.split) for e in b.entries]
    for m in MessageId:
        group = [e for e in a.entries if e.message == m]
        test_count = sum(1 for e in group if e.split == "TEST")
        assert 1 <= test_count <= len(group) - 1
    assert a.stats is not None and len(a.stats["mean"]) == 3


def test_split_fraction_bounds(small_corpus):
    with pytest.raises(ValueError):
        split(small_corpus, train_fraction=0.0)


def test_lock_file_blocks_concurrent_generation(library, tmp_path):
    (tmp_path / ".lock").write_text("held")
    with pytest.raises(IoFailure):
        generate_dataset(library, standard_conditions()[:1], 1, fps=2.0,
                         resolution=(32, 32), seed=0, out_dir=tmp_path)


# ---------------------------------------------------------------------------
# chunking

def frames_of(n, value_start=0):
    # frame i has constant value i for traceability
    return np.stack([np.full((3, 8, 8), float(i + value_start), dtype=np.float32)
                     for i in range(n)])


def test_chunk_exact_windows():
    chunks = chunk(frames_of(128), t_in=64)
    assert len(chunks) == 2
    assert all(c.frames.shape[0] == 64 for c in chunks)
    assert chunks[1].start == 64


def test_chunk_skip_keeps_even_indices():
    chunks = chunk(frames_of(64), t_in=64, skip=True)
    assert len(chunks) == 1
    assert chunks[0].frames.shape[0] == 32
    expected = np.arange(0, 64, 2, dtype=np.float32)
    assert np.array_equal(chunks[0].frames[:, 0, 0, 0], expected)


def test_chunk_padding_arithmetic():
    # oracle: 70 = 64 + 6, so chunk 2 holds frames 64..69 then 58 repeats of 69
    chunks = chunk(frames_of(70), t_in=64)
    assert len(chunks) == 2
    tail = chunks[1].frames[:, 0, 0, 0]
    assert np.array_equal(tail[:6], np.arange(64, 70, dtype=np.float32))
    assert np.all(tail[6:] == 69.0)
    assert tail.shape[0] == 64


def test_chunk_concat_reconstructs():
    frames = frames_of(96)
    chunks = chunk(frames, t_in=32)
    rebuilt = np.concatenate([c.frames for c in chunks], axis=0)
    assert np.array_equal(rebuilt, frames)


def test_chunk_short_clip_padded():
    chunks = chunk(frames_of(5), t_in=16)
    assert len(chunks) == 1
    assert chunks[0].frames.shape[0] == 16
    assert np.all(chunks[0].frames[5:] == 4.0)


# ---------------------------------------------------------------------------
# augmentation

STATS = {"mean": [0.0, 0.0, 0.0], "std": [1.0, 1.0, 1.0]}


def test_augment_deterministic(rng):
    frames = rng.random((4, 3, 32, 32)).astype(np.float32)
    a = augment(frames, seed=77, stats=STATS, out_hw=(32, 32))
    b = augment(frames, seed=77, stats=STATS, out_hw=(32, 32))
    assert np.array_equal(a, b)
    c = augment(frames, seed=78, stats=STATS, out_hw=(32, 32))
    assert not np.array_equal(a, c)


def test_augment_scale_one_no_flip_is_identity(rng):
    frames = rng.random((2, 3, 32, 32)).astype(np.float32)
    # find a seed whose draw is scale 1.0 with no flip
    for seed in range(200):
        params = sample_augment_params(np.random.default_rng(seed), (32, 32))
        if params["scale"] == 1.0 and not params["flip"]:
            out = augment(frames, seed=seed, stats=STATS, out_hw=(32, 32))
            assert np.allclose(out, frames, atol=1e-6)
            return
    pytest.fail("no identity draw found in 200 seeds")


def test_augment_crop_matches_manual_resize(rng):
    frames = rng.random((2, 3, 32, 32)).astype(np.float32)
    for seed in range(200):
        params = sample_augment_params(np.random.default_rng(seed), (32, 32))
        if params["scale"] == 0.75 and not params["flip"]:
            out = augment(frames, seed=seed, stats=STATS, out_hw=(32, 32))
            ch, cw = params["crop"]
            top, left = params["top"], params["left"]
            manual = bilinear_resize(frames[..., top:top + ch, left:left + cw], (32, 32))
            assert np.allclose(out, manual, atol=1e-5)
            return
    pytest.fail("no 0.75-scale draw found")


def test_standardized_corpus_moments(small_corpus):
    manifest = split(small_corpus, train_fraction=0.73, seed=2)
    # oracle: recompute the moments of the standardized training frames
    total, total_sq, count = np.zeros(3), np.zeros(3), 0
    for entry in manifest.by_split("TRAIN"):
        frames = standardize(read_clip(manifest.path_for(entry)).frames,
                             manifest.stats).astype(np.float64)
        total += frames.sum(axis=(0, 2, 3))
        total_sq += (frames ** 2).sum(axis=(0, 2, 3))
        count += frames.shape[0] * frames.shape[2] * frames.shape[3]
    mean = total / count
    std = np.sqrt(total_sq / count - mean ** 2)
    assert np.allclose(mean, 0.0, atol=1e-3)
    assert np.allclose(std, 1.0, atol=1e-3)


def test_bilinear_resize_identity(rng):
    frames = rng.random((2, 3, 16, 16))
    assert np.array_equal(bilinear_resize(frames, (16, 16)), frames)


def test_bilinear_resize_constant(rng):
    frames = np.full((1, 3, 20, 20), 0.6)
    out = bilinear_resize(frames, (13, 13))
    assert np.allclose(out, 0.6, atol=1e-12)
