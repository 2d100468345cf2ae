import numpy as np
import pytest

from arnet import synth
from arnet.synth import DatasetSpec, generate, oracle_predict


def test_generation_is_a_pure_function_of_spec_and_seed(tiny_spec):
    a, b = generate(tiny_spec, seed=7), generate(tiny_spec, seed=7)
    for va, vb in zip(a.train + a.test, b.train + b.test):
        np.testing.assert_array_equal(va.frames, vb.frames)
        assert va.informative == vb.informative
    c = generate(tiny_spec, seed=8)
    assert not np.array_equal(a.train[0].frames, c.train[0].frames)


def test_split_sizes_and_balance(tiny_spec, tiny_dataset):
    assert len(tiny_dataset.train) == 2 * tiny_spec.num_classes
    assert len(tiny_dataset.test) == tiny_spec.num_classes
    assert sorted(v.label for v in tiny_dataset.train) == sorted(list(range(6)) * 2)
    assert tiny_dataset.train[0].frames.shape == (16, 32, 32)


def test_informative_frames_fill_whole_shots(tiny_spec, tiny_dataset):
    run = tiny_spec.redundancy
    for v in tiny_dataset.train + tiny_dataset.val + tiny_dataset.test:
        shots = {t // run for t in v.informative}
        lo, hi = tiny_spec.informative
        assert lo <= len(shots) <= hi
        assert sorted(v.informative) == [t for k in sorted(shots) for t in range(k * run, (k + 1) * run)]
        assert all((d == "fine") == (t in v.informative) for t, d in enumerate(v.detail))


def test_class_evidence_needs_full_resolution():
    spec = DatasetSpec(train_per_class=0, val_per_class=0, test_per_class=10)
    videos = generate(spec, seed=1).test
    acc = {r: np.mean([oracle_predict(v, spec, r) == v.label for v in videos]) for r in (32, 24, 16, 8)}
    assert acc[32] >= 0.99
    assert acc[32] - acc[8] >= 0.6
    assert acc[8] <= 1 / 6 + 0.15


def test_dropping_background_frames_keeps_oracle_prediction():
    spec = DatasetSpec(train_per_class=0, val_per_class=0, test_per_class=10)
    for v in generate(spec, seed=3).test:
        assert oracle_predict(v, spec, frames="all") == oracle_predict(v, spec)


def test_coarse_detail_survives_low_resolution():
    spec = DatasetSpec(detail="coarse", train_per_class=0, val_per_class=0, test_per_class=10)
    videos = generate(spec, seed=1).test
    assert np.mean([oracle_predict(v, spec, 8) == v.label for v in videos]) >= 0.8


def test_background_frames_carry_no_class_signal():
    spec = DatasetSpec(train_per_class=0, val_per_class=0, test_per_class=20)
    videos = generate(spec, seed=2).test
    acc = np.mean([oracle_predict(v.__class__(v.frames, v.label, tuple(t for t in range(16) if t not in v.informative), v.detail), spec) == v.label for v in videos])
    assert acc <= 1 / 6 + 0.15


def test_class_textures_are_distinct():
    tex = np.stack([synth.class_texture(c, 32).ravel() for c in range(synth.MAX_CLASSES)])
    gram = tex @ tex.T / tex.shape[1]
    off = gram - np.diag(np.diag(gram))
    np.testing.assert_allclose(np.diag(gram), 1.0)
    assert np.abs(off).max() < 0.5


def test_dataset_file_round_trip(tiny_dataset, tmp_path):
    path = tmp_path / "ds.bin"
    synth.save_dataset(tiny_dataset, path)
    again = synth.load_dataset(path)
    assert again.spec == tiny_dataset.spec
    for a, b in zip(tiny_dataset.test, again.test):
        np.testing.assert_array_equal(a.frames, b.frames)
        assert (a.label, a.informative, a.video_id) == (b.label, b.informative, b.video_id)


def test_dataset_file_rejects_garbage(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"not a dataset")
    with pytest.raises(ValueError):
        synth.load_dataset(path)


def test_frame_stats(tiny_dataset):
    stats = synth.frame_stats(tiny_dataset)
    assert stats["videos"] == len(tiny_dataset)
    assert stats["frames"] == 16 * len(tiny_dataset)
    assert set(stats["informative_shot_histogram"]) <= {1, 2}
    assert sum(stats["informative_shot_histogram"].values()) == len(tiny_dataset)


@pytest.mark.parametrize(
    "bad",
    [
        {"num_classes": 1},
        {"num_classes": 99},
        {"frames": 2},
        {"detail": "medium"},
        {"informative": (3, 2)},
        {"informative": (1, 9)},
        {"redundancy": 0},
    ],
)
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        DatasetSpec(**bad)


def test_spec_dict_round_trip():
    spec = DatasetSpec(contrast=1.5, informative=(2, 3))
    assert DatasetSpec.from_dict(spec.to_dict()) == spec
