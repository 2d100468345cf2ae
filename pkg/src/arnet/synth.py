"""Synthetic videos whose class evidence is sparse in time and fine in space.

Each video is a run of blocky low-frequency background shots of
``redundancy`` near-duplicate frames.  One or two "informative" shots carry a
bright square marker (visible at any resolution) filled with a class texture.
A shot is at least as long as the longest skip, so no skip pattern can step
over a whole informative shot.  Fine textures are outer products
``u v^T`` where ``u`` lies in the null space of the 32->24 area resampler and
``v`` has zero-sum pixel pairs, so the texture vanishes exactly at 24, 16 and
8 pixels: the class is readable only at full resolution, while the marker
tells a low-resolution observer where to look.
"""

from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .backbones import resize

FORMAT_VERSION = 1
_MAGIC = b"ARNETDS\x00"

_NULL24 = np.array([-1.0, 3.0, -3.0, 1.0])  # annihilated by 4->3 area resampling
_ROWS = {
    "u1": _NULL24,
    "u2": np.r_[_NULL24, -_NULL24],
    "v1": np.array([1.0, -1.0]),
    "v2": np.array([1.0, -1.0, -1.0, 1.0]),
    "v3": np.array([1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0]),
}
# (row pattern, column pattern); mutually orthogonal when tiled
_TEXTURES = [("u1", "v1"), ("v2", "u1"), ("u1", "v2"), ("v3", "u1"), ("u1", "v3"), ("u2", "v2"), ("v2", "u2"), ("u2", "v3")]
MAX_CLASSES = len(_TEXTURES)


@dataclass(frozen=True)
class DatasetSpec:
    num_classes: int = 6
    frames: int = 16
    resolution: int = 32
    train_per_class: int = 40
    val_per_class: int = 10
    test_per_class: int = 20
    informative: tuple[int, int] = (1, 2)
    detail: str = "fine"
    clutter: float = 0.1
    redundancy: int = 4
    glyph: int = 16
    marker: float = 0.6
    contrast: float = 2.0
    background: float = 0.15
    offset: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.num_classes <= MAX_CLASSES:
            raise ValueError(f"num_classes must be in [2, {MAX_CLASSES}], got {self.num_classes}")
        if self.frames < 4:
            raise ValueError("videos need at least as many frames as the longest skip (4)")
        if self.detail not in ("fine", "coarse"):
            raise ValueError(f"detail must be 'fine' or 'coarse', got {self.detail!r}")
        lo, hi = self.informative
        if self.redundancy < 1:
            raise ValueError("redundancy must be >= 1")
        if not 1 <= lo <= hi <= self.num_shots:
            raise ValueError(f"bad informative-shot range {self.informative} for {self.num_shots} shots")
        if self.resolution % 8 or self.glyph % 4 or self.glyph > self.resolution:
            raise ValueError("resolution must be a multiple of 8 and glyph a multiple of 4 that fits")
        object.__setattr__(self, "informative", tuple(self.informative))

    @property
    def num_shots(self) -> int:
        return -(-self.frames // self.redundancy)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["informative"] = list(self.informative)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        if "informative" in d:
            d["informative"] = tuple(d["informative"])
        return cls(**d)


@dataclass
class VideoSample:
    frames: np.ndarray
    label: int
    informative: tuple[int, ...] = ()
    detail: tuple[str, ...] = ()
    video_id: int = 0

    @property
    def num_frames(self) -> int:
        return len(self.frames)


@dataclass
class Dataset:
    spec: DatasetSpec
    train: list[VideoSample] = field(default_factory=list)
    val: list[VideoSample] = field(default_factory=list)
    test: list[VideoSample] = field(default_factory=list)

    def splits(self) -> dict[str, list[VideoSample]]:
        return {"train": self.train, "val": self.val, "test": self.test}

    def __len__(self) -> int:
        return len(self.train) + len(self.val) + len(self.test)


def class_texture(label: int, size: int, detail: str = "fine") -> np.ndarray:
    """The class texture over a ``size`` x ``size`` canvas, unit RMS.

    Coarse textures are the same pattern magnified 4x, so they survive 4x4 pooling.
    """
    row, col = (_ROWS[k] for k in _TEXTURES[label])
    scale = 4 if detail == "coarse" else 1
    n = -(-size // scale)
    tex = np.outer(np.resize(row, n), np.resize(col, n))
    tex = np.kron(tex, np.ones((scale, scale)))[:size, :size]
    return tex / np.sqrt(np.mean(tex**2))


def _blocky_field(rng: np.random.Generator, size: int, cells: int = 4) -> np.ndarray:
    return np.kron(rng.normal(size=(cells, cells)), np.ones((size // cells, size // cells)))


def render_video(spec: DatasetSpec, label: int, rng: np.random.Generator, video_id: int = 0) -> VideoSample:
    s, n, run = spec.resolution, spec.frames, spec.redundancy
    frames = np.empty((n, s, s))
    for start in range(0, n, run):
        base = spec.offset + spec.background * _blocky_field(rng, s)
        for t in range(start, min(n, start + run)):
            jitter = 0.1 * spec.background * _blocky_field(rng, s)
            frames[t] = base + jitter + spec.clutter * rng.normal(size=(s, s))

    count = int(rng.integers(spec.informative[0], spec.informative[1] + 1))
    shots = sorted(int(k) for k in rng.choice(spec.num_shots, size=count, replace=False))
    texture = class_texture(label, s, spec.detail)
    offsets = np.arange(0, s - spec.glyph + 1, 4)
    informative = []
    for k in shots:
        oy, ox = rng.choice(offsets, size=2)
        region = (slice(oy, oy + spec.glyph), slice(ox, ox + spec.glyph))
        for t in range(k * run, min(n, (k + 1) * run)):
            frames[t][region] += spec.marker + spec.contrast * texture[region]
            informative.append(t)
    informative = tuple(informative)
    detail = tuple(spec.detail if t in informative else "none" for t in range(n))
    return VideoSample(frames, label, informative, detail, video_id)


def generate(spec: DatasetSpec, seed: int | None = None) -> Dataset:
    """Build train/val/test splits; a pure function of ``(spec, seed)``."""
    seed = spec.seed if seed is None else seed
    ds = Dataset(spec)
    video_id = 0
    for split_index, (name, per_class) in enumerate(
        [("train", spec.train_per_class), ("val", spec.val_per_class), ("test", spec.test_per_class)]
    ):
        videos = getattr(ds, name)
        for i in range(per_class * spec.num_classes):
            rng = np.random.default_rng([seed, split_index, i])
            videos.append(render_video(spec, i % spec.num_classes, rng, video_id))
            video_id += 1
    return ds


# -- oracle and summaries ---------------------------------------------------


def template_scores(frame: np.ndarray, spec: DatasetSpec, resolution: int | None = None) -> np.ndarray:
    """Correlation of a frame with every class texture, both area-pooled to ``resolution``."""
    resolution = resolution or spec.resolution
    img = resize(frame, resolution)
    img = img - img.mean()
    return np.array(
        [
            float((resize(class_texture(c, spec.resolution, spec.detail), resolution) * img).sum())
            for c in range(spec.num_classes)
        ]
    )


def oracle_predict(video: VideoSample, spec: DatasetSpec, resolution: int | None = None, frames: str = "informative") -> int:
    """Template-matching classifier over the informative frames (or all frames)."""
    ts = video.informative if frames == "informative" else range(video.num_frames)
    total = sum(template_scores(video.frames[t], spec, resolution) for t in ts)
    return int(np.argmax(total))


def frame_stats(dataset: Dataset | list[VideoSample], redundancy: int | None = None) -> dict:
    """Class balance and where the informative frames fall.

    Shots are counted with ``redundancy`` (taken from the dataset spec when omitted).
    """
    if isinstance(dataset, Dataset):
        videos = [v for split in dataset.splits().values() for v in split]
        redundancy = redundancy or dataset.spec.redundancy
    else:
        videos = list(dataset)
    redundancy = redundancy or 1
    per_class = Counter(v.label for v in videos)
    counts = Counter(len(v.informative) for v in videos)
    shots = Counter(len({t // redundancy for t in v.informative}) for v in videos)
    positions = Counter(t for v in videos for t in v.informative)
    return {
        "videos": len(videos),
        "per_class": dict(sorted(per_class.items())),
        "informative_count_histogram": dict(sorted(counts.items())),
        "informative_shot_histogram": dict(sorted(shots.items())),
        "informative_position_histogram": dict(sorted(positions.items())),
        "informative_frames": sum(len(v.informative) for v in videos),
        "frames": sum(v.num_frames for v in videos),
    }


# -- binary container ---------------------------------------------------------


def save_dataset(ds: Dataset, path) -> None:
    """Header (magic, version, JSON length, JSON), then float64 little-endian frames."""
    header = {
        "version": FORMAT_VERSION,
        "spec": ds.spec.to_dict(),
        "splits": {
            name: [
                {"video_id": v.video_id, "label": v.label, "informative": list(v.informative), "detail": list(v.detail), "shape": list(v.frames.shape)}
                for v in videos
            ]
            for name, videos in ds.splits().items()
        },
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for videos in ds.splits().values():
            for v in videos:
                fh.write(np.ascontiguousarray(v.frames, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not an arnet dataset file")
    version, length = struct.unpack_from("<IQ", raw, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"dataset format version {version} != supported {FORMAT_VERSION}")
    offset = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[offset : offset + length])
    offset += length
    spec_dict = header["spec"]
    spec_dict["informative"] = tuple(spec_dict["informative"])
    ds = Dataset(DatasetSpec.from_dict(spec_dict))
    # frames are stored in split order; the JSON header itself has sorted keys
    for name, videos in ds.splits().items():
        for e in header["splits"][name]:
            shape = tuple(e["shape"])
            nbytes = 8 * int(np.prod(shape))
            frames = np.frombuffer(raw, dtype="<f8", count=int(np.prod(shape)), offset=offset).reshape(shape).astype(np.float64)
            offset += nbytes
            videos.append(VideoSample(frames, e["label"], tuple(e["informative"]), tuple(e["detail"]), e["video_id"]))
    return ds
