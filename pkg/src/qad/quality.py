"""Synthetic multi-quality image task.

The task is built so that compression attacks exactly what separates the
classes: both classes share a low-frequency background, while the
discriminative texture is a high-frequency stripe pattern whose
orientation (row-wise vs column-wise) carries the label. Degradation is
8x8 block-DCT quantization with a high-frequency-weighted table, so
heavier levels progressively erase the stripes while barely touching the
background. Every compressed rendering is derived deterministically from
the same underlying raw image, which keeps mini-batches aligned across
modalities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from qad.errors import InvalidConfigError, InvalidInputError
from qad.util import rng

# orthonormal 8x8 DCT-II basis
_N = 8
_DCT = np.zeros((_N, _N))
for _k in range(_N):
    _c = np.sqrt(1.0 / _N) if _k == 0 else np.sqrt(2.0 / _N)
    _DCT[_k] = _c * np.cos(np.pi * (2 * np.arange(_N) + 1) * _k / (2 * _N))

# quantization step per coefficient, scaled by the level q; DC entry is 1 so
# the mean survives even heavy levels while high frequencies are wiped out
_IJ = np.arange(_N)[:, None] + np.arange(_N)[None, :]
QUANT_TABLE = 1.0 + (_IJ / 2.0) ** 2


@dataclass(frozen=True)
class QualityModality:
    """One rendering level: 0 is the raw image, larger is heavier quantization."""

    level: float

    def __post_init__(self):
        if self.level < 0:
            raise InvalidConfigError(f"quality level must be >= 0, got {self.level}")

    @property
    def is_raw(self) -> bool:
        return self.level == 0

    @property
    def name(self) -> str:
        return "raw" if self.is_raw else f"c{self.level:g}"


DEFAULT_MODALITIES = (QualityModality(0.0), QualityModality(2.0), QualityModality(6.0))


def validate_modalities(modalities) -> tuple[QualityModality, ...]:
    mods = tuple(m if isinstance(m, QualityModality) else QualityModality(float(m)) for m in modalities)
    if not mods:
        raise InvalidConfigError("need at least one quality modality")
    levels = [m.level for m in mods]
    if len(set(levels)) != len(levels):
        raise InvalidConfigError(f"duplicate quality levels: {levels}")
    if sorted(levels) != levels:
        raise InvalidConfigError(f"quality levels must be strictly increasing: {levels}")
    return mods


def degrade(x: np.ndarray, level: float, clip: tuple[float, float] | None = None) -> np.ndarray:
    """Block-DCT quantization at strength ``level``; level 0 is the identity.

    Coefficients are divided by level * QUANT_TABLE, rounded, and multiplied
    back; the result is clipped to ``clip`` when given. Deterministic.
    """
    if level < 0:
        raise InvalidInputError(f"level must be >= 0, got {level}")
    x = np.asarray(x)
    if level == 0:
        return x.copy()
    if x.shape[-1] % _N or x.shape[-2] % _N:
        raise InvalidInputError(f"image sides must be multiples of {_N}, got {x.shape[-2:]}")
    dtype = x.dtype
    h, w = x.shape[-2], x.shape[-1]
    lead = x.shape[:-2]
    blocks = x.astype(np.float64).reshape(*lead, h // _N, _N, w // _N, _N)
    blk = blocks.swapaxes(-3, -2)  # (..., h/N, w/N, N, N)
    coef = _DCT @ blk @ _DCT.T
    step = level * QUANT_TABLE
    coef = np.round(coef / step) * step
    rec = _DCT.T @ coef @ _DCT
    out = rec.swapaxes(-3, -2).reshape(*lead, h, w)
    if clip is not None:
        out = np.clip(out, clip[0], clip[1])
    return out.astype(dtype)


@dataclass(frozen=True)
class SynthTaskConfig:
    """Generator knobs for the synthetic task.

    The background modes are low-frequency and common to both classes; the
    class texture is a stripe pattern in ``signal_freq`` cycles/pixel whose
    orientation encodes the label.
    """

    image_size: int = 16
    n_train: int = 512
    n_val: int = 256
    n_test: int = 1024
    offset: float = 12.0
    background_amp: tuple[float, float] = (2.0, 5.0)
    background_freq_max: float = 0.09
    signal_amp: tuple[float, float] = (2.5, 5.0)
    signal_freq: tuple[float, float] = (0.21, 0.29)
    noise_level: float = 0.8
    value_range: tuple[float, float] = (0.0, 24.0)
    seed: int = 0

    def __post_init__(self):
        if self.image_size % _N:
            raise InvalidConfigError(f"image_size must be a multiple of {_N}")
        for n, label in ((self.n_train, "n_train"), (self.n_val, "n_val"), (self.n_test, "n_test")):
            if n <= 0:
                raise InvalidConfigError(f"{label} must be positive")
        if self.noise_level < 0:
            raise InvalidConfigError("noise_level must be >= 0")

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "n_test": self.n_test,
            "offset": self.offset,
            "background_amp": list(self.background_amp),
            "background_freq_max": self.background_freq_max,
            "signal_amp": list(self.signal_amp),
            "signal_freq": list(self.signal_freq),
            "noise_level": self.noise_level,
            "value_range": list(self.value_range),
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "SynthTaskConfig":
        d = dict(d)
        for key in ("background_amp", "signal_amp", "signal_freq", "value_range"):
            if key in d:
                d[key] = tuple(d[key])
        return SynthTaskConfig(**d)


@dataclass
class Split:
    """Aligned per-modality tensors for one dataset split."""

    images: dict[str, np.ndarray]  # modality name -> (N, 1, H, W) float32
    labels: np.ndarray  # (N,) int64, 0 = plain, 1 = marked
    sample_ids: np.ndarray  # (N,) int64

    @property
    def n(self) -> int:
        return self.labels.shape[0]


@dataclass
class MultiQualityBatch:
    """The same B samples rendered at every modality, plus labels."""

    images: dict[str, np.ndarray]
    labels: np.ndarray
    sample_ids: np.ndarray

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def modality_names(self) -> list[str]:
        return list(self.images)


@dataclass
class MultiQualityDataset:
    config: SynthTaskConfig
    modalities: tuple[QualityModality, ...]
    splits: dict[str, Split]
    distortion: dict[str, dict[str, float]] = field(default_factory=dict)  # split -> modality -> MSE vs raw


_SPLIT_TAGS = {"train": 1, "val": 2, "test": 3}


def _render_raw(cfg: SynthTaskConfig, n: int, split_tag: int) -> tuple[np.ndarray, np.ndarray]:
    gen = rng(cfg.seed, 0xDA7A, split_tag)
    size = cfg.image_size
    u = np.arange(size)[:, None]  # rows
    v = np.arange(size)[None, :]  # cols
    labels = gen.integers(0, 2, size=n)
    images = np.empty((n, 1, size, size), dtype=np.float32)
    for i in range(n):
        img = np.full((size, size), cfg.offset, dtype=np.float64)
        for _ in range(2):  # shared low-frequency background
            amp = gen.uniform(*cfg.background_amp)
            fu, fv = gen.uniform(-cfg.background_freq_max, cfg.background_freq_max, size=2)
            phase = gen.uniform(0.0, 2.0 * np.pi)
            img += amp * np.cos(2.0 * np.pi * (fu * u + fv * v) + phase)
        # discriminative high-frequency stripes: along rows for class 0, columns for class 1
        s = gen.uniform(*cfg.signal_amp)
        g = gen.uniform(*cfg.signal_freq)
        psi = gen.uniform(0.0, 2.0 * np.pi)
        axis = u if labels[i] == 0 else v
        img += s * np.cos(2.0 * np.pi * g * axis + psi)
        img += gen.normal(0.0, cfg.noise_level, size=(size, size))
        images[i, 0] = np.clip(img, cfg.value_range[0], cfg.value_range[1])
    return images, labels.astype(np.int64)


def generate_dataset(cfg: SynthTaskConfig, modalities=DEFAULT_MODALITIES) -> MultiQualityDataset:
    """Render all splits at all modalities, deterministically in cfg.seed."""
    mods = validate_modalities(modalities)
    sizes = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}
    splits: dict[str, Split] = {}
    distortion: dict[str, dict[str, float]] = {}
    next_id = 0
    for split, n in sizes.items():
        raw, labels = _render_raw(cfg, n, _SPLIT_TAGS[split])
        images = {}
        dist = {}
        for mod in mods:
            img = degrade(raw, mod.level, clip=cfg.value_range)
            images[mod.name] = img
            dist[mod.name] = float(np.mean((img.astype(np.float64) - raw.astype(np.float64)) ** 2))
        splits[split] = Split(images=images, labels=labels, sample_ids=np.arange(next_id, next_id + n))
        distortion[split] = dist
        next_id += n
    return MultiQualityDataset(config=cfg, modalities=mods, splits=splits, distortion=distortion)


def batches(split: Split, batch_size: int, seed: int, shuffle: bool = True):
    """Yield aligned mini-batches; the order is a seeded permutation per call."""
    if batch_size < 1 or batch_size > split.n:
        raise InvalidInputError(f"batch size {batch_size} out of range for split of {split.n}")
    order = rng(seed, 0xBA7C).permutation(split.n) if shuffle else np.arange(split.n)
    for start in range(0, split.n, batch_size):
        idx = order[start : start + batch_size]
        yield MultiQualityBatch(
            images={name: img[idx] for name, img in split.images.items()},
            labels=split.labels[idx],
            sample_ids=split.sample_ids[idx],
        )


# -- fixture persistence ---------------------------------------------------------


def save_dataset(ds: MultiQualityDataset, out_dir) -> None:
    """Directory of .npy tensors plus a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for split, sp in ds.splits.items():
        for name, img in sp.images.items():
            rel = f"{split}_{name}.npy"
            np.save(out / rel, img)
            files.append(rel)
        np.save(out / f"{split}_labels.npy", sp.labels)
        np.save(out / f"{split}_ids.npy", sp.sample_ids)
        files += [f"{split}_labels.npy", f"{split}_ids.npy"]
    manifest = {
        "format": "qad-dataset-v1",
        "config": ds.config.to_dict(),
        "modalities": [m.level for m in ds.modalities],
        "sizes": {split: sp.n for split, sp in ds.splits.items()},
        "distortion": ds.distortion,
        "files": files,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(in_dir) -> MultiQualityDataset:
    path = Path(in_dir)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format") != "qad-dataset-v1":
        raise InvalidInputError(f"{in_dir}: not a dataset directory")
    cfg = SynthTaskConfig.from_dict(manifest["config"])
    mods = validate_modalities(manifest["modalities"])
    splits = {}
    for split in manifest["sizes"]:
        images = {m.name: np.load(path / f"{split}_{m.name}.npy") for m in mods}
        splits[split] = Split(
            images=images,
            labels=np.load(path / f"{split}_labels.npy"),
            sample_ids=np.load(path / f"{split}_ids.npy"),
        )
    return MultiQualityDataset(
        config=cfg, modalities=mods, splits=splits, distortion=manifest.get("distortion", {})
    )
