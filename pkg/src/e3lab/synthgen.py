"""Procedural "real" images and simulated generators that stamp forensic traces.

Real images are 1/f^alpha Gaussian fields with a few soft blobs. A generator
takes a fresh real-type base image and adds a family-specific trace:

* ``checkerboard``: ``a * (-1)^(floor(x/p) + floor(y/p))`` (upsampling grid)
* ``spectral_peak``: ``a * sin(2 pi (fx x + fy y) + phase)`` (periodic peak)
* ``block_quant``: 8x8 block means snapped to multiples of ``step``
* ``fixed_pattern``: a PRNU-like pattern fixed by ``fingerprint_seed``
* ``noise_shaping``: high-pass filtered noise

Everything is a pure function of (master_seed, stream label, index).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DimensionError, FormatError, SourceNotFoundError
from .rng import derive_seed, stream

FAMILIES = ("checkerboard", "spectral_peak", "block_quant", "fixed_pattern", "noise_shaping")
SPLITS = ("train", "val", "test")
REAL = "real"
BASELINE = "baseline"
CORPUS_FORMAT_VERSION = 1

# parameters each family requires, with defaults
_FAMILY_PARAMS = {
    "checkerboard": {"amplitude": 0.03, "period": 1},
    "spectral_peak": {"amplitude": 0.03, "fx": 0.25, "fy": 0.0},
    "block_quant": {"amplitude": 1.0, "step": 0.05, "block": 8},
    "fixed_pattern": {"amplitude": 0.03},
    "noise_shaping": {"amplitude": 0.03},
}


@dataclass(frozen=True)
class GeneratorSpec:
    id: str
    family: str
    params: Dict[str, float] = field(default_factory=dict)
    fingerprint_seed: int = 0

    def __post_init__(self):
        if self.family not in _FAMILY_PARAMS:
            raise ConfigError(f"unknown trace family {self.family!r}", key=f"generator {self.id}")
        merged = dict(_FAMILY_PARAMS[self.family])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ConfigError(f"unknown parameters {sorted(unknown)} for {self.family}",
                              key=f"generator {self.id}")
        merged.update(self.params)
        if merged["amplitude"] < 0:
            raise ConfigError("amplitude must be >= 0", key=f"generator {self.id}")
        object.__setattr__(self, "params", merged)

    def to_dict(self) -> dict:
        return {"id": self.id, "family": self.family, "params": dict(self.params),
                "fingerprint_seed": int(self.fingerprint_seed)}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        extra = set(d) - {"id", "family", "params", "fingerprint_seed"}
        if extra:
            raise ConfigError(f"unknown generator keys {sorted(extra)}", key=f"generator {d.get('id')}")
        return cls(id=str(d["id"]), family=d["family"], params=dict(d.get("params", {})),
                   fingerprint_seed=int(d.get("fingerprint_seed", 0)))


@dataclass
class LabeledImage:
    pixels: np.ndarray
    label: int
    source_id: str
    index: int
    generator_id: Optional[str] = None  # concrete generator behind a pooled source

    @property
    def key(self) -> tuple:
        return (self.generator_id or self.source_id, self.index)


def generate_real(seed: int, index: int, size: int = 48) -> LabeledImage:
    """Spatially correlated 1/f^alpha field plus soft blobs, rescaled to [0.1, 0.9]."""
    if size < 16:
        raise ConfigError(f"image size {size} < 16", key="image_size")
    rng = stream(seed, "real-image", index)
    alpha = rng.uniform(0.8, 1.4)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.sqrt(fx * fx + fy * fy)
    radius[0, 0] = 1.0
    amp = radius ** (-alpha)
    amp[0, 0] = 0.0
    white = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    field_ = np.real(np.fft.ifft2(white * amp))
    field_ /= field_.std() + 1e-12

    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0, size, 2)
        sigma = rng.uniform(size / 16, size / 4)
        height = rng.uniform(-2.0, 2.0)
        field_ += height * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma * sigma))

    lo, hi = field_.min(), field_.max()
    pixels = 0.1 + 0.8 * (field_ - lo) / max(hi - lo, 1e-12)
    return LabeledImage(pixels.astype(np.float32), 0, REAL, int(index))


def trace_stamp(spec: GeneratorSpec, shape: tuple, noise_seed: int, base: Optional[np.ndarray] = None) -> np.ndarray:
    """Additive difference a generator contributes before clipping."""
    p = spec.params
    a = float(p["amplitude"])
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    fam = spec.family
    if fam == "checkerboard":
        period = max(int(p["period"]), 1)
        return a * np.where(((xx // period) + (yy // period)) % 2 == 0, 1.0, -1.0)
    if fam == "spectral_peak":
        phase = stream(noise_seed, "spectral-phase").uniform(0, 2 * np.pi)
        return a * np.sin(2 * np.pi * (p["fx"] * xx + p["fy"] * yy) + phase)
    if fam == "fixed_pattern":
        pattern = stream(spec.fingerprint_seed, "fixed-pattern").standard_normal((h, w))
        return a * pattern
    if fam == "noise_shaping":
        noise = stream(noise_seed, "shaped-noise").standard_normal((h, w))
        hp = noise - ndimage.uniform_filter(noise, size=3, mode="wrap")
        return a * hp / (hp.std() + 1e-12)
    if fam == "block_quant":
        if base is None:
            raise ConfigError("block_quant needs the base image", key=spec.id)
        step = float(p["step"])
        if step <= 0 or a == 0:
            return np.zeros(shape)
        b = int(p["block"])
        out = np.zeros(shape)
        for by in range(0, h, b):
            for bx in range(0, w, b):
                m = base[by:by + b, bx:bx + b].mean()
                out[by:by + b, bx:bx + b] = a * (np.round(m / step) * step - m)
        return out
    raise ConfigError(f"unknown trace family {fam!r}", key=spec.id)


def apply_trace(base: LabeledImage, spec: GeneratorSpec, noise_seed: int) -> LabeledImage:
    if base.label != 0:
        raise ConfigError("apply_trace needs a real-type base image", key=spec.id)
    stamp = trace_stamp(spec, base.pixels.shape, noise_seed, base.pixels.astype(np.float64))
    pixels = np.clip(base.pixels.astype(np.float64) + stamp, 0.0, 1.0).astype(np.float32)
    return LabeledImage(pixels, 1, spec.id, base.index, spec.id)


def synthesize(master_seed: int, spec: GeneratorSpec, index: int, size: int) -> LabeledImage:
    base_seed = derive_seed(master_seed, f"base:{spec.id}")
    base = generate_real(base_seed, index, size)
    return apply_trace(base, spec, derive_seed(master_seed, f"noise:{spec.id}", index))


def extract_patch(img: LabeledImage, size: int, mode: str = "center", seed: Optional[int] = None) -> LabeledImage:
    h, w = img.pixels.shape
    if size > h or size > w:
        raise DimensionError(f"patch {size} larger than image {h}x{w}")
    if mode == "center":
        y0, x0 = (h - size) // 2, (w - size) // 2
    elif mode == "random":
        if seed is None:
            raise ConfigError("random patch mode needs a seed", key="seed")
        rng = stream(seed, "patch")
        y0, x0 = int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1))
    else:
        raise ConfigError(f"unknown patch mode {mode!r}", key="mode")
    return LabeledImage(img.pixels[y0:y0 + size, x0:x0 + size], img.label, img.source_id,
                        img.index, img.generator_id)


def center_patches(images: Sequence[LabeledImage], size: int) -> np.ndarray:
    h, w = images[0].pixels.shape
    y0, x0 = (h - size) // 2, (w - size) // 2
    return np.stack([im.pixels[y0:y0 + size, x0:x0 + size] for im in images])


def random_patches(images: Sequence[LabeledImage], size: int, rng: np.random.Generator) -> np.ndarray:
    """One random crop per image, offsets drawn from ``rng`` in order."""
    h, w = images[0].pixels.shape
    ys = rng.integers(0, h - size + 1, len(images))
    xs = rng.integers(0, w - size + 1, len(images))
    return np.stack([im.pixels[y:y + size, x:x + size] for im, y, x in zip(images, ys, xs)])


# -- corpus --------------------------------------------------------------------------

@dataclass
class CorpusConfig:
    baseline: List[GeneratorSpec]
    emerging: List[GeneratorSpec]
    master_seed: int = 0
    image_size: int = 48
    real_counts: Dict[str, int] = field(default_factory=lambda: {"train": 600, "val": 0, "test": 40})
    baseline_counts: Dict[str, int] = field(default_factory=lambda: {"train": 600, "val": 0, "test": 45})
    emerging_counts: Dict[str, int] = field(default_factory=lambda: {"train": 200, "val": 0, "test": 40})

    def validate(self) -> None:
        ids = [s.id for s in self.baseline + self.emerging]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ConfigError(f"duplicate generator ids {dupes}", key="corpus.roster")
        if REAL in ids or BASELINE in ids:
            raise ConfigError(f"generator ids may not be {REAL!r} or {BASELINE!r}", key="corpus.roster")
        if not self.baseline:
            raise ConfigError("at least one baseline generator is required", key="corpus.baseline")
        if self.image_size < 16:
            raise ConfigError("image size must be >= 16", key="corpus.image_size")
        for name, counts in (("real_counts", self.real_counts), ("baseline_counts", self.baseline_counts),
                             ("emerging_counts", self.emerging_counts)):
            if set(counts) - set(SPLITS):
                raise ConfigError(f"unknown split in {sorted(counts)}", key=f"corpus.{name}")
            if any(int(v) < 0 for v in counts.values()):
                raise ConfigError("counts must be >= 0", key=f"corpus.{name}")
        for split, n in self.baseline_counts.items():
            if n % len(self.baseline):
                raise ConfigError(f"{split} count {n} not divisible by {len(self.baseline)} baseline generators",
                                  key="corpus.baseline_counts")

    def spec(self, gid: str) -> GeneratorSpec:
        for s in self.baseline + self.emerging:
            if s.id == gid:
                return s
        raise SourceNotFoundError(gid)


@dataclass
class Corpus:
    config: CorpusConfig
    pools: Dict[tuple, List[LabeledImage]]  # (source_id, split) -> images
    manifest: Dict[str, Dict[str, int]]

    @property
    def master_seed(self) -> int:
        return self.config.master_seed

    @property
    def sources(self) -> List[str]:
        return list(self.manifest)

    @property
    def images(self) -> List[LabeledImage]:
        return [im for pool in self.pools.values() for im in pool]

    def checksum(self) -> str:
        h = hashlib.sha256()
        for key in sorted(self.pools):
            h.update(repr(key).encode())
            for im in self.pools[key]:
                h.update(im.pixels.tobytes())
        return h.hexdigest()


def _split_ranges(counts: Dict[str, int]):
    start = 0
    for split in SPLITS:
        n = int(counts.get(split, 0))
        yield split, range(start, start + n)
        start += n


def build_corpus(config: CorpusConfig) -> Corpus:
    """Deterministic corpus; each pool's sample indices follow train, val, test order,
    so splits of one source never share an index."""
    config.validate()
    size = config.image_size
    seed = config.master_seed
    real_seed = derive_seed(seed, "real")
    pools: Dict[tuple, List[LabeledImage]] = {}
    manifest: Dict[str, Dict[str, int]] = {}

    manifest[REAL] = {}
    for split, idx in _split_ranges(config.real_counts):
        pools[(REAL, split)] = [generate_real(real_seed, i, size) for i in idx]
        manifest[REAL][split] = len(idx)

    nb = len(config.baseline)
    per_spec = {s: n // nb for s, n in config.baseline_counts.items()}
    manifest[BASELINE] = {s: 0 for s in SPLITS}
    for split in SPLITS:
        pools[(BASELINE, split)] = []
    for spec in config.baseline:
        for split, idx in _split_ranges(per_spec):
            imgs = [synthesize(seed, spec, i, size) for i in idx]
            for im in imgs:
                im.source_id = BASELINE
            pools[(BASELINE, split)].extend(imgs)
            manifest[BASELINE][split] += len(idx)
    # interleave baseline generators so any prefix is balanced
    for split in SPLITS:
        pool = pools[(BASELINE, split)]
        pools[(BASELINE, split)] = [im for group in zip(*[
            [im for im in pool if im.generator_id == s.id] for s in config.baseline]) for im in group]

    for spec in config.emerging:
        manifest[spec.id] = {}
        for split, idx in _split_ranges(config.emerging_counts):
            pools[(spec.id, split)] = [synthesize(seed, spec, i, size) for i in idx]
            manifest[spec.id][split] = len(idx)
    for src in manifest:
        for split in SPLITS:
            manifest[src].setdefault(split, 0)
    return Corpus(config, pools, manifest)


def split_corpus(corpus: Corpus, source_id: str, split: str) -> List[LabeledImage]:
    if source_id not in corpus.manifest:
        raise SourceNotFoundError(source_id)
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}", key="split")
    return list(corpus.pools.get((source_id, split), []))


# -- export / import ---------------------------------------------------------------------

def export_corpus(corpus: Corpus, out_dir) -> Path:
    """Write ``manifest.json`` plus ``<split>.f32``: little-endian float32 [count x H x W].

    Within each split file, images are ordered by source (manifest order), then
    by their position in the pool; the manifest records the per-image source,
    generator and index in the same order.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    size = corpus.config.image_size
    layout = {}
    for split in SPLITS:
        imgs = [im for src in corpus.manifest for im in corpus.pools.get((src, split), [])]
        arr = np.stack([im.pixels for im in imgs]) if imgs else np.zeros((0, size, size), np.float32)
        (out / f"{split}.f32").write_bytes(arr.astype("<f4").tobytes())
        layout[split] = {
            "file": f"{split}.f32", "count": len(imgs), "height": size, "width": size,
            "items": [[im.source_id, im.generator_id or im.source_id, im.index, im.label] for im in imgs],
        }
    manifest = {
        "format_version": CORPUS_FORMAT_VERSION,
        "dtype": "float32-le",
        "layout": "count x height x width, row-major",
        "master_seed": corpus.config.master_seed,
        "image_size": size,
        "sources": corpus.manifest,
        "baseline": [s.to_dict() for s in corpus.config.baseline],
        "emerging": [s.to_dict() for s in corpus.config.emerging],
        "counts": {"real": corpus.config.real_counts, "baseline": corpus.config.baseline_counts,
                   "emerging": corpus.config.emerging_counts},
        "checksum": corpus.checksum(),
        "splits": layout,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return out


def load_corpus(in_dir) -> Corpus:
    src = Path(in_dir)
    try:
        manifest = json.loads((src / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read corpus manifest: {exc}") from exc
    if manifest.get("format_version") != CORPUS_FORMAT_VERSION:
        raise FormatError(f"unsupported corpus format {manifest.get('format_version')}")
    cfg = CorpusConfig(
        baseline=[GeneratorSpec.from_dict(d) for d in manifest["baseline"]],
        emerging=[GeneratorSpec.from_dict(d) for d in manifest["emerging"]],
        master_seed=manifest["master_seed"], image_size=manifest["image_size"],
        real_counts=manifest["counts"]["real"], baseline_counts=manifest["counts"]["baseline"],
        emerging_counts=manifest["counts"]["emerging"],
    )
    pools: Dict[tuple, List[LabeledImage]] = {}
    for split, info in manifest["splits"].items():
        raw = (src / info["file"]).read_bytes()
        expected = info["count"] * info["height"] * info["width"] * 4
        if len(raw) != expected:
            raise FormatError(f"{info['file']}: {len(raw)} bytes, expected {expected}")
        arr = np.frombuffer(raw, dtype="<f4").reshape(info["count"], info["height"], info["width"])
        for (source, gen, index, label), px in zip(info["items"], arr):
            pools.setdefault((source, split), []).append(
                LabeledImage(px.astype(np.float32), int(label), source, int(index),
                             None if gen == source and source == REAL else gen))
    for s in manifest["sources"]:
        for split in SPLITS:
            pools.setdefault((s, split), [])
    corpus = Corpus(cfg, pools, {k: dict(v) for k, v in manifest["sources"].items()})
    if corpus.checksum() != manifest["checksum"]:
        raise FormatError("corpus checksum mismatch")
    return corpus
