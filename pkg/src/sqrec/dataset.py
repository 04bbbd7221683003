"""Synthetic range-image dataset generation, persistence, and splits.

Ground-truth parameters are drawn uniformly from per-group ranges, rendered
to SQRI image files under ``images/``, and indexed by a line-delimited
manifest.  The generator RNG is counter-based (Philox) with one substream
per record, so any record and the whole dataset regenerate byte-identically
from (seed, ranges, render config) regardless of scheduling.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import SuperquadricParams
from .rendering import (RangeImage, RenderConfig, read_range_image,
                        render_range_image, write_range_image)

MANIFEST_NAME = "manifest.tsv"
MANIFEST_MAGIC = "sqrec-manifest"
MANIFEST_VERSION = 1
INCOMPLETE_MARKER = "_INCOMPLETE"
UNSPLIT = "-"

DEFAULT_SPLIT_NAMES = {1: ("all",), 2: ("train", "val"), 3: ("train", "val", "test")}


class DatasetError(RuntimeError):
    """Manifest or record-level failure (missing file, bad header, truncation)."""


@dataclass(frozen=True)
class SamplingRanges:
    """Uniform sampling intervals for center, dimension, and shape parameters."""

    center: tuple = (25.0, 230.0)
    dims: tuple = (25.0, 75.0)
    shape: tuple = (0.1, 1.0)

    def __post_init__(self):
        for name in ("center", "dims", "shape"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"empty or invalid {name} range ({lo}, {hi})")

    def contains(self, params: SuperquadricParams) -> bool:
        arr = params.as_array()
        lows, highs = self.bounds()
        return bool(np.all(arr >= lows) and np.all(arr <= highs))

    def bounds(self):
        lows = np.array([self.dims[0]] * 3 + [self.shape[0]] * 2 + [self.center[0]] * 3)
        highs = np.array([self.dims[1]] * 3 + [self.shape[1]] * 2 + [self.center[1]] * 3)
        return lows, highs


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    params: SuperquadricParams
    split: str = UNSPLIT


@dataclass
class DatasetManifest:
    root: Path
    seed: int
    ranges: SamplingRanges
    render_config: RenderConfig
    records: list

    def __len__(self) -> int:
        return len(self.records)

    def split_indices(self, split: str) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.records) if r.split == split],
                        dtype=np.int64)

    def splits(self) -> tuple:
        seen = []
        for r in self.records:
            if r.split not in seen:
                seen.append(r.split)
        return tuple(seen)


def record_rng(seed: int, index: int) -> np.random.Generator:
    """Deterministic per-record substream of the dataset RNG."""
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    return np.random.Generator(np.random.Philox(key=seed, counter=index << 128))


def sample_params(rng: np.random.Generator, ranges: SamplingRanges) -> SuperquadricParams:
    """Draw the 8 parameters independently and uniformly, in canonical order."""
    a1, a2, a3 = (rng.uniform(*ranges.dims) for _ in range(3))
    eps1, eps2 = (rng.uniform(*ranges.shape) for _ in range(2))
    x0, y0, z0 = (rng.uniform(*ranges.center) for _ in range(3))
    return SuperquadricParams(a1, a2, a3, eps1, eps2, x0, y0, z0)


def generate_dataset(count: int, seed: int, ranges: SamplingRanges,
                     render_cfg: RenderConfig, out_dir) -> DatasetManifest:
    """Render ``count`` sampled shapes into ``out_dir`` and write the manifest.

    A marker file flags the directory as incomplete until the final manifest
    is in place, so an interrupted run is never mistaken for a dataset.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    marker = root / INCOMPLETE_MARKER
    marker.write_text("generation in progress or aborted\n")

    records = []
    for i in range(count):
        rng = record_rng(seed, i)
        params = sample_params(rng, ranges)
        img = render_range_image(params, render_cfg)
        rel = f"images/{i:06d}.sqri"
        write_range_image(img, root / rel)
        records.append(ManifestRecord(rel, params))
    manifest = DatasetManifest(root, seed, ranges, render_cfg, records)
    save_manifest(manifest)
    marker.unlink()
    return manifest


def validate_fractions(fractions) -> tuple:
    fractions = tuple(float(f) for f in fractions)
    if not fractions or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be non-negative")
    return fractions


def split_dataset(manifest: DatasetManifest, fractions, seed: int,
                  names=None) -> DatasetManifest:
    """Assign a split tag to every record: disjoint, exhaustive, seeded.

    Returns a new manifest; the input is left untouched.
    """
    fractions = validate_fractions(fractions)
    if names is None:
        names = DEFAULT_SPLIT_NAMES.get(
            len(fractions), tuple(f"split{i}" for i in range(len(fractions))))
    if len(names) != len(fractions):
        raise ValueError("one name per fraction required")

    n = len(manifest.records)
    bounds = np.round(np.cumsum(fractions) * n).astype(int)
    bounds[-1] = n
    perm = np.random.Generator(np.random.Philox(key=seed)).permutation(n)
    tags = [None] * n
    start = 0
    for name, stop in zip(names, bounds):
        for idx in perm[start:stop]:
            tags[idx] = name
        start = stop
    new_records = [replace(r, split=tags[i]) for i, r in enumerate(manifest.records)]
    return replace_manifest_records(manifest, new_records)


def replace_manifest_records(manifest: DatasetManifest, records) -> DatasetManifest:
    return DatasetManifest(manifest.root, manifest.seed, manifest.ranges,
                           manifest.render_config, list(records))


def load_record(manifest: DatasetManifest, index: int):
    """Decode one (RangeImage, ground truth) pair, bit-exactly as stored."""
    if not (0 <= index < len(manifest.records)):
        raise IndexError(f"record index {index} out of range [0, {len(manifest.records)})")
    rec = manifest.records[index]
    path = manifest.root / rec.path
    if not path.exists():
        raise DatasetError(f"missing image file {path}")
    img = read_range_image(path)
    if (img.width, img.height) != (manifest.render_config.width, manifest.render_config.height):
        raise DatasetError(
            f"{path}: image is {img.width}x{img.height}, manifest expects "
            f"{manifest.render_config.width}x{manifest.render_config.height}")
    return img, rec.params


def load_split_arrays(manifest: DatasetManifest, split: str):
    """All images and ground truths of one split as dense arrays.

    Returns (depths (N,H,W) float64, params (N,8) float64) in record order.
    """
    idx = manifest.split_indices(split)
    if idx.size == 0:
        raise DatasetError(f"split {split!r} is empty or unknown "
                           f"(available: {manifest.splits()})")
    cfg = manifest.render_config
    depths = np.empty((idx.size, cfg.height, cfg.width))
    params = np.empty((idx.size, 8))
    for row, i in enumerate(idx):
        img, p = load_record(manifest, int(i))
        depths[row] = img.depths
        params[row] = p.as_array()
    return depths, params


def _render_config_json(cfg: RenderConfig) -> str:
    payload = {
        "width": cfg.width, "height": cfg.height,
        "view_dir": list(cfg.view_dir),
        "surface_tol": cfg.surface_tol, "step": cfg.step,
        "bisect_iters": cfg.bisect_iters,
        "screen_half_extent": cfg.screen_half_extent,
    }
    return json.dumps(payload, sort_keys=True)


def _render_config_from_json(text: str) -> RenderConfig:
    payload = json.loads(text)
    payload["view_dir"] = tuple(payload["view_dir"])
    return RenderConfig(**payload)


def save_manifest(manifest: DatasetManifest, path=None) -> Path:
    path = Path(path) if path is not None else manifest.root / MANIFEST_NAME
    lines = [
        f"{MANIFEST_MAGIC}\t{MANIFEST_VERSION}",
        f"seed\t{manifest.seed}",
        "ranges\t" + "\t".join(repr(float(v)) for pair in
                               (manifest.ranges.center, manifest.ranges.dims,
                                manifest.ranges.shape) for v in pair),
        f"render\t{_render_config_json(manifest.render_config)}",
        f"count\t{len(manifest.records)}",
    ]
    for rec in manifest.records:
        vals = "\t".join(repr(float(v)) for v in rec.params.as_array())
        lines.append(f"{rec.path}\t{vals}\t{rec.split}")
    path.write_text("\n".join(lines) + "\n", encoding="ascii")
    return path


def load_manifest(root) -> DatasetManifest:
    """Read a dataset directory; refuses incomplete or malformed layouts."""
    root = Path(root)
    if root.is_file():
        root, path = root.parent, root
    else:
        path = root / MANIFEST_NAME
    if (root / INCOMPLETE_MARKER).exists():
        raise DatasetError(f"{root}: dataset generation did not finish "
                           f"({INCOMPLETE_MARKER} marker present)")
    if not path.exists():
        raise DatasetError(f"no manifest at {path}")
    lines = path.read_text(encoding="ascii").splitlines()
    if len(lines) < 5 or not lines[0].startswith(MANIFEST_MAGIC):
        raise DatasetError(f"{path}: not a dataset manifest")
    version = int(lines[0].split("\t")[1])
    if version != MANIFEST_VERSION:
        raise DatasetError(f"{path}: unsupported manifest version {version}")
    seed = int(lines[1].split("\t")[1])
    rvals = [float(v) for v in lines[2].split("\t")[1:]]
    ranges = SamplingRanges(center=(rvals[0], rvals[1]), dims=(rvals[2], rvals[3]),
                            shape=(rvals[4], rvals[5]))
    render_cfg = _render_config_from_json(lines[3].split("\t", 1)[1])
    count = int(lines[4].split("\t")[1])
    records = []
    for line in lines[5:]:
        parts = line.split("\t")
        if len(parts) != 10:
            raise DatasetError(f"{path}: malformed record line {line!r}")
        params = SuperquadricParams.from_array([float(v) for v in parts[1:9]])
        records.append(ManifestRecord(parts[0], params, parts[9]))
    if len(records) != count:
        raise DatasetError(f"{path}: declared {count} records, found {len(records)}")
    return DatasetManifest(root, seed, ranges, render_cfg, records)


def dataset_digest(manifest: DatasetManifest) -> str:
    """SHA-256 over the manifest file and every image payload, in order."""
    h = hashlib.sha256()
    h.update((manifest.root / MANIFEST_NAME).read_bytes())
    for rec in manifest.records:
        h.update((manifest.root / rec.path).read_bytes())
    return h.hexdigest()
