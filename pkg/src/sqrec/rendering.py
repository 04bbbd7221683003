"""Orthographic isometric range-image rendering of superquadrics.

The camera looks down the (-1,-1,-1) cube diagonal of the 256-voxel frame,
so three faces of an axis-aligned shape are visible at once.  Rays are cast
per pixel; the first crossing of the implicit surface is bracketed by
fixed-step marching and refined by bisection.

Depth encoding: a hit at world point (x, y, z) is stored as
``depth = (x + y + z) / 3``, which equals 256 minus the diagonal-normalized
distance from the near plane touching the (256, 256, 256) corner.  Depths of
points inside the frame therefore lie in (0, 256]; larger means closer to
the viewer; 0 marks background.

The depth window doubles as a clipping volume: surface parts nearer than
the near plane (or behind the far plane) are not representable, so rays
only march inside the window and a ray that is already interior to the
solid when it enters the window records background, exactly like a
near-plane clip.  Shapes fully inside the frame are never clipped.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import FRAME_SIZE, SuperquadricParams, implicit_values

SQRI_MAGIC = b"SQRI"
SQRI_VERSION = 1
SQRI_HEADER = struct.Struct("<4sHHH6x")  # magic, version, width, height, reserved

# Half-extent of the image window in world units, per screen axis.  The
# isometric projection of the whole 256^3 frame spans at most 2*256/sqrt(6)
# on either side of the frame center, so this window shows every shape that
# fits in the frame.
DEFAULT_SCREEN_HALF_EXTENT = 2.0 * FRAME_SIZE / np.sqrt(6.0)

_DIAG = np.sqrt(3.0)


class RenderError(RuntimeError):
    """Rendering failed for the whole image; no partial output is produced."""


class FormatError(ValueError):
    """A range-image file did not match the SQRI format."""


@dataclass(frozen=True)
class RenderConfig:
    """Camera and ray-marching settings for one projection."""

    width: int = 256
    height: int = 256
    view_dir: tuple = (-1.0 / _DIAG, -1.0 / _DIAG, -1.0 / _DIAG)
    surface_tol: float = 1e-4
    step: float = 0.5
    bisect_iters: int = 50
    screen_half_extent: float = DEFAULT_SCREEN_HALF_EXTENT

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.step <= 0.0 or self.surface_tol <= 0.0:
            raise ValueError("step and surface_tol must be > 0")
        d = np.asarray(self.view_dir, dtype=np.float64)
        if d.shape != (3,) or abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError(f"view_dir must be a unit 3-vector, got {self.view_dir}")

    @property
    def pixel_size(self) -> float:
        return 2.0 * self.screen_half_extent / self.width

    def basis(self):
        """Orthonormal (toward-viewer, screen-right, screen-up) triple."""
        e = -np.asarray(self.view_dir, dtype=np.float64)
        up = np.array([0.0, 0.0, 1.0])
        u = np.cross(e, up)
        if np.linalg.norm(u) < 1e-12:
            u = np.cross(e, np.array([1.0, 0.0, 0.0]))
        u /= np.linalg.norm(u)
        v = np.cross(e, u)
        return e, u, v

    def pixel_screen_coords(self):
        """Per-pixel (right, up) screen offsets from the frame center."""
        pix = self.pixel_size
        su = (np.arange(self.width) + 0.5) * pix - self.screen_half_extent
        sv = (self.height / 2.0 - (np.arange(self.height) + 0.5)) * pix
        return su, sv

    def digest_string(self) -> str:
        d = ",".join(repr(c) for c in self.view_dir)
        return (f"render(w={self.width},h={self.height},dir=[{d}],tol={self.surface_tol!r},"
                f"step={self.step!r},bisect={self.bisect_iters},half={self.screen_half_extent!r})")


@dataclass
class RangeImage:
    """Row-major grid of depths; 0 is background, nonzero lies in (0, 256]."""

    width: int
    height: int
    depths: np.ndarray

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=np.float64)
        if self.depths.shape != (self.height, self.width):
            raise ValueError(
                f"depth grid shape {self.depths.shape} does not match "
                f"{self.height}x{self.width}")
        if not np.all(np.isfinite(self.depths)):
            raise ValueError("depths must be finite")
        nonzero = self.depths[self.depths != 0.0]
        if nonzero.size and (nonzero.min() <= 0.0 or nonzero.max() > FRAME_SIZE):
            raise ValueError("nonzero depths must lie in (0, 256]")

    @property
    def nonzero_mask(self) -> np.ndarray:
        return self.depths != 0.0

    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.depths))


def _pixel_ray_origins(cfg: RenderConfig):
    """(H, W, 3) screen-plane points at k = 0 plus the basis used."""
    e, u, v = cfg.basis()
    su, sv = cfg.pixel_screen_coords()
    base = su[None, :, None] * u + sv[:, None, None] * v
    return base, e


def render_range_image(params: SuperquadricParams, cfg: RenderConfig) -> RangeImage:
    """Cast one orthographic ray per pixel and record first-hit depths."""
    base, e = _pixel_ray_origins(cfg)
    flat = base.reshape(-1, 3)
    center = params.center
    radius = params.bounding_radius()

    # Along-axis coordinate k = p . e; the viewer sits at large k.  Rays
    # march across their bounding-sphere chord intersected with the depth
    # window, so every recorded hit is representable.
    cb = center - flat
    mid = cb @ e
    disc = mid ** 2 - (np.einsum("ij,ij->i", cb, cb) - radius ** 2)
    k_near = FRAME_SIZE * _DIAG

    depths = np.zeros(flat.shape[0])
    candidates = np.nonzero(disc > 0.0)[0]
    if candidates.size:
        half = np.sqrt(disc[candidates])
        k_hi = np.minimum(mid[candidates] + half, k_near)
        k_lo = np.maximum(mid[candidates] - half, 1e-9)
        windowed = k_hi > k_lo
        candidates = candidates[windowed]
        k_hi, k_lo = k_hi[windowed], k_lo[windowed]
    if candidates.size:
        hit_idx, hit_k = _march(params, flat[candidates], e, k_hi, k_lo, cfg)
        if hit_idx.size:
            pts = flat[candidates][hit_idx] + hit_k[:, None] * e
            final = implicit_values(params, pts)
            if np.any(np.abs(final - 1.0) > cfg.surface_tol):
                raise RenderError(
                    f"bisection left |F-1| up to {np.abs(final - 1.0).max():.3g} "
                    f"above tolerance {cfg.surface_tol}")
            d = hit_k / _DIAG
            if np.any(d <= 0.0) or np.any(d > FRAME_SIZE):
                raise RenderError("internal: hit escaped the depth window")
            depths[candidates[hit_idx]] = d
    return RangeImage(cfg.width, cfg.height, depths.reshape(cfg.height, cfg.width))


def _march(params, origins, e, k_hi, k_lo, cfg):
    """Bracket the first F=1 crossing per ray, then bisect.

    Returns (indices into origins, refined k values) for rays that hit.
    """
    n = origins.shape[0]
    alive = np.arange(n)
    k_prev = k_hi.copy()
    f_entry = implicit_values(params, origins + k_prev[:, None] * e)

    # A ray already on or inside the surface where it enters the march
    # window has no outside-to-inside crossing to bracket: it is clipped
    # (window entry inside the solid) or tangent, and records background.
    bracket_out = np.empty(n)
    bracket_in = np.empty(n)
    hit = np.zeros(n, dtype=bool)
    alive = alive[f_entry > 1.0]

    while alive.size:
        k_next = np.maximum(k_prev[alive] - cfg.step, k_lo[alive])
        f_next = implicit_values(params, origins[alive] + k_next[:, None] * e)
        crossed = f_next <= 1.0
        if np.any(crossed):
            idx = alive[crossed]
            bracket_out[idx] = k_prev[idx]
            bracket_in[idx] = k_next[crossed]
            hit[idx] = True
        exhausted = ~crossed & (k_next <= k_lo[alive])
        keep = ~crossed & ~exhausted
        k_prev[alive[keep]] = k_next[keep]
        alive = alive[keep]

    hit_idx = np.nonzero(hit)[0]
    if not hit_idx.size:
        return hit_idx, np.empty(0)
    out = bracket_out[hit_idx]
    inn = bracket_in[hit_idx]
    pts = origins[hit_idx]
    for _ in range(cfg.bisect_iters):
        k_mid = 0.5 * (out + inn)
        f_mid = implicit_values(params, pts + k_mid[:, None] * e)
        inside = f_mid <= 1.0
        inn = np.where(inside, k_mid, inn)
        out = np.where(inside, out, k_mid)
    return hit_idx, 0.5 * (out + inn)


def range_image_to_points(img: RangeImage, cfg: RenderConfig) -> np.ndarray:
    """Invert the projection: one world point per nonzero pixel, row-major."""
    if (img.width, img.height) != (cfg.width, cfg.height):
        raise ValueError(
            f"image is {img.width}x{img.height} but config projects "
            f"{cfg.width}x{cfg.height}")
    base, e = _pixel_ray_origins(cfg)
    mask = img.nonzero_mask
    k = img.depths[mask] * _DIAG
    return base[mask] + k[:, None] * e


def write_range_image(img: RangeImage, path) -> None:
    """Persist in the SQRI binary format (float32 little-endian payload)."""
    header = SQRI_HEADER.pack(SQRI_MAGIC, SQRI_VERSION, img.width, img.height)
    payload = img.depths.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_range_image(path) -> RangeImage:
    """Load an SQRI file; any header or size mismatch raises FormatError."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < SQRI_HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, width, height = SQRI_HEADER.unpack_from(raw)
    if magic != SQRI_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != SQRI_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = SQRI_HEADER.size + 4 * width * height
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    depths = np.frombuffer(raw, dtype="<f4", offset=SQRI_HEADER.size)
    depths = depths.reshape(height, width).astype(np.float64)
    return RangeImage(width, height, depths)


def write_pgm(img: RangeImage, path) -> None:
    """16-bit PGM export for visual inspection; depth mapped onto [0, 65535]."""
    levels = np.round(img.depths / FRAME_SIZE * 65535.0).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n65535\n".encode("ascii"))
        fh.write(levels.tobytes(order="C"))
