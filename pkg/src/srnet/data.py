"""File formats, synthetic scenes and the RGB camera model.

Cubes travel in a small binary container (magic ``HSC1``, three little-endian
u32 dims, float32 band-major payload, all values in [0, 1]). RGB images are
ordinary 8-bit PNGs. A dataset is a directory with a tab-separated manifest
pairing each PNG with its cube.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "CameraResponse",
    "DataError",
    "FormatError",
    "Manifest",
    "ManifestEntry",
    "SynthSpec",
    "default_camera_response",
    "generate_dataset",
    "load_pairs",
    "project_rgb",
    "read_cube",
    "read_manifest",
    "read_rgb",
    "synth_cube",
    "write_cube",
    "write_rgb",
]

HSC1_MAGIC = b"HSC1"
HSC1_HEADER = 16  # magic + bands,h,w as <u32


class FormatError(ValueError):
    """A file does not follow its declared binary or text layout."""


class DataError(ValueError):
    """In-memory data violates a contract (shape, range, pairing)."""


# ---------------------------------------------------------------------------
# cube container


def write_cube(path, cube: np.ndarray) -> None:
    """Store a (bands, h, w) array with values in [0, 1] as an HSC1 file."""
    arr = np.asarray(cube)
    if arr.ndim != 3:
        raise DataError(f"cube must be 3-d (bands, h, w), got shape {arr.shape}")
    if 0 in arr.shape:
        raise DataError(f"cube has an empty dimension: shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError("cube contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError(
            f"cube values must lie in [0, 1], got range "
            f"[{arr.min():.6g}, {arr.max():.6g}]"
        )
    b, h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(HSC1_MAGIC)
        fh.write(struct.pack("<III", b, h, w))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_cube(path) -> np.ndarray:
    """Load an HSC1 file as float32 (bands, h, w); validates layout and range."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < HSC1_HEADER:
        raise FormatError(
            f"truncated header: {len(buf)} bytes, need {HSC1_HEADER}"
        )
    if buf[:4] != HSC1_MAGIC:
        raise FormatError(
            f"bad magic {buf[:4]!r} at offset 0 (want {HSC1_MAGIC!r})"
        )
    b, h, w = struct.unpack_from("<III", buf, 4)
    if b == 0 or h == 0 or w == 0:
        raise FormatError(f"zero dimension in header: bands={b} h={h} w={w}")
    expect = HSC1_HEADER + 4 * b * h * w
    if len(buf) != expect:
        raise FormatError(
            f"size mismatch: header declares {b}x{h}x{w} "
            f"({expect} bytes total), file has {len(buf)}"
        )
    flat = np.frombuffer(buf, dtype="<f4", offset=HSC1_HEADER)
    bad = ~np.isfinite(flat)
    if bad.any():
        i = int(np.argmax(bad))
        raise FormatError(
            f"non-finite value at element {i} (byte offset {HSC1_HEADER + 4 * i})"
        )
    out_of_range = (flat < 0.0) | (flat > 1.0)
    if out_of_range.any():
        i = int(np.argmax(out_of_range))
        raise FormatError(
            f"value {flat[i]!r} outside [0, 1] at element {i} "
            f"(byte offset {HSC1_HEADER + 4 * i})"
        )
    return flat.reshape(b, h, w).astype(np.float32)


# ---------------------------------------------------------------------------
# PNG I/O, channel-first float convention


def read_rgb(path) -> np.ndarray:
    """Load an RGB PNG as float32 (3, h, w) scaled to [0, 1]."""
    try:
        img = Image.open(path)
        img.load()
    except FileNotFoundError:
        raise
    except Exception as e:
        raise DataError(f"cannot read image {path}: {e}") from e
    if img.mode != "RGB":
        raise DataError(f"expected an RGB image, got mode {img.mode!r}: {path}")
    arr = np.asarray(img, dtype=np.uint8)
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1)


def write_rgb(path, rgb: np.ndarray) -> None:
    """Store float (3, h, w) values in [0, 1] as an 8-bit RGB PNG."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DataError(f"rgb must have shape (3, h, w), got {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError("rgb contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DataError(
            f"rgb values must lie in [0, 1], got range "
            f"[{arr.min():.6g}, {arr.max():.6g}]"
        )
    quant = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(quant.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


# ---------------------------------------------------------------------------
# camera model


@dataclass
class CameraResponse:
    """Rows are the R, G, B sensitivity curves over the cube's bands.

    Each row is nonnegative and sums to one, so projecting a [0, 1] cube
    yields a [0, 1] image.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != 3:
            raise DataError(f"camera matrix must be (3, bands), got {m.shape}")
        if (m < 0).any():
            raise DataError("camera matrix entries must be nonnegative")
        sums = m.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-9):
            raise DataError(f"camera matrix rows must sum to 1, got {sums}")
        self.matrix = m

    @property
    def bands(self) -> int:
        return self.matrix.shape[1]


def default_camera_response(bands: int = 31) -> CameraResponse:
    """Gaussian sensitivities, sigma 4 bands, peaked so that with bands
    indexed short-to-long wavelength blue peaks low (5), green mid (15),
    red high (25)."""
    idx = np.arange(bands, dtype=np.float64)
    rows = []
    for center in (25.0, 15.0, 5.0):
        row = np.exp(-0.5 * ((idx - center) / 4.0) ** 2)
        rows.append(row / row.sum())
    return CameraResponse(np.stack(rows))


def project_rgb(cube: np.ndarray, camera: CameraResponse) -> np.ndarray:
    """Integrate a (bands, h, w) cube against the camera rows -> (3, h, w)."""
    arr = np.asarray(cube, dtype=np.float64)
    if arr.ndim != 3:
        raise DataError(f"cube must be 3-d, got shape {arr.shape}")
    if arr.shape[0] != camera.bands:
        raise DataError(
            f"cube has {arr.shape[0]} bands but camera expects {camera.bands}"
        )
    return np.tensordot(camera.matrix, arr, axes=1)


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass
class SynthSpec:
    """Knobs for the random scene generator.

    Scenes are a smooth spectral background plus a few Gaussian blobs, each
    with its own Gaussian spectral signature. ``base_level=(0, 0)`` removes
    the background entirely.
    """

    bands: int = 31
    height: int = 64
    width: int = 64
    blob_count: tuple[int, int] = (1, 3)
    amplitude: tuple[float, float] = (0.35, 0.7)
    spatial_sigma: tuple[float, float] = (0.18, 0.35)
    spectral_sigma: tuple[float, float] = (4.0, 8.0)
    base_level: tuple[float, float] = (0.25, 0.4)


def synth_cube(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw one random scene as float32 (bands, h, w) clipped to [0, 1]."""
    b, h, w = spec.bands, spec.height, spec.width
    idx = np.arange(b, dtype=np.float64)
    ys = (np.arange(h, dtype=np.float64) + 0.5) / h
    xs = (np.arange(w, dtype=np.float64) + 0.5) / w
    cube = np.zeros((b, h, w), dtype=np.float64)

    lo, hi = spec.base_level
    if hi > 0:
        level = rng.uniform(lo, hi)
        center = rng.uniform(0.0, b - 1.0)
        sigma = rng.uniform(0.5 * b, 0.9 * b)
        profile = np.exp(-0.5 * ((idx - center) / sigma) ** 2)
        # keep the floor at half the base level so no band goes near zero
        cube += (level * (0.5 + 0.5 * profile))[:, None, None]

    n_blobs = int(rng.integers(spec.blob_count[0], spec.blob_count[1] + 1))
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        s = rng.uniform(*spec.spatial_sigma)
        amp = rng.uniform(*spec.amplitude)
        sc = rng.uniform(0.0, b - 1.0)
        ss = rng.uniform(*spec.spectral_sigma)
        spatial = np.exp(-(((ys - cy)[:, None]) ** 2
                           + ((xs - cx)[None, :]) ** 2) / (2.0 * s * s))
        spectral = np.exp(-0.5 * ((idx - sc) / ss) ** 2)
        cube += amp * spectral[:, None, None] * spatial[None, :, :]

    return np.clip(cube, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# dataset manifests


@dataclass
class ManifestEntry:
    index: int
    rgb: Path
    cube: Path


@dataclass
class Manifest:
    seed: int
    entries: list[ManifestEntry] = field(default_factory=list)


def generate_dataset(out_dir, count: int, spec: SynthSpec, seed: int,
                     camera: CameraResponse | None = None) -> Manifest:
    """Render ``count`` scenes to ``out_dir`` and write manifest.tsv.

    Scene ``i`` depends only on (seed, i), so growing a dataset reproduces
    its existing members.
    """
    if count < 1:
        raise DataError(f"count must be >= 1, got {count}")
    camera = camera or default_camera_response(spec.bands)
    if camera.bands != spec.bands:
        raise DataError(
            f"camera expects {camera.bands} bands, spec has {spec.bands}"
        )
    out = Path(out_dir)
    (out / "rgb").mkdir(parents=True, exist_ok=True)
    (out / "cubes").mkdir(parents=True, exist_ok=True)
    manifest = Manifest(seed=seed)
    lines = [f"seed={seed}"]
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        cube = synth_cube(spec, rng)
        # row sums are 1 only to rounding, so the projection can poke a few
        # ulp past the unit range
        rgb = np.clip(project_rgb(cube, camera), 0.0, 1.0)
        rgb_rel = Path("rgb") / f"{i:04d}.png"
        cube_rel = Path("cubes") / f"{i:04d}.hsc"
        write_rgb(out / rgb_rel, rgb)
        write_cube(out / cube_rel, cube)
        manifest.entries.append(ManifestEntry(i, out / rgb_rel, out / cube_rel))
        lines.append(f"{i}\t{rgb_rel.as_posix()}\t{cube_rel.as_posix()}")
    (out / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def read_manifest(path) -> Manifest:
    """Parse manifest.tsv; entry paths are resolved against its directory."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith("seed="):
        raise FormatError(f"{path}: line 1 must be 'seed=<int>'")
    try:
        seed = int(lines[0][len("seed="):])
    except ValueError:
        raise FormatError(f"{path}: line 1 has a non-integer seed") from None
    manifest = Manifest(seed=seed)
    root = path.parent
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(
                f"{path}: line {lineno} has {len(parts)} fields, want 3"
            )
        try:
            index = int(parts[0])
        except ValueError:
            raise FormatError(
                f"{path}: line {lineno} has a non-integer index {parts[0]!r}"
            ) from None
        manifest.entries.append(
            ManifestEntry(index, root / parts[1], root / parts[2])
        )
    if not manifest.entries:
        raise FormatError(f"{path}: manifest lists no image pairs")
    return manifest


def load_pairs(manifest: Manifest) -> list[tuple[np.ndarray, np.ndarray]]:
    """Load all (rgb, cube) pairs as float32 channel-first arrays."""
    pairs = []
    for entry in manifest.entries:
        rgb = read_rgb(entry.rgb)
        cube = read_cube(entry.cube)
        if rgb.shape[1:] != cube.shape[1:]:
            raise DataError(
                f"pair {entry.index}: rgb is {rgb.shape[1:]}, "
                f"cube is {cube.shape[1:]}"
            )
        pairs.append((rgb, cube))
    return pairs
