"""Raster decoding, grayscale conversion, and patch/cell geometry.

Native support covers binary netpbm files (P5 graymaps, P6 pixmaps). Other
formats go through an optional adapter backed by Pillow when it is
installed. Color inputs become luminance with weights 0.299/0.587/0.114.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, InvalidInputError, UnsupportedFormatError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class IntensityImage:
    """Grayscale image; `pixels` is a row-major (height x width) array in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidInputError(f"pixels must be 2-D and nonempty, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise InvalidInputError("pixel values must lie in [0, 1]")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class PatchGrid:
    """Flattened overlapping patches plus the pixel center of each.

    Patches are mean-subtracted individually, so a constant image yields
    all-zero patches. `patches` has one patch per row; `centers` holds
    (row, col) pixel coordinates; `grid_shape` is the (rows, cols) layout.
    """

    patch_size: int
    stride: int
    origin: tuple[float, float]
    patches: np.ndarray
    centers: np.ndarray
    grid_shape: tuple[int, int]

    @property
    def count(self) -> int:
        return self.patches.shape[0]


def _parse_netpbm(raw: bytes, path) -> IntensityImage:
    magic = raw[:2]
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        token = raw[start:pos]
        if not token.isdigit():
            raise DecodeError(f"{path}: malformed netpbm header")
        fields.append(int(token))
    pos += 1  # single whitespace byte separates header from samples
    width, height, maxval = fields
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise DecodeError(f"{path}: invalid netpbm dimensions {width}x{height} maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    wide = maxval > 255
    sample_bytes = 2 if wide else 1
    need = width * height * channels * sample_bytes
    data = raw[pos : pos + need]
    if len(data) < need:
        raise DecodeError(f"{path}: truncated pixel data ({len(data)} of {need} bytes)")
    dtype = ">u2" if wide else np.uint8
    values = np.frombuffer(data, dtype=dtype).astype(np.float64) / float(maxval)
    if channels == 3:
        rgb = values.reshape(height, width, 3)
        r, g, b = LUMA_WEIGHTS
        gray = r * rgb[:, :, 0] + g * rgb[:, :, 1] + b * rgb[:, :, 2]
    else:
        gray = values.reshape(height, width)
    return IntensityImage(np.clip(gray, 0.0, 1.0))


def _pillow_decode(path) -> IntensityImage:
    try:
        from PIL import Image
    except ImportError:
        raise UnsupportedFormatError(
            f"{path}: not a P5/P6 netpbm file and Pillow is not installed"
        ) from None
    try:
        with Image.open(path) as img:
            if img.mode in ("L", "I;16", "I"):
                arr = np.asarray(img, dtype=np.float64)
                peak = arr.max()
                scale = 255.0 if peak <= 255 else 65535.0
                gray = arr / scale
            else:
                rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
                r, g, b = LUMA_WEIGHTS
                gray = r * rgb[:, :, 0] + g * rgb[:, :, 1] + b * rgb[:, :, 2]
    except UnsupportedFormatError:
        raise
    except Exception as exc:
        raise DecodeError(f"{path}: cannot decode image: {exc}") from exc
    return IntensityImage(np.clip(gray, 0.0, 1.0))


def load_image(path) -> IntensityImage:
    """Decode a raster file into intensities scaled to [0, 1]."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DecodeError(f"cannot read image file {path}: {exc}") from exc
    if raw[:2] in (b"P5", b"P6"):
        return _parse_netpbm(raw, path)
    return _pillow_decode(path)


def resize_max_side(img: IntensityImage, max_side: int) -> IntensityImage:
    """Bilinear downscale so the longer side is at most `max_side` pixels."""
    if max_side < 1:
        raise InvalidInputError(f"max_side must be >= 1, got {max_side}")
    h, w = img.height, img.width
    longest = max(h, w)
    if longest <= max_side:
        return img
    scale = max_side / longest
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    rows = np.linspace(0, h - 1, nh)
    cols = np.linspace(0, w - 1, nw)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    px = img.pixels
    top = px[np.ix_(r0, c0)] * (1 - fc) + px[np.ix_(r0, c1)] * fc
    bottom = px[np.ix_(r1, c0)] * (1 - fc) + px[np.ix_(r1, c1)] * fc
    return IntensityImage(np.clip(top * (1 - fr) + bottom * fr, 0.0, 1.0))


def extract_patches(img: IntensityImage, patch_size: int, stride: int = 1) -> PatchGrid:
    """Slide a square window over the image; each patch is mean-subtracted.

    The grid has floor((H - p) / stride + 1) x floor((W - p) / stride + 1)
    patches; windows that would cross the border are not emitted.
    """
    if patch_size < 1 or stride < 1:
        raise InvalidInputError(
            f"patch_size and stride must be >= 1, got {patch_size}, {stride}"
        )
    if patch_size > min(img.height, img.width):
        raise InvalidInputError(
            f"patch_size {patch_size} exceeds image extent {img.height}x{img.width}"
        )
    windows = np.lib.stride_tricks.sliding_window_view(img.pixels, (patch_size, patch_size))
    windows = windows[::stride, ::stride]
    rows, cols = windows.shape[:2]
    flat = windows.reshape(rows * cols, patch_size * patch_size).astype(np.float64)
    flat = flat - flat.mean(axis=1, keepdims=True)
    half = (patch_size - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    centers = np.stack(
        [rr.ravel() * stride + half, cc.ravel() * stride + half], axis=1
    ).astype(np.float64)
    return PatchGrid(
        patch_size=patch_size,
        stride=stride,
        origin=(0.0, 0.0),
        patches=flat,
        centers=centers,
        grid_shape=(rows, cols),
    )


def assign_to_cells(
    centers: np.ndarray, region_size: float, cell_grid: int, origin=(0.0, 0.0)
) -> list[list[int]]:
    """Partition points into a row-major cell_grid x cell_grid split of the
    square region at `origin`; every point must fall inside the region."""
    if cell_grid < 1:
        raise InvalidInputError(f"cell_grid must be >= 1, got {cell_grid}")
    if region_size <= 0 or region_size % cell_grid != 0:
        raise InvalidInputError(
            f"region size {region_size} is not divisible into a {cell_grid}x{cell_grid} cell grid"
        )
    width = region_size / cell_grid
    cells: list[list[int]] = [[] for _ in range(cell_grid * cell_grid)]
    pts = np.asarray(centers, dtype=np.float64)
    for i in range(pts.shape[0]):
        rel_r = pts[i, 0] - origin[0]
        rel_c = pts[i, 1] - origin[1]
        if not (0 <= rel_r < region_size and 0 <= rel_c < region_size):
            raise InvalidInputError(
                f"point {i} at ({pts[i,0]}, {pts[i,1]}) lies outside the region of size"
                f" {region_size} at origin {origin}"
            )
        cr = int(rel_r // width)
        cc = int(rel_c // width)
        cells[cr * cell_grid + cc].append(i)
    return cells


def group_into_cells(grid: PatchGrid, region_size: int, cell_grid: int) -> list[list[int]]:
    """Assign every patch of `grid` to one cell of the region anchored at the
    grid origin, by patch center; cells are returned row-major."""
    return assign_to_cells(grid.centers, region_size, cell_grid, grid.origin)


def read_manifest(path) -> list[tuple[str, str]]:
    """Parse a dataset manifest: one `<image-id><TAB><path>` record per line.

    Relative paths resolve against the manifest's own directory.
    """
    base = os.path.dirname(os.path.abspath(path))
    records: list[tuple[str, str]] = []
    seen: set[str] = set()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                if "\t" not in line:
                    raise InvalidInputError(
                        f"{path}:{lineno}: expected '<id><TAB><path>', got {line!r}"
                    )
                image_id, rel = line.split("\t", 1)
                image_id = image_id.strip()
                rel = rel.strip()
                if not image_id or not rel:
                    raise InvalidInputError(f"{path}:{lineno}: empty id or path")
                if image_id in seen:
                    raise InvalidInputError(f"{path}:{lineno}: duplicate image id {image_id!r}")
                seen.add(image_id)
                records.append((image_id, rel if os.path.isabs(rel) else os.path.join(base, rel)))
    except OSError as exc:
        raise DecodeError(f"cannot read manifest {path}: {exc}") from exc
    return records
