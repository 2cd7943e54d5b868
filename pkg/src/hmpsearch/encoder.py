"""Recursive multi-layer sparse coding with signed max pooling.

An image is turned into one descriptor by stacking one to three coding
layers. Layer 1 codes small mean-subtracted patches. Every interior layer
then tiles the image plane into square coding units, splits each unit into a
cell grid, pools the codes inside each cell with `signed_max_pool`,
concatenates the cell features row-major, and normalizes the unit feature,
which becomes the signal grid of the next layer. The last layer's codes skip
the unit machinery: they are pooled over whole-image spatial pyramid regions
and the concatenation is normalized once, giving a descriptor of length
2 * K_final * sum(g^2 for g in pyramid).

All geometry lives in original-image pixel coordinates: every feature carries
the pixel center of the area it summarizes, and units, cells, and pyramid
regions claim features by center. Units that do not fit whole at the border
are dropped.
"""

from __future__ import annotations

import configparser
import struct
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .coding import Dictionary, SparseCode, l2_normalize, omp_encode, vq_encode
from .errors import ConfigError, DecodeError, ImageTooSmallError, InvalidInputError
from .images import IntensityImage, assign_to_cells, extract_patches

_DESC_MAGIC = b"HMPV"
_DESC_VERSION = 1
_ENTRY_DTYPE = np.dtype([("index", "<u4"), ("value", "<f8")])

DEFAULT_UNIT_SIZES = (16, 36)
DEFAULT_CELL_GRIDS = (4, 2)
DEFAULT_HIDDEN_SPARSITY = 4
DEFAULT_FINAL_SPARSITY = 10


@dataclass
class LayerConfig:
    """Geometry and codebook of one coding layer.

    `input_patch_size` and `stride` describe how layer-1 signals are cut from
    the image; higher layers code one inherited feature at a time, so there
    they must both be 1. `coding_unit_size` and `cell_grid` drive the pooling
    step of interior layers and are ignored on the final layer.
    """

    codebook_size: int
    sparsity: int
    input_patch_size: int = 1
    stride: int = 1
    coding_unit_size: int = 16
    cell_grid: int = 4
    dictionary: Dictionary | None = None
    dictionary_ref: str = ""

    def __post_init__(self):
        if self.codebook_size < 2:
            raise InvalidInputError(f"codebook_size must be >= 2, got {self.codebook_size}")
        if self.sparsity < 1:
            raise InvalidInputError(f"sparsity must be >= 1, got {self.sparsity}")
        if self.input_patch_size < 1 or self.stride < 1:
            raise InvalidInputError("input_patch_size and stride must be >= 1")
        if self.coding_unit_size < 1 or self.cell_grid < 1:
            raise InvalidInputError("coding_unit_size and cell_grid must be >= 1")

    @property
    def cells(self) -> int:
        return self.cell_grid * self.cell_grid

    @property
    def output_dim(self) -> int:
        """Length of one pooled coding-unit feature."""
        return 2 * self.codebook_size * self.cells


@dataclass
class ArchitectureConfig:
    """Ordered coding layers plus the whole-image pyramid grids."""

    layers: list[LayerConfig]
    pyramid: list[int] = field(default_factory=lambda: [1])

    def __post_init__(self):
        if not 1 <= len(self.layers) <= 3:
            raise InvalidInputError(f"expected 1 to 3 layers, got {len(self.layers)}")
        if not self.pyramid:
            raise InvalidInputError("pyramid must not be empty")
        if len(set(self.pyramid)) != len(self.pyramid) or any(
            g not in (1, 2, 3) for g in self.pyramid
        ):
            raise InvalidInputError(
                f"pyramid grids must be distinct values from {{1, 2, 3}}, got {self.pyramid}"
            )
        for depth, layer in enumerate(self.layers[1:], start=2):
            if layer.input_patch_size != 1 or layer.stride != 1:
                raise InvalidInputError(
                    f"layer {depth} codes one inherited feature at a time;"
                    " input_patch_size and stride must be 1"
                )
        for layer in self.layers[:-1]:
            if layer.coding_unit_size % layer.cell_grid != 0:
                raise InvalidInputError(
                    f"coding_unit_size {layer.coding_unit_size} is not divisible by"
                    f" cell_grid {layer.cell_grid}"
                )

    @property
    def final_layer(self) -> LayerConfig:
        return self.layers[-1]

    def descriptor_length(self) -> int:
        return 2 * self.final_layer.codebook_size * sum(g * g for g in self.pyramid)

    def layer_input_dim(self, depth: int) -> int:
        """Signal dimension entering the layer at 1-based `depth`."""
        if depth == 1:
            p = self.layers[0].input_patch_size
            return p * p
        return self.layers[depth - 2].output_dim

    def validate_dictionaries(self) -> None:
        for depth, layer in enumerate(self.layers, start=1):
            if layer.dictionary is None:
                raise ConfigError(f"layer {depth} has no dictionary attached")
            expect = self.layer_input_dim(depth)
            got = layer.dictionary.signal_dim
            if got != expect:
                raise ConfigError(
                    f"layer {depth} dictionary codes {got}-dimensional signals,"
                    f" expected {expect}"
                )
            if layer.dictionary.size != layer.codebook_size:
                raise ConfigError(
                    f"layer {depth} dictionary has {layer.dictionary.size} atoms,"
                    f" expected {layer.codebook_size}"
                )


@dataclass(frozen=True)
class FeatureGrid:
    """Spatial grid of feature vectors with pixel centers.

    `extent` is the (height, width) of the image plane the centers live in.
    """

    centers: np.ndarray
    vectors: np.ndarray
    extent: tuple[int, int]

    @property
    def count(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class CodeGrid:
    """Spatial grid of sparse codes with pixel centers."""

    centers: np.ndarray
    codes: list[SparseCode]
    code_length: int
    extent: tuple[int, int]

    @property
    def count(self) -> int:
        return len(self.codes)


@dataclass(frozen=True)
class ImageDescriptor:
    """Final unit-norm sparse vector of one image (all-zero when degenerate)."""

    image_id: str
    length: int
    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if indices.shape != values.shape or indices.ndim != 1:
            raise InvalidInputError("indices and values must be 1-D and parallel")
        if indices.size:
            if np.any(np.diff(indices) <= 0):
                raise InvalidInputError("descriptor indices must be strictly increasing")
            if indices[0] < 0 or indices[-1] >= self.length:
                raise InvalidInputError("descriptor indices out of range")
            if np.any(values == 0.0) or not np.all(np.isfinite(values)):
                raise InvalidInputError("descriptor values must be nonzero and finite")
            norm = float(np.linalg.norm(values))
            if abs(norm - 1.0) > 1e-9:
                raise InvalidInputError(f"descriptor norm {norm} is not 1 within 1e-9")
        indices.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.length)
        out[self.indices] = self.values
        return out


def descriptor_from_dense(image_id: str, dense: np.ndarray) -> ImageDescriptor:
    dense = np.asarray(dense, dtype=np.float64)
    nz = np.nonzero(dense)[0]
    return ImageDescriptor(image_id, int(dense.size), nz, dense[nz])


def signed_max_pool(codes, code_length: int) -> np.ndarray:
    """Per-dimension maxima of the positive and negative code parts.

    Output slot m holds the largest positive coefficient seen at dimension m
    across all codes, and slot code_length + m the largest magnitude among
    negative ones; an empty code list pools to the zero vector.
    """
    out = np.zeros(2 * code_length)
    for code in codes:
        if code.length != code_length:
            raise InvalidInputError(
                f"code of length {code.length} mixed into pooling over {code_length}"
            )
        pos = code.values > 0.0
        if pos.any():
            idx = code.indices[pos]
            np.maximum.at(out, idx, code.values[pos])
        if (~pos).any():
            idx = code.indices[~pos] + code_length
            np.maximum.at(out, idx, -code.values[~pos])
    return out


def concat_cells(cell_features) -> np.ndarray:
    """Concatenate per-cell features in the given (row-major) cell order."""
    feats = [np.asarray(f, dtype=np.float64) for f in cell_features]
    if not feats:
        raise InvalidInputError("no cell features to concatenate")
    length = feats[0].shape[0]
    for i, f in enumerate(feats):
        if f.ndim != 1 or f.shape[0] != length:
            raise InvalidInputError(
                f"cell {i} has length {f.shape}, expected ({length},)"
            )
    return np.concatenate(feats)


def _code_grid(features: FeatureGrid, layer: LayerConfig) -> CodeGrid:
    if layer.dictionary is None:
        raise ConfigError("layer has no dictionary attached")
    dim = layer.dictionary.signal_dim
    if features.count and features.vectors.shape[1] != dim:
        raise InvalidInputError(
            f"feature dimension {features.vectors.shape[1]} does not match"
            f" dictionary dimension {dim}"
        )
    sparsity = min(layer.sparsity, dim, layer.dictionary.size)
    codes = [
        omp_encode(layer.dictionary, features.vectors[i], sparsity)
        for i in range(features.count)
    ]
    return CodeGrid(features.centers, codes, layer.dictionary.size, features.extent)


def encode_layer(features: FeatureGrid, layer: LayerConfig) -> FeatureGrid:
    """One interior coding layer: code, pool per cell, concatenate, normalize.

    Returns one feature per whole coding unit that fits in the extent; its
    center is the unit's center so the next layer sees the coarser grid.
    """
    unit = layer.coding_unit_size
    if unit % layer.cell_grid != 0:
        raise InvalidInputError(
            f"coding_unit_size {unit} is not divisible by cell_grid {layer.cell_grid}"
        )
    grid = _code_grid(features, layer)
    h, w = grid.extent
    units_r, units_c = h // unit, w // unit
    k = grid.code_length
    out_dim = 2 * k * layer.cells
    vectors = np.zeros((units_r * units_c, out_dim))
    centers = np.zeros((units_r * units_c, 2))
    buckets: dict[tuple[int, int], list[int]] = {}
    for i in range(grid.count):
        ur = int(grid.centers[i, 0] // unit)
        uc = int(grid.centers[i, 1] // unit)
        if 0 <= ur < units_r and 0 <= uc < units_c:
            buckets.setdefault((ur, uc), []).append(i)
    for ur in range(units_r):
        for uc in range(units_c):
            slot = ur * units_c + uc
            centers[slot] = ((ur + 0.5) * unit, (uc + 0.5) * unit)
            members = buckets.get((ur, uc), [])
            origin = (ur * unit, uc * unit)
            cells = assign_to_cells(grid.centers[members], unit, layer.cell_grid, origin)
            pooled = [
                signed_max_pool([grid.codes[members[j]] for j in cell], k)
                for cell in cells
            ]
            vectors[slot] = l2_normalize(concat_cells(pooled))
    return FeatureGrid(centers, vectors, grid.extent)


def pyramid_pool(codes: CodeGrid, pyramid, image_id: str = "") -> ImageDescriptor:
    """Pool final-layer codes over whole-image pyramid grids.

    Each grid size g splits the extent into g x g regions (remainder pixels
    go to the last row and column); regions pool independently, blocks
    concatenate grid by grid row-major, and the result is normalized once.
    """
    k = codes.code_length
    length = 2 * k * sum(int(g) * int(g) for g in pyramid)
    if codes.count == 0:
        warnings.warn(f"image {image_id!r}: no codes to pool; descriptor is all zeros")
        return ImageDescriptor(image_id, length, np.empty(0, dtype=np.int64), np.empty(0))
    h, w = codes.extent
    blocks = []
    for g in pyramid:
        g = int(g)
        base_r, base_c = h // g, w // g
        assignments: list[list[SparseCode]] = [[] for _ in range(g * g)]
        for i in range(codes.count):
            rr = min(int(codes.centers[i, 0] // base_r), g - 1) if base_r else g - 1
            cc = min(int(codes.centers[i, 1] // base_c), g - 1) if base_c else g - 1
            assignments[rr * g + cc].append(codes.codes[i])
        for region in assignments:
            blocks.append(signed_max_pool(region, k))
    dense = l2_normalize(np.concatenate(blocks))
    return descriptor_from_dense(image_id, dense)


def minimum_image_side(arch: ArchitectureConfig) -> int:
    first = arch.layers[0]
    if len(arch.layers) == 1:
        return first.input_patch_size
    return max(first.input_patch_size, first.coding_unit_size)


def encode_image(
    img: IntensityImage, arch: ArchitectureConfig, image_id: str = ""
) -> ImageDescriptor:
    """Run the full layered pipeline on one image."""
    arch.validate_dictionaries()
    need = minimum_image_side(arch)
    if min(img.height, img.width) < need:
        raise ImageTooSmallError(
            f"image {image_id!r} is {img.height}x{img.width}; the configured"
            f" pipeline needs at least {need}x{need} pixels"
        )
    first = arch.layers[0]
    patches = extract_patches(img, first.input_patch_size, first.stride)
    grid = FeatureGrid(patches.centers, patches.patches, (img.height, img.width))
    for layer in arch.layers[:-1]:
        grid = encode_layer(grid, layer)
    final_codes = _code_grid(grid, arch.final_layer)
    return pyramid_pool(final_codes, arch.pyramid, image_id)


def encode_image_bof(
    img: IntensityImage,
    dictionary: Dictionary,
    patch_size: int,
    stride: int = 1,
    image_id: str = "",
) -> ImageDescriptor:
    """Baseline bag-of-features encoding: nearest-atom histogram.

    Every mean-subtracted patch is hard-assigned to its nearest atom, the
    one-hot codes are average-pooled over the whole image, and the histogram
    is normalized; the descriptor length equals the codebook size.
    """
    if min(img.height, img.width) < patch_size:
        raise ImageTooSmallError(
            f"image {image_id!r} is {img.height}x{img.width}; patches need at"
            f" least {patch_size}x{patch_size} pixels"
        )
    patches = extract_patches(img, patch_size, stride)
    hist = np.zeros(dictionary.size)
    for i in range(patches.count):
        code = vq_encode(dictionary, patches.patches[i])
        hist[code.indices[0]] += 1.0
    hist /= patches.count
    return descriptor_from_dense(image_id, l2_normalize(hist))


def save_descriptor(desc: ImageDescriptor, path) -> None:
    """Write a descriptor file: magic, version, id length and UTF-8 id,
    little-endian u32 total length and nnz, then (u32 index, f64 value)
    pairs sorted by index."""
    ident = desc.image_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_DESC_MAGIC)
        fh.write(struct.pack("<B", _DESC_VERSION))
        fh.write(struct.pack("<I", len(ident)))
        fh.write(ident)
        fh.write(struct.pack("<II", desc.length, desc.nnz))
        entries = np.empty(desc.nnz, dtype=_ENTRY_DTYPE)
        entries["index"] = desc.indices
        entries["value"] = desc.values
        fh.write(entries.tobytes())


def load_descriptor(path) -> ImageDescriptor:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DecodeError(f"cannot read descriptor file {path}: {exc}") from exc
    if len(raw) < 9 or raw[:4] != _DESC_MAGIC:
        raise DecodeError(f"{path} is not a descriptor file (bad magic)")
    if raw[4] != _DESC_VERSION:
        raise DecodeError(f"{path}: unsupported descriptor version {raw[4]}")
    (id_len,) = struct.unpack_from("<I", raw, 5)
    pos = 9
    ident = raw[pos : pos + id_len].decode("utf-8")
    pos += id_len
    length, nnz = struct.unpack_from("<II", raw, pos)
    pos += 8
    need = pos + 12 * nnz
    if len(raw) < need:
        raise DecodeError(f"{path}: truncated descriptor ({len(raw)} of {need} bytes)")
    entries = np.frombuffer(raw, dtype=_ENTRY_DTYPE, count=nnz, offset=pos)
    return ImageDescriptor(
        ident, int(length), entries["index"].astype(np.int64), entries["value"].astype(np.float64)
    )


def _layer_from_section(section, depth: int, total: int) -> LayerConfig:
    def geti(key, default):
        return section.getint(key, default)

    is_first = depth == 1
    is_final = depth == total
    default_unit = DEFAULT_UNIT_SIZES[min(depth, len(DEFAULT_UNIT_SIZES)) - 1]
    default_cells = DEFAULT_CELL_GRIDS[min(depth, len(DEFAULT_CELL_GRIDS)) - 1]
    default_sparsity = DEFAULT_FINAL_SPARSITY if is_final else DEFAULT_HIDDEN_SPARSITY
    if "codebook_size" not in section:
        raise ConfigError(f"layer {depth}: codebook_size is required")
    if not is_first and ("patch_size" in section or "stride" in section):
        raise ConfigError(
            f"layer {depth}: patch_size and stride only apply to layer 1;"
            " higher layers code one inherited feature at a time"
        )
    return LayerConfig(
        codebook_size=geti("codebook_size", 0),
        sparsity=geti("sparsity", default_sparsity),
        input_patch_size=geti("patch_size", 5) if is_first else 1,
        stride=geti("stride", 1) if is_first else 1,
        coding_unit_size=geti("unit_size", default_unit),
        cell_grid=geti("cell_grid", default_cells),
        dictionary_ref=section.get("dictionary", f"layer{depth}.hmpd"),
    )


def load_architecture(path) -> ArchitectureConfig:
    """Read a layered architecture from a key/value config file with one
    [layerN] section per layer and an optional [pyramid] section."""
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read architecture config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: malformed config: {exc}") from exc
    layer_names = sorted(
        (name for name in parser.sections() if name.startswith("layer")),
        key=lambda name: name[5:],
    )
    if not layer_names:
        raise ConfigError(f"{path}: no [layerN] sections found")
    expected = [f"layer{i}" for i in range(1, len(layer_names) + 1)]
    if layer_names != expected:
        raise ConfigError(
            f"{path}: layer sections must be consecutive starting at [layer1], got {layer_names}"
        )
    pyramid = [1]
    if parser.has_section("pyramid"):
        text = parser.get("pyramid", "grids", fallback="1")
        try:
            pyramid = [int(tok) for tok in text.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"{path}: pyramid grids must be integers, got {text!r}") from None
    try:
        layers = [
            _layer_from_section(parser[name], depth, len(layer_names))
            for depth, name in enumerate(layer_names, start=1)
        ]
        return ArchitectureConfig(layers, pyramid)
    except InvalidInputError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def attach_dictionaries(arch: ArchitectureConfig, loader) -> ArchitectureConfig:
    """Return a copy of `arch` with dictionaries resolved via `loader(ref)`."""
    layers = [replace(layer, dictionary=loader(layer.dictionary_ref)) for layer in arch.layers]
    out = ArchitectureConfig(layers, list(arch.pyramid))
    out.validate_dictionaries()
    return out
