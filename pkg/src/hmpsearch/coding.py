"""Sparse encoders over a fixed codebook.

Two coding rules are provided. `omp_encode` is greedy orthogonal matching
pursuit: it repeatedly selects the atom most correlated with the current
residual, re-solves least squares on the selected support, and stops after
`sparsity` atoms or once the residual is negligible. `vq_encode` is hard
assignment to the single nearest atom, the coding rule of bag-of-features
pipelines. Both are pure functions; a `Dictionary` is immutable and safe to
share across threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DecodeError, InvalidInputError

UNIT_NORM_TOL = 1e-9
# ell2 norm below which the residual counts as fully explained and coding
# stops early, producing fewer nonzeros than the sparsity budget.
RESIDUAL_STOP = 1e-10

_DICT_MAGIC = b"HMPD"
_DICT_VERSION = 1


@dataclass(frozen=True)
class Dictionary:
    """Codebook of unit-norm atoms, one per column of `atoms` (D x K)."""

    atoms: np.ndarray
    _atoms_t: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64)
        if atoms.ndim != 2 or atoms.shape[0] < 1 or atoms.shape[1] < 1:
            raise InvalidInputError(
                f"atoms must be a 2-D matrix with at least one row and column, got shape {atoms.shape}"
            )
        if not np.all(np.isfinite(atoms)):
            raise InvalidInputError("atoms contain non-finite values")
        norms = np.linalg.norm(atoms, axis=0)
        bad = np.nonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)[0]
        if bad.size:
            raise InvalidInputError(
                f"atom column(s) {bad.tolist()} are not unit norm (norms {norms[bad].tolist()})"
            )
        atoms = atoms.copy()
        atoms.setflags(write=False)
        atoms_t = np.ascontiguousarray(atoms.T)
        atoms_t.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "_atoms_t", atoms_t)

    @property
    def signal_dim(self) -> int:
        return self.atoms.shape[0]

    @property
    def size(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class SparseCode:
    """Sparse coefficient vector: (index, value) pairs over `length` slots."""

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
                raise InvalidInputError("indices must be strictly increasing")
            if indices[0] < 0 or indices[-1] >= self.length:
                raise InvalidInputError(
                    f"indices must lie in [0, {self.length}), got {indices.tolist()}"
                )
            if np.any(values == 0.0) or not np.all(np.isfinite(values)):
                raise InvalidInputError("values must be nonzero and finite")
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


def _check_signal(dictionary: Dictionary, signal: np.ndarray) -> np.ndarray:
    y = np.asarray(signal, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != dictionary.signal_dim:
        raise InvalidInputError(
            f"signal length {y.shape} does not match dictionary dimension {dictionary.signal_dim}"
        )
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("signal contains non-finite values")
    return y


def _code_from_support(length: int, support: list[int], coef: np.ndarray) -> SparseCode:
    order = np.argsort(support)
    idx = np.asarray(support, dtype=np.int64)[order]
    val = np.asarray(coef, dtype=np.float64)[order]
    keep = val != 0.0
    return SparseCode(length, idx[keep], val[keep])


def _omp(atoms: np.ndarray, atoms_t: np.ndarray, y: np.ndarray, sparsity: int) -> SparseCode:
    support: list[int] = []
    coef = np.empty(0)
    residual = y
    for _ in range(sparsity):
        res_norm = np.linalg.norm(residual)
        if res_norm < RESIDUAL_STOP:
            break
        corr = np.abs(atoms_t @ residual)
        if support:
            corr[support] = -1.0
        best = int(np.argmax(corr))
        # residual orthogonal to every remaining atom: nothing left to add
        if corr[best] <= 1e-12 * res_norm:
            break
        support.append(best)
        sub = atoms[:, support]
        gram = sub.T @ sub
        rhs = sub.T @ y
        try:
            coef = cho_solve(cho_factor(gram, lower=True), rhs)
        except (LinAlgError, np.linalg.LinAlgError):
            # singular support: minimum-norm least squares instead of a crash
            coef = np.linalg.lstsq(sub, y, rcond=None)[0]
        residual = y - sub @ coef
    return _code_from_support(atoms.shape[1], support, coef)


def omp_encode(dictionary: Dictionary, signal: np.ndarray, sparsity: int) -> SparseCode:
    """Greedy sparse approximation of `signal` with at most `sparsity` atoms.

    Atom selection ties break toward the lowest index; coding stops early
    once the residual norm falls under RESIDUAL_STOP.
    """
    y = _check_signal(dictionary, signal)
    if not 1 <= sparsity <= min(dictionary.signal_dim, dictionary.size):
        raise InvalidInputError(
            f"sparsity must be in [1, min(D, K)] = [1, {min(dictionary.signal_dim, dictionary.size)}],"
            f" got {sparsity}"
        )
    return _omp(dictionary.atoms, dictionary._atoms_t, y, sparsity)


def omp_encode_batch(
    dictionary: Dictionary, signals: np.ndarray, sparsity: int
) -> list[SparseCode]:
    """Encode the columns of `signals` (D x N); identical to per-signal calls."""
    mat = np.asarray(signals, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != dictionary.signal_dim:
        raise InvalidInputError(
            f"signals must be {dictionary.signal_dim} x N, got shape {mat.shape}"
        )
    return [omp_encode(dictionary, mat[:, i], sparsity) for i in range(mat.shape[1])]


def vq_encode(dictionary: Dictionary, signal: np.ndarray) -> SparseCode:
    """Indicator of the nearest atom; ties break toward the lowest index."""
    y = _check_signal(dictionary, signal)
    diff = dictionary.atoms - y[:, None]
    dist2 = np.einsum("dk,dk->k", diff, diff)
    best = int(np.argmin(dist2))
    return SparseCode(dictionary.size, np.array([best]), np.array([1.0]))


def vq_encode_batch(dictionary: Dictionary, signals: np.ndarray) -> list[SparseCode]:
    mat = np.asarray(signals, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != dictionary.signal_dim:
        raise InvalidInputError(
            f"signals must be {dictionary.signal_dim} x N, got shape {mat.shape}"
        )
    return [vq_encode(dictionary, mat[:, i]) for i in range(mat.shape[1])]


def l2_normalize(vector: np.ndarray) -> np.ndarray:
    """Scale to unit ell2 norm; the zero vector is returned unchanged."""
    v = np.asarray(vector, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("vector contains non-finite values")
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return v.copy()
    return v / norm


def save_dictionary(dictionary: Dictionary, path) -> None:
    """Write a codebook file: magic, version, little-endian u32 D and K,
    then D*K float64 values in column-major order."""
    d, k = dictionary.signal_dim, dictionary.size
    with open(path, "wb") as fh:
        fh.write(_DICT_MAGIC)
        fh.write(struct.pack("<B", _DICT_VERSION))
        fh.write(struct.pack("<II", d, k))
        fh.write(np.ascontiguousarray(dictionary.atoms, dtype="<f8").tobytes(order="F"))


def load_dictionary(path) -> Dictionary:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DecodeError(f"cannot read dictionary file {path}: {exc}") from exc
    if len(raw) < 13 or raw[:4] != _DICT_MAGIC:
        raise DecodeError(f"{path} is not a codebook file (bad magic)")
    version = raw[4]
    if version != _DICT_VERSION:
        raise DecodeError(f"{path}: unsupported codebook version {version}")
    d, k = struct.unpack_from("<II", raw, 5)
    expected = 13 + 8 * d * k
    if len(raw) != expected:
        raise DecodeError(f"{path}: truncated codebook ({len(raw)} bytes, expected {expected})")
    atoms = np.frombuffer(raw, dtype="<f8", offset=13).reshape((d, k), order="F")
    return Dictionary(atoms)
