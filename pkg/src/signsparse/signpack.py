"""Packing of IEEE-754 sign bits into 32-bit words.

Element ``j`` of a row lands in bit ``j % 32`` of word ``j // 32`` (LSB
first). Bits past the last element of a row are always zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor_core import DTYPE, NonFiniteError, ShapeError

WORD_BITS = 32


def words_per_row(d: int) -> int:
    return -(-d // WORD_BITS)


def tail_mask_for(d: int) -> int:
    r = d % WORD_BITS
    return 0xFFFFFFFF if r == 0 else (1 << r) - 1


@dataclass(frozen=True)
class SignPackedMatrix:
    words: np.ndarray  # (rows, words_per_row) uint32
    cols: int

    @property
    def rows(self) -> int:
        return self.words.shape[0]

    @property
    def words_per_row(self) -> int:
        return self.words.shape[1]

    @property
    def tail_mask(self) -> int:
        return tail_mask_for(self.cols)

    def __eq__(self, other):
        if not isinstance(other, SignPackedMatrix):
            return NotImplemented
        return self.cols == other.cols and np.array_equal(self.words, other.words)

    __hash__ = None


@dataclass(frozen=True)
class SignPackedVector:
    words: np.ndarray  # (words_per_row,) uint32
    len: int

    @property
    def words_per_row(self) -> int:
        return self.words.shape[0]

    @property
    def tail_mask(self) -> int:
        return tail_mask_for(self.len)


def _sign_bits(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=DTYPE)
    if not np.isfinite(a).all():
        raise NonFiniteError("cannot pack signs of NaN/Inf values")
    return (a.view(np.uint32) >> 31).astype(np.uint8)


def _pack_rows(bits: np.ndarray) -> np.ndarray:
    rows, d = bits.shape
    wpr = words_per_row(d)
    padded = np.zeros((rows, wpr * WORD_BITS), dtype=np.uint8)
    padded[:, :d] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return packed.view("<u4").astype(np.uint32, copy=False).reshape(rows, wpr)


def pack_signs_matrix(W: np.ndarray) -> SignPackedMatrix:
    """Pack the raw sign bit of every element; -0.0 packs as 1."""
    if W.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {W.shape}")
    words = _pack_rows(_sign_bits(W))
    return SignPackedMatrix(words=words, cols=W.shape[1])


def pack_signs_vector(x: np.ndarray, out: np.ndarray | None = None) -> SignPackedVector:
    """Pack the sign bits of one input vector.

    ``out`` may be a preallocated ``uint32`` buffer of ``words_per_row(len(x))``
    words, reused across tokens.
    """
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {x.shape}")
    words = _pack_rows(_sign_bits(x)[None, :])[0]
    if out is not None:
        if out.shape != words.shape or out.dtype != np.uint32:
            raise ShapeError(f"scratch buffer {out.shape}/{out.dtype} does not fit {words.shape}")
        out[:] = words
        words = out
    return SignPackedVector(words=words, len=x.shape[0])


def padding_is_clear(words: np.ndarray, d: int) -> bool:
    """True when no bit past element ``d - 1`` is set in any row."""
    words = np.atleast_2d(words)
    return not (words[:, -1] & ~np.uint32(tail_mask_for(d))).any()
