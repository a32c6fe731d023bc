import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from signsparse.signpack import (pack_signs_matrix, pack_signs_vector, padding_is_clear,
                                 tail_mask_for, words_per_row)
from signsparse.tensor_core import NonFiniteError

f32 = np.float32


def unpack(words, d):
    bits = []
    for j in range(d):
        bits.append((int(words[j // 32]) >> (j % 32)) & 1)
    return bits


def test_mixed_row_packs_lsb_first():
    row = np.ones(32, f32)
    row[0], row[1], row[2] = -1.0, 2.0, -3.0
    p = pack_signs_matrix(row[None, :])
    assert p.words.shape == (1, 1)
    assert int(p.words[0, 0]) == 0b101 == 5


def test_all_positive_row_is_zero_word():
    p = pack_signs_matrix(np.full((3, 32), 0.5, f32))
    assert (p.words == 0).all()


def test_d33_tail():
    W = -np.ones((2, 33), f32)
    p = pack_signs_matrix(W)
    assert p.words_per_row == 2
    assert p.tail_mask == 0x00000001
    assert (p.words[:, 1] == 1).all()
    assert (p.words[:, 0] == 0xFFFFFFFF).all()


def test_vector_examples():
    v = pack_signs_vector(np.array([1, 2], f32))
    assert int(v.words[0]) == 0 and v.tail_mask == 0b11
    assert int(pack_signs_vector(np.array([-0.0, 1.0], f32)).words[0]) == 0b01
    assert int(pack_signs_vector(-np.ones(32, f32)).words[0]) == 0xFFFFFFFF


def test_vector_scratch_reused():
    scratch = np.zeros(2, np.uint32)
    v = pack_signs_vector(-np.ones(40, f32), out=scratch)
    assert v.words is scratch
    assert int(scratch[1]) == 0xFF


@pytest.mark.parametrize("d", [1, 5, 31, 32, 33, 63, 64, 65, 100])
def test_tail_mask_popcount(d):
    m = tail_mask_for(d)
    assert bin(m).count("1") == (d - 1) % 32 + 1
    assert words_per_row(d) == -(-d // 32)


def test_rejects_nonfinite():
    with pytest.raises(NonFiniteError):
        pack_signs_matrix(np.array([[1.0, np.nan]], f32))
    with pytest.raises(NonFiniteError):
        pack_signs_vector(np.array([np.inf], f32))


finite32 = st.floats(width=32, allow_nan=False, allow_infinity=False)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 5).flatmap(
    lambda k: st.integers(1, 80).flatmap(lambda d: arrays(f32, (k, d), elements=finite32))))
def test_round_trip_and_padding(W):
    p = pack_signs_matrix(W)
    raw = W.view(np.uint32) >> 31
    for i in range(W.shape[0]):
        assert unpack(p.words[i], W.shape[1]) == raw[i].tolist()
        # set-bit total equals a scalar re-scan of the row
        assert sum(bin(int(w)).count("1") for w in p.words[i]) == sum(
            1 for v in W[i] if np.signbit(v))
    assert padding_is_clear(p.words, W.shape[1])
