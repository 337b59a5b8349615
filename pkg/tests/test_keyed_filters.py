import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unlearn.errors import FormatError
from unlearn.keyed_filters import (
    BANK_MAGIC,
    FilterSpec,
    bank_from_bytes,
    cyclic_permutation,
    generate_bank,
    generate_filter,
    load_bank,
    permute_bank,
    save_bank,
)


def test_filter_has_single_unit_entry():
    f = generate_filter(7, 3, 0.3)
    assert f.shape == (3, 3)
    assert np.count_nonzero(f == 1.0) == 1
    others = f[f != 1.0]
    assert others.size == 8
    assert others.min() >= 0.0 and others.max() < 0.3


def test_degenerate_kernel():
    assert generate_filter(123, 1, 0.0).tolist() == [[1.0]]


def test_filter_deterministic():
    a = generate_filter(42, 3, 0.3)
    b = generate_filter(42, 3, 0.3)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("k, p_b", [(2, 0.3), (0, 0.3), (-3, 0.3), (3, -0.1)])
def test_filter_rejects_bad_arguments(k, p_b):
    with pytest.raises(ValueError):
        generate_filter(1, k, p_b)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**64 - 1), k=st.sampled_from([1, 3, 5, 7, 9]),
       p_b=st.floats(0.0, 1.0))
def test_filter_invariants(seed, k, p_b):
    f = generate_filter(seed, k, p_b)
    assert np.count_nonzero(f == 1.0) == 1
    rest = np.delete(f.ravel(), np.flatnonzero(f.ravel() == 1.0))
    assert np.all(rest >= 0.0)
    if rest.size:
        assert rest.max() < p_b or (p_b == 0.0 and rest.max() == 0.0)


def test_unit_position_roughly_uniform():
    positions = [int(np.argmax(generate_filter(s, 3, 0.3))) for s in range(9000)]
    counts = np.bincount(positions, minlength=9)
    # 1000 expected per cell, binomial sd ~ 31
    assert counts.min() > 850 and counts.max() < 1150


def test_bank_distinct_and_deterministic():
    spec = FilterSpec(10, 3, 0.3, 1)
    bank = generate_bank(spec)
    assert len(bank) == 10
    flat = {bank[i].tobytes() for i in range(10)}
    assert len(flat) == 10
    assert generate_bank(spec).to_bytes() == bank.to_bytes()


def test_single_class_bank():
    assert len(generate_bank(FilterSpec(1, 5, 0.1, 3))) == 1


def test_different_seeds_differ():
    a = generate_bank(FilterSpec(10, 3, 0.3, 1))
    b = generate_bank(FilterSpec(10, 3, 0.3, 2))
    assert not np.array_equal(a.filters, b.filters)


def test_spec_validation():
    with pytest.raises(ValueError):
        FilterSpec(0, 3, 0.3, 1)
    with pytest.raises(ValueError):
        FilterSpec(10, 4, 0.3, 1)
    with pytest.raises(ValueError):
        FilterSpec(10, 3, -1.0, 1)


def test_permute_identity_and_inverse():
    bank = generate_bank(FilterSpec(10, 3, 0.3, 1))
    assert permute_bank(bank, range(10)) == bank
    perm = cyclic_permutation(10)
    shifted = permute_bank(bank, perm)
    np.testing.assert_array_equal(shifted[0], bank[1])
    np.testing.assert_array_equal(shifted[9], bank[0])
    inverse = np.argsort(perm)
    assert permute_bank(shifted, inverse) == bank
    assert permute_bank(shifted, inverse).permutation == tuple(range(10))


def test_permute_preserves_multiset():
    bank = generate_bank(FilterSpec(6, 3, 0.3, 9))
    shuffled = permute_bank(bank, [3, 1, 5, 0, 2, 4])
    assert sorted(f.tobytes() for f in shuffled.filters) == sorted(f.tobytes() for f in bank.filters)


def test_permute_rejects_non_bijection():
    bank = generate_bank(FilterSpec(3, 3, 0.3, 1))
    with pytest.raises(ValueError):
        permute_bank(bank, [0, 0, 1])
    with pytest.raises(ValueError):
        permute_bank(bank, [0, 1])


def test_bank_binary_layout(tmp_path):
    bank = generate_bank(FilterSpec(10, 3, 0.3, 1))
    path = tmp_path / "bank.cfb"
    save_bank(bank, path)
    raw = path.read_bytes()
    assert raw[:8] == BANK_MAGIC
    assert len(raw) == 8 + 4 + 4 + 8 + 8 + 10 * 9 * 8
    assert np.frombuffer(raw[32:], "<f8").tolist() == bank.filters.ravel().tolist()
    assert load_bank(path) == bank


def test_bank_corruption_detected():
    raw = bytearray(generate_bank(FilterSpec(2, 3, 0.3, 1)).to_bytes())
    with pytest.raises(FormatError):
        bank_from_bytes(b"XXXXXXXX" + bytes(raw[8:]))
    with pytest.raises(FormatError):
        bank_from_bytes(bytes(raw[:-1]))
    with pytest.raises(FormatError):
        bank_from_bytes(bytes(raw[:10]))


def test_json_export():
    bank = generate_bank(FilterSpec(2, 3, 0.3, 5))
    doc = json.loads(bank.to_json())
    assert doc["fingerprint"] == bank.fingerprint()
    assert np.array(doc["filters"]).shape == (2, 3, 3)
