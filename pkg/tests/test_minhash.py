import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pajama_forge.errors import ParamsMismatchError
from pajama_forge.minhash import (
    MinHashSignature,
    ShingleParams,
    SignatureCacheWriter,
    estimate_jaccard,
    read_signature_cache,
    shingle_strings,
    shingles,
    signature,
    signature_matrix,
)
from pajama_forge.normalize import normalize_for_dedup


def test_window_count():
    assert shingle_strings("a b c", 2) == ["a b", "b c"]
    assert len(shingles("a b c", ShingleParams(n=2))) == 2


def test_short_doc_single_shingle():
    assert shingle_strings("a b", 13) == ["a b"]
    assert len(shingles("a b")) == 1


def test_equal_after_normalization():
    a = normalize_for_dedup("The quick, brown FOX!")
    b = normalize_for_dedup("the quick brown fox")
    assert shingles(a, ShingleParams(n=2)) == shingles(b, ShingleParams(n=2))


def test_params_validation():
    with pytest.raises(ValueError):
        ShingleParams(n=0)


def test_identical_sets_identical_signatures():
    s = set(range(1, 50))
    assert signature(s) == signature(set(s))
    assert estimate_jaccard(signature(s), signature(s)) == 1.0


def test_empty_set_rejected():
    with pytest.raises(ValueError):
        signature(set())
    with pytest.raises(ValueError):
        signature_matrix([[1], []])


def test_seed_mismatch_rejected():
    with pytest.raises(ParamsMismatchError):
        estimate_jaccard(signature({1}, seed=0), signature({1}, seed=1))
    with pytest.raises(ParamsMismatchError):
        estimate_jaccard(signature({1}, k=64), signature({1}, k=128))


def test_disjoint_sets_low_estimate():
    rng = random.Random(3)
    a = {rng.getrandbits(64) for _ in range(500)}
    b = {rng.getrandbits(64) for _ in range(500)} - a
    assert estimate_jaccard(signature(a), signature(b)) <= 0.05


def test_half_jaccard_within_bound():
    # |A∩B| = 200, |A∪B| = 400
    rng = random.Random(4)
    pool = list({rng.getrandbits(64) for _ in range(400)})
    a, b = set(pool[:300]), set(pool[100:])
    assert abs(estimate_jaccard(signature(a), signature(b)) - 0.5) <= 3 * (0.25 / 128) ** 0.5


def test_unbiased_over_seeds():
    rng = random.Random(5)
    pool = list({rng.getrandbits(64) for _ in range(120)})
    a, b = set(pool[:90]), set(pool[30:])  # J = 60/120
    est = [estimate_jaccard(signature(a, seed=s), signature(b, seed=s)) for s in range(300)]
    # sd of the mean ~ 0.044 / sqrt(300)
    assert abs(np.mean(est) - 0.5) < 0.01


@settings(max_examples=40)
@given(st.sets(st.integers(0, 2**64 - 1), min_size=1, max_size=60), st.randoms())
def test_insertion_order_irrelevant(values, rnd):
    items = list(values)
    rnd.shuffle(items)
    assert signature(items) == signature(sorted(values))


def test_matrix_matches_single():
    lists = [[1, 2, 3], [7], [2, 2, 9, 11]]
    m = signature_matrix(lists, 32, seed=9)
    for row, lst in zip(m, lists):
        assert np.array_equal(row, signature(lst, 32, seed=9).values)


def test_frozen_values():
    # pins the hash family; changing it invalidates every signature cache
    assert sorted(shingles("a b c", ShingleParams(n=2, seed=0))) == [9242785727729118284, 15222964541269322796]
    sig = signature(shingles("the quick brown fox", ShingleParams(n=2)), k=4)
    assert sig.values.tolist() == [883677203698465895, 4821388315496388973, 10218886555279332929, 7531574224529603961]


def test_cache_round_trip(tmp_path):
    sigs = signature_matrix([[1, 2], [3], [4, 5, 6]], 16, seed=2)
    ids = np.array([10, 20, 30], dtype=np.uint64)
    with SignatureCacheWriter(tmp_path / "s.bin", 16, 13, 2) as w:
        w.write(ids[:2], sigs[:2])
        w.write(ids[2:], sigs[2:])
    header, records = read_signature_cache(tmp_path / "s.bin")
    assert (header.k, header.n, header.seed) == (16, 13, 2)
    assert records["doc_id"].tolist() == [10, 20, 30]
    assert np.array_equal(records["values"], sigs)
    raw = (tmp_path / "s.bin").read_bytes()
    assert raw[:8] == b"PFSIG001" and len(raw) == 24 + 3 * 8 * 17


def test_cache_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOTACACHE" * 4)
    with pytest.raises(ParamsMismatchError):
        read_signature_cache(tmp_path / "x.bin")
    with SignatureCacheWriter(tmp_path / "t.bin", 4, 13, 0) as w:
        w.write(np.array([1], dtype=np.uint64), np.zeros((1, 4), dtype=np.uint64))
    (tmp_path / "t.bin").write_bytes((tmp_path / "t.bin").read_bytes()[:-3])
    with pytest.raises(ParamsMismatchError):
        read_signature_cache(tmp_path / "t.bin")
