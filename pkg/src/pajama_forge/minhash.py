"""Word n-gram shingles and MinHash signatures.

Shingles are hashed with seeded xxh3-64. The ``k`` MinHash functions are
``h_i(x) = mix64(x ^ key_i)`` where ``mix64`` is the splitmix64 finalizer (a
bijection on 64-bit words) and ``key_i`` is derived from ``(seed, i)``.  Both
hashes are frozen: changing either invalidates every signature cache.
"""

from __future__ import annotations

import os
import struct
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import xxhash

from .errors import ParamsMismatchError
from .normalize import NormalizedText

DEFAULT_NGRAM = 13
DEFAULT_PERMS = 128

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer, applied elementwise to a uint64 array."""
    x = x ^ (x >> _S30)
    x *= _M1
    x ^= x >> _S27
    x *= _M2
    x ^= x >> _S31
    return x


@dataclass(frozen=True)
class ShingleParams:
    n: int = DEFAULT_NGRAM
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("shingle width n must be >= 1")
        if not 0 <= self.seed <= _MASK64:
            raise ValueError("seed must fit in 64 bits")


def shingle_strings(text: str, n: int) -> list[str]:
    words = text.split(" ") if text else []
    if len(words) < n:
        return [text]
    return [" ".join(words[i : i + n]) for i in range(len(words) - n + 1)]


def shingle_hash_list(text: str, params: ShingleParams) -> list[int]:
    """Shingle hashes in window order (may repeat)."""
    seed = params.seed
    return [xxhash.xxh3_64_intdigest(s.encode("utf-8"), seed) for s in shingle_strings(text, params.n)]


def shingles(norm: NormalizedText | str, params: ShingleParams = ShingleParams()) -> set[int]:
    """Hashes of every window of ``params.n`` consecutive words.

    Texts with fewer than ``n`` words produce one shingle covering the whole
    text, so short exact duplicates still collide.
    """
    text = norm.text if isinstance(norm, NormalizedText) else norm
    return set(shingle_hash_list(text, params))


def permutation_keys(k: int, seed: int) -> np.ndarray:
    # the seed is mixed before stepping so nearby seeds do not share key sequences
    with np.errstate(over="ignore"):
        base = mix64(np.array([seed ^ _GOLDEN], dtype=np.uint64))[0]
        steps = np.arange(1, k + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
        return mix64(steps + base)


@dataclass(frozen=True, eq=False)
class MinHashSignature:
    values: np.ndarray
    seed: int

    @property
    def k(self) -> int:
        return len(self.values)

    @property
    def fingerprint(self) -> tuple[int, int]:
        return (self.k, self.seed)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MinHashSignature):
            return NotImplemented
        return self.fingerprint == other.fingerprint and bool(np.array_equal(self.values, other.values))

    def __hash__(self) -> int:
        return hash((self.fingerprint, self.values.tobytes()))


def _minhash_flat(flat: np.ndarray, offsets: np.ndarray, keys: np.ndarray) -> np.ndarray:
    # rows = documents, columns = hash functions
    out = np.empty((len(offsets), len(keys)), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for i, key in enumerate(keys):
            out[:, i] = np.minimum.reduceat(mix64(flat ^ key), offsets)
    return out


def signature(sh: Iterable[int], k: int = DEFAULT_PERMS, seed: int = 0) -> MinHashSignature:
    arr = np.fromiter(sh, dtype=np.uint64)
    if arr.size == 0:
        raise ValueError("cannot sign an empty shingle set")
    keys = permutation_keys(k, seed)
    return MinHashSignature(_minhash_flat(arr, np.zeros(1, dtype=np.intp), keys)[0], seed)


def signature_matrix(
    shingle_lists: Sequence[Sequence[int]], k: int = DEFAULT_PERMS, seed: int = 0
) -> np.ndarray:
    """Signatures for many documents at once, shape ``(len(shingle_lists), k)``."""
    if not shingle_lists:
        return np.empty((0, k), dtype=np.uint64)
    lengths = np.fromiter((len(s) for s in shingle_lists), dtype=np.intp, count=len(shingle_lists))
    if (lengths == 0).any():
        raise ValueError("cannot sign an empty shingle set")
    offsets = np.zeros(len(lengths), dtype=np.intp)
    np.cumsum(lengths[:-1], out=offsets[1:])
    flat = np.fromiter((h for s in shingle_lists for h in s), dtype=np.uint64, count=int(lengths.sum()))
    return _minhash_flat(flat, offsets, permutation_keys(k, seed))


def estimate_jaccard(a: MinHashSignature, b: MinHashSignature) -> float:
    if a.fingerprint != b.fingerprint:
        raise ParamsMismatchError(f"signature params differ: {a.fingerprint} vs {b.fingerprint}")
    return float(np.count_nonzero(a.values == b.values)) / a.k


# Signature cache: little-endian header then fixed-size (doc_id, k x u64) records.
CACHE_MAGIC = b"PFSIG001"
_HEADER = struct.Struct("<8sIIQ")
CACHE_HEADER_SIZE = _HEADER.size


@dataclass(frozen=True)
class CacheHeader:
    k: int
    n: int
    seed: int


def record_dtype(k: int) -> np.dtype:
    return np.dtype([("doc_id", "<u8"), ("values", "<u8", (k,))])


class SignatureCacheWriter:
    def __init__(self, path: str | os.PathLike, k: int, n: int, seed: int):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.dtype = record_dtype(k)
        self.count = 0
        self._fh = open(self.path, "wb")
        self._fh.write(_HEADER.pack(CACHE_MAGIC, k, n, seed))

    def write(self, doc_ids: np.ndarray, sigs: np.ndarray) -> None:
        rec = np.empty(len(doc_ids), dtype=self.dtype)
        rec["doc_id"] = doc_ids
        rec["values"] = sigs
        self._fh.write(rec.tobytes())
        self.count += len(doc_ids)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "SignatureCacheWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_cache_header(path: str | os.PathLike) -> tuple[CacheHeader, int]:
    """Validated header and record count of a signature cache."""
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) != _HEADER.size:
        raise ParamsMismatchError(f"{path}: truncated signature cache header")
    magic, k, n, seed = _HEADER.unpack(raw)
    if magic != CACHE_MAGIC:
        raise ParamsMismatchError(f"{path}: not a signature cache")
    body = path.stat().st_size - _HEADER.size
    itemsize = record_dtype(k).itemsize
    if body % itemsize:
        raise ParamsMismatchError(f"{path}: truncated signature cache body")
    return CacheHeader(k, n, seed), body // itemsize


def read_signature_cache(path: str | os.PathLike) -> tuple[CacheHeader, np.ndarray]:
    """Header plus a read-only memory map of the records."""
    header, count = read_cache_header(path)
    dtype = record_dtype(header.k)
    if count == 0:
        return header, np.empty(0, dtype=dtype)
    return header, np.memmap(path, dtype=dtype, mode="r", offset=_HEADER.size, shape=(count,))
