"""Byte-level BPE encoder for GPT-2 style ``vocab.json`` / ``merges.txt`` pairs."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import regex

from .errors import BpeError

GPT2_PATTERN = regex.compile(
    r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""
)


@lru_cache(maxsize=None)
def bytes_to_unicode() -> dict[int, str]:
    """Reversible map from bytes to printable characters (the GPT-2 table)."""
    keep = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("¡"), ord("¬") + 1))
        + list(range(ord("®"), ord("ÿ") + 1))
    )
    mapping = {b: chr(b) for b in keep}
    extra = 0
    for b in range(256):
        if b not in mapping:
            mapping[b] = chr(256 + extra)
            extra += 1
    return mapping


@dataclass
class BpeModel:
    vocab: dict[str, int]
    merges: list[tuple[str, str]]
    byte_encoder: dict[int, str] = field(default_factory=bytes_to_unicode)

    def __post_init__(self):
        self.ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        self.id_to_token = {i: t for t, i in self.vocab.items()}
        self.byte_decoder = {c: b for b, c in self.byte_encoder.items()}
        self._cache: dict[str, tuple[int, ...]] = {}
        self._piece_cache: dict[str, tuple[int, ...]] = {}
        self._latin1_to_symbol = {b: c for b, c in self.byte_encoder.items()}

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def validate(self) -> None:
        if len(self.id_to_token) != len(self.vocab):
            seen: dict[int, str] = {}
            for token, idx in self.vocab.items():
                if idx in seen:
                    raise BpeError(f"duplicate id {idx} for {seen[idx]!r} and {token!r}")
                seen[idx] = token
        for rank, (a, b) in enumerate(self.merges):
            for part in (a, b, a + b):
                if part not in self.vocab:
                    raise BpeError(f"merge {rank} ({a} {b}) references {part!r}, which is not in the vocab")

    def token_bytes(self, token_id: int) -> bytes:
        token = self.id_to_token[token_id]
        try:
            return bytes(self.byte_decoder[c] for c in token)
        except KeyError:
            # tokens outside the byte alphabet (e.g. special tokens) pass through as UTF-8
            return token.encode("utf-8")

    def surface(self, token_id: int) -> str | None:
        """Decoded text of one token, or None when its bytes are not valid UTF-8."""
        try:
            return self.token_bytes(token_id).decode("utf-8")
        except UnicodeDecodeError:
            return None

    def _bpe(self, word: str) -> tuple[int, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = list(word)
        ranks = self.ranks
        while len(symbols) > 1:
            best = None
            best_rank = None
            for pair in zip(symbols, symbols[1:]):
                rank = ranks.get(pair)
                if rank is not None and (best_rank is None or rank < best_rank):
                    best, best_rank = pair, rank
            if best is None:
                break
            first, second = best
            merged = []
            i = 0
            while i < len(symbols):
                if i < len(symbols) - 1 and symbols[i] == first and symbols[i + 1] == second:
                    merged.append(first + second)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        try:
            ids = tuple(self.vocab[s] for s in symbols)
        except KeyError as exc:
            raise BpeError(f"symbol {exc.args[0]!r} is not in the vocab") from None
        if len(self._cache) < 500_000:
            self._cache[word] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        cache = self._piece_cache
        table = self._latin1_to_symbol
        out: list[int] = []
        for piece in GPT2_PATTERN.findall(text):
            ids = cache.get(piece)
            if ids is None:
                # latin-1 maps each UTF-8 byte to the code point of the same value
                ids = self._bpe(piece.encode("utf-8").decode("latin-1").translate(table))
                if len(cache) < 500_000:
                    cache[piece] = ids
            out.extend(ids)
        return out


def encode(model: BpeModel, text: str) -> list[int]:
    return model.encode(text)


def load_bpe(vocab_path: str | os.PathLike, merges_path: str | os.PathLike) -> BpeModel:
    vocab_path, merges_path = Path(vocab_path), Path(merges_path)
    try:
        vocab = json.loads(vocab_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BpeError(f"{vocab_path}: not valid JSON") from exc
    if not isinstance(vocab, dict) or not all(
        isinstance(k, str) and isinstance(v, int) and not isinstance(v, bool) for k, v in vocab.items()
    ):
        raise BpeError(f"{vocab_path}: expected an object mapping token strings to integer ids")
    merges = []
    lines = merges_path.read_text(encoding="utf-8").split("\n")
    for lineno, line in enumerate(lines, start=1):
        if lineno == 1 and line.startswith("#version"):
            continue
        if not line.strip():
            continue
        parts = line.split(" ")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise BpeError(f"{merges_path}:{lineno}: expected two space-separated symbols")
        merges.append((parts[0], parts[1]))
    model = BpeModel(vocab, merges)
    model.validate()
    return model
