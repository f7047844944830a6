"""Canonical text forms shared by the length filter and the dedup signatures."""

from __future__ import annotations

import sys
from typing import NamedTuple

import regex

_PUNCT = regex.compile(r"\p{P}+")

# Unicode whitespace (per str.isspace) plus the C0 control block.
_EDGE_CHARS = "".join(
    chr(c) for c in range(sys.maxunicode + 1) if c < 0x20 or chr(c).isspace()
)


class NormalizedText(NamedTuple):
    text: str
    char_len: int


def _clean(text: str) -> str:
    # punctuation goes first so "a , b" collapses to "a b" rather than "a  b"
    text = _PUNCT.sub("", text)
    return " ".join(text.split()).strip(_EDGE_CHARS)


def normalize_for_filter(text: str) -> NormalizedText:
    """Drop punctuation, collapse whitespace runs, strip edge whitespace/controls.

    >>> normalize_for_filter("Hi,  there!\\n\\n")
    NormalizedText(text='Hi there', char_len=8)
    """
    out = _clean(text)
    return NormalizedText(out, len(out))


def normalize_for_dedup(text: str) -> NormalizedText:
    """Lowercased variant of :func:`normalize_for_filter`."""
    out = _clean(text).lower()
    return NormalizedText(out, len(out))
