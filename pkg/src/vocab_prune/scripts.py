"""Unicode script classification of vocabulary tokens.

Characters are tagged from fixed block ranges. Digits, punctuation,
whitespace, symbols, control/format characters and combining marks are
script-neutral wherever they occur; CJK Symbols and Punctuation
(U+3000-U+303F) is neutral as a whole block.
"""

from __future__ import annotations

import bisect
import enum
import re
import unicodedata
from dataclasses import dataclass
from functools import lru_cache

from .errors import MalformedSurface

METASPACE = "▁"


class ScriptTag(enum.Enum):
    Latin = "Latin"
    Hangul = "Hangul"
    Han = "Han"
    Hiragana = "Hiragana"
    Katakana = "Katakana"
    Cyrillic = "Cyrillic"
    Arabic = "Arabic"
    Neutral = "Neutral"
    OtherScript = "OtherScript"
    ByteFragment = "ByteFragment"

    @classmethod
    def parse(cls, name: str) -> ScriptTag:
        key = name.strip().lower()
        for tag in cls:
            if tag.value.lower() == key:
                return tag
        if key in ("hanzi", "chinese", "cjk"):
            return cls.Han
        if key in ("korean",):
            return cls.Hangul
        if key in ("english",):
            return cls.Latin
        raise ValueError(f"unknown script name {name!r}")


TAG_ORDER = {tag: i for i, tag in enumerate(ScriptTag)}


class SurfaceConvention(enum.Enum):
    ByteLevel = "ByteLevel"
    Metaspace = "Metaspace"
    Plain = "Plain"


@dataclass(frozen=True)
class TokenRecord:
    id: int
    surface: str
    decoded: bytes
    tags: frozenset[ScriptTag]
    is_special: bool = False
    is_added: bool = False


_SCRIPT_RANGES: tuple[tuple[int, int, ScriptTag], ...] = (
    (0x0000, 0x024F, ScriptTag.Latin),
    (0x0400, 0x04FF, ScriptTag.Cyrillic),
    (0x0600, 0x06FF, ScriptTag.Arabic),
    (0x1100, 0x11FF, ScriptTag.Hangul),
    (0x3040, 0x309F, ScriptTag.Hiragana),
    (0x30A0, 0x30FF, ScriptTag.Katakana),
    (0x3130, 0x318F, ScriptTag.Hangul),
    (0x3400, 0x4DBF, ScriptTag.Han),
    (0x4E00, 0x9FFF, ScriptTag.Han),
    (0xA960, 0xA97F, ScriptTag.Hangul),
    (0xAC00, 0xD7AF, ScriptTag.Hangul),
    (0xD7B0, 0xD7FF, ScriptTag.Hangul),
    (0xF900, 0xFAFF, ScriptTag.Han),
    (0x20000, 0x2A6DF, ScriptTag.Han),
)
_RANGE_STARTS = [lo for lo, _, _ in _SCRIPT_RANGES]

# General categories that never carry script identity.
_NEUTRAL_CATEGORIES = frozenset(
    {"Nd", "Nl", "No", "Pc", "Pd", "Ps", "Pe", "Pi", "Pf", "Po",
     "Zs", "Zl", "Zp", "Sm", "Sc", "Sk", "So", "Cc", "Cf", "Mn", "Mc", "Me"}
)


@lru_cache(maxsize=65536)
def classify_char(c: str) -> ScriptTag:
    """Return the script tag of a single Unicode scalar value."""
    cp = ord(c)
    if 0x3000 <= cp <= 0x303F or unicodedata.category(c) in _NEUTRAL_CATEGORIES:
        return ScriptTag.Neutral
    # ranges are sorted and disjoint
    lo_idx = bisect.bisect_right(_RANGE_STARTS, cp) - 1
    if lo_idx >= 0:
        lo, hi, tag = _SCRIPT_RANGES[lo_idx]
        if lo <= cp <= hi:
            return tag
    return ScriptTag.OtherScript


def _bytes_to_unicode() -> dict[int, str]:
    # printable bytes keep their own code point; the rest are shifted to U+0100+n
    keep = list(range(0x21, 0x7F)) + list(range(0xA1, 0xAD)) + list(range(0xAE, 0x100))
    table = {b: chr(b) for b in keep}
    n = 0
    for b in range(256):
        if b not in table:
            table[b] = chr(0x100 + n)
            n += 1
    return table


BYTE_TO_CHAR: dict[int, str] = _bytes_to_unicode()
CHAR_TO_BYTE: dict[str, int] = {c: b for b, c in BYTE_TO_CHAR.items()}

_BYTE_FALLBACK = re.compile(r"<0x([0-9A-Fa-f]{2})>")


def remap_bytes(data: bytes) -> str:
    """Byte-level stored surface of raw bytes."""
    return "".join(BYTE_TO_CHAR[b] for b in data)


def byte_fallback_surface(b: int) -> str:
    return f"<0x{b:02X}>"


def decode_surface(surface: str, conv: SurfaceConvention) -> bytes:
    """Recover the raw bytes a stored token surface stands for.

    Metaspace vocabularies store byte-fallback tokens as ``<0xHH>``; such a
    surface decodes to the single byte it names.
    """
    if conv is SurfaceConvention.ByteLevel:
        try:
            return bytes(CHAR_TO_BYTE[c] for c in surface)
        except KeyError as exc:
            raise MalformedSurface(
                f"token {surface!r}: character {exc.args[0]!r} is outside the byte-level alphabet"
            ) from None
    if conv is SurfaceConvention.Metaspace:
        m = _BYTE_FALLBACK.fullmatch(surface)
        if m:
            return bytes([int(m.group(1), 16)])
        return surface.replace(METASPACE, " ").encode("utf-8")
    return surface.encode("utf-8")


def tags_of_text(text: str) -> frozenset[ScriptTag]:
    tags = {classify_char(c) for c in text}
    if len(tags) > 1:
        tags.discard(ScriptTag.Neutral)
    if not tags:
        return frozenset({ScriptTag.Neutral})
    return frozenset(tags)


def classify_bytes(data: bytes) -> frozenset[ScriptTag]:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        return frozenset({ScriptTag.ByteFragment})
    return tags_of_text(text)


def classify_token(surface: str, conv: SurfaceConvention) -> frozenset[ScriptTag]:
    return classify_bytes(decode_surface(surface, conv))


def sort_tags(tags) -> list[ScriptTag]:
    return sorted(tags, key=TAG_ORDER.__getitem__)


def format_tags(tags) -> str:
    return ",".join(t.value for t in sort_tags(tags))
