"""BPE tokenizer definition files: parsing, canonical serialization and a
reference encoder.

Only the ``model`` block (vocab + ordered merges) and ``added_tokens`` are
interpreted. Every other field of the file is carried through untouched so a
rebuilt file stays loadable by the runtime that produced it.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterable

from .errors import EncodingGap, InvariantError, ParseError, UnsupportedModel
from .scripts import (
    BYTE_TO_CHAR,
    METASPACE,
    SurfaceConvention,
    byte_fallback_surface,
    decode_surface,
)


@dataclass(frozen=True)
class MergeRule:
    rank: int
    left: str
    right: str

    @property
    def product(self) -> str:
        return self.left + self.right


@dataclass(frozen=True)
class AddedToken:
    id: int
    content: str
    special: bool = False
    # remaining per-token flags (lstrip, normalized, ...) as found in the file
    extra: dict[str, Any] = field(default_factory=dict, hash=False)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "content": self.content}
        out.update(self.extra)
        out["special"] = self.special
        return out


@dataclass(frozen=True, eq=False)
class TokenizerDef:
    vocab: dict[str, int]
    merges: tuple[MergeRule, ...]
    added: tuple[AddedToken, ...] = ()
    convention: SurfaceConvention = SurfaceConvention.Plain
    model_extra: dict[str, Any] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)
    merges_as_pairs: bool = False

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenizerDef):
            return NotImplemented
        return (
            self.vocab == other.vocab
            and self.merges == other.merges
            and [(a.id, a.content, a.special, a.extra) for a in self.added]
            == [(a.id, a.content, a.special, a.extra) for a in other.added]
            and self.convention is other.convention
            and self.model_extra == other.model_extra
            and self.extra == other.extra
            and self.merges_as_pairs == other.merges_as_pairs
        )

    __hash__ = None  # type: ignore[assignment]

    @cached_property
    def id_to_surface(self) -> dict[int, str]:
        return {i: s for s, i in self.vocab.items()}

    @cached_property
    def added_by_id(self) -> dict[int, AddedToken]:
        return {a.id: a for a in self.added}

    @cached_property
    def size(self) -> int:
        """Number of distinct token ids (vocab plus added tokens beyond it)."""
        return len(set(self.vocab.values()) | set(self.added_by_id))

    @cached_property
    def merge_ranks(self) -> dict[tuple[str, str], int]:
        ranks: dict[tuple[str, str], int] = {}
        for m in self.merges:
            ranks.setdefault((m.left, m.right), m.rank)
        return ranks

    def token_text(self, token_id: int) -> str:
        """Stored string for an id: vocab surface, else added-token content."""
        if token_id in self.id_to_surface:
            return self.id_to_surface[token_id]
        return self.added_by_id[token_id].content

    def validate(self) -> None:
        validate(self)


# -- parsing -----------------------------------------------------------------

def _find_types(obj: Any) -> Iterable[dict]:
    if isinstance(obj, dict):
        if "type" in obj:
            yield obj
        for v in obj.values():
            yield from _find_types(v)
    elif isinstance(obj, list):
        for v in obj:
            yield from _find_types(v)


def infer_convention(doc: dict[str, Any]) -> SurfaceConvention:
    parts = [doc.get("pre_tokenizer"), doc.get("decoder")]
    nodes = [n for p in parts for n in _find_types(p)]
    if any(n.get("type") == "ByteLevel" for n in nodes):
        return SurfaceConvention.ByteLevel
    for n in nodes:
        if n.get("type") == "Metaspace" or n.get("replacement") == METASPACE:
            return SurfaceConvention.Metaspace
        if n.get("type") == "Replace" and METASPACE in json.dumps(n, ensure_ascii=False):
            return SurfaceConvention.Metaspace
    return SurfaceConvention.Plain


def _parse_merge(entry: Any, rank: int) -> tuple[str, str]:
    if isinstance(entry, str):
        parts = entry.split(" ")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ParseError(f"merge #{rank} {entry!r} is not of the form 'left right'")
        return parts[0], parts[1]
    if (
        isinstance(entry, list)
        and len(entry) == 2
        and all(isinstance(x, str) and x for x in entry)
    ):
        return entry[0], entry[1]
    raise ParseError(f"merge #{rank} has unsupported form {entry!r}")


def parse_tokenizer(data: bytes | str) -> TokenizerDef:
    """Parse a tokenizer definition file and check its invariants."""
    try:
        doc = json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"tokenizer file is not valid UTF-8 JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("tokenizer file must hold a JSON object")
    model = doc.get("model")
    if not isinstance(model, dict):
        raise ParseError("missing required field 'model'")
    mtype = model.get("type")
    if mtype is None:
        raise ParseError("missing required field 'model.type'")
    if mtype != "BPE":
        raise UnsupportedModel(f"model type {mtype!r} is not supported; only BPE tokenizers can be pruned")
    vocab = model.get("vocab")
    merges_raw = model.get("merges")
    if not isinstance(vocab, dict):
        raise ParseError("missing required field 'model.vocab'")
    if not isinstance(merges_raw, list):
        raise ParseError("missing required field 'model.merges'")
    for surface, i in vocab.items():
        if not isinstance(i, int) or isinstance(i, bool) or i < 0:
            raise ParseError(f"token {surface!r} has invalid id {i!r}")

    merges = []
    for rank, entry in enumerate(merges_raw):
        left, right = _parse_merge(entry, rank)
        merges.append(MergeRule(rank, left, right))
    as_pairs = bool(merges_raw) and isinstance(merges_raw[0], list)

    added = []
    for entry in doc.get("added_tokens") or []:
        if not isinstance(entry, dict) or "id" not in entry or "content" not in entry:
            raise ParseError(f"added token entry {entry!r} lacks 'id' or 'content'")
        extra = {k: v for k, v in entry.items() if k not in ("id", "content", "special")}
        added.append(AddedToken(int(entry["id"]), str(entry["content"]), bool(entry.get("special", False)), extra))

    tok = TokenizerDef(
        vocab=dict(vocab),
        merges=tuple(merges),
        added=tuple(sorted(added, key=lambda a: a.id)),
        convention=infer_convention(doc),
        model_extra={k: v for k, v in model.items() if k not in ("type", "vocab", "merges")},
        extra={k: v for k, v in doc.items() if k not in ("model", "added_tokens")},
        merges_as_pairs=as_pairs,
    )
    validate(tok)
    return tok


def validate(tok: TokenizerDef) -> None:
    """Raise InvariantError naming the first offending token or rule."""
    ids = sorted(tok.vocab.values())
    if len(set(ids)) != len(ids):
        seen: dict[int, str] = {}
        for s, i in tok.vocab.items():
            if i in seen:
                raise InvariantError(f"tokens {seen[i]!r} and {s!r} share id {i}")
            seen[i] = s
    for expect, got in enumerate(ids):
        if expect != got:
            raise InvariantError(f"vocab ids are not dense: id {expect} is missing")

    for rank, m in enumerate(tok.merges):
        if m.rank != rank:
            raise InvariantError(f"merge ranks are not dense at position {rank} (rank {m.rank})")
        for part in (m.left, m.right, m.product):
            if part not in tok.vocab:
                raise InvariantError(f"merge #{rank} ({m.left!r} {m.right!r}) references unknown token {part!r}")

    seen_added: dict[int, str] = {}
    for a in tok.added:
        if a.id in seen_added:
            raise InvariantError(f"added tokens {seen_added[a.id]!r} and {a.content!r} share id {a.id}")
        seen_added[a.id] = a.content
        if a.id in tok.id_to_surface and tok.id_to_surface[a.id] != a.content:
            raise InvariantError(
                f"added token {a.content!r} has id {a.id}, already used by vocab token {tok.id_to_surface[a.id]!r}"
            )
        if a.content in tok.vocab and tok.vocab[a.content] != a.id:
            raise InvariantError(
                f"added token {a.content!r} has id {a.id} but the vocab maps it to {tok.vocab[a.content]}"
            )
    all_ids = sorted(set(tok.vocab.values()) | set(seen_added))
    for expect, got in enumerate(all_ids):
        if expect != got:
            raise InvariantError(f"token ids are not dense: id {expect} is missing")


# -- serialization -----------------------------------------------------------

def tokenizer_to_json(tok: TokenizerDef) -> dict[str, Any]:
    validate(tok)
    model: dict[str, Any] = {"type": "BPE"}
    model.update(tok.model_extra)
    model["vocab"] = {s: i for s, i in sorted(tok.vocab.items(), key=lambda kv: kv[1])}
    if tok.merges_as_pairs:
        model["merges"] = [[m.left, m.right] for m in tok.merges]
    else:
        model["merges"] = [f"{m.left} {m.right}" for m in tok.merges]
    doc: dict[str, Any] = {}
    placed = False
    for key, value in tok.extra.items():
        if key in ("normalizer", "pre_tokenizer", "post_processor", "decoder", "model") and not placed:
            doc["added_tokens"] = [a.to_json() for a in sorted(tok.added, key=lambda a: a.id)]
            placed = True
        doc[key] = value
    if not placed:
        doc["added_tokens"] = [a.to_json() for a in sorted(tok.added, key=lambda a: a.id)]
    doc["model"] = model
    return doc


def serialize_tokenizer(tok: TokenizerDef) -> bytes:
    """Canonical file bytes: ids ascending, merge order verbatim."""
    for m in tok.merges:
        if not tok.merges_as_pairs and (" " in m.left or " " in m.right):
            raise InvariantError(f"merge #{m.rank} operand contains a space and cannot be written as 'left right'")
    text = json.dumps(tokenizer_to_json(tok), ensure_ascii=False, indent=2)
    return (text + "\n").encode("utf-8")


# -- reference encoder -------------------------------------------------------

def _units(tok: TokenizerDef, chunk: bytes) -> list[str]:
    if tok.convention is SurfaceConvention.ByteLevel:
        units = [BYTE_TO_CHAR[b] for b in chunk]
        for u in units:
            if u not in tok.vocab:
                raise EncodingGap(f"byte unit {u!r} has no token")
        return units
    text = chunk.decode("utf-8", errors="surrogateescape")
    if tok.convention is SurfaceConvention.Metaspace:
        text = text.replace(" ", METASPACE)
    units: list[str] = []
    for ch in text:
        if ch in tok.vocab:
            units.append(ch)
            continue
        if 0xDC80 <= ord(ch) <= 0xDCFF:
            raw = bytes([ord(ch) - 0xDC00])
        else:
            raw = ch.encode("utf-8")
        for b in raw:
            fb = byte_fallback_surface(b)
            if fb not in tok.vocab:
                raise EncodingGap(f"character {ch!r} has no token and no byte fallback {fb}")
            units.append(fb)
    return units


def bpe_merge(units: list[str], ranks: dict[tuple[str, str], int]) -> list[str]:
    """Apply the lowest-rank applicable merge until none applies."""
    while len(units) > 1:
        best = None
        for pair in zip(units, units[1:]):
            r = ranks.get(pair)
            if r is not None and (best is None or r < best):
                best = r
                best_pair = pair
        if best is None:
            break
        left, right = best_pair
        merged: list[str] = []
        i = 0
        while i < len(units):
            if i + 1 < len(units) and units[i] == left and units[i + 1] == right:
                merged.append(left + right)
                i += 2
            else:
                merged.append(units[i])
                i += 1
        units = merged
    return units


@dataclass
class _AddedMatcher:
    pattern: re.Pattern | None
    ids: dict[bytes, int]


def _added_matcher(tok: TokenizerDef) -> _AddedMatcher:
    ids = {a.content.encode("utf-8"): a.id for a in tok.added if a.content}
    if not ids:
        return _AddedMatcher(None, {})
    alts = sorted(ids, key=lambda b: (-len(b), b))
    return _AddedMatcher(re.compile(b"|".join(re.escape(b) for b in alts)), ids)


def encode(tok: TokenizerDef, text: bytes) -> list[int]:
    """Encode raw bytes to token ids.

    Added tokens are matched literally first (longest match wins); the
    remaining spans go through BPE as a whole, without pre-tokenization.
    """
    if isinstance(text, str):
        text = text.encode("utf-8")
    if not text:
        return []
    matcher = _added_matcher(tok)
    spans: list[tuple[bytes, int | None]] = []
    pos = 0
    if matcher.pattern is not None:
        for m in matcher.pattern.finditer(text):
            if m.start() > pos:
                spans.append((text[pos:m.start()], None))
            spans.append((m.group(0), matcher.ids[m.group(0)]))
            pos = m.end()
    if pos < len(text):
        spans.append((text[pos:], None))

    ranks = tok.merge_ranks
    out: list[int] = []
    for chunk, added_id in spans:
        if added_id is not None:
            out.append(added_id)
            continue
        for piece in bpe_merge(_units(tok, chunk), ranks):
            out.append(tok.vocab[piece])
    return out


def decode(tok: TokenizerDef, ids: Iterable[int]) -> bytes:
    parts = []
    for i in ids:
        if i in tok.added_by_id:
            parts.append(tok.added_by_id[i].content.encode("utf-8"))
        else:
            parts.append(decode_surface(tok.id_to_surface[i], tok.convention))
    return b"".join(parts)
