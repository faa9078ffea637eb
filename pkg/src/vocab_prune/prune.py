"""Language-aware keep-set construction, merge closure, remapping and
tokenizer reconstruction."""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .errors import EmptyKeepSet, InvariantError, NotMergeClosed, ParseError
from .scripts import (
    ScriptTag,
    TokenRecord,
    classify_bytes,
    decode_surface,
    sort_tags,
)
from .tokenizer import AddedToken, MergeRule, TokenizerDef, validate


class Closure(enum.Enum):
    ReAddOperands = "readd"
    DropUnreachable = "drop"


PRESETS: dict[str, frozenset[ScriptTag]] = {
    "enko": frozenset({ScriptTag.Latin, ScriptTag.Hangul}),
    "enkozh": frozenset({ScriptTag.Latin, ScriptTag.Hangul, ScriptTag.Han}),
}

_IMPLICIT = frozenset({ScriptTag.Neutral, ScriptTag.ByteFragment})


@dataclass(frozen=True)
class PruneConfig:
    allowed: frozenset[ScriptTag]
    always_keep: tuple[str, ...] = ()
    closure: Closure = Closure.ReAddOperands
    preset: str | None = None

    def __post_init__(self):
        if not self.allowed:
            raise InvariantError("PruneConfig.allowed must name at least one script")
        bad = self.allowed & _IMPLICIT
        if bad:
            raise InvariantError(f"{sorted(t.value for t in bad)} are always kept and cannot be listed as allowed")

    @classmethod
    def from_preset(cls, name: str, **kwargs) -> PruneConfig:
        key = name.lower()
        if key not in PRESETS:
            raise InvariantError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
        return cls(allowed=PRESETS[key], preset=key, **kwargs)

    @classmethod
    def from_json(cls, data: bytes | str | Mapping[str, Any]) -> PruneConfig:
        if isinstance(data, Mapping):
            doc = data
        else:
            try:
                doc = json.loads(data)
            except json.JSONDecodeError as exc:
                raise ParseError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(doc, Mapping):
            raise ParseError("config file must hold a JSON object")
        try:
            closure = Closure(doc.get("closure") or "readd")
        except ValueError:
            raise ParseError(f"closure must be 'readd' or 'drop', got {doc.get('closure')!r}") from None
        keep = tuple(doc.get("always_keep") or ())
        preset = doc.get("preset")
        if preset:
            return cls.from_preset(preset, always_keep=keep, closure=closure)
        try:
            allowed = frozenset(ScriptTag.parse(s) for s in doc.get("allowed_scripts") or ())
        except ValueError as exc:
            raise ParseError(str(exc)) from None
        return cls(allowed=allowed, always_keep=keep, closure=closure)

    def to_json(self) -> dict[str, Any]:
        return {
            "preset": self.preset,
            "allowed_scripts": [t.value for t in sort_tags(self.allowed)],
            "always_keep": list(self.always_keep),
            "closure": self.closure.value,
        }


@dataclass(frozen=True)
class PruneMap:
    kept: tuple[int, ...]
    forward: dict[int, int] = field(compare=False, hash=False)

    @property
    def size(self) -> int:
        return len(self.kept)


@dataclass(frozen=True)
class PruneReport:
    original_size: int
    pruned_size: int
    percent_of_original: float
    removed_by_tag: dict[str, int]
    readded_by_closure: int
    dropped_by_closure: int
    embedding_bytes_saved: int
    tied_embeddings: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "original_size": self.original_size,
            "pruned_size": self.pruned_size,
            "percent_of_original": self.percent_of_original,
            "removed_by_tag": dict(self.removed_by_tag),
            "readded_by_closure": self.readded_by_closure,
            "dropped_by_closure": self.dropped_by_closure,
            "embedding_bytes_saved": self.embedding_bytes_saved,
            "tied_embeddings": self.tied_embeddings,
        }


def token_records(tok: TokenizerDef) -> list[TokenRecord]:
    """One classified record per id, in id order.

    Added tokens are judged on their literal content, regardless of the
    vocabulary's surface convention.
    """
    records = []
    for i in range(tok.size):
        added = tok.added_by_id.get(i)
        if added is not None:
            surface = tok.id_to_surface.get(i, added.content)
            decoded = added.content.encode("utf-8")
        else:
            surface = tok.id_to_surface[i]
            decoded = decode_surface(surface, tok.convention)
        records.append(
            TokenRecord(
                id=i,
                surface=surface,
                decoded=decoded,
                tags=classify_bytes(decoded),
                is_special=bool(added and added.special),
                is_added=added is not None,
            )
        )
    return records


def keeps(rec: TokenRecord, cfg: PruneConfig, always: frozenset[str] | set[str] = frozenset()) -> bool:
    return (
        rec.is_special
        or rec.is_added
        or rec.tags <= _IMPLICIT
        or rec.tags <= cfg.allowed
        or rec.surface in always
    )


def build_keep_set(tok: TokenizerDef, cfg: PruneConfig, records: list[TokenRecord] | None = None) -> set[int]:
    if records is None:
        records = token_records(tok)
    always = set(cfg.always_keep)
    return {r.id for r in records if keeps(r, cfg, always)}


def close_under_merges(tok: TokenizerDef, keep: Iterable[int], policy: Closure = Closure.ReAddOperands) -> set[int]:
    """Make ``keep`` merge-closed: every kept product has kept operands.

    ReAddOperands grows the set to the least closed superset; DropUnreachable
    shrinks it to the greatest closed subset, never dropping added tokens.
    """
    kept = set(keep)
    vocab = tok.vocab
    rules = [(vocab[m.left], vocab[m.right], vocab[m.product]) for m in tok.merges]

    if policy is Closure.ReAddOperands:
        by_product: dict[int, list[tuple[int, int]]] = {}
        for left, right, prod in rules:
            by_product.setdefault(prod, []).append((left, right))
        stack = [p for p in kept if p in by_product]
        while stack:
            p = stack.pop()
            for left, right in by_product[p]:
                for operand in (left, right):
                    if operand not in kept:
                        kept.add(operand)
                        if operand in by_product:
                            stack.append(operand)
        return kept

    protected = set(tok.added_by_id)
    consumers: dict[int, list[int]] = {}
    for left, right, prod in rules:
        consumers.setdefault(left, []).append(prod)
        consumers.setdefault(right, []).append(prod)
    stack = [
        prod
        for left, right, prod in rules
        if prod in kept and prod not in protected and (left not in kept or right not in kept)
    ]
    while stack:
        p = stack.pop()
        if p not in kept:
            continue
        kept.discard(p)
        for q in consumers.get(p, ()):
            if q in kept and q not in protected:
                stack.append(q)
    return kept


def make_prune_map(keep: Iterable[int]) -> PruneMap:
    kept = tuple(sorted(set(keep)))
    if not kept:
        raise EmptyKeepSet("keep set is empty; nothing would survive pruning")
    return PruneMap(kept=kept, forward={old: new for new, old in enumerate(kept)})


def _remap_post_processor(node: Any, forward: Mapping[int, int]) -> Any:
    # template processors carry special-token ids that must follow the remap
    if isinstance(node, dict):
        out = {}
        for k, v in node.items():
            if k == "ids" and isinstance(v, list) and all(isinstance(x, int) for x in v):
                out[k] = [forward[x] for x in v if x in forward]
            else:
                out[k] = _remap_post_processor(v, forward)
        return out
    if isinstance(node, list):
        return [_remap_post_processor(v, forward) for v in node]
    return node


def rebuild_tokenizer(tok: TokenizerDef, pmap: PruneMap) -> TokenizerDef:
    fwd = pmap.forward
    vocab = tok.vocab
    for m in tok.merges:
        prod = vocab[m.product]
        if prod in fwd and prod not in tok.added_by_id and (vocab[m.left] not in fwd or vocab[m.right] not in fwd):
            missing = m.left if vocab[m.left] not in fwd else m.right
            raise NotMergeClosed(f"kept token {m.product!r} is produced by merge #{m.rank} whose operand {missing!r} was pruned")

    new_vocab = {s: fwd[i] for s, i in sorted(vocab.items(), key=lambda kv: kv[1]) if i in fwd}
    merges = []
    for m in tok.merges:
        if vocab[m.left] in fwd and vocab[m.right] in fwd and vocab[m.product] in fwd:
            merges.append(MergeRule(len(merges), m.left, m.right))
    added = tuple(
        AddedToken(fwd[a.id], a.content, a.special, dict(a.extra)) for a in tok.added if a.id in fwd
    )
    extra = dict(tok.extra)
    if "post_processor" in extra:
        extra["post_processor"] = _remap_post_processor(extra["post_processor"], fwd)
    new = TokenizerDef(
        vocab=new_vocab,
        merges=tuple(merges),
        added=added,
        convention=tok.convention,
        model_extra=dict(tok.model_extra),
        extra=extra,
        merges_as_pairs=tok.merges_as_pairs,
    )
    validate(new)
    return new


def removal_tag(tags: frozenset[ScriptTag], allowed: frozenset[ScriptTag]) -> ScriptTag:
    """Single tag a removed token is counted under in reports."""
    ordered = sort_tags(tags)
    for t in ordered:
        if t not in allowed and t not in _IMPLICIT:
            return t
    return ordered[0]


def make_report(
    original: TokenizerDef,
    new: TokenizerDef,
    hidden_dim: int,
    dtype_bytes: int,
    tied: bool,
    removed_tags: Mapping[ScriptTag | str, int],
    readded: int = 0,
    dropped: int = 0,
) -> PruneReport:
    if new.size > original.size:
        raise InvariantError(f"pruned size {new.size} exceeds original size {original.size}")
    removed = original.size - new.size
    return PruneReport(
        original_size=original.size,
        pruned_size=new.size,
        percent_of_original=new.size / original.size,
        removed_by_tag={(k.value if isinstance(k, ScriptTag) else k): v for k, v in removed_tags.items()},
        readded_by_closure=readded,
        dropped_by_closure=dropped,
        embedding_bytes_saved=removed * hidden_dim * dtype_bytes * (1 if tied else 2),
        tied_embeddings=tied,
    )


@dataclass
class PruneResult:
    tokenizer: TokenizerDef
    map: PruneMap
    records: list[TokenRecord]
    rule_keep: set[int]
    readded: int
    dropped: int

    def removed_by_tag(self, cfg: PruneConfig) -> dict[ScriptTag, int]:
        counts: Counter[ScriptTag] = Counter()
        fwd = self.map.forward
        for r in self.records:
            if r.id not in fwd:
                counts[removal_tag(r.tags, cfg.allowed)] += 1
        return {t: counts[t] for t in sort_tags(counts)}

    def report(self, original: TokenizerDef, cfg: PruneConfig, hidden_dim: int, dtype_bytes: int, tied: bool) -> PruneReport:
        return make_report(
            original,
            self.tokenizer,
            hidden_dim,
            dtype_bytes,
            tied,
            self.removed_by_tag(cfg),
            readded=self.readded,
            dropped=self.dropped,
        )


def prune(tok: TokenizerDef, cfg: PruneConfig) -> PruneResult:
    """Classify, filter, close and remap in one pass."""
    records = token_records(tok)
    rule_keep = build_keep_set(tok, cfg, records)
    closed = close_under_merges(tok, rule_keep, cfg.closure)
    pmap = make_prune_map(closed)
    return PruneResult(
        tokenizer=rebuild_tokenizer(tok, pmap),
        map=pmap,
        records=records,
        rule_keep=rule_keep,
        readded=len(closed - rule_keep),
        dropped=len(rule_keep - closed),
    )
