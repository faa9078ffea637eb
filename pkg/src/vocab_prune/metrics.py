"""Word-level pass rate and segmentation-preservation checks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable

from .errors import EncodingGap, NoWords, PreconditionViolation
from .prune import PruneMap
from .scripts import ScriptTag, classify_char, format_tags, sort_tags
from .tokenizer import TokenizerDef, decode, encode


@dataclass
class WprResult:
    words_total: int
    words_passed: int
    failures: list[tuple[str, frozenset[ScriptTag]]] = field(default_factory=list)

    @property
    def wpr(self) -> float:
        return self.words_passed / self.words_total

    def to_json(self, max_failures: int | None = None) -> dict[str, Any]:
        fails = self.failures if max_failures is None else self.failures[:max_failures]
        return {
            "words_total": self.words_total,
            "words_passed": self.words_passed,
            "wpr": self.wpr,
            "failures": [{"word": w, "scripts": format_tags(t).split(",")} for w, t in fails],
        }


def judge_word(word: str, target: frozenset[ScriptTag] | set[ScriptTag]) -> frozenset[ScriptTag] | None:
    """Offending tags of a word, an empty set if it passes, None if it is
    neutral-only and therefore not counted."""
    tags = [classify_char(c) for c in word]
    remaining = [t for t in tags if t is not ScriptTag.Neutral]
    if not remaining:
        return None
    return frozenset(t for t in remaining if t not in target)


def wpr(text: str, target: Iterable[ScriptTag]) -> WprResult:
    """Fraction of whitespace-delimited words written only in target scripts.

    Neutral characters are ignored when judging a word, and words made only
    of neutral characters do not count toward the total.
    """
    target = frozenset(target)
    total = passed = 0
    failures = []
    for word in text.split():
        offending = judge_word(word, target)
        if offending is None:
            continue
        total += 1
        if offending:
            failures.append((word, offending))
        else:
            passed += 1
    if total == 0:
        raise NoWords("text has no words containing script characters")
    return WprResult(total, passed, failures)


@dataclass
class SegmentationReport:
    lines_checked: int = 0
    mismatches: list[dict[str, Any]] = field(default_factory=list)
    roundtrip_failures: list[int] = field(default_factory=list)
    closure: str | None = None

    @property
    def ok(self) -> bool:
        return not self.mismatches and not self.roundtrip_failures

    def to_json(self) -> dict[str, Any]:
        return {
            "lines_checked": self.lines_checked,
            "mismatch_count": len(self.mismatches),
            "roundtrip_failure_count": len(self.roundtrip_failures),
            "closure": self.closure,
            "ok": self.ok,
            "mismatches": self.mismatches,
            "roundtrip_failures": self.roundtrip_failures,
        }


def check_line_scripts(line: str, allowed: frozenset[ScriptTag], lineno: int) -> None:
    for c in line:
        tag = classify_char(c)
        if tag is not ScriptTag.Neutral and tag not in allowed:
            raise PreconditionViolation(
                f"corpus line {lineno}: character {c!r} (U+{ord(c):04X}) is {tag.value}, "
                f"outside the allowed scripts {[t.value for t in sort_tags(allowed)]}"
            )


def verify_segmentation(
    original: TokenizerDef,
    pruned: TokenizerDef,
    pmap: PruneMap,
    corpus: Iterable[bytes | str],
    allowed: Iterable[ScriptTag],
    closure: str | None = None,
) -> SegmentationReport:
    """Encode every line with both tokenizers and compare after remapping.

    Lines are numbered from 1. A line with a character outside ``allowed``
    raises PreconditionViolation before any encoding starts.
    """
    allowed = frozenset(allowed)
    lines = [(ln if isinstance(ln, bytes) else ln.encode("utf-8")) for ln in corpus]
    for n, line in enumerate(lines, 1):
        check_line_scripts(line.decode("utf-8"), allowed, n)

    report = SegmentationReport(closure=closure)
    fwd = pmap.forward
    for n, line in enumerate(lines, 1):
        report.lines_checked += 1
        orig_ids = encode(original, line)
        expected = [fwd.get(i, -1) for i in orig_ids]
        try:
            got = encode(pruned, line)
        except EncodingGap as exc:
            report.mismatches.append({"line": n, "error": str(exc)})
            report.roundtrip_failures.append(n)
            continue
        if got != expected:
            report.mismatches.append({"line": n, "expected": expected, "got": got})
        if decode(pruned, got) != line or decode(original, orig_ids) != line:
            report.roundtrip_failures.append(n)
    return report
