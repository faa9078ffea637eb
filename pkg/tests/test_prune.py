import itertools
import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from oracle import oracle_prune
from toys import random_toy_doc
from vocab_prune.errors import EmptyKeepSet, InvariantError, NotMergeClosed, ParseError
from vocab_prune.prune import (
    Closure,
    PruneConfig,
    build_keep_set,
    close_under_merges,
    make_prune_map,
    make_report,
    prune,
    rebuild_tokenizer,
)
from vocab_prune.scripts import ScriptTag, remap_bytes
from vocab_prune.tokenizer import parse_tokenizer, serialize_tokenizer

ENKO = PruneConfig.from_preset("enko")
ENKOZH = PruneConfig.from_preset("enkozh")


def make_tok(vocab, merges=(), added=(), pre=None):
    doc = {"added_tokens": list(added), "model": {"type": "BPE", "vocab": vocab, "merges": list(merges)}}
    if pre:
        doc["pre_tokenizer"] = {"type": pre}
    return parse_tokenizer(json.dumps(doc, ensure_ascii=False))


def test_presets():
    assert ENKO.allowed == {ScriptTag.Latin, ScriptTag.Hangul}
    assert ENKOZH.allowed == {ScriptTag.Latin, ScriptTag.Hangul, ScriptTag.Han}
    with pytest.raises(InvariantError):
        PruneConfig(allowed=frozenset())
    with pytest.raises(InvariantError):
        PruneConfig(allowed=frozenset({ScriptTag.Neutral}))


def test_config_file_parsing():
    cfg = PruneConfig.from_json('{"preset": "enkozh", "allowed_scripts": ["cyrillic"], "always_keep": ["x"], "closure": "drop"}')
    assert cfg.allowed == ENKOZH.allowed
    assert cfg.always_keep == ("x",)
    assert cfg.closure is Closure.DropUnreachable
    cfg = PruneConfig.from_json({"preset": None, "allowed_scripts": ["Hangul", "cyrillic"]})
    assert cfg.allowed == {ScriptTag.Hangul, ScriptTag.Cyrillic}
    assert cfg.closure is Closure.ReAddOperands
    with pytest.raises(ParseError):
        PruneConfig.from_json({"allowed_scripts": ["klingon"]})
    with pytest.raises(ParseError):
        PruneConfig.from_json({"preset": "enko", "closure": "sometimes"})


def test_keep_rules():
    mixed = remap_bytes(" 中국".encode())
    vocab = {s: i for i, s in enumerate([remap_bytes(x.encode()) for x in ["안", "녕", "안녕", "中", "A", "1"]] + [mixed])}
    tok = make_tok(vocab, pre="ByteLevel", added=[{"id": 7, "content": "<eos>", "special": True}])
    enko = build_keep_set(tok, ENKO)
    enkozh = build_keep_set(tok, ENKOZH)
    hangul = remap_bytes("안녕".encode())
    han = remap_bytes("中".encode())
    assert tok.vocab[hangul] in enko
    assert tok.vocab[han] not in enko and tok.vocab[han] in enkozh
    assert tok.vocab[mixed] not in enko and tok.vocab[mixed] in enkozh
    assert 7 in enko and 7 in enkozh
    assert tok.vocab["1"] in enko


def test_always_keep_overrides_script_rule():
    tok = make_tok({"中": 0, "a": 1})
    cfg = PruneConfig.from_json({"preset": "enko", "always_keep": ["中"]})
    assert build_keep_set(tok, cfg) == {0, 1}


def test_byte_fragments_and_neutrals_always_kept():
    frag = remap_bytes(b"\xe4\xb8")
    tok = make_tok({frag: 0, "Ġ": 1, "!": 2, "Ð´": 3}, pre="ByteLevel")
    assert build_keep_set(tok, ENKO) == {0, 1, 2}


# -- closure ------------------------------------------------------------------

ABC = {"a": 0, "b": 1, "ab": 2}


def test_readd_one_step():
    tok = make_tok(ABC, ["a b"])
    assert close_under_merges(tok, {2}, Closure.ReAddOperands) == {0, 1, 2}


def _closure_oracle(tok, keep, policy):
    """Exhaustive: among all subsets, the least closed superset (readd) or
    the greatest closed subset (drop)."""
    universe = range(tok.size)
    rules = [(tok.vocab[m.left], tok.vocab[m.right], tok.vocab[m.product]) for m in tok.merges]

    def closed(s):
        return all(p not in s or (a in s and b in s) for a, b, p in rules)

    subsets = [set(c) for r in range(tok.size + 1) for c in itertools.combinations(universe, r)]
    if policy is Closure.ReAddOperands:
        return min((s for s in subsets if keep <= s and closed(s)), key=len)
    return max((s for s in subsets if s <= keep and closed(s)), key=len)


@pytest.mark.parametrize("policy", list(Closure))
@pytest.mark.parametrize("keep", [set(), {0}, {1}, {2}, {0, 2}, {1, 2}, {0, 1}, {0, 1, 2}])
def test_closure_matches_exhaustive_oracle(policy, keep):
    tok = make_tok(ABC, ["a b"])
    assert close_under_merges(tok, keep, policy) == _closure_oracle(tok, keep, policy)


def test_drop_chain():
    tok = make_tok({"a": 0, "b": 1, "c": 2, "ab": 3, "abc": 4}, ["a b", "ab c"])
    # a discarded upstream: ab and then abc lose their derivation
    assert close_under_merges(tok, {1, 2, 3, 4}, Closure.DropUnreachable) == {1, 2}


def test_drop_never_removes_added():
    tok = make_tok(ABC, ["a b"], added=[{"id": 2, "content": "ab", "special": False}])
    assert close_under_merges(tok, {2}, Closure.DropUnreachable) == {2}


@pytest.mark.parametrize("policy", list(Closure))
def test_closure_idempotent(policy, trained_tok):
    keep = build_keep_set(trained_tok, ENKO)
    once = close_under_merges(trained_tok, keep, policy)
    assert close_under_merges(trained_tok, once, policy) == once


# -- remap and rebuild ---------------------------------------------------------

def test_make_prune_map():
    pm = make_prune_map({0, 3, 7})
    assert pm.forward == {0: 0, 3: 1, 7: 2}
    assert pm.kept == (0, 3, 7)
    assert make_prune_map(range(5)).forward == {i: i for i in range(5)}
    with pytest.raises(EmptyKeepSet):
        make_prune_map(set())


@given(st.sets(st.integers(0, 500), min_size=1))
def test_prune_map_continuous_and_monotone(keep):
    pm = make_prune_map(keep)
    assert sorted(pm.forward.values()) == list(range(len(keep)))
    olds = sorted(keep)
    assert all(pm.forward[a] < pm.forward[b] for a, b in zip(olds, olds[1:]))


def test_rebuild_identity(minimal_bytes):
    tok = parse_tokenizer(minimal_bytes)
    assert rebuild_tokenizer(tok, make_prune_map({0, 1, 2})) == tok


def test_rebuild_drops_merge_without_product():
    tok = make_tok(ABC, ["a b"])
    new = rebuild_tokenizer(tok, make_prune_map({0, 1}))
    assert new.vocab == {"a": 0, "b": 1}
    assert new.merges == ()


def test_rebuild_requires_closure():
    tok = make_tok(ABC, ["a b"])
    with pytest.raises(NotMergeClosed, match="'ab'"):
        rebuild_tokenizer(tok, make_prune_map({0, 2}))


def test_rebuild_remaps_added_and_post_processor():
    doc = {
        "added_tokens": [{"id": 3, "content": "中文", "special": False}, {"id": 4, "content": "<s>", "special": True}],
        "post_processor": {"type": "TemplateProcessing", "special_tokens": {"<s>": {"id": "<s>", "ids": [4], "tokens": ["<s>"]}}},
        "model": {"type": "BPE", "vocab": {"a": 0, "中": 1, "b": 2}, "merges": []},
    }
    tok = parse_tokenizer(json.dumps(doc, ensure_ascii=False))
    res = prune(tok, ENKO)
    new = res.tokenizer
    assert new.vocab == {"a": 0, "b": 1}
    assert [(a.id, a.content) for a in new.added] == [(2, "中文"), (3, "<s>")]
    assert new.extra["post_processor"]["special_tokens"]["<s>"]["ids"] == [3]


def test_mixed_toy_vocab_against_oracle():
    # 10 tokens across scripts, Plain surfaces
    vocab = {s: i for i, s in enumerate(["a", "b", "ab", "가", "나", "가나", "中", "中가", "1", "д"])}
    merges = ["a b", "가 나", "中 가"]
    doc = {"added_tokens": [], "model": {"type": "BPE", "vocab": vocab, "merges": merges}}
    tok = parse_tokenizer(json.dumps(doc, ensure_ascii=False))
    for cfg, allowed in ((ENKO, {"Latin", "Hangul"}), (ENKOZH, {"Latin", "Hangul", "Han"})):
        res = prune(tok, cfg)
        want = oracle_prune(doc, allowed)
        assert set(res.map.kept) == want["keep"]
        assert res.tokenizer.vocab == want["vocab"]
        assert [(m.left, m.right) for m in res.tokenizer.merges] == want["merges"]
    assert prune(tok, ENKO).tokenizer.vocab == {"a": 0, "b": 1, "ab": 2, "가": 3, "나": 4, "가나": 5, "1": 6}


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000), st.sampled_from(["ByteLevel", "Metaspace", "Plain"]), st.sampled_from(list(Closure)))
def test_rebuilt_tokenizer_is_sound(seed, conv, policy):
    doc = random_toy_doc(random.Random(seed), conv)
    tok = parse_tokenizer(json.dumps(doc, ensure_ascii=False))
    res = prune(tok, PruneConfig.from_preset("enko", closure=policy))
    # soundness is re-checked by the parser
    again = parse_tokenizer(serialize_tokenizer(res.tokenizer))
    assert again == res.tokenizer
    kept = list(res.map.kept)
    assert kept == sorted(kept)
    surviving = [(m.left, m.right) for m in tok.merges if tok.vocab[m.product] in res.map.forward
                 and tok.vocab[m.left] in res.map.forward and tok.vocab[m.right] in res.map.forward]
    assert [(m.left, m.right) for m in res.tokenizer.merges] == surviving


# -- report -------------------------------------------------------------------

class _Sized:
    def __init__(self, size):
        self.size = size


def test_report_table_arithmetic():
    r = make_report(_Sized(65_269), _Sized(41_704), 4096, 2, False, {})
    assert round(r.percent_of_original * 100, 1) == 63.9
    assert r.embedding_bytes_saved == 386_088_960
    r = make_report(_Sized(65_269), _Sized(56_660), 4096, 2, True, {})
    assert round(r.percent_of_original * 100, 1) == 86.8
    assert r.embedding_bytes_saved == (65_269 - 56_660) * 4096 * 2


def test_report_counts_consistent(trained_tok):
    res = prune(trained_tok, ENKO)
    rep = res.report(trained_tok, ENKO, 16, 4, False)
    assert rep.pruned_size == rep.original_size - sum(rep.removed_by_tag.values())
    assert rep.percent_of_original == rep.pruned_size / rep.original_size
    assert rep.readded_by_closure == len(set(res.map.kept) - res.rule_keep)
    assert "Han" in rep.removed_by_tag
