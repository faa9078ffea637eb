import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from toys import ALPHABET, CHAR_LABEL, enko_line
from vocab_prune.errors import NoWords, PreconditionViolation
from vocab_prune.metrics import verify_segmentation, wpr
from vocab_prune.prune import PruneConfig, make_prune_map, prune
from vocab_prune.scripts import ScriptTag
from vocab_prune.tokenizer import parse_tokenizer

ENKO = {ScriptTag.Latin, ScriptTag.Hangul}


def test_wpr_examples():
    assert wpr("안녕 hello 123", ENKO).wpr == 1.0
    r = wpr("안녕 你好", ENKO)
    assert r.wpr == 0.5
    assert r.failures == [("你好", frozenset({ScriptTag.Han}))]
    with pytest.raises(NoWords):
        wpr("", ENKO)
    with pytest.raises(NoWords):
        wpr("123 ... !!", ENKO)


def test_wpr_mixed_word_fails():
    r = wpr("hello中", ENKO)
    assert r.wpr == 0.0
    assert r.to_json()["failures"] == [{"word": "hello中", "scripts": ["Han"]}]


labelled_text = st.lists(
    st.text(alphabet="".join(CHAR_LABEL), min_size=1, max_size=6).filter(lambda w: w.strip() == w and " " not in w),
    min_size=1,
    max_size=20,
).map(" ".join)
tag_sets = st.sets(st.sampled_from([t for t in ScriptTag if t not in (ScriptTag.Neutral, ScriptTag.ByteFragment)]))


@given(labelled_text, tag_sets, tag_sets)
def test_wpr_bounds_and_monotone(text, a, b):
    try:
        small = wpr(text, a)
    except NoWords:
        return
    assert 0.0 <= small.wpr <= 1.0
    assert wpr(text, a | b).wpr >= small.wpr


@given(labelled_text)
def test_wpr_all_scripts_is_one(text):
    try:
        assert wpr(text, set(ScriptTag)).wpr == 1.0
    except NoWords:
        pass


# -- segmentation ---------------------------------------------------------------

def test_segmentation_preserved_on_korean(trained_tok):
    res = prune(trained_tok, PruneConfig.from_preset("enko"))
    rep = verify_segmentation(trained_tok, res.tokenizer, res.map, ["안녕하세요 세계", "hello 한국어 model"], ENKO)
    assert rep.ok
    assert rep.lines_checked == 2


def test_identity_map_is_trivially_preserved(trained_tok):
    pmap = make_prune_map(range(trained_tok.size))
    lines = [enko_line(random.Random(i)) for i in range(20)]
    assert verify_segmentation(trained_tok, trained_tok, pmap, lines, ENKO).ok


def test_precondition_names_line(trained_tok):
    pmap = make_prune_map(range(trained_tok.size))
    with pytest.raises(PreconditionViolation, match="line 2.*中"):
        verify_segmentation(trained_tok, trained_tok, pmap, ["안녕", "안녕 中"], ENKO)


def test_drop_policy_can_break_segmentation():
    # an always-kept token whose operand is outside the allowed scripts:
    # re-add restores the operand, drop discards the token itself
    vocab = {"a": 0, "b": 1, "中": 2, "ab": 3, "中b": 4}
    doc = {"model": {"type": "BPE", "vocab": vocab, "merges": ["a b", "中 b"]}}
    tok = parse_tokenizer(json.dumps(doc, ensure_ascii=False))
    cfg_doc = {"preset": "enko", "always_keep": ["中b"]}
    readd = prune(tok, PruneConfig.from_json(cfg_doc))
    drop = prune(tok, PruneConfig.from_json({**cfg_doc, "closure": "drop"}))
    assert "中b" in readd.tokenizer.vocab and "中b" not in drop.tokenizer.vocab
    allowed = ENKO | {ScriptTag.Han}
    lines = ["ab", "中bab"]
    assert verify_segmentation(tok, readd.tokenizer, readd.map, lines, allowed).ok
    rep = verify_segmentation(tok, drop.tokenizer, drop.map, lines, allowed, closure="drop")
    assert not rep.ok
    assert rep.to_json()["closure"] == "drop"


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_readd_preserves_random_enko_lines(trained_tok, seed):
    res = prune(trained_tok, PruneConfig.from_preset("enko"))
    rng = random.Random(seed)
    lines = [enko_line(rng) for _ in range(5)]
    assert verify_segmentation(trained_tok, res.tokenizer, res.map, lines, ENKO).ok


def test_alphabet_covers_every_word_class():
    assert set(ALPHABET) >= {"Latin", "Hangul", "Han", "Neutral"}
