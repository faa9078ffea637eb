from __future__ import annotations

import json

import pytest

from toys import bytelevel_doc, train_bytelevel_bpe, training_corpus, write_model_dir
from vocab_prune.tokenizer import parse_tokenizer

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def trained_doc() -> dict:
    vocab, merges = train_bytelevel_bpe(training_corpus(), 400)
    return bytelevel_doc(vocab, merges)


@pytest.fixture(scope="session")
def trained_tok(trained_doc):
    return parse_tokenizer(json.dumps(trained_doc, ensure_ascii=False))


@pytest.fixture
def model_dir(tmp_path, trained_doc):
    return write_model_dir(tmp_path / "model", trained_doc)


@pytest.fixture
def minimal_bytes() -> bytes:
    return json.dumps({"model": {"type": "BPE", "vocab": {"a": 0, "b": 1, "ab": 2}, "merges": ["a b"]}}).encode()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
