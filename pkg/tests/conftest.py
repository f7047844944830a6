import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pajama_forge.tokenizer import load_bpe  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
GPT2_VOCAB = FIXTURES / "gpt2" / "vocab.json"
GPT2_MERGES = FIXTURES / "gpt2" / "merges.txt"


@pytest.fixture(scope="session")
def gpt2():
    return load_bpe(GPT2_VOCAB, GPT2_MERGES)


@pytest.fixture
def toy_model(tmp_path):
    (tmp_path / "vocab.json").write_text('{"a": 0, "b": 1, "ab": 2}')
    (tmp_path / "merges.txt").write_text("#version: 0.2\na b\n")
    return load_bpe(tmp_path / "vocab.json", tmp_path / "merges.txt")


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
