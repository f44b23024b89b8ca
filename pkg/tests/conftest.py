import pytest

from textcnn import _core
from textcnn.model import DESK_CONFIG, with_classes
from textcnn.synthdata import SynthSpec, generate
from textcnn.text import load_dataset

ACCEPTANCE_LINES = []


@pytest.fixture(params=_core.available_backends())
def backend(request):
    previous = _core.use_backend(request.param)
    yield request.param
    _core.use_backend(previous)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    generate(SynthSpec(), out)
    return out


@pytest.fixture(scope="session")
def desk_data(synth_dir):
    """(train records, test records, vocab, label map, desk model config)."""
    train, vocab, labels = load_dataset(synth_dir / "train.jsonl", seq_len=DESK_CONFIG.seq_len)
    test, _, _ = load_dataset(synth_dir / "test.jsonl", vocab, labels, seq_len=DESK_CONFIG.seq_len)
    return train, test, vocab, labels, with_classes(DESK_CONFIG, len(labels))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
