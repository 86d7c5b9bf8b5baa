import sys

import pytest

from tempmatch.synthdata import SynthConfig, generate_split
from tempmatch.training import ExperimentConfig, load_split

TINY_SYNTH = SynthConfig(size=32, n_keypoints=(4, 6), min_spacing_cells=1.0)


def tiny_config(**kw):
    base = dict(epochs=2, batch_size=4, embed_dim=8, widths=[12, 12], seed=0)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def tiny_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    generate_split(5, 8, 4, 4, TINY_SYNTH, str(out))
    return str(out)


@pytest.fixture(scope="session")
def tiny_pairs(tiny_dir):
    return load_split(tiny_dir, "train"), load_split(tiny_dir, "val")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
