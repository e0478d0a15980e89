import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vocreid.core import EmbeddingMatrix, ItemMeta, validate_dataset  # noqa: E402
from vocreid.synthgen import SynthConfig, generate  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_meta():
    return [
        ItemMeta("q0", "query", 5, 1),
        ItemMeta("g0", "gallery", 5, 2, track_id=0),
        ItemMeta("g1", "gallery", 7, 1, track_id=1),
    ]


@pytest.fixture
def small_synth():
    cfg = SynthConfig(n_ids=12, images_per_id=5, n_cameras=4, n_orient_bins=8, seed=3)
    ds, truth = generate(cfg)
    return ds


def make_dataset(meta, dims=4, seed=0, branches=("vehicle",)):
    rng = np.random.default_rng(seed)
    emb = {b: EmbeddingMatrix(rng.standard_normal((len(meta), dims)), b) for b in branches}
    return validate_dataset(emb, meta)


@pytest.fixture
def criterion(request, capsys):
    """Print and remember one pass/fail line for an acceptance criterion."""

    def report(name, ok, detail):
        line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        with capsys.disabled():
            print(f"\n{line}")
        request.config.__dict__.setdefault("_acceptance_lines", []).append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.__dict__.get("_acceptance_lines")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
