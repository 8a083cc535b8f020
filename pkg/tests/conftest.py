import os

import numpy as np
import pytest

from tsesim.audio import AudioClip, write_wav
from tsesim.shards import build_catalog


def make_corpus(root, n_speakers=4, n_utts=3, seconds=0.5, sample_rate=8000, seed=0,
                vary_length=False):
    """Write a synthetic single-speaker corpus; returns the raw list path."""
    rng = np.random.default_rng(seed)
    os.makedirs(root, exist_ok=True)
    lines = []
    for s in range(n_speakers):
        for u in range(n_utts):
            n = int(seconds * sample_rate)
            if vary_length:
                n += int(rng.integers(0, sample_rate // 4))
            x = 0.1 * rng.standard_normal(n) * (1 + s)
            name = f"spk{s:02d}_utt{u:02d}"
            path = os.path.join(root, name + ".wav")
            write_wav(AudioClip(x, sample_rate), path)
            lines.append(f"{name}\tspk{s:02d}\t{name}.wav\n")
    list_path = os.path.join(root, "wav.tsv")
    with open(list_path, "w") as fh:
        fh.writelines(lines)
    return list_path


def make_noise_list(root, sample_rate=8000, seconds=0.3, seed=1, count=2):
    rng = np.random.default_rng(seed)
    os.makedirs(root, exist_ok=True)
    paths = []
    for i in range(count):
        p = os.path.join(root, f"noise{i}.wav")
        write_wav(AudioClip(0.05 * rng.standard_normal(int(seconds * sample_rate)), sample_rate), p)
        paths.append(p)
    list_path = os.path.join(root, "noise.list")
    with open(list_path, "w") as fh:
        fh.write("\n".join(paths) + "\n")
    return list_path


@pytest.fixture
def corpus(tmp_path):
    return make_corpus(tmp_path / "corpus")


@pytest.fixture
def catalog(corpus):
    return build_catalog(corpus)


@pytest.fixture
def noise_list(tmp_path):
    return make_noise_list(tmp_path / "noise")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
