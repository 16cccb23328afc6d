import sys

import numpy as np
import pytest

from mmflow.chem import SystemRecord, build_condensed_vocab
from mmflow.featurize import build_registry
from mmflow.net import NetConfig
from mmflow.toydata import random_corpus, random_system

TINY_NET = dict(d_s=8, d_v=3, d_e=4, d_tok=4, time_dim=4, task_dim=4, n_blocks=1, n_convs=1, n_rbf=4)


@pytest.fixture(scope="session")
def corpus():
    return random_corpus(np.random.default_rng(0), 4, max_atoms=9)


@pytest.fixture(scope="session")
def systems(corpus):
    rng = np.random.default_rng(1)
    return [random_system(rng, m, n_residues=3) for m in corpus]


@pytest.fixture(scope="session")
def vocab(corpus):
    return build_condensed_vocab(corpus)


@pytest.fixture(scope="session")
def registry(vocab):
    return build_registry(vocab)


@pytest.fixture
def tiny_cfg():
    return NetConfig(**TINY_NET)


def ligand_only(mols):
    return [SystemRecord(m) for m in mols]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
