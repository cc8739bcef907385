from pathlib import Path

import numpy as np
import pytest

from ilm.autograd.gradcheck import gradcheck
from ilm.dataset.vocab import Vocabulary
from ilm.nn import Module
from ilm.public.schemas import load_config
from ilm.utils.formatting_id import RandomIndexer
from ilm.utils.template_utils import template_literal_text

TINY_CONFIG = """
name = "tiny"
seed = 0
train_dtype = "float64"

[data]
num_users = 24
num_items = 12
num_clusters = 3
min_length = 4
max_length = 7
history_length = 3
eval_text_fraction = 0.2

[mf]
rank = 4
sweeps = 5

[qformer]
dim = 8
num_queries = 2
num_layers = 1
num_heads = 2
max_text_len = 12
epochs = 1
batch_size = 4

[backbone]
num_layers = 1
dim = 16
num_heads = 2
max_len = 64
pretrain_steps = 4
batch_size = 4

[phase2]
steps = 2
batch_size = 2
eval_every = 2
dev_examples = 3

[eval]
beam_size = 3
max_new_tokens = 2
seeds = [0]
max_examples = 3
query_counts = [1]
modes = ["IT"]
"""


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow directional experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def check_gradients():
    """Asserts backward() against central finite differences (float64, step 1e-5)."""
    def check(fn, params, tolerance=1e-4):
        errors = gradcheck(fn, params)
        worst = max(errors) if errors else 0.0
        assert worst < tolerance, f"relative gradient error {worst:.3e} >= {tolerance:.0e}"
        return errors
    return check


def randomize(module: Module, rng: np.random.Generator, std: float = 0.3) -> Module:
    """Replace every parameter with wider draws so no gradient is vanishingly small."""
    for param in module.parameters():
        param.assign(rng.normal(0.0, std, size=param.shape))
    return module


@pytest.fixture
def config_file(tmp_path) -> Path:
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_CONFIG, encoding="utf-8")
    return path


@pytest.fixture
def tiny_config(config_file):
    return load_config(config_file)


@pytest.fixture
def pipeline_dir(tmp_path) -> Path:
    path = tmp_path / "runs"
    path.mkdir()
    return path


@pytest.fixture
def indexer():
    return RandomIndexer.build(6, np.random.default_rng(7))


@pytest.fixture
def vocab(indexer):
    texts = template_literal_text() + ["Silent City | space, robots", "Golden Night | romance"]
    return Vocabulary.build(texts, indexer, num_users=4)
