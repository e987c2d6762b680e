import os

import numpy as np
import pytest

from src.scm import CausalGraph, ConfounderSpec, Dataset, forward_generate
from src.synthgen import BenchConfig, generate_bench
from src.trainer import TrainConfig

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


@pytest.fixture
def sample_records_path():
    return os.path.join(REPO_ROOT, "sample_inputs.json")


@pytest.fixture
def small_bench_config():
    return BenchConfig(n_observed=6, expected_neighborhood=2.0, pervasiveness=0.5, n_confounders=2,
                       samples_per_skeleton=4, n_skeletons=3, dim=3, seed=7)


@pytest.fixture
def small_bench(small_bench_config):
    return generate_bench(small_bench_config)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(hidden_dim=5, epochs=2, batch_size=4, lr=1e-3, seed=3)


@pytest.fixture
def chain_graph():
    # 0 -> 1 -> 2
    strengths = np.zeros((3, 3))
    strengths[1, 0] = 1.5
    strengths[2, 1] = -0.5
    return CausalGraph.from_strengths(strengths)


@pytest.fixture
def multi_structure_dataset():
    """Ten structures over N=4, three samples each, D=2"""
    rng = np.random.default_rng(11)
    samples = []
    lower = np.tril(np.ones((4, 4), dtype=bool), k=-1)
    for sid in range(10):
        mask = (rng.random((4, 4)) < 0.5) & lower
        mask[1, 0] = True
        graph = CausalGraph.from_strengths(np.where(mask, rng.uniform(0.5, 2.0, (4, 4)), 0.0))
        conf = ConfounderSpec(loadings=np.zeros((4, 1)))
        for i in range(3):
            samples.append(forward_generate(graph, conf, seed=100 * sid + i, dim=2, structure_id=sid))
    return Dataset(samples=samples)
