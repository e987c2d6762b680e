"""
Synthetic confounded benchmark: random DAG skeletons in their natural order,
pervasive latent confounders, and batches of samples per skeleton.
"""
import itertools
import logging
from typing import Dict, List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ConfigError
from .scm import CausalGraph, ConfounderSpec, Dataset, forward_generate

logger = logging.getLogger(__name__)

GRID_N = (20, 50, 100)
GRID_P = (0.1, 0.4, 0.7)
GRID_K = (1, 5, 10)
GRID_SAMPLES = (5, 10, 50)

PAIR_KINDS = ("a_causes_b", "b_causes_a", "confounder")


class BenchConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_observed: int = Field(20, ge=1)
    expected_neighborhood: float = Field(5.0, ge=0)
    pervasiveness: float = Field(0.4, ge=0.0, le=1.0)
    n_confounders: int = Field(5, ge=1)
    samples_per_skeleton: int = Field(10, ge=1)
    n_skeletons: int = Field(1, ge=1)
    noise_sigma: float = Field(1.0, ge=0.0)
    dim: int = Field(1, ge=1)
    weight_low: float = Field(0.5, gt=0.0)
    weight_high: float = Field(2.0, gt=0.0)
    noise_type: Literal["gaussian", "uniform"] = "gaussian"
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_weights(self):
        if self.weight_low > self.weight_high:
            raise ValueError("weight_low must not exceed weight_high")
        return self

    @property
    def edge_probability(self) -> float:
        if self.n_observed < 2:
            return 0.0
        return min(1.0, self.expected_neighborhood / (self.n_observed - 1))


def derive_seed(*keys: int) -> int:
    """Stable per-unit seed from (master_seed, skeleton_idx, ...)"""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


def _draw_weights(rng: np.random.Generator, mask: np.ndarray, low: float, high: float) -> np.ndarray:
    # two trend types (increasing / decreasing) with equal probability
    signs = np.where(rng.random(mask.shape) < 0.5, -1.0, 1.0)
    magnitudes = rng.uniform(low, high, size=mask.shape)
    return np.where(mask, signs * magnitudes, 0.0)


def random_skeleton(cfg: BenchConfig, seed: int) -> CausalGraph:
    """
    Each pair j < i becomes the edge j -> i independently with probability
    expected_neighborhood / (N - 1), so a node has that many neighbours on average.
    """
    n = cfg.n_observed
    if cfg.expected_neighborhood >= n:
        logger.warning("⚠️  expected_neighborhood %.2f >= N=%d, edge probability capped at 1",
                       cfg.expected_neighborhood, n)
    rng = np.random.default_rng(seed)
    lower = np.tril(np.ones((n, n), dtype=bool), k=-1)
    mask = (rng.random((n, n)) < cfg.edge_probability) & lower
    return CausalGraph.from_strengths(_draw_weights(rng, mask, cfg.weight_low, cfg.weight_high))


def attach_confounders(graph: CausalGraph, cfg: BenchConfig, seed: int) -> ConfounderSpec:
    """Confounder k directly causes node i with probability P"""
    rng = np.random.default_rng(seed)
    mask = rng.random((graph.n_vars, cfg.n_confounders)) < cfg.pervasiveness
    loadings = _draw_weights(rng, mask, cfg.weight_low, cfg.weight_high)
    return ConfounderSpec(loadings=loadings, noise_sigma=cfg.noise_sigma)


def conventions(cfg: BenchConfig) -> Dict[str, object]:
    return {
        "weight_scheme": f"sign +/- with p=0.5, magnitude U[{cfg.weight_low}, {cfg.weight_high}]",
        "edge_probability": "expected_neighborhood / (N - 1), capped at 1",
        "edge_probability_value": cfg.edge_probability,
        "confounder_distribution": "L ~ N(0, 1) i.i.d.",
        "noise_distribution": f"{cfg.noise_type}, sigma={cfg.noise_sigma}",
        "confounding_effect": "C = B L (before mixing)",
        "seed_derivation": "SeedSequence([seed, skeleton, 0|1|2, sample])",
    }


def generate_bench(cfg: BenchConfig) -> Dataset:
    samples = []
    for s in range(cfg.n_skeletons):
        graph = random_skeleton(cfg, derive_seed(cfg.seed, s, 0))
        conf = attach_confounders(graph, cfg, derive_seed(cfg.seed, s, 1))
        for i in range(cfg.samples_per_skeleton):
            sample_seed = derive_seed(cfg.seed, s, 2, i)
            sample = forward_generate(graph, conf, sample_seed, dim=cfg.dim,
                                      noise_type=cfg.noise_type, structure_id=s)
            sample.meta["loadings"] = conf.loadings
            samples.append(sample)
    logger.info("✅ Generated %d samples over %d skeletons (N=%d, P=%.2f, K=%d)",
                len(samples), cfg.n_skeletons, cfg.n_observed, cfg.pervasiveness, cfg.n_confounders)
    return Dataset(samples=samples, metadata={"generator": cfg.model_dump(),
                                              "conventions": conventions(cfg)})


def bench_grid(**overrides) -> List[BenchConfig]:
    """The full N x P x K x n grid of the confounding study"""
    return [
        BenchConfig(n_observed=n, pervasiveness=p, n_confounders=k, samples_per_skeleton=m, **overrides)
        for n, p, k, m in itertools.product(GRID_N, GRID_P, GRID_K, GRID_SAMPLES)
    ]


def simulate_pair(kind: str, n: int, seed: int, strength: float = 1.0,
                  noise_half_width: float = 0.5) -> Tuple[np.ndarray, np.ndarray]:
    """
    Bivariate linear data with uniform (non-Gaussian) noise for direction tests.

    kind: "a_causes_b", "b_causes_a" or "confounder" (l -> a, l -> b).
    """
    rng = np.random.default_rng(seed)

    def noise():
        return rng.uniform(-noise_half_width, noise_half_width, size=n)

    if kind == "a_causes_b":
        a = rng.uniform(-1.0, 1.0, size=n)
        return a, strength * a + noise()
    if kind == "b_causes_a":
        b = rng.uniform(-1.0, 1.0, size=n)
        return strength * b + noise(), b
    if kind == "confounder":
        latent = rng.uniform(-1.0, 1.0, size=n)
        return strength * latent + noise(), strength * latent + noise()
    raise ConfigError(f"Unknown pair kind: {kind}. Choose from {PAIR_KINDS}")
