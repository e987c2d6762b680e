"""
Confounding estimation and removal.

C is estimated as a weighted share of the observed variables, with weights
p(x_j) * p(L | x_j); when the rank-based score omega is high enough the estimate
is subtracted from the representation.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field

from .errors import DegenerateInputError, MissingGroundTruthError, PreconditionError
from .scm import Dataset, Sample
from .synthgen import GRID_SAMPLES, BenchConfig, generate_bench
from .tensor_core import as_tensor

logger = logging.getLogger(__name__)

WEIGHT_EPS = 1e-12
# Samples per skeleton that a sweep cell is scored on
SCORED_PER_STRUCTURE = min(GRID_SAMPLES)

# Maps the samples of one structure to one C estimate per sample
Estimator = Callable[[List[Sample]], List[np.ndarray]]


class DeconfoundConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sweep: str = "all"
    seeds: int = Field(10, ge=1)
    skeletons: int = Field(10, ge=1)
    # spectral rank, K when unset
    rank: Optional[int] = Field(None, ge=1)
    threshold: float = Field(0.5, ge=0.0, le=1.0)
    seed: int = Field(0, ge=0)
    scored_per_structure: Optional[int] = Field(SCORED_PER_STRUCTURE, ge=1)


@dataclass
class DeconfoundResult:
    c_est: np.ndarray
    x_clean: np.ndarray
    gated: bool


def confounding_from_weights(x: torch.Tensor, weights: torch.Tensor,
                             fallback_uniform: bool = False) -> torch.Tensor:
    """c_j = w_j / sum_i w_i * x_j"""
    total = weights.sum()
    if total < WEIGHT_EPS:
        if not fallback_uniform:
            raise DegenerateInputError("confounding weights sum to zero")
        weights = torch.ones_like(weights)
        total = weights.sum()
    return (weights / total).unsqueeze(-1) * x


def estimate_c(x, px, plx) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    px = np.asarray(px, dtype=np.float64)
    plx = np.asarray(plx, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if px.shape != (n,) or plx.shape != (n,):
        raise PreconditionError(f"weights must have shape ({n},), got {px.shape} and {plx.shape}")
    if np.any(px < 0) or np.any(plx < 0):
        raise PreconditionError("weights must be non-negative")
    c = confounding_from_weights(as_tensor(x), as_tensor(px * plx))
    return c.numpy()


def apply_gate(x_star, c_est, omega: float, threshold: float = 0.5) -> DeconfoundResult:
    """Subtract C when omega >= threshold, otherwise keep the representation as is"""
    if not 0.0 <= omega <= 1.0:
        raise PreconditionError(f"omega must lie in [0, 1], got {omega}")
    x_star = np.asarray(x_star, dtype=np.float64)
    c_est = np.asarray(c_est, dtype=np.float64)
    if x_star.shape != c_est.shape:
        raise PreconditionError(f"shapes differ: {x_star.shape} vs {c_est.shape}")
    gated = omega >= threshold
    x_clean = x_star - c_est if gated else x_star.copy()
    return DeconfoundResult(c_est=c_est, x_clean=x_clean, gated=gated)


def eval_c_mse(dataset: Dataset, estimator: Estimator, scored_per_structure: Optional[int] = None) -> float:
    """
    Mean per-sample MSE of the estimator's C against the stored ground truth.

    The estimator always sees every sample of a structure. With
    scored_per_structure set, only the first that many samples of each
    structure enter the mean.
    """
    if scored_per_structure is not None and scored_per_structure < 1:
        raise PreconditionError(f"scored_per_structure must be >= 1, got {scored_per_structure}")
    for idx, sample in enumerate(dataset):
        if sample.confounding is None:
            raise MissingGroundTruthError(f"sample {idx} has no ground-truth confounding")
    errors = []
    for _, indices in dataset.group_by_structure().items():
        group = [dataset[i] for i in indices]
        estimates = estimator(group)
        pairs = list(zip(group, estimates))[:scored_per_structure]
        for sample, c in pairs:
            errors.append(float(np.mean((np.asarray(c) - sample.confounding) ** 2)))
    return float(np.mean(errors)) if errors else 0.0


class ZeroEstimator:
    """Null baseline: C = 0"""
    name = "zero"

    def __call__(self, samples: List[Sample]) -> List[np.ndarray]:
        return [np.zeros_like(s.x) for s in samples]


class OracleEstimator:
    name = "oracle"

    def __call__(self, samples: List[Sample]) -> List[np.ndarray]:
        return [np.array(s.confounding) for s in samples]


class SpectralWeightEstimator:
    """
    Weighted estimate with p(x_j) and p(L | x_j) taken from the samples of one skeleton.

    The node columns (all samples and embedding dims stacked as rows) are
    standardized; p(L | x_j) is the share of node j's energy inside the top-rank
    singular subspace, the part explained by shared latent factors. p(x_j) is the
    Gaussian density of x_j under its node's fitted marginal, which down-weights
    nodes far downstream whose variance has been amplified by the mixing.
    """
    name = "spectral"

    def __init__(self, rank: int = 5):
        if rank < 1:
            raise PreconditionError("rank must be >= 1")
        self.rank = rank

    def node_stats(self, samples: List[Sample]):
        stacked = np.concatenate([s.x.T for s in samples], axis=0)   # (n * D) x N
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        z = (stacked - mean) / std
        u, s, vt = np.linalg.svd(z, full_matrices=False)
        r = min(self.rank, s.shape[0])
        low_rank = (u[:, :r] * s[:r]) @ vt[:r]
        total = np.sum(z ** 2, axis=0)
        explained = np.sum(low_rank ** 2, axis=0)
        plx = np.divide(explained, total, out=np.zeros_like(total), where=total > 0)
        return mean, std, np.clip(plx, 0.0, 1.0)

    def __call__(self, samples: List[Sample]) -> List[np.ndarray]:
        if not samples:
            return []
        mean, std, plx = self.node_stats(samples)
        estimates = []
        for sample in samples:
            z = (sample.x - mean[:, None]) / std[:, None]
            px = np.exp(-0.5 * np.mean(z ** 2, axis=1)) / std
            try:
                estimates.append(estimate_c(sample.x, px, plx))
            except DegenerateInputError:
                logger.warning("⚠️  Degenerate confounding weights, falling back to C = 0")
                estimates.append(np.zeros_like(sample.x))
        return estimates


class ModelEstimator:
    """C_hat from the model's confounding head"""
    name = "model"

    def __init__(self, model):
        self.model = model

    @torch.no_grad()
    def __call__(self, samples: List[Sample]) -> List[np.ndarray]:
        return [self.model(s.tensor()).c_hat.numpy() for s in samples]


def _sweep_cell(cfg: BenchConfig, estimators: Sequence[Estimator],
                scored_per_structure: Optional[int]) -> Dict[str, object]:
    dataset = generate_bench(cfg)
    row = {
        "N": cfg.n_observed,
        "P": cfg.pervasiveness,
        "K": cfg.n_confounders,
        "n": cfg.samples_per_skeleton,
        "seed": cfg.seed,
    }
    for est in estimators:
        row[f"mse_{getattr(est, 'name', type(est).__name__)}"] = eval_c_mse(dataset, est,
                                                                             scored_per_structure)
    return row


def sweep(configs: Iterable[BenchConfig], seeds: Sequence[int],
          estimators: Optional[Sequence[Estimator]] = None, n_jobs: int = 1,
          scored_per_structure: Optional[int] = SCORED_PER_STRUCTURE) -> pd.DataFrame:
    """
    C-estimation MSE for each (config, seed) cell. Cells are independent, each
    seeded from its own config, so the table does not depend on n_jobs.

    Sample seeds do not depend on n, so the first samples of a skeleton are the
    same in every cell that differs only in n. Scoring just those samples keeps
    the targets fixed while the estimator pools more samples; pass None to
    score every sample.
    """
    configs = list(configs)
    cells = [cfg.model_copy(update={"seed": int(seed)}) for cfg in configs for seed in seeds]
    logger.info("🔎 Running %d sweep cells on %d worker(s)", len(cells), n_jobs)
    rows = Parallel(n_jobs=n_jobs)(
        delayed(_sweep_cell)(cfg, estimators or default_estimators(cfg), scored_per_structure)
        for cfg in cells
    )
    frame = pd.DataFrame(rows)
    return frame.sort_values(["N", "P", "K", "n", "seed"], kind="stable").reset_index(drop=True)


def default_estimators(cfg: BenchConfig) -> List[Estimator]:
    return [SpectralWeightEstimator(rank=cfg.n_confounders), ZeroEstimator()]


def summarize_sweep(frame: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard deviation of each estimator's MSE per grid cell"""
    value_cols = [c for c in frame.columns if c.startswith("mse_")]
    grouped = frame.groupby(["N", "P", "K", "n"], sort=True)[value_cols]
    summary = grouped.agg(["mean", "std"])
    summary.columns = [f"{col}_{stat}" for col, stat in summary.columns]
    return summary.reset_index()
