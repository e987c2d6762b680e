"""
Pairwise causal-direction test for linear relations with non-Gaussian noise.

For a pair (a, b) the linear fits b ~ k a and a ~ k' b leave residuals
sigma_b = b - k a and sigma_a = a - k' b. The residual of the true causal
direction is independent of its regressor; both residuals dependent points to a
shared confounder, both independent to a common effect.

Two independence tests are available: an HSIC test with Gaussian kernels and a
gamma approximation of its null (the default), and a distance-correlation test
with a permutation null.
"""
import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Dict, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial.distance import cdist, pdist
from scipy.stats import gamma, permutation_test

from .errors import ConfigError, DegenerateInputError, PreconditionError

logger = logging.getLogger(__name__)

MIN_OBSERVATIONS = 30
K_EPS = 1e-9
ZERO_RESIDUAL_RTOL = 1e-12

IndependenceMethod = Literal["hsic", "dcor"]


class PairCase(str, Enum):
    A_CAUSES_B = "A_causes_B"
    B_CAUSES_A = "B_causes_A"
    COMMON_CONFOUNDER = "common_confounder"
    COMMON_EFFECT = "common_effect"


class DirTestConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    alpha: float = Field(0.05, gt=0.0, lt=1.0)
    method: IndependenceMethod = "hsic"
    # dcor only
    n_permutations: int = Field(500, ge=1)
    seed: int = Field(0, ge=0)


@dataclass
class PairVerdict:
    case: PairCase
    k_fit: float
    reverse_k: float
    # (sigma_a vs b, sigma_b vs a)
    p_values: Tuple[float, float]
    statistics: Tuple[float, float]
    method: str = "hsic"
    degenerate: bool = False

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["case"] = self.case.value
        d["p_values"] = list(self.p_values)
        d["statistics"] = list(self.statistics)
        return d


def _as_observations(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise PreconditionError(f"expected (n,) or (n, D) observations, got shape {arr.shape}")
    return arr


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise PreconditionError(f"a and b must have the same shape, got {a.shape} and {b.shape}")
    if a.shape[0] < MIN_OBSERVATIONS:
        raise PreconditionError(f"need at least {MIN_OBSERVATIONS} observations, got {a.shape[0]}")


def fit_k(a, b) -> float:
    """
    Least-squares slope of b on a after centering. For D > 1 a single scalar k
    minimizes the summed squared error over all dims.
    """
    a, b = _as_observations(a), _as_observations(b)
    _check_pair(a, b)
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    denom = float(np.sum(ac * ac))
    if denom <= 0.0:
        raise DegenerateInputError("regressor has zero variance")
    return float(np.sum(ac * bc) / denom)


def _double_center(m: np.ndarray) -> np.ndarray:
    return m - m.mean(axis=0, keepdims=True) - m.mean(axis=1, keepdims=True) + m.mean()


def _centered_distances(x: np.ndarray) -> np.ndarray:
    return _double_center(cdist(x, x))


def _dcor_from_centered(a_mat: np.ndarray, b_mat: np.ndarray) -> float:
    dcov_sq = float(np.mean(a_mat * b_mat))
    var_a = float(np.mean(a_mat * a_mat))
    var_b = float(np.mean(b_mat * b_mat))
    if var_a <= 0.0 or var_b <= 0.0:
        return 0.0
    return float(np.sqrt(max(dcov_sq, 0.0) / np.sqrt(var_a * var_b)))


def _paired(x, y) -> Tuple[np.ndarray, np.ndarray]:
    x, y = _as_observations(x), _as_observations(y)
    if x.shape[0] != y.shape[0]:
        raise PreconditionError("x and y need the same number of observations")
    return x, y


def distance_correlation(x, y) -> float:
    """Sample distance correlation in [0, 1]; 0 iff independent in the population limit"""
    x, y = _paired(x, y)
    return _dcor_from_centered(_centered_distances(x), _centered_distances(y))


def dcor_test(x, y, n_permutations: int = 500, seed: int = 0) -> Tuple[float, float]:
    """Distance-covariance permutation test -> (distance correlation, p-value)"""
    x, y = _paired(x, y)
    a_mat = _centered_distances(x)
    b_mat = _centered_distances(y)

    def dcov(idx):
        idx = np.asarray(idx, dtype=int)
        return np.mean(a_mat * b_mat[np.ix_(idx, idx)])

    result = permutation_test((np.arange(x.shape[0]),), dcov, permutation_type="pairings",
                              vectorized=False, n_resamples=n_permutations,
                              alternative="greater", rng=np.random.default_rng(seed))
    return _dcor_from_centered(a_mat, b_mat), float(result.pvalue)


def median_bandwidth(x) -> float:
    """Gaussian kernel width from the median pairwise distance; 0 for constant input"""
    d = pdist(_as_observations(x))
    d = d[d > 0]
    if d.size == 0:
        return 0.0
    return float(np.sqrt(0.5 * np.median(d ** 2)))


def _gaussian_gram(x: np.ndarray, width: float) -> np.ndarray:
    return np.exp(-cdist(x, x, "sqeuclidean") / (2.0 * width ** 2))


def hsic_test(x, y) -> Tuple[float, float]:
    """
    HSIC independence test with median-width Gaussian kernels -> (n * HSIC, p-value).

    The null distribution of n * HSIC is approximated by a gamma law matched on
    its first two moments, so no resampling is needed.
    """
    x, y = _paired(x, y)
    n = x.shape[0]
    if n < 6:
        raise PreconditionError(f"HSIC test needs at least 6 observations, got {n}")
    width_x, width_y = median_bandwidth(x), median_bandwidth(y)
    if width_x == 0.0 or width_y == 0.0:
        # a constant is independent of anything
        return 0.0, 1.0

    gram_x = _gaussian_gram(x, width_x)
    gram_y = _gaussian_gram(y, width_y)
    kc_lc = _double_center(gram_x) * _double_center(gram_y)
    stat = float(kc_lc.sum() / n)

    var = (kc_lc / 6.0) ** 2
    var = (var.sum() - np.trace(var)) / n / (n - 1)
    var = 72.0 * (n - 4) * (n - 5) / n / (n - 1) / (n - 2) / (n - 3) * var
    np.fill_diagonal(gram_x, 0.0)
    np.fill_diagonal(gram_y, 0.0)
    mu_x = gram_x.sum() / n / (n - 1)
    mu_y = gram_y.sum() / n / (n - 1)
    mean = (1.0 + mu_x * mu_y - mu_x - mu_y) / n
    if var <= 0.0 or mean <= 0.0:
        return stat, 1.0
    shape = mean ** 2 / var
    scale = var * n / mean
    return stat, float(gamma.sf(stat, shape, scale=scale))


def independence_test(x, y, method: IndependenceMethod = "hsic", n_permutations: int = 500,
                      seed: int = 0) -> Tuple[float, float]:
    """(statistic, p-value) for H0: x independent of y"""
    if method == "hsic":
        return hsic_test(x, y)
    if method == "dcor":
        return dcor_test(x, y, n_permutations, seed)
    raise ConfigError(f"Unknown independence test: {method}. Choose hsic or dcor")


def _is_zero(residual: np.ndarray, scale: float) -> bool:
    return bool(np.abs(residual).max() <= ZERO_RESIDUAL_RTOL * scale)


def classify_pair(a, b, alpha: float = 0.05, n_permutations: int = 500, seed: int = 0,
                  method: IndependenceMethod = "hsic") -> PairVerdict:
    """
    Decide the causal relation of a pair. Both tests share one seed, so swapping
    a and b swaps the verdict exactly.
    """
    a, b = _as_observations(a), _as_observations(b)
    _check_pair(a, b)
    k = fit_k(a, b)
    if abs(k) < K_EPS:
        raise DegenerateInputError(f"no linear relation between a and b (k={k:.3g})")
    k_rev = fit_k(b, a)
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    sigma_b = bc - k * ac
    sigma_a = ac - k_rev * bc

    scale = max(float(np.abs(ac).max()), float(np.abs(bc).max()), 1.0)
    zero_a, zero_b = _is_zero(sigma_a, scale), _is_zero(sigma_b, scale)
    # rounding noise left in an exact fit must not be tested
    stat_a, p_a = (0.0, 1.0) if zero_a else independence_test(sigma_a, b, method, n_permutations, seed)
    stat_b, p_b = (0.0, 1.0) if zero_b else independence_test(sigma_b, a, method, n_permutations, seed)
    indep_a = p_a > alpha
    indep_b = p_b > alpha
    if indep_b and not indep_a:
        case = PairCase.A_CAUSES_B
    elif indep_a and not indep_b:
        case = PairCase.B_CAUSES_A
    elif indep_a and indep_b:
        case = PairCase.COMMON_EFFECT
    else:
        case = PairCase.COMMON_CONFOUNDER

    degenerate = zero_a or zero_b
    if degenerate:
        logger.warning("⚠️  Exact linear relation, residual test is uninformative")
    return PairVerdict(case=case, k_fit=k, reverse_k=k_rev, p_values=(p_a, p_b),
                       statistics=(stat_a, stat_b), method=method, degenerate=degenerate)
