"""
Linear structural causal model with latent confounders: X = A X + B L + E.

A is strictly lower-triangular because variables arrive in their natural
(time) order, so every generated graph is a DAG without any acyclicity penalty.
"""
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional

import networkx as nx
import numpy as np
import torch

from .errors import ConfigError, DimensionError, PreconditionError, StructureError
from .tensor_core import as_tensor, unit_lower_tri_inverse

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CausalGraph:
    """Causal strengths A (A[i, j] != 0 iff j -> i) and binary adjacency labels"""
    strengths: np.ndarray
    adjacency: np.ndarray

    def __post_init__(self):
        self.validate()

    @property
    def n_vars(self) -> int:
        return self.strengths.shape[0]

    @classmethod
    def from_strengths(cls, strengths) -> "CausalGraph":
        a = np.asarray(strengths, dtype=np.float64)
        return cls(strengths=a, adjacency=(a != 0).astype(np.int8))

    @classmethod
    def from_adjacency(cls, adjacency) -> "CausalGraph":
        adj = np.asarray(adjacency, dtype=np.int8)
        return cls(strengths=adj.astype(np.float64), adjacency=adj)

    @classmethod
    def empty(cls, n_vars: int) -> "CausalGraph":
        return cls.from_strengths(np.zeros((n_vars, n_vars)))

    def validate(self):
        a, adj = self.strengths, self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise StructureError(f"strengths must be square, got shape {a.shape}")
        if adj.shape != a.shape:
            raise StructureError(f"adjacency shape {adj.shape} differs from strengths {a.shape}")
        if np.any(np.triu(a) != 0):
            raise StructureError("strengths must be strictly lower-triangular")
        if np.any(np.triu(adj) != 0):
            raise StructureError("adjacency must be strictly lower-triangular")
        if not np.all(np.isin(adj, (0, 1))):
            raise StructureError("adjacency labels must be binary")

    def parents(self, i: int) -> List[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(range(self.n_vars))
        for i, j in zip(*np.nonzero(self.adjacency)):
            g.add_edge(int(j), int(i), weight=float(self.strengths[i, j]))
        return g


@dataclass(frozen=True)
class ConfounderSpec:
    """Loadings B (N x K), optional fixed confounder values L (K x D), noise scale"""
    loadings: np.ndarray
    noise_sigma: float = 1.0
    confounders: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return self.loadings.shape[1]

    def check_against(self, graph: CausalGraph, dim: Optional[int] = None):
        if self.loadings.ndim != 2 or self.loadings.shape[0] != graph.n_vars:
            raise DimensionError(
                f"loadings shape {self.loadings.shape} does not match N={graph.n_vars}")
        if self.confounders is not None:
            if self.confounders.shape[0] != self.k:
                raise DimensionError(
                    f"confounders have {self.confounders.shape[0]} rows, expected K={self.k}")
            if dim is not None and self.confounders.shape[1] != dim:
                raise DimensionError(
                    f"confounders have D={self.confounders.shape[1]}, expected {dim}")
        if self.noise_sigma < 0:
            raise DimensionError("noise_sigma must be non-negative")


@dataclass
class Sample:
    """One observation X (N x D) with optional ground truth"""
    x: np.ndarray
    structure_id: int = -1
    ground_truth: Optional[CausalGraph] = None
    confounding: Optional[np.ndarray] = None   # C = B L, N x D
    confounders: Optional[np.ndarray] = None   # L, K x D
    noise: Optional[np.ndarray] = None         # E, N x D
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_vars(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def tensor(self) -> torch.Tensor:
        return as_tensor(self.x)


@dataclass
class Dataset:
    samples: List[Sample] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, idx: int) -> Sample:
        return self.samples[idx]

    def structure_ids(self) -> List[int]:
        return sorted({s.structure_id for s in self.samples})

    def group_by_structure(self) -> "OrderedDict[int, List[int]]":
        groups: "OrderedDict[int, List[int]]" = OrderedDict()
        for idx, s in enumerate(self.samples):
            groups.setdefault(s.structure_id, []).append(idx)
        return groups

    def group_by_size(self) -> "OrderedDict[int, List[int]]":
        groups: "OrderedDict[int, List[int]]" = OrderedDict()
        for idx, s in enumerate(self.samples):
            groups.setdefault(s.n_vars, []).append(idx)
        return groups

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset([self.samples[i] for i in indices], dict(self.metadata))

    def pooled(self, size: int) -> "Dataset":
        """
        Concatenate runs of `size` samples of one structure along the feature
        axis, so every variable carries size * D values. Leftover samples that do
        not fill a run are dropped.
        """
        if size < 1:
            raise PreconditionError(f"pool size must be >= 1, got {size}")
        if size == 1:
            return self
        pooled, dropped = [], 0
        for indices in self.group_by_structure().values():
            usable = len(indices) - len(indices) % size
            dropped += len(indices) - usable
            for start in range(0, usable, size):
                pooled.append(concat_samples([self.samples[i] for i in indices[start:start + size]]))
        if not pooled:
            raise PreconditionError(f"no structure has {size} samples to pool")
        if dropped:
            logger.warning("⚠️  Pooling by %d dropped %d leftover samples", size, dropped)
        return Dataset(pooled, dict(self.metadata, pool_size=size))


def concat_samples(samples: List[Sample]) -> Sample:
    """Join samples of one structure column-wise; ground-truth parts are joined alike"""
    first = samples[0]
    if any(s.structure_id != first.structure_id or s.n_vars != first.n_vars for s in samples):
        raise DimensionError("only samples of one structure with equal N can be pooled")

    def joined(name: str) -> Optional[np.ndarray]:
        parts = [getattr(s, name) for s in samples]
        return None if any(p is None for p in parts) else np.concatenate(parts, axis=1)

    return Sample(x=joined("x"), structure_id=first.structure_id, ground_truth=first.ground_truth,
                  confounding=joined("confounding"), confounders=joined("confounders"),
                  noise=joined("noise"),
                  meta={"k": first.meta.get("k", 0), "pooled_seeds": [s.meta.get("seed") for s in samples]})


def mixing_matrix(graph: CausalGraph) -> torch.Tensor:
    """W = (I - A)^-1"""
    a = as_tensor(graph.strengths)
    return unit_lower_tri_inverse(torch.eye(graph.n_vars, dtype=a.dtype) - a)


def forward_generate(graph: CausalGraph, conf: ConfounderSpec, seed: int,
                     dim: int = 1, noise_type: str = "gaussian",
                     structure_id: int = -1) -> Sample:
    """
    Draw one sample of X = (I - A)^-1 (B L + E).

    E ~ N(0, sigma^2) (or uniform with the same variance), L ~ N(0, 1) unless the
    ConfounderSpec fixes L. The stored confounding effect is C = B L, before mixing.
    """
    graph.validate()
    if conf.confounders is not None:
        dim = conf.confounders.shape[1]
    conf.check_against(graph, dim)
    rng = np.random.default_rng(seed)
    n, k = graph.n_vars, conf.k

    if conf.confounders is not None:
        l_values = np.array(conf.confounders, dtype=np.float64)
    else:
        l_values = rng.standard_normal((k, dim))

    if noise_type == "gaussian":
        noise = conf.noise_sigma * rng.standard_normal((n, dim))
    elif noise_type == "uniform":
        half_width = conf.noise_sigma * np.sqrt(3.0)
        noise = rng.uniform(-half_width, half_width, size=(n, dim))
    else:
        raise ConfigError(f"Unknown noise type: {noise_type}")

    c = conf.loadings @ l_values
    w = mixing_matrix(graph).numpy()
    x = w @ (c + noise)
    return Sample(x=x, structure_id=structure_id, ground_truth=graph,
                  confounding=c, confounders=l_values, noise=noise,
                  meta={"seed": int(seed), "noise_sigma": float(conf.noise_sigma), "k": k})


def check_round_trip(sample: Sample) -> float:
    """max |(I - A) X - (B L + E)| for a sample carrying its ground truth"""
    if sample.ground_truth is None or sample.noise is None or sample.confounding is None:
        raise DimensionError("round trip needs ground truth, confounding and noise")
    a = sample.ground_truth.strengths
    lhs = sample.x - a @ sample.x
    return float(np.max(np.abs(lhs - (sample.confounding + sample.noise))))
