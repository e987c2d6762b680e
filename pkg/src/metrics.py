"""
Evaluation: structure scores (AUROC, MSE, Hamming distance), representation
probes (Cas / Cor) and out-of-distribution splits over held-out structures.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score
from sklearn.model_selection import KFold, train_test_split

from .errors import DimensionError, SplitError, UndefinedMetricError
from .scm import CausalGraph, Dataset, Sample

logger = logging.getLogger(__name__)

# Maps a sample to an N x N score matrix; only the strict lower triangle is read
StructurePredictor = Callable[[Sample], np.ndarray]


def lower_triangle(matrix) -> np.ndarray:
    """Entries (i, j) with j < i in row-major order"""
    m = np.asarray(matrix)
    rows, cols = np.tril_indices(m.shape[0], k=-1)
    return m[rows, cols]


def auroc(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise DimensionError(f"scores {scores.shape} and labels {labels.shape} differ")
    if np.unique(labels).size < 2:
        raise UndefinedMetricError("AUROC needs both positive and negative labels")
    return float(roc_auc_score(labels, scores))


def hamming(pred, true) -> int:
    """Differing strictly-lower entries of two binary adjacency matrices"""
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise DimensionError(f"shapes differ: {pred.shape} vs {true.shape}")
    return int(np.sum(lower_triangle(pred) != lower_triangle(true)))


@dataclass
class EvalReport:
    auroc: float = float("nan")
    auroc_ci: float = float("nan")
    mse: float = float("nan")
    mse_ci: float = float("nan")
    hd: float = float("nan")
    hd_ci: float = float("nan")
    cas_auroc: Optional[float] = None
    cas_mse: Optional[float] = None
    cor_auroc: Optional[float] = None
    cor_mse: Optional[float] = None
    n_samples: int = 0
    folds: int = 0
    extra: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {k: (None if isinstance(v, float) and np.isnan(v) else v)
                for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        rows = [
            ("AUROC", self.auroc, self.auroc_ci),
            ("MSE", self.mse, self.mse_ci),
            ("HD", self.hd, self.hd_ci),
        ]
        if self.cas_auroc is not None:
            rows.append(("Cas AUROC", self.cas_auroc, None))
            rows.append(("Cas MSE", self.cas_mse, None))
        if self.cor_auroc is not None:
            rows.append(("Cor AUROC", self.cor_auroc, None))
            rows.append(("Cor MSE", self.cor_mse, None))
        frame = pd.DataFrame(rows, columns=["metric", "value", "ci95"])
        return frame.to_string(index=False, float_format=lambda v: f"{v:.4f}", na_rep="-")


def confidence_halfwidth(values: Sequence[float]) -> float:
    """1.96 * sd / sqrt(k) over per-fold values, NaNs ignored"""
    vals = np.asarray([v for v in values if not np.isnan(v)], dtype=np.float64)
    if vals.size < 2:
        return 0.0 if vals.size == 1 else float("nan")
    return float(1.96 * vals.std(ddof=1) / np.sqrt(vals.size))


def structure_scores(dataset: Dataset, predictor: StructurePredictor) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Per-sample lower-triangle scores and labels"""
    scores, labels = [], []
    for idx, sample in enumerate(dataset):
        if sample.ground_truth is None:
            raise UndefinedMetricError(f"sample {idx} has no ground-truth structure")
        pred = np.asarray(predictor(sample), dtype=np.float64)
        if pred.shape != sample.ground_truth.adjacency.shape:
            raise DimensionError(f"prediction {pred.shape} does not match N={sample.n_vars}")
        scores.append(lower_triangle(pred))
        labels.append(lower_triangle(sample.ground_truth.adjacency))
    return scores, labels


def _fold_metrics(scores: List[np.ndarray], labels: List[np.ndarray]) -> Dict[str, float]:
    flat_s = np.concatenate(scores)
    flat_l = np.concatenate(labels)
    try:
        fold_auroc = auroc(flat_s, flat_l)
    except UndefinedMetricError:
        fold_auroc = float("nan")
    fold_mse = float(np.mean((flat_s - flat_l) ** 2))
    fold_hd = float(np.mean([np.sum((s >= 0.5).astype(int) != l) for s, l in zip(scores, labels)]))
    return {"auroc": fold_auroc, "mse": fold_mse, "hd": fold_hd}


def summarize_folds(per_fold: List[Dict[str, float]], n_samples: int) -> EvalReport:
    def column(key):
        return [f[key] for f in per_fold]

    def mean(values):
        vals = [v for v in values if not np.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    report = EvalReport(
        auroc=mean(column("auroc")), auroc_ci=confidence_halfwidth(column("auroc")),
        mse=mean(column("mse")), mse_ci=confidence_halfwidth(column("mse")),
        hd=mean(column("hd")), hd_ci=confidence_halfwidth(column("hd")),
        n_samples=n_samples, folds=len(per_fold),
    )
    if np.isnan(report.auroc):
        logger.warning("⚠️  AUROC undefined on every fold (single-class labels)")
    return report


def evaluate_structures(dataset: Dataset, predictor: StructurePredictor, folds: int = 10,
                        seed: int = 0) -> EvalReport:
    """Structure metrics over k folds, mean and 95% interval across folds"""
    if len(dataset) == 0:
        raise UndefinedMetricError("cannot evaluate an empty dataset")
    scores, labels = structure_scores(dataset, predictor)
    k = min(folds, len(dataset))
    if k < 2:
        return summarize_folds([_fold_metrics(scores, labels)], len(dataset))
    splitter = KFold(n_splits=k, shuffle=True, random_state=seed)
    per_fold = []
    for _, test_idx in splitter.split(np.arange(len(dataset))):
        per_fold.append(_fold_metrics([scores[i] for i in test_idx], [labels[i] for i in test_idx]))
    return summarize_folds(per_fold, len(dataset))


# Representation probes

def _pair_features(representations: Sequence[np.ndarray], pair_labels: Sequence[np.ndarray]):
    feats, labels = [], []
    for rep, lab in zip(representations, pair_labels):
        rep = np.asarray(rep, dtype=np.float64)
        lab = np.asarray(lab)
        if lab.shape != (rep.shape[0], rep.shape[0]):
            raise DimensionError(f"labels {lab.shape} do not match N={rep.shape[0]}")
        rows, cols = np.tril_indices(rep.shape[0], k=-1)
        feats.append(np.concatenate([rep[rows], rep[cols]], axis=1))
        labels.append(lab[rows, cols])
    return np.concatenate(feats), np.concatenate(labels).astype(int)


def cas_eval(representations: Sequence[np.ndarray], pair_labels: Sequence[np.ndarray],
             split: Optional[Tuple[Sequence[int], Sequence[int]]] = None, test_size: float = 0.2,
             max_iter: int = 200, seed: int = 0,
             audit: Optional[Callable[[np.ndarray, np.ndarray], None]] = None) -> Tuple[float, float]:
    """
    Causal-relation probe: logistic regression on x_i || x_j for every pair j < i
    predicts whether j -> i. Returns (AUROC, MSE) on the held-out pairs.
    """
    features, labels = _pair_features(representations, pair_labels)
    if np.unique(labels).size < 2:
        raise UndefinedMetricError("pair labels contain a single class")
    all_idx = np.arange(labels.size)
    if split is None:
        counts = np.bincount(labels)
        stratify = labels if counts.min() >= 2 else None
        train_idx, test_idx = train_test_split(all_idx, test_size=test_size, random_state=seed,
                                               stratify=stratify)
    else:
        train_idx, test_idx = np.asarray(split[0]), np.asarray(split[1])
        if np.intersect1d(train_idx, test_idx).size:
            raise SplitError("train and test pairs overlap")
    if audit is not None:
        audit(train_idx, test_idx)
    if np.unique(labels[train_idx]).size < 2:
        raise SplitError("training pairs contain a single class")
    probe = LogisticRegression(max_iter=max_iter, random_state=seed)
    probe.fit(features[train_idx], labels[train_idx])
    proba = probe.predict_proba(features[test_idx])[:, 1]
    return auroc(proba, labels[test_idx]), float(np.mean((proba - labels[test_idx]) ** 2))


def correlation_labels(graph: CausalGraph) -> np.ndarray:
    """Symmetric labels: 1 where two variables are adjacent in the moral graph"""
    moral = nx.moral_graph(graph.to_networkx())
    return nx.to_numpy_array(moral, nodelist=range(graph.n_vars), dtype=int, weight=None)


def cor_eval(representations: Sequence[np.ndarray], labels: Sequence[np.ndarray]) -> Tuple[float, float]:
    """Correlation probe: cosine of each pair i < j scored against symmetric labels"""
    scores, truth = [], []
    for rep, lab in zip(representations, labels):
        rep = np.asarray(rep, dtype=np.float64)
        lab = np.asarray(lab)
        if lab.shape != (rep.shape[0], rep.shape[0]):
            raise DimensionError(f"labels {lab.shape} do not match N={rep.shape[0]}")
        norms = np.linalg.norm(rep, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        unit = rep / safe[:, None] * (norms > 0)[:, None]
        rows, cols = np.triu_indices(rep.shape[0], k=1)
        scores.append(np.sum(unit[rows] * unit[cols], axis=1))
        truth.append(lab[rows, cols])
    scores = np.concatenate(scores)
    truth = np.concatenate(truth).astype(int)
    return auroc(scores, truth), float(np.mean((np.clip(scores, 0.0, 1.0) - truth) ** 2))


# Out-of-distribution splits

@dataclass
class FoldAssignment:
    fold: int
    held_out: List[int]
    train: List[int]
    valid: List[int]
    test: List[int]


def audit_split(assignment: FoldAssignment, dataset: Dataset):
    """Raise if any held-out structure leaks into train or valid"""
    held = set(assignment.held_out)
    train_valid = set(assignment.train) | set(assignment.valid)
    if train_valid & set(assignment.test):
        raise SplitError(f"fold {assignment.fold}: samples shared between train/valid and test")
    leaked = sorted({dataset[i].structure_id for i in train_valid} & held)
    if leaked:
        raise SplitError(f"fold {assignment.fold}: held-out structures {leaked} leak into training")


def ood_split(dataset: Dataset, folds: int = 10, held_out_per_fold: int = 2,
              held_out_structures: Optional[Sequence[int]] = None, valid_fraction: float = 0.1,
              seed: int = 0, exclude: Sequence[int] = (-1,)) -> List[FoldAssignment]:
    """
    Each fold holds out `held_out_per_fold` whole structures for testing and splits
    the remaining samples into train and valid. Excluded ids are left out entirely.
    """
    structures = [s for s in dataset.structure_ids() if s not in set(exclude)]
    if len(structures) < held_out_per_fold + 1:
        raise SplitError(f"need at least {held_out_per_fold + 1} structures, got {len(structures)}")
    candidates = structures if held_out_structures is None else \
        [s for s in structures if s in set(held_out_structures)]
    if len(candidates) < held_out_per_fold:
        raise SplitError(f"only {len(candidates)} candidate structures to hold out")
    rng = np.random.default_rng(seed)
    by_structure = dataset.group_by_structure()
    assignments = []
    for fold in range(folds):
        held = sorted(int(s) for s in rng.choice(candidates, size=held_out_per_fold, replace=False))
        test = [i for s in held for i in by_structure[s]]
        rest = [i for s in structures if s not in held for i in by_structure[s]]
        rest = [int(i) for i in rng.permutation(rest)]
        n_valid = int(round(valid_fraction * len(rest)))
        assignment = FoldAssignment(fold=fold, held_out=held, train=sorted(rest[n_valid:]),
                                    valid=sorted(rest[:n_valid]), test=sorted(test))
        audit_split(assignment, dataset)
        assignments.append(assignment)
    return assignments
