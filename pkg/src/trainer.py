"""
Adam training loop and IDTENSOR1 checkpoints for the causal-strength model.
"""
import copy
import hashlib
import json
import logging
import os
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from .errors import DataError, NumericalError, PreconditionError, TensorFormatError, TrainingError
from .model import IndefiniteCausalModel, loss_from_output
from .scm import Dataset
from .tensor_core import DEFAULT_RANK_TOL, as_tensor, load_tensor, save_tensor

logger = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(1e-5, ge=0.0)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(50, ge=0)
    hidden_dim: int = Field(768, ge=1)
    seed: int = Field(0, ge=0)
    rank_tol: float = Field(DEFAULT_RANK_TOL, gt=0.0)
    sigma_q_init: float = Field(1.0, gt=0.0)
    posterior_samples: int = Field(1, ge=0)
    kl_weight: float = Field(1.0, ge=0.0)
    gate_threshold: float = Field(0.5, ge=0.0, le=1.0)
    correlation_space: Literal["pairwise", "summed"] = "summed"
    # same-structure samples joined column-wise before training; needed when D = 1
    pool_size: int = Field(1, ge=1)
    evidence_gain: float = Field(0.0, ge=0.0)
    evidence_offset: float = Field(0.25, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    show_progress: bool = False


def build_model(cfg: TrainConfig, dim: int) -> IndefiniteCausalModel:
    return IndefiniteCausalModel(dim=dim, hidden_dim=cfg.hidden_dim, sigma_q_init=cfg.sigma_q_init,
                                 rank_tol=cfg.rank_tol, seed=cfg.seed,
                                 correlation_space=cfg.correlation_space, evidence_gain=cfg.evidence_gain,
                                 evidence_offset=cfg.evidence_offset)


def make_batches(dataset: Dataset, batch_size: int, rng: np.random.Generator) -> List[List[int]]:
    """Shuffled mini-batches; every batch holds samples of a single size N"""
    batches = []
    for _, indices in dataset.group_by_size().items():
        order = rng.permutation(indices)
        batches.extend(order[i:i + batch_size].tolist() for i in range(0, len(order), batch_size))
    return [batches[i] for i in rng.permutation(len(batches))]


def sample_loss(model: IndefiniteCausalModel, x: torch.Tensor, cfg: TrainConfig,
                generator: torch.Generator) -> torch.Tensor:
    """Loss averaged over posterior draws; zero draws uses the posterior mean"""
    draws = max(cfg.posterior_samples, 1)
    total = None
    for _ in range(draws):
        out = model(x, sample_posterior=cfg.posterior_samples > 0, generator=generator)
        parts = loss_from_output(out, x, model.log_sigma_q, cfg.correlation_space, cfg.kl_weight)
        total = parts.total if total is None else total + parts.total
    return total / draws


def batch_loss(model: IndefiniteCausalModel, batch: List[torch.Tensor], cfg: TrainConfig,
               generator: torch.Generator) -> torch.Tensor:
    """Mean loss over the samples of one mini-batch"""
    return sum(sample_loss(model, x, cfg, generator) for x in batch) / len(batch)


def prepare_dataset(dataset: Dataset, cfg: TrainConfig) -> Dataset:
    """The dataset the model sees: same-structure samples pooled by cfg.pool_size"""
    return dataset.pooled(cfg.pool_size)


def _params_finite(model: IndefiniteCausalModel) -> bool:
    return all(torch.isfinite(p).all() for p in model.parameters())


def train(dataset: Dataset, cfg: TrainConfig,
          model: Optional[IndefiniteCausalModel] = None) -> Tuple[IndefiniteCausalModel, List[float]]:
    """
    Train with Adam over size-homogeneous mini-batches.

    Returns the model and the per-epoch mean loss. A non-finite loss restores the
    parameters of the last completed epoch and raises TrainingError with them.
    """
    if len(dataset) == 0:
        raise PreconditionError("cannot train on an empty dataset")
    dims = {s.dim for s in dataset}
    if len(dims) != 1:
        raise DataError(f"all samples must share the embedding dim, got {sorted(dims)}")
    dim = dims.pop()
    if dim == 1:
        logger.warning("⚠️  D=1: row cosines are all +/-1 and the correlation-space loss has no gradient; "
                       "pool same-structure samples first (pool_size)")
    model = model or build_model(cfg, dim)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                                 eps=cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    generator = torch.Generator().manual_seed(cfg.seed)
    tensors = [as_tensor(s.x) for s in dataset]

    history: List[float] = []
    logger.info("🧠 Training on %d samples (D=%d, H=%d) for %d epochs", len(dataset), dim,
                cfg.hidden_dim, cfg.epochs)
    epochs = tqdm(range(cfg.epochs), desc="epochs", disable=not cfg.show_progress)
    for epoch in epochs:
        last_good = copy.deepcopy(model.state_dict())
        batch_losses = []
        for batch in make_batches(dataset, cfg.batch_size, rng):
            optimizer.zero_grad()
            try:
                loss_value = batch_loss(model, [tensors[i] for i in batch], cfg, generator)
            except NumericalError as e:
                model.load_state_dict(last_good)
                raise TrainingError(f"epoch {epoch}: {e}", last_good_state=last_good,
                                    diagnostics=getattr(e, "diagnostics", {}))
            loss_value.backward()
            optimizer.step()
            if not _params_finite(model):
                model.load_state_dict(last_good)
                raise TrainingError(f"epoch {epoch}: parameters became non-finite",
                                    last_good_state=last_good,
                                    diagnostics={"loss": float(loss_value.detach())})
            batch_losses.append(float(loss_value.detach()))
        history.append(float(np.mean(batch_losses)))
        logger.debug("epoch %d loss %.6f", epoch, history[-1])
    if history:
        logger.info("✅ Training done, final loss %.6f", history[-1])
    return model, history


@torch.no_grad()
def evaluate_loss(model: IndefiniteCausalModel, dataset: Dataset, kl_weight: float = 1.0) -> float:
    """Mean posterior-mean loss over a dataset"""
    values = []
    for sample in dataset:
        x = sample.tensor()
        values.append(float(loss_from_output(model(x), x, model.log_sigma_q,
                                             model.correlation_space, kl_weight).total))
    return float(np.mean(values)) if values else 0.0


def _sha256(path: str) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def save_checkpoint(directory: str, model: IndefiniteCausalModel, cfg: TrainConfig,
                    history: Optional[List[float]] = None):
    """One IDTENSOR1 file per parameter plus manifest.json"""
    os.makedirs(directory, exist_ok=True)
    params: Dict[str, Dict] = {}
    for name, value in model.state_dict().items():
        file_name = name.replace(".", "__") + ".idt"
        path = os.path.join(directory, file_name)
        save_tensor(path, value.reshape(-1) if value.dim() == 0 else value)
        params[name] = {"file": file_name, "shape": list(value.shape), "sha256": _sha256(path)}
    manifest = {
        "schema_version": CHECKPOINT_SCHEMA,
        "dim": model.dim,
        "train_config": cfg.model_dump(),
        "history": list(history or []),
        "params": params,
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.info("💾 Saved checkpoint with %d tensors to %s", len(params), directory)


def load_checkpoint(directory: str) -> Tuple[IndefiniteCausalModel, TrainConfig, List[float]]:
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise TensorFormatError(f"Checkpoint manifest not found: {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("schema_version") != CHECKPOINT_SCHEMA:
        raise TensorFormatError(f"Unsupported checkpoint schema: {manifest.get('schema_version')}")
    cfg = TrainConfig(**manifest["train_config"])
    model = build_model(cfg, manifest["dim"])
    state = {}
    for name, entry in manifest["params"].items():
        path = os.path.join(directory, entry["file"])
        array = load_tensor(path)
        if _sha256(path) != entry["sha256"]:
            raise TensorFormatError(f"{path}: checksum mismatch")
        state[name] = torch.from_numpy(array.reshape(entry["shape"]).copy())
    model.load_state_dict(state)
    logger.info("📂 Loaded checkpoint from %s", directory)
    return model, cfg, manifest.get("history", [])
