"""
Variational causal-strength model for indefinite data.

Encoder: masked graph attention over the N variable embeddings gives a strictly
lower-triangular strength matrix A_hat (the mean of q(A | X)).
Decoder: a GNN recovers the exogenous part BL+E, two MLP heads split it into the
noise E and the confounders L, and a second GNN mixes E through z^-1 = (I - A_hat)^-1
into the causal representation X_hat. A confounding head estimates C, and the
rank-based score omega gates which reconstruction branch dominates the loss.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Literal, Optional

import numpy as np
import torch
import torch.nn as nn

from .deconfound import apply_gate, confounding_from_weights
from .errors import PreconditionError, TrainingError
from .scm import Sample
from .tensor_core import (DEFAULT_RANK_TOL, DTYPE, as_tensor, elu, matmul, mse, numerical_rank,
                          pairwise_cosine, sigmoid, softmax_rows, unit_lower_tri_inverse)

logger = logging.getLogger(__name__)

CorrelationSpace = Literal["pairwise", "summed"]

# ridge of the ordered regression, relative to the number of columns
EVIDENCE_RIDGE = 1e-3


@dataclass
class ForwardOutput:
    z_logits: torch.Tensor
    a_hat: torch.Tensor
    e_hat: torch.Tensor
    l_hat: torch.Tensor
    c_hat: torch.Tensor
    x_hat: torch.Tensor
    omega: float


@dataclass
class LossParts:
    total: torch.Tensor
    reconstruction: torch.Tensor
    rc_confounded: torch.Tensor
    rc_plain: torch.Tensor
    kl: torch.Tensor
    omega: float

    def as_floats(self) -> Dict[str, float]:
        return {
            "total": float(self.total.detach()),
            "reconstruction": float(self.reconstruction.detach()),
            "rc_confounded": float(self.rc_confounded.detach()),
            "rc_plain": float(self.rc_plain.detach()),
            "kl": float(self.kl.detach()),
            "omega": self.omega,
        }


def strict_lower_mask(n: int) -> torch.Tensor:
    return torch.tril(torch.ones(n, n, dtype=torch.bool), diagonal=-1)


class IndefiniteCausalModel(nn.Module):
    """All trainable weights: attention, GNN encoder/decoder, E/L heads, confounding heads"""

    def __init__(self, dim: int, hidden_dim: int, sigma_q_init: float = 1.0,
                 rank_tol: float = DEFAULT_RANK_TOL, seed: int = 0,
                 correlation_space: CorrelationSpace = "summed", evidence_gain: float = 0.0,
                 evidence_offset: float = 0.25):
        super().__init__()
        if sigma_q_init <= 0:
            raise PreconditionError("sigma_q_init must be positive")
        if evidence_gain < 0:
            raise PreconditionError("evidence_gain must be non-negative")
        self.dim = dim
        self.hidden_dim = hidden_dim
        self.rank_tol = rank_tol
        self.correlation_space = correlation_space
        self.evidence_gain = evidence_gain
        self.evidence_offset = evidence_offset

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            # attention: query/key projections D -> H and an additive pairwise score map H -> 1
            self.att_query = nn.Linear(dim, hidden_dim, bias=False)
            self.att_key = nn.Linear(dim, hidden_dim, bias=False)
            self.att_score = nn.Linear(hidden_dim, 1)
            self.gnn_enc_in = nn.Linear(dim, hidden_dim, bias=False)
            self.gnn_enc_out = nn.Linear(hidden_dim, dim, bias=False)
            self.mlp_e = nn.Sequential(nn.Linear(dim, hidden_dim), nn.ELU(), nn.Linear(hidden_dim, dim))
            self.mlp_l = nn.Sequential(nn.Linear(dim, hidden_dim), nn.ELU(), nn.Linear(hidden_dim, dim))
            self.gnn_dec_in = nn.Linear(dim, hidden_dim, bias=False)
            self.gnn_dec_out = nn.Linear(hidden_dim, dim, bias=False)
            # sigmoid score heads for p(x_j) and p(L | x_j)
            self.score_x = nn.Linear(dim, 1)
            self.score_lx = nn.Linear(2 * dim, 1)
        self.log_sigma_q = nn.Parameter(torch.tensor(math.log(sigma_q_init)))
        self.to(DTYPE)

    def forward(self, x: torch.Tensor, sample_posterior: bool = False,
                generator: Optional[torch.Generator] = None) -> ForwardOutput:
        z_logits, a_hat = encode(self, x)
        a_used = a_hat
        if sample_posterior:
            eps = torch.randn(a_hat.shape, dtype=a_hat.dtype, generator=generator)
            mask = strict_lower_mask(a_hat.shape[0]).to(a_hat.dtype)
            a_used = a_hat + torch.exp(self.log_sigma_q) * eps * mask
        out = decode(self, a_used, x)
        out.z_logits = z_logits
        out.a_hat = a_hat
        return out


ModelParams = IndefiniteCausalModel


def _gnn(adj: torch.Tensor, x: torch.Tensor, w_in: nn.Linear, w_out: nn.Linear) -> torch.Tensor:
    # GNN(A, X) = eLU(A (X W_in)) W_out
    return w_out(elu(matmul(adj, w_in(x))))


def _check_input(model: IndefiniteCausalModel, x: torch.Tensor):
    if x.dim() != 2:
        raise PreconditionError(f"sample must be N x D, got shape {tuple(x.shape)}")
    if x.shape[0] < 2:
        raise PreconditionError(f"need at least 2 variables, got N={x.shape[0]}")
    if x.shape[1] != model.dim:
        raise PreconditionError(f"model expects D={model.dim}, sample has D={x.shape[1]}")


@torch.no_grad()
def ordered_regression(x: torch.Tensor, ridge: float = EVIDENCE_RIDGE) -> torch.Tensor:
    """
    Ridge coefficients of each row of x on the rows before it, with the D
    columns as observations. Strictly lower-triangular N x N; row 0 is zero.
    """
    x = as_tensor(x)
    n, d = x.shape
    coef = torch.zeros(n, n, dtype=x.dtype)
    for i in range(1, n):
        preds = x[:i]
        gram = preds @ preds.T + ridge * d * torch.eye(i, dtype=x.dtype)
        coef[i, :i] = torch.linalg.solve(gram, preds @ x[i])
    return coef


def encode(model: IndefiniteCausalModel, x: torch.Tensor):
    """
    Masked attention -> (z_logits, a_hat).

    Row i normalizes over its candidate causes j < i; the softmax weight is then
    scaled by sigmoid(logit) so a lone candidate is not forced to strength 1.
    With evidence_gain > 0 the sigmoid logit also gets
    evidence_gain * (|ordered regression coefficient| - evidence_offset), a
    constant of the input.
    """
    x = as_tensor(x)
    _check_input(model, x)
    n = x.shape[0]
    q = model.att_query(x)
    k = model.att_key(x)
    scores = model.att_score(torch.tanh(q.unsqueeze(1) + k.unsqueeze(0))).squeeze(-1)
    mask = strict_lower_mask(n)
    z_logits = scores.masked_fill(~mask, 0.0)
    gate_logits = scores
    if model.evidence_gain > 0:
        evidence = ordered_regression(x).abs() - model.evidence_offset
        gate_logits = scores + model.evidence_gain * evidence
    a_hat = torch.where(mask, softmax_rows(scores, mask) * sigmoid(gate_logits), torch.zeros_like(scores))
    return z_logits, a_hat


def estimate_confounding(model: IndefiniteCausalModel, x: torch.Tensor, l_hat: torch.Tensor) -> torch.Tensor:
    """c_j = w_j / sum_i w_i * x_j with w_j = sigmoid(s1(x_j)) * sigmoid(s2(x_j || mean L))"""
    pooled = l_hat.mean(dim=0, keepdim=True).expand(x.shape[0], -1)
    p_x = sigmoid(model.score_x(x)).squeeze(-1)
    p_l_given_x = sigmoid(model.score_lx(torch.cat([x, pooled], dim=1))).squeeze(-1)
    return confounding_from_weights(x, p_x * p_l_given_x, fallback_uniform=True)


def confounding_score(l_hat: torch.Tensor, n_vars: int, tol: float) -> float:
    """omega(L) = rank(L) / N, clamped to [0, 1]; constant for the backward pass"""
    return float(min(1.0, max(0.0, numerical_rank(l_hat.detach(), tol) / n_vars)))


def decode(model: IndefiniteCausalModel, a_hat: torch.Tensor, x: torch.Tensor) -> ForwardOutput:
    x = as_tensor(x)
    _check_input(model, x)
    n = x.shape[0]
    exogenous = _gnn(a_hat, x, model.gnn_enc_in, model.gnn_enc_out)   # BL + E
    e_hat = model.mlp_e(exogenous)
    l_hat = model.mlp_l(exogenous)
    z = torch.eye(n, dtype=x.dtype) - a_hat
    x_hat = _gnn(unit_lower_tri_inverse(z), e_hat, model.gnn_dec_in, model.gnn_dec_out)
    c_hat = estimate_confounding(model, x, l_hat)
    omega = confounding_score(l_hat, n, model.rank_tol)
    return ForwardOutput(z_logits=torch.zeros_like(a_hat), a_hat=a_hat, e_hat=e_hat, l_hat=l_hat,
                         c_hat=c_hat, x_hat=x_hat, omega=omega)


def correlation_summary(y: torch.Tensor, mode: CorrelationSpace = "summed") -> torch.Tensor:
    terms = pairwise_cosine(y)
    if mode == "summed":
        return terms.sum().reshape(1)
    return terms


def reconstruction_loss(x: torch.Tensor, y: torch.Tensor, mode: CorrelationSpace = "summed") -> torch.Tensor:
    """l_rc(X, Y) = MSE(cs(X), cs(Y)) in correlation space"""
    return mse(correlation_summary(x, mode), correlation_summary(y, mode))


def kl_to_standard_normal(mu: torch.Tensor, log_sigma: torch.Tensor) -> torch.Tensor:
    """Sum over entries of KL(N(mu, sigma^2) || N(0, 1))"""
    sigma_sq = torch.exp(2.0 * log_sigma)
    return 0.5 * torch.sum(mu ** 2 + sigma_sq - 1.0 - 2.0 * log_sigma)


def loss_from_output(out: ForwardOutput, x: torch.Tensor, log_sigma_q: torch.Tensor,
                     mode: CorrelationSpace = "summed", kl_weight: float = 1.0) -> LossParts:
    x = as_tensor(x)
    rc_confounded = reconstruction_loss(x, out.x_hat + out.c_hat, mode)
    rc_plain = reconstruction_loss(x, out.x_hat, mode)
    reconstruction = out.omega * rc_confounded + (1.0 - out.omega) * rc_plain
    free = out.a_hat[strict_lower_mask(out.a_hat.shape[0])]
    kl = kl_to_standard_normal(free, log_sigma_q)
    total = reconstruction + kl_weight * kl
    parts = LossParts(total=total, reconstruction=reconstruction, rc_confounded=rc_confounded,
                      rc_plain=rc_plain, kl=kl, omega=out.omega)
    if not torch.isfinite(total):
        raise TrainingError("non-finite loss", diagnostics=parts.as_floats())
    return parts


def loss(model: IndefiniteCausalModel, x, kl_weight: float = 1.0) -> LossParts:
    """Negative ELBO with the omega-gated correlation-space reconstruction"""
    x = as_tensor(x.x if isinstance(x, Sample) else x)
    out = model(x)
    return loss_from_output(out, x, model.log_sigma_q, model.correlation_space, kl_weight)


@torch.no_grad()
def predict_structure(model: IndefiniteCausalModel, sample: Sample) -> np.ndarray:
    _, a_hat = encode(model, sample.tensor())
    return a_hat.numpy()


@torch.no_grad()
def represent(model: IndefiniteCausalModel, sample: Sample, threshold: float = 0.5) -> np.ndarray:
    """Disentangled causal representation: X_hat* = X_hat + C_hat, minus C_hat when gated"""
    out = model(sample.tensor())
    result = apply_gate((out.x_hat + out.c_hat).numpy(), out.c_hat.numpy(), out.omega, threshold)
    return result.x_clean
