"""
Float64 tensor primitives on top of torch autograd, plus the IDTENSOR1 file codec.

Every op here is differentiable; torch's autograd graph plays the role of the
gradient tape, so a tape and its tensors belong to one thread.
"""
import logging
import os
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DimensionError, NumericalError, PreconditionError, TensorFormatError

logger = logging.getLogger(__name__)

DTYPE = torch.float64
MAGIC = b"IDTENSOR1\n"
DEFAULT_RANK_TOL = 1e-6

ArrayLike = Union[np.ndarray, torch.Tensor, Sequence]


def as_tensor(data: ArrayLike, requires_grad: bool = False) -> torch.Tensor:
    """Convert to a float64 tensor (copies numpy input)"""
    if isinstance(data, torch.Tensor):
        t = data.to(DTYPE)
    else:
        t = torch.tensor(np.asarray(data, dtype=np.float64), dtype=DTYPE)
    if requires_grad and not t.requires_grad:
        t = t.detach().clone().requires_grad_(True)
    return t


def _check_2d(t: torch.Tensor, name: str):
    if t.dim() != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {tuple(t.shape)}")


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check_2d(a, "a")
    _check_2d(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {tuple(a.shape)} x {tuple(b.shape)}")
    return a @ b


def unit_lower_tri_inverse(a: torch.Tensor, atol: float = 1e-12) -> torch.Tensor:
    """
    Inverse of a unit lower-triangular matrix by forward substitution.

    Used for the mixing matrix W = (I - A)^-1; differentiable in the strictly
    lower entries.
    """
    _check_2d(a, "a")
    n, m = a.shape
    if n != m:
        raise DimensionError(f"expected a square matrix, got {tuple(a.shape)}")
    with torch.no_grad():
        diag = torch.diagonal(a)
        if not torch.allclose(diag, torch.ones_like(diag), rtol=0.0, atol=atol):
            raise PreconditionError("matrix is not unit lower-triangular: diagonal differs from 1")
        if n > 1 and torch.triu(a, diagonal=1).abs().max() > atol:
            raise PreconditionError("matrix is not unit lower-triangular: nonzero above diagonal")
    eye = torch.eye(n, dtype=a.dtype, device=a.device)
    return torch.linalg.solve_triangular(a, eye, upper=False, unitriangular=True)


# Elementwise suite

def _same_shape(a: torch.Tensor, b: torch.Tensor, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes differ {tuple(a.shape)} vs {tuple(b.shape)}")


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape(a, b, "add")
    return a + b


def sub(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape(a, b, "sub")
    return a - b


def mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape(a, b, "mul")
    return a * b


def scale(a: torch.Tensor, alpha: float) -> torch.Tensor:
    return a * alpha


def elu(a: torch.Tensor) -> torch.Tensor:
    return F.elu(a, alpha=1.0)


def sigmoid(a: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(a)


def softmax_rows(logits: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Row-wise softmax. With a boolean mask, each row normalizes over its allowed
    entries only; masked entries and rows with no allowed entry come out as 0.
    """
    _check_2d(logits, "logits")
    if mask is None:
        return torch.softmax(logits, dim=1)
    _same_shape(logits, mask, "softmax_rows")
    mask = mask.to(torch.bool)
    has_any = mask.any(dim=1, keepdim=True)
    filled = logits.masked_fill(~mask, float("-inf"))
    filled = torch.where(has_any, filled, torch.zeros_like(logits))
    probs = torch.softmax(filled, dim=1)
    return torch.where(mask, probs, torch.zeros_like(probs))


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_shape(a, b, "mse")
    return torch.mean((a - b) ** 2)


def _safe_norm(x: torch.Tensor, dim: int = -1) -> Tuple[torch.Tensor, torch.Tensor]:
    # sqrt of a masked square keeps the backward pass finite at zero vectors
    sq = (x * x).sum(dim=dim)
    nonzero = sq > 0
    return torch.sqrt(torch.where(nonzero, sq, torch.ones_like(sq))), nonzero


def cosine_similarity(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Cosine of two vectors; a zero-norm argument gives 0"""
    _same_shape(u, v, "cosine_similarity")
    nu, ok_u = _safe_norm(u)
    nv, ok_v = _safe_norm(v)
    ok = ok_u & ok_v
    cos = (u * v).sum(dim=-1) / (nu * nv)
    return torch.where(ok, cos, torch.zeros_like(cos))


def pairwise_cosine(x: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of every row pair i<j, in row-major pair order"""
    _check_2d(x, "x")
    norms, ok = _safe_norm(x, dim=1)
    unit = (x / norms.unsqueeze(1)) * ok.to(x.dtype).unsqueeze(1)
    gram = unit @ unit.T
    rows, cols = torch.triu_indices(x.shape[0], x.shape[0], offset=1)
    return gram[rows, cols]


def numerical_rank(a: ArrayLike, tol: float = DEFAULT_RANK_TOL) -> int:
    """Number of singular values above tol times the largest one"""
    if tol <= 0:
        raise PreconditionError(f"rank tolerance must be positive, got {tol}")
    t = as_tensor(a).detach()
    if t.numel() == 0:
        return 0
    if t.dim() == 1:
        t = t.unsqueeze(0)
    _check_2d(t, "a")
    if not torch.isfinite(t).all():
        raise NumericalError("rank of a matrix with non-finite entries")
    sv = torch.linalg.svdvals(t)
    top = sv.max()
    if not torch.isfinite(top) or top <= 0:
        return 0
    return int((sv > tol * top).sum().item())


# IDTENSOR1 codec

def save_tensor(path: Union[str, os.PathLike], data: ArrayLike):
    arr = data.detach().cpu().numpy() if isinstance(data, torch.Tensor) else np.asarray(data)
    arr = np.ascontiguousarray(arr, dtype="<f8")
    if not 1 <= arr.ndim <= 3:
        raise DimensionError(f"IDTENSOR1 stores 1-D to 3-D arrays, got {arr.ndim}-D")
    header = "dtype=f64 shape=" + ",".join(str(d) for d in arr.shape) + "\n"
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(header.encode("ascii"))
        f.write(arr.tobytes(order="C"))


def load_tensor(path: Union[str, os.PathLike]) -> np.ndarray:
    if not os.path.exists(path):
        raise TensorFormatError(f"Tensor file not found: {path}")
    with open(path, "rb") as f:
        magic = f.readline()
        if magic != MAGIC:
            raise TensorFormatError(f"{path}: bad magic {magic[:16]!r}")
        header = f.readline().decode("ascii", errors="replace").strip()
        payload = f.read()
    fields = dict(part.split("=", 1) for part in header.split() if "=" in part)
    if fields.get("dtype") != "f64" or "shape" not in fields:
        raise TensorFormatError(f"{path}: malformed header {header!r}")
    try:
        shape = tuple(int(d) for d in fields["shape"].split(","))
    except ValueError:
        raise TensorFormatError(f"{path}: malformed shape {fields['shape']!r}")
    expected = int(np.prod(shape)) * 8
    if len(payload) != expected:
        raise TensorFormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
