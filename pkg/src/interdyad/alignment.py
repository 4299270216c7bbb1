"""Temporal connector that maps per-frame context states to interaction latents.

Network: same-padded 1D conv -> tanh -> residual single-head self-attention
-> linear. Gradients are written out by hand and audited against central
finite differences (:func:`gradcheck`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .attention import softmax

log = logging.getLogger(__name__)

PARAM_NAMES = ("conv_w", "conv_b", "wq", "wk", "wv", "wo", "lin_w", "lin_b")


class TrainingError(RuntimeError):
    pass


@dataclass
class MetaQuerySequence:
    """Learnable query tokens, one per acoustic frame of a training crop."""

    queries: np.ndarray  # (N, D)

    @property
    def n(self) -> int:
        return self.queries.shape[0]

    def check_crop(self, acoustic_frames: int) -> None:
        if acoustic_frames != self.n:
            raise ValueError(f"{self.n} meta-queries for a crop of {acoustic_frames} acoustic frames")

    def slice_states(self, backbone_out: np.ndarray) -> np.ndarray:
        """Hidden states at the meta-query positions (the trailing N rows)."""
        if backbone_out.shape[0] < self.n:
            raise ValueError("backbone output shorter than the query sequence")
        return backbone_out[-self.n :]


def build_meta_queries(n: int, d: int, seed: int) -> MetaQuerySequence:
    if n < 1 or d < 1:
        raise ValueError("N and D must be >= 1")
    rng = np.random.default_rng(seed)
    return MetaQuerySequence(rng.normal(0.0, 0.02, size=(n, d)))


@dataclass
class ConnectorParams:
    conv_w: np.ndarray  # (K, D, D)
    conv_b: np.ndarray  # (D,)
    wq: np.ndarray  # (D, D)
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    lin_w: np.ndarray  # (D, D_m)
    lin_b: np.ndarray  # (D_m,)

    def __post_init__(self):
        k, d, d2 = self.conv_w.shape
        if k % 2 == 0 or d != d2:
            raise ValueError(f"conv kernel must be (odd K, D, D), got {self.conv_w.shape}")
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (d, d):
                raise ValueError(f"{name} must be ({d}, {d})")
        if self.conv_b.shape != (d,) or self.lin_w.shape[0] != d or self.lin_b.shape != self.lin_w.shape[1:]:
            raise ValueError("bias or linear shapes inconsistent with D")

    @property
    def width(self) -> int:
        return self.conv_w.shape[1]

    @property
    def out_dim(self) -> int:
        return self.lin_w.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def map(self, fn) -> "ConnectorParams":
        return ConnectorParams(**{k: fn(v) for k, v in self.arrays().items()})

    def combine(self, other: "ConnectorParams", fn) -> "ConnectorParams":
        b = other.arrays()
        return ConnectorParams(**{k: fn(v, b[k]) for k, v in self.arrays().items()})

    def copy(self) -> "ConnectorParams":
        return self.map(np.copy)


def init_params(d: int, d_m: int, kernel: int = 3, seed: int = 0, scale: float | None = None) -> ConnectorParams:
    rng = np.random.default_rng(seed)
    s = scale if scale is not None else 1.0 / np.sqrt(d)
    return ConnectorParams(
        conv_w=rng.normal(0, s / np.sqrt(kernel), (kernel, d, d)),
        conv_b=np.zeros(d),
        wq=rng.normal(0, s, (d, d)),
        wk=rng.normal(0, s, (d, d)),
        wv=rng.normal(0, s, (d, d)),
        wo=rng.normal(0, s, (d, d)),
        lin_w=rng.normal(0, s, (d, d_m)),
        lin_b=np.zeros(d_m),
    )


def zero_params(d: int, d_m: int, kernel: int = 3) -> ConnectorParams:
    return init_params(d, d_m, kernel).map(np.zeros_like)


def _shift_stack(x: np.ndarray, k: int) -> np.ndarray:
    """(K, N, D) stack of x shifted by offsets -K//2..K//2 with zero padding."""
    n = x.shape[0]
    p = k // 2
    padded = np.zeros((n + 2 * p, x.shape[1]))
    padded[p : p + n] = x
    return np.stack([padded[j : j + n] for j in range(k)])


@dataclass
class _Cache:
    shifted: np.ndarray
    h1: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    a: np.ndarray
    p: np.ndarray
    h2: np.ndarray
    out: np.ndarray = field(repr=False)


def _forward(params: ConnectorParams, hidden: np.ndarray) -> _Cache:
    x = np.asarray(hidden, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != params.width:
        raise ValueError(f"hidden must be (N>=1, {params.width}), got {x.shape}")
    kern = params.conv_w.shape[0]
    shifted = _shift_stack(x, kern)
    h1 = np.tanh(np.einsum("knd,kde->ne", shifted, params.conv_w) + params.conv_b)
    q, k, v = h1 @ params.wq, h1 @ params.wk, h1 @ params.wv
    a = softmax(q @ k.T / np.sqrt(params.width), axis=-1)
    p = a @ v
    h2 = h1 + p @ params.wo
    out = h2 @ params.lin_w + params.lin_b
    return _Cache(shifted, h1, q, k, v, a, p, h2, out)


def connector_forward(params: ConnectorParams, hidden: np.ndarray) -> np.ndarray:
    return _forward(params, hidden).out


def alignment_loss(m: np.ndarray, m_hat: np.ndarray, temporal_weight: float = 1.0) -> float:
    """Pointwise MSE plus MSE of forward first differences (0 when N == 1)."""
    m, m_hat = np.asarray(m, dtype=float), np.asarray(m_hat, dtype=float)
    if m.shape != m_hat.shape:
        raise ValueError(f"shape mismatch {m.shape} vs {m_hat.shape}")
    if m.ndim != 2 or m.shape[0] < 1:
        raise ValueError("expected (N>=1, D_m) arrays")
    r = m_hat - m
    loss = np.mean(r**2)
    if m.shape[0] > 1:
        loss += temporal_weight * np.mean(np.diff(r, axis=0) ** 2)
    return float(loss)


def alignment_loss_grad(m: np.ndarray, m_hat: np.ndarray, temporal_weight: float = 1.0) -> np.ndarray:
    """d loss / d m_hat."""
    r = np.asarray(m_hat, dtype=float) - np.asarray(m, dtype=float)
    n, dm = r.shape
    g = 2.0 * r / (n * dm)
    if n > 1:
        e = 2.0 * temporal_weight * np.diff(r, axis=0) / ((n - 1) * dm)
        g[1:] += e
        g[:-1] -= e
    return g


def _backward(params: ConnectorParams, cache: _Cache, g_out: np.ndarray) -> ConnectorParams:
    d = params.width
    lin_w = cache.h2.T @ g_out
    lin_b = g_out.sum(axis=0)
    g_h2 = g_out @ params.lin_w.T

    wo = cache.p.T @ g_h2
    g_p = g_h2 @ params.wo.T
    g_a = g_p @ cache.v.T
    g_v = cache.a.T @ g_p
    g_s = cache.a * (g_a - (g_a * cache.a).sum(axis=1, keepdims=True)) / np.sqrt(d)
    g_q = g_s @ cache.k
    g_k = g_s.T @ cache.q

    h1 = cache.h1
    g_h1 = g_h2 + g_q @ params.wq.T + g_k @ params.wk.T + g_v @ params.wv.T
    g_pre = g_h1 * (1.0 - h1**2)
    conv_w = np.einsum("knd,ne->kde", cache.shifted, g_pre)
    return ConnectorParams(
        conv_w=conv_w,
        conv_b=g_pre.sum(axis=0),
        wq=h1.T @ g_q,
        wk=h1.T @ g_k,
        wv=h1.T @ g_v,
        wo=wo,
        lin_w=lin_w,
        lin_b=lin_b,
    )


@dataclass
class AlignmentBatch:
    hidden: np.ndarray  # (N, D)
    target: np.ndarray  # (N, D_m)

    def __post_init__(self):
        self.hidden = np.asarray(self.hidden, dtype=float)
        self.target = np.asarray(self.target, dtype=float)
        if self.hidden.shape[0] != self.target.shape[0]:
            raise ValueError("hidden and target lengths differ")


def batch_loss(params: ConnectorParams, batch: AlignmentBatch, temporal_weight: float = 1.0) -> float:
    return alignment_loss(batch.target, connector_forward(params, batch.hidden), temporal_weight)


def alignment_grad(
    params: ConnectorParams, batch: AlignmentBatch, temporal_weight: float = 1.0
) -> ConnectorParams:
    """Gradient of the alignment loss w.r.t. every connector parameter."""
    cache = _forward(params, batch.hidden)
    if cache.out.shape != batch.target.shape:
        raise ValueError(f"target shape {batch.target.shape} != output shape {cache.out.shape}")
    g = alignment_loss_grad(batch.target, cache.out, temporal_weight)
    return _backward(params, cache, g)


def numeric_grad(params: ConnectorParams, batch: AlignmentBatch, eps: float = 1e-5) -> ConnectorParams:
    """Central finite differences of the batch loss, one coordinate at a time."""
    out = {}
    for name, arr in params.arrays().items():
        g = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            up = batch_loss(params, batch)
            arr[idx] = orig - eps
            down = batch_loss(params, batch)
            arr[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        out[name] = g
    return ConnectorParams(**out)


def relative_errors(a: ConnectorParams, b: ConnectorParams, floor: float = 1e-12) -> dict[str, float]:
    """Per-tensor ||a-b|| / max(||a||, ||b||, floor)."""
    bd = b.arrays()
    out = {}
    for name, x in a.arrays().items():
        y = bd[name]
        denom = max(np.linalg.norm(x), np.linalg.norm(y), floor)
        out[name] = float(np.linalg.norm(x - y) / denom)
    return out


def max_relative_error(a: ConnectorParams, b: ConnectorParams, floor: float = 1e-12) -> float:
    return max(relative_errors(a, b, floor).values())


def random_instance(rng: np.random.Generator, n: int, d: int, d_m: int, kernel: int = 3):
    params = init_params(d, d_m, kernel, seed=int(rng.integers(2**31)))
    params.conv_b = rng.normal(0, 0.1, d)
    params.lin_b = rng.normal(0, 0.1, d_m)
    batch = AlignmentBatch(rng.normal(0, 1, (n, d)), rng.normal(0, 1, (n, d_m)))
    return params, batch


def gradcheck(n_instances: int = 100, seed: int = 0, max_n: int = 8, max_d: int = 16) -> float:
    """Worst relative error between analytic and numeric gradients over random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(1, max_n + 1))
        d = int(rng.integers(1, max_d + 1))
        d_m = int(rng.integers(1, max_d + 1))
        kernel = int(rng.choice([1, 3, 5]))
        params, batch = random_instance(rng, n, d, d_m, kernel)
        err = max_relative_error(alignment_grad(params, batch), numeric_grad(params, batch))
        worst = max(worst, err)
    return worst


def _batch_key(b: AlignmentBatch) -> bytes:
    return b.hidden.tobytes() + b.target.tobytes()


@dataclass
class TrainResult:
    params: ConnectorParams
    losses: list[float]


def train_connector(
    dataset: Sequence[AlignmentBatch],
    steps: int,
    lr: float,
    seed: int = 0,
    params: ConnectorParams | None = None,
    kernel: int = 3,
    temporal_weight: float = 1.0,
) -> TrainResult:
    """Full-batch gradient descent on the mean alignment loss over ``dataset``.

    ``losses[i]`` is the loss before update ``i``; the final entry is the loss
    after the last update, so the trace has ``steps + 1`` values. Batches are
    reduced in a content-defined order so the trace does not depend on the
    order of ``dataset``.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    batches = sorted(dataset, key=_batch_key)
    d, d_m = batches[0].hidden.shape[1], batches[0].target.shape[1]
    params = params.copy() if params is not None else init_params(d, d_m, kernel, seed)
    losses: list[float] = []

    def mean_loss() -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            val = sum(batch_loss(params, b, temporal_weight) for b in batches) / len(batches)
        if not np.isfinite(val):
            raise TrainingError(f"non-finite loss {val} at step {len(losses)} (lr={lr})")
        return val

    for step in range(steps):
        losses.append(mean_loss())
        grad = None
        for b in batches:
            g = alignment_grad(params, b, temporal_weight)
            grad = g if grad is None else grad.combine(g, np.add)
        scale = lr / len(batches)
        params = params.combine(grad, lambda p, g: p - scale * g)
        if step % 500 == 0:
            log.debug("step %d loss %.6g", step, losses[-1])
    losses.append(mean_loss())
    return TrainResult(params, losses)


def linear_task(seed: int, n_batches: int = 4, n: int = 16, d: int = 16, d_m: int = 4) -> list[AlignmentBatch]:
    """Targets are a fixed linear map of the hidden states."""
    rng = np.random.default_rng(seed)
    w_star = rng.normal(0, 1.0 / np.sqrt(d), (d, d_m))
    out = []
    for _ in range(n_batches):
        h = rng.normal(0, 1.0, (n, d))
        out.append(AlignmentBatch(h, h @ w_star))
    return out


def stack_dataset(batches: Iterable[AlignmentBatch]) -> tuple[np.ndarray, np.ndarray]:
    bs = list(batches)
    return np.stack([b.hidden for b in bs]), np.stack([b.target for b in bs])
