"""Flow matching on (C, T, H, W) latents: straight-path interpolation, loss,
Euler integration from noise (t=0) to data (t=1), and chunked long-form
sampling with hard-copied context frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping

import numpy as np

from .scene import ConfigError

VelocityFn = Callable[[np.ndarray, float, Any], np.ndarray]


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 16
    chunk_frames: int = 81
    context_frames: int = 9

    def __post_init__(self):
        if self.steps < 1 or self.chunk_frames < 1 or self.context_frames < 1:
            raise ConfigError("sampler sizes must be positive")
        if self.context_frames >= self.chunk_frames:
            raise ConfigError("context_frames must be smaller than chunk_frames")

    @property
    def stride(self) -> int:
        return self.chunk_frames - self.context_frames


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"latent shapes differ: {np.shape(a)} vs {np.shape(b)}")


def interpolate_latent(z0: np.ndarray, z1: np.ndarray, t: float) -> np.ndarray:
    _check_pair(z0, z1)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return t * np.asarray(z0) + (1.0 - t) * np.asarray(z1)


def flow_matching_loss(v_pred: np.ndarray, z0: np.ndarray, z1: np.ndarray) -> float:
    _check_pair(z0, z1)
    _check_pair(v_pred, z0)
    diff = np.asarray(v_pred) - (np.asarray(z0) - np.asarray(z1))
    return float(np.mean(diff**2))


def euler_sample(velocity_fn: VelocityFn, z1: np.ndarray, steps: int, c: Any = None) -> np.ndarray:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    z = np.array(z1, dtype=float)
    dt = 1.0 / steps
    for i in range(steps):
        v = velocity_fn(z, i * dt, c)
        if np.shape(v) != z.shape:
            raise ValueError(f"velocity shape {np.shape(v)} != latent shape {z.shape}")
        z = z + dt * v
    return z


def chunk_starts(total_frames: int, cfg: SamplerConfig) -> list[int]:
    """Start frame of each chunk; the last chunk may run past ``total_frames``."""
    if total_frames < cfg.chunk_frames:
        raise ValueError(f"total_frames {total_frames} < chunk_frames {cfg.chunk_frames}")
    starts = [0]
    while starts[-1] + cfg.chunk_frames < total_frames:
        starts.append(starts[-1] + cfg.stride)
    return starts


def multi_clip_generate(
    velocity_fn: VelocityFn,
    total_frames: int,
    cfg: SamplerConfig,
    anchors: Mapping[str, Any],
    noise: np.ndarray,
    return_chunks: bool = False,
):
    """Sample ``total_frames`` latent frames chunk by chunk.

    ``noise`` is (C, T_noise, H, W) with T_noise covering every chunk window
    (see :func:`chunk_starts`). ``anchors`` must hold ``reference`` (the global
    identity anchor, passed through untouched) and ``motion`` (a mapping of
    person id to per-frame motion latents). Chunks after the first have their
    leading ``context_frames`` pinned to the previous chunk's trailing frames
    at every integration step.

    The velocity function receives a condition dict with ``reference``,
    ``motion`` (sliced to the chunk window), ``window`` (start, stop),
    ``noise`` (the chunk's starting noise) and ``chunk`` (index).

    With ``return_chunks`` the per-chunk latents are returned alongside the
    stitched sequence.
    """
    if anchors is None or "reference" not in anchors or "motion" not in anchors:
        raise ValueError("anchors need both 'reference' and 'motion'")
    starts = chunk_starts(total_frames, cfg)
    padded = starts[-1] + cfg.chunk_frames
    noise = np.asarray(noise, dtype=float)
    if noise.ndim != 4 or noise.shape[1] < padded:
        raise ValueError(f"noise must be (C, >= {padded}, H, W), got {noise.shape}")
    motion = {k: np.asarray(v) for k, v in anchors["motion"].items()}
    for k, v in motion.items():
        if len(v) < total_frames:
            raise ValueError(f"motion latents for person {k} cover {len(v)} < {total_frames} frames")

    out = np.zeros(noise.shape[:1] + (padded,) + noise.shape[2:])
    ctx = cfg.context_frames
    dt = 1.0 / cfg.steps
    chunks = []
    for idx, start in enumerate(starts):
        stop = start + cfg.chunk_frames
        z1 = noise[:, start:stop]
        c = {
            "reference": anchors["reference"],
            "motion": {k: _window(v, start, stop) for k, v in motion.items()},
            "window": (start, stop),
            "noise": z1,
            "chunk": idx,
        }
        if idx == 0:
            chunk = euler_sample(velocity_fn, z1, cfg.steps, c)
        else:
            context = out[:, start : start + ctx].copy()
            z = z1.copy()
            z[:, :ctx] = context
            for i in range(cfg.steps):
                v = velocity_fn(z, i * dt, c)
                if np.shape(v) != z.shape:
                    raise ValueError(f"velocity shape {np.shape(v)} != latent shape {z.shape}")
                z = z + dt * v
                z[:, :ctx] = context
            chunk = z
        out[:, start:stop] = chunk
        chunks.append(chunk)
    if return_chunks:
        return out[:, :total_frames], chunks
    return out[:, :total_frames]


def _window(arr: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Slice frames [start, stop), repeating the last frame past the end."""
    idx = np.minimum(np.arange(start, stop), len(arr) - 1)
    return arr[idx]


def oracle_velocity(z0: np.ndarray) -> VelocityFn:
    """Constant straight-path field toward ``z0`` for the window in ``c``."""

    def fn(z, t, c):
        if isinstance(c, Mapping) and "window" in c:
            a, b = c["window"]
            target = _window_latent(z0, a, b)
            return target - c["noise"]
        raise ValueError("oracle field needs a condition dict with 'window' and 'noise'")

    return fn


def _window_latent(z0: np.ndarray, start: int, stop: int) -> np.ndarray:
    idx = np.minimum(np.arange(start, stop), z0.shape[1] - 1)
    return z0[:, idx]
