"""Reversible instance normalization over the lookback axis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import ShapeError, Tensor, divide, multiply

EPS = 1e-5


@dataclass
class RevinState:
    """Per-window statistics plus the (optional) learnable affine.

    ``mean`` and ``std`` have shape ``B x C x 1`` so they broadcast over time.
    Statistics are constants of the graph; only ``gain`` and ``bias`` learn.
    """

    mean: np.ndarray
    std: np.ndarray
    gain: Tensor | None = None
    bias: Tensor | None = None


def revin_normalize(x, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = EPS):
    """Return ``(gain * (x - mean) / std + bias, state)`` with per-window stats."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"revin: expected B x C x L input, got {x.shape}")
    c = x.shape[1]
    for name, p in (("gain", gain), ("bias", bias)):
        if p is not None and p.shape != (c,):
            raise ShapeError(f"revin: {name} has shape {p.shape}, expected ({c},)")
    mean = x.data.mean(axis=-1, keepdims=True)
    std = np.sqrt(x.data.var(axis=-1, keepdims=True) + eps)
    out = multiply(x - mean, 1.0 / std)
    if gain is not None:
        out = multiply(out, gain.reshape(c, 1))
    if bias is not None:
        out = out + bias.reshape(c, 1)
    return out, RevinState(mean, std, gain, bias)


def revin_denormalize(y, state: RevinState) -> Tensor:
    """Undo the affine, then restore the lookback std and mean."""
    y = y if isinstance(y, Tensor) else Tensor(y)
    if y.ndim != 3 or y.shape[:2] != state.mean.shape[:2]:
        raise ShapeError(f"revin: prediction {y.shape} does not match state {state.mean.shape[:2]}")
    c = y.shape[1]
    if state.bias is not None:
        y = y - state.bias.reshape(c, 1)
    if state.gain is not None:
        y = divide(y, state.gain.reshape(c, 1))
    return multiply(y, state.std) + state.mean
