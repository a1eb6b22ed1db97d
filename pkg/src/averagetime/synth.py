"""Seeded synthetic multivariate series for tests and demos."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import make_rng
from .data import SeriesMatrix

KINDS = ("sinusoids", "lagged-copies", "independent-noise")


@dataclass(frozen=True)
class SynthSpec:
    kind: str = "sinusoids"
    n_channels: int = 3
    length: int = 1000
    noise_std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}; expected one of {KINDS}")
        if self.n_channels < 1 or self.length < 2:
            raise ValueError("need at least one channel and two steps")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def generate(spec: SynthSpec) -> SeriesMatrix:
    """Build the series described by ``spec``; a pure function of the spec.

    * ``sinusoids``: channel ``i`` is ``sin(2 pi t / p_i)`` with distinct periods.
    * ``lagged-copies``: channel 0 is a standardized Gaussian random walk and
      channel ``i`` repeats it ``i`` steps later.
    * ``independent-noise``: i.i.d. standard normal per channel.

    Gaussian noise of std ``noise_std`` is added to the first two kinds.
    """
    rng = make_rng(spec.seed)
    c, n = spec.n_channels, spec.length
    t = np.arange(n)
    if spec.kind == "sinusoids":
        periods = 12.0 + 7.0 * np.arange(c)
        values = np.sin(2.0 * np.pi * t[None, :] / periods[:, None])
    elif spec.kind == "lagged-copies":
        walk = np.cumsum(rng.standard_normal(n + c))
        walk = (walk - walk.mean()) / walk.std()
        # channel i at time t reads the walk i steps behind channel 0
        values = np.stack([walk[c - i : c - i + n] for i in range(c)])
    else:
        return SeriesMatrix(rng.standard_normal((c, n)), _names(c), "synthetic")
    if spec.noise_std > 0:
        values = values + spec.noise_std * rng.standard_normal(values.shape)
    return SeriesMatrix(values, _names(c), "synthetic")


def _names(c: int) -> tuple[str, ...]:
    return tuple(f"ch{i}" for i in range(c))
