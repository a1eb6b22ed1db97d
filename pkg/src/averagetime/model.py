"""AverageTime forecaster.

Two prediction paths share one RevIN-normalized input. The raw path maps each
channel's lookback straight to the horizon with its own linear head. The
embedded path first mixes channels: every channel's lookback is a token, the
tokens go through transformer encoder layers and token-wise MLP blocks, and
are projected back to lookback length before a second set of heads. The final
forecast is the mean of the two paths.

Heads are stored as ``G`` parameter sets, where ``G`` is the channel count,
the group count (LightAverageTime) or 1 (shared heads). A constant ``C x G``
one-hot assignment matrix routes each channel to its set.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_bytes
from .autograd import (
    Tensor,
    concat,
    dropout,
    gelu,
    layer_norm,
    make_rng,
    matmul,
    reshape,
    scale,
    slice_,
    softmax,
    transpose,
)
from .cluster import Grouping
from .revin import revin_denormalize, revin_normalize


@dataclass
class ModelConfig:
    n_channels: int
    lookback: int = 96
    horizon: int = 96
    n_transformer_layers: int = 0
    n_mlp_layers: int = 0
    d_model: int = 256
    n_heads: int = 8
    dropout: float = 0.0
    channel_independent: bool = True
    grouping: Grouping | None = None
    revin_affine: bool = True
    # False drops the embedded path entirely (ablation baseline)
    use_embedding_path: bool = True

    def __post_init__(self):
        for name in ("n_channels", "lookback", "horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_transformer_layers < 0 or self.n_mlp_layers < 0:
            raise ValueError("layer counts must be >= 0")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.grouping is not None and not isinstance(self.grouping, Grouping):
            self.grouping = Grouping.from_labels(self.grouping)
        if self.grouping is not None and self.grouping.n_channels != self.n_channels:
            raise ValueError(
                f"grouping covers {self.grouping.n_channels} channels, model has {self.n_channels}"
            )

    @property
    def has_embedding(self) -> bool:
        return self.n_transformer_layers > 0 or self.n_mlp_layers > 0

    @property
    def n_head_sets(self) -> int:
        if self.grouping is not None:
            return self.grouping.group_count
        return self.n_channels if self.channel_independent else 1

    def head_assignment(self) -> np.ndarray:
        """``C x G`` one-hot matrix sending each channel to its head set."""
        if self.grouping is not None:
            idx = self.grouping.group_index()
        elif self.channel_independent:
            idx = np.arange(self.n_channels)
        else:
            idx = np.zeros(self.n_channels, dtype=int)
        return np.eye(self.n_head_sets)[idx]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grouping"] = None if self.grouping is None else list(self.grouping.labels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        d = dict(d)
        if d.get("grouping") is not None:
            d["grouping"] = Grouping.from_labels(d["grouping"])
        return cls(**d)


@dataclass
class ModelParams:
    """Named learnable tensors of one model instance, in creation order."""

    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.tensors.items()}

    def copy(self) -> ModelParams:
        return ModelParams({k: Tensor(t.data.copy(), requires_grad=t.requires_grad) for k, t in self.items()})

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Linear layers use U(-1/sqrt(fan_in), 1/sqrt(fan_in)); norms start at identity."""
    rng = make_rng(seed)
    c, L, H, d = config.n_channels, config.lookback, config.horizon, config.d_model
    p: dict[str, Tensor] = {}

    def linear(name, n_in, n_out, bias=True):
        p[f"{name}.w"] = _uniform(rng, (n_in, n_out), n_in)
        if bias:
            p[f"{name}.b"] = _uniform(rng, (n_out,), n_in)

    def norm(name, width):
        p[f"{name}.g"] = Tensor(np.ones(width), requires_grad=True)
        p[f"{name}.b"] = Tensor(np.zeros(width), requires_grad=True)

    if config.revin_affine:
        norm("revin", c)
    if config.use_embedding_path and config.has_embedding:
        linear("embed.in_proj", L, d)
        for i in range(config.n_transformer_layers):
            pre = f"embed.encoder.{i}"
            norm(f"{pre}.ln1", d)
            linear(f"{pre}.attn.q", d, d)
            # a key bias shifts every logit of a row equally, so softmax ignores it
            linear(f"{pre}.attn.k", d, d, bias=False)
            linear(f"{pre}.attn.v", d, d)
            linear(f"{pre}.attn.o", d, d)
            norm(f"{pre}.ln2", d)
            linear(f"{pre}.ff1", d, 4 * d)
            linear(f"{pre}.ff2", 4 * d, d)
        for j in range(config.n_mlp_layers):
            linear(f"embed.mlp.{j}", d, d)
            norm(f"embed.mlp.{j}.ln", d)
        linear("embed.out_proj", d, L)
    g = config.n_head_sets
    paths = ("heads_raw", "heads_emb") if config.use_embedding_path else ("heads_raw",)
    for path in paths:
        p[f"{path}.w"] = _uniform(rng, (g, L, H), L)
        p[f"{path}.b"] = _uniform(rng, (g, H), L)
    return ModelParams(p)


def parameter_count(params: ModelParams) -> int:
    return int(sum(t.size for _, t in params.items()))


def _linear(x, params, name):
    y = matmul(x, params[f"{name}.w"])
    b = f"{name}.b"
    return y + params[b] if b in params else y


def _attention(h, params, pre, n_heads, rng, rate, training):
    b, c, d = h.shape
    dh = d // n_heads
    q = _linear(h, params, f"{pre}.q")
    k = _linear(h, params, f"{pre}.k")
    v = _linear(h, params, f"{pre}.v")
    outs = []
    for i in range(n_heads):
        cols = (Ellipsis, slice(i * dh, (i + 1) * dh))
        scores = scale(matmul(slice_(q, cols), transpose(slice_(k, cols))), 1.0 / math.sqrt(dh))
        attn = dropout(softmax(scores), rate, rng, training)
        outs.append(matmul(attn, slice_(v, cols)))
    merged = outs[0] if n_heads == 1 else concat(outs, axis=-1)
    return _linear(merged, params, f"{pre}.o")


def embed_channels(x, params: ModelParams, config: ModelConfig, rng=None, training: bool = False) -> Tensor:
    """Mix channel tokens; output has the input's ``B x C x L`` shape.

    With no encoder and no MLP layers this is the identity.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if not config.has_embedding:
        return x
    rate = config.dropout
    h = _linear(x, params, "embed.in_proj")
    for i in range(config.n_transformer_layers):
        pre = f"embed.encoder.{i}"
        a = layer_norm(h, params[f"{pre}.ln1.g"], params[f"{pre}.ln1.b"])
        a = _attention(a, params, f"{pre}.attn", config.n_heads, rng, rate, training)
        h = h + dropout(a, rate, rng, training)
        f = layer_norm(h, params[f"{pre}.ln2.g"], params[f"{pre}.ln2.b"])
        f = dropout(gelu(_linear(f, params, f"{pre}.ff1")), rate, rng, training)
        h = h + dropout(_linear(f, params, f"{pre}.ff2"), rate, rng, training)
    for j in range(config.n_mlp_layers):
        pre = f"embed.mlp.{j}"
        f = dropout(gelu(_linear(h, params, pre)), rate, rng, training)
        h = layer_norm(h + f, params[f"{pre}.ln.g"], params[f"{pre}.ln.b"])
    return _linear(h, params, "embed.out_proj")


def apply_heads(x: Tensor, w: Tensor, b: Tensor, assignment: np.ndarray) -> Tensor:
    """Per-channel linear maps ``L -> H``; ``w`` is ``G x L x H``, ``b`` is ``G x H``."""
    batch, c, L = x.shape
    g, _, H = w.shape
    if g == c and np.array_equal(assignment, np.eye(c)):
        wc, bc = w, b
    else:
        a = Tensor(assignment)
        wc = reshape(matmul(a, reshape(w, (g, L * H))), (c, L, H))
        bc = matmul(a, b)
    y = matmul(reshape(x, (batch, c, 1, L)), wc)
    return reshape(y, (batch, c, H)) + bc


def forward(batch, params: ModelParams, config: ModelConfig, rng=None, training: bool = False) -> Tensor:
    """Forecast ``B x C x H`` from a standardized ``B x C x L`` batch."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.ndim != 3 or x.shape[1:] != (config.n_channels, config.lookback):
        raise ValueError(
            f"batch shape {x.shape} does not match (B, {config.n_channels}, {config.lookback})"
        )
    gain = params["revin.g"] if config.revin_affine else None
    bias = params["revin.b"] if config.revin_affine else None
    xn, state = revin_normalize(x, gain, bias)
    assign = config.head_assignment()
    rate = config.dropout
    y = apply_heads(dropout(xn, rate, rng, training), params["heads_raw.w"], params["heads_raw.b"], assign)
    if config.use_embedding_path:
        emb = embed_channels(xn, params, config, rng, training)
        y_emb = apply_heads(dropout(emb, rate, rng, training), params["heads_emb.w"], params["heads_emb.b"], assign)
        y = scale(y + y_emb, 0.5)
    return revin_denormalize(y, state)


# ---------------------------------------------------------------- checkpoint

MAGIC = b"AVGTCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: ModelParams, config: ModelConfig) -> None:
    """Write magic, version, a JSON manifest and little-endian float64 payload.

    Layout: ``MAGIC | u32 version | u64 manifest length | manifest | payload``.
    """
    entries, chunks, offset = [], [], 0
    for name, t in params.items():
        raw = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    manifest = {
        "format": FORMAT_VERSION,
        "config": config.to_dict(),
        "arrays": entries,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    blob = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + payload
    atomic_write_bytes(path, blob)


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig]:
    blob = Path(path).read_bytes()
    hdr = len(MAGIC) + 12
    if len(blob) < hdr or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, mlen = struct.unpack("<IQ", blob[len(MAGIC) : hdr])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        manifest = json.loads(blob[hdr : hdr + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupted manifest ({exc})") from None
    payload = blob[hdr + mlen :]
    if len(payload) != manifest.get("payload_bytes") or hashlib.sha256(payload).hexdigest() != manifest.get("sha256"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    tensors = {}
    for e in manifest["arrays"]:
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(e["shape"])
        tensors[e["name"]] = Tensor(arr, requires_grad=True)
    try:
        config = ModelConfig.from_dict(manifest["config"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid config in manifest ({exc})") from None
    return ModelParams(tensors), config


def check_compatible(params: ModelParams, config: ModelConfig) -> None:
    """Raise CheckpointError unless ``params`` has exactly the shapes ``config`` builds."""
    expected = {k: t.shape for k, t in init_params(config).items()}
    got = {k: t.shape for k, t in params.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        wrong = sorted(k for k in set(expected) & set(got) if expected[k] != got[k])
        raise CheckpointError(
            f"checkpoint does not match config (missing {missing}, unexpected {extra}, shape mismatch {wrong})"
        )
