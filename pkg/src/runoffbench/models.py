"""LSTM, vanilla Transformer encoder and recurrence-free (causal) Transformer.

All three map a standardized input window ``[batch, seq_len, input_dim]`` to
standardized discharge.  The LSTM and the causal Transformer emit one value
per position (``[batch, seq_len, 1]``); the vanilla Transformer reads only the
last position (``[batch, 1]``).

Weights live in an ordered ``dict[str, Tensor]``; :func:`parameter_layout`
is the single source of names, shapes and init ranges.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ParameterError, ShapeError
from .tensor import RngStream, Tensor

VARIANTS = ("lstm", "transformer_vanilla", "transformer_modified")
CAUSAL_MASK_VALUE = -1e9
FORGET_BIAS_INIT = 1.0


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    input_dim: int
    hidden_dim: int = 64
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 128
    dropout_rate: float = 0.1
    seq_len: int = 365

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("input_dim", "hidden_dim", "d_model", "n_heads", "n_layers", "d_ff", "seq_len"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ParameterError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.variant != "lstm":
            if self.d_model % self.n_heads:
                raise ParameterError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
            if self.variant == "transformer_vanilla" and self.d_model % 2:
                raise ParameterError("sinusoidal positional encoding needs an even d_model")

    @property
    def is_transformer(self) -> bool:
        return self.variant != "lstm"

    @property
    def per_step_output(self) -> bool:
        return self.variant != "transformer_vanilla"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


@dataclass
class DropoutState:
    """Dropout configuration for one forward pass; inactive unless ``training``."""

    rate: float = 0.0
    rng: RngStream | None = None
    training: bool = False

    def __call__(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.rate, self.rng, self.training)


EVAL = DropoutState()


# ---------------------------------------------------------------------------
# parameters


def parameter_layout(spec: ModelSpec) -> list[tuple[str, tuple[int, ...], str, int]]:
    """Ordered ``(name, shape, init, fan_in)``; init is ``uniform``, ``ones``, ``zeros`` or ``forget``."""
    layout = []
    if spec.variant == "lstm":
        n_in, h = spec.input_dim, spec.hidden_dim
        for gate in "ifgo":
            layout.append((f"lstm.W_{gate}", (n_in, h), "uniform", n_in))
        for gate in "ifgo":
            layout.append((f"lstm.U_{gate}", (h, h), "uniform", h))
        for gate in "ifgo":
            layout.append((f"lstm.b_{gate}", (h,), "forget" if gate == "f" else "uniform", h))
        layout.append(("head.W", (h, 1), "uniform", h))
        layout.append(("head.b", (1,), "uniform", h))
        return layout

    d, ff = spec.d_model, spec.d_ff
    layout.append(("embed.W", (spec.input_dim, d), "uniform", spec.input_dim))
    layout.append(("embed.b", (d,), "uniform", spec.input_dim))
    for i in range(spec.n_layers):
        p = f"layers.{i}"
        layout += [
            (f"{p}.ln1.gain", (d,), "ones", d),
            (f"{p}.ln1.bias", (d,), "zeros", d),
        ]
        for proj in "qkvo":
            layout.append((f"{p}.attn.W{proj}", (d, d), "uniform", d))
            # a key bias only shifts each query's logits uniformly, which
            # softmax cancels: it would be a parameter with zero gradient
            if proj != "k":
                layout.append((f"{p}.attn.b{proj}", (d,), "uniform", d))
        layout += [
            (f"{p}.ln2.gain", (d,), "ones", d),
            (f"{p}.ln2.bias", (d,), "zeros", d),
            (f"{p}.ffn.W1", (d, ff), "uniform", d),
            (f"{p}.ffn.b1", (ff,), "uniform", d),
            (f"{p}.ffn.W2", (ff, d), "uniform", ff),
            (f"{p}.ffn.b2", (d,), "uniform", ff),
        ]
    layout += [
        ("final_ln.gain", (d,), "ones", d),
        ("final_ln.bias", (d,), "zeros", d),
        ("head.W", (d, 1), "uniform", d),
        ("head.b", (1,), "uniform", d),
    ]
    return layout


def init_weights(spec: ModelSpec, rng: RngStream) -> dict[str, Tensor]:
    weights = {}
    for name, shape, init, fan_in in parameter_layout(spec):
        if init == "uniform":
            bound = 1.0 / math.sqrt(fan_in)
            data = rng.uniform(-bound, bound, shape)
        elif init == "ones":
            data = np.ones(shape)
        elif init == "forget":
            data = np.full(shape, FORGET_BIAS_INIT)
        else:
            data = np.zeros(shape)
        weights[name] = Tensor(data, requires_grad=True)
    return weights


def param_count(spec: ModelSpec) -> int:
    """Closed-form number of trainable scalars."""
    if spec.variant == "lstm":
        n, h = spec.input_dim, spec.hidden_dim
        return 4 * (n * h + h * h + h) + h + 1
    d, ff = spec.d_model, spec.d_ff
    per_layer = 4 * d * d + 3 * d + 4 * d + (d * ff + ff) + (ff * d + d)
    return spec.input_dim * d + d + spec.n_layers * per_layer + 2 * d + d + 1


# ---------------------------------------------------------------------------
# LSTM


def _lstm_fused(weights):
    # gate order i, f, o, g so the three sigmoid gates are one contiguous block
    W = T.concat([weights[f"lstm.W_{g}"] for g in "ifog"], axis=1)
    U = T.concat([weights[f"lstm.U_{g}"] for g in "ifog"], axis=1)
    b = T.concat([weights[f"lstm.b_{g}"] for g in "ifog"], axis=0)
    return W, U, b


def _lstm_step(z_x: Tensor, h_prev: Tensor, c_prev: Tensor, U: Tensor, hidden: int):
    z = z_x + h_prev @ U
    sig = T.sigmoid(z[:, : 3 * hidden])
    i = sig[:, :hidden]
    f = sig[:, hidden: 2 * hidden]
    o = sig[:, 2 * hidden:]
    g = T.tanh(z[:, 3 * hidden:])
    c = f * c_prev + i * g
    h = o * T.tanh(c)
    return h, c


def lstm_cell(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, weights: dict[str, Tensor]):
    """One LSTM step on ``x_t [batch, input_dim]``; returns ``(h_t, c_t)``."""
    hidden = weights["lstm.U_i"].shape[0]
    n_in = weights["lstm.W_i"].shape[0]
    if x_t.ndim != 2 or x_t.shape[1] != n_in:
        raise ShapeError(f"x_t must be [batch, {n_in}], got {list(x_t.shape)}")
    for name, t in (("h_prev", h_prev), ("c_prev", c_prev)):
        if t.shape != (x_t.shape[0], hidden):
            raise ShapeError(f"{name} must be [{x_t.shape[0]}, {hidden}], got {list(t.shape)}")
    W, U, b = _lstm_fused(weights)
    return _lstm_step(x_t @ W + b, h_prev, c_prev, U, hidden)


def lstm_forward(x: Tensor, weights: dict[str, Tensor], dropout: DropoutState = EVAL) -> Tensor:
    """Unroll from zero state over the window; per-step linear head → ``[B, T, 1]``."""
    _check_input(x, weights["lstm.W_i"].shape[0])
    batch, steps, _ = x.shape
    hidden = weights["lstm.U_i"].shape[0]
    W, U, b = _lstm_fused(weights)
    h = Tensor._wrap(np.zeros((batch, hidden)))
    c = Tensor._wrap(np.zeros((batch, hidden)))
    hs = []
    for t in range(steps):
        h, c = _lstm_step(x[:, t, :] @ W + b, h, c, U, hidden)
        hs.append(h)
    states = dropout(T.stack(hs, axis=1))
    return states @ weights["head.W"] + weights["head.b"]


# ---------------------------------------------------------------------------
# Transformer


@lru_cache(maxsize=32)
def _pe_table(seq_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.empty((seq_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    pe.setflags(write=False)
    return pe


def sinusoidal_pe(seq_len: int, d_model: int) -> Tensor:
    if seq_len < 1:
        raise ParameterError("seq_len must be >= 1")
    if d_model < 2 or d_model % 2:
        raise ParameterError(f"sinusoidal encoding needs an even d_model, got {d_model}")
    return Tensor._wrap(_pe_table(seq_len, d_model))


@lru_cache(maxsize=32)
def _causal_bias(steps: int) -> np.ndarray:
    bias = np.triu(np.full((steps, steps), CAUSAL_MASK_VALUE), k=1)
    bias.setflags(write=False)
    return bias


def multi_head_attention(x: Tensor, weights: dict[str, Tensor], prefix: str, n_heads: int,
                         mask: str = "none", dropout: DropoutState = EVAL,
                         return_weights: bool = False):
    """Scaled dot-product self-attention with ``n_heads`` heads.

    ``prefix`` selects the ``{prefix}.W{q,k,v,o}`` / ``{prefix}.b{q,v,o}``
    weights (keys carry no bias).  ``mask="causal"`` adds -1e9 above the diagonal so position t
    only attends to positions <= t.
    """
    if x.ndim != 3:
        raise ShapeError(f"attention input must be [batch, T, d_model], got {list(x.shape)}")
    batch, steps, d = x.shape
    if weights[f"{prefix}.Wq"].shape != (d, d):
        raise ShapeError(f"attention weights expect d_model={weights[f'{prefix}.Wq'].shape[0]}, input has {d}")
    if d % n_heads:
        raise ShapeError(f"d_model={d} not divisible by n_heads={n_heads}")
    if mask not in ("none", "causal"):
        raise ParameterError(f"unknown mask {mask!r}")
    dh = d // n_heads

    def heads(name):
        proj = x @ weights[f"{prefix}.W{name}"]
        if name != "k":
            proj = proj + weights[f"{prefix}.b{name}"]
        return proj.reshape(batch, steps, n_heads, dh).transpose(0, 2, 1, 3)

    q, k, v = heads("q"), heads("k"), heads("v")
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    if mask == "causal":
        scores = scores + Tensor._wrap(_causal_bias(steps))
    attn = T.softmax(scores, axis=-1)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(batch, steps, d)
    out = ctx @ weights[f"{prefix}.Wo"] + weights[f"{prefix}.bo"]
    if return_weights:
        return out, attn
    return out


def encoder_layer(x: Tensor, weights: dict[str, Tensor], prefix: str, n_heads: int,
                  mask: str = "none", dropout: DropoutState = EVAL) -> Tensor:
    """Pre-norm block: attention residual, then ReLU feed-forward residual."""
    w = weights
    a = T.layer_norm(x, w[f"{prefix}.ln1.gain"], w[f"{prefix}.ln1.bias"])
    x = x + dropout(multi_head_attention(a, w, f"{prefix}.attn", n_heads, mask, dropout))
    f = T.layer_norm(x, w[f"{prefix}.ln2.gain"], w[f"{prefix}.ln2.bias"])
    f = T.relu(f @ w[f"{prefix}.ffn.W1"] + w[f"{prefix}.ffn.b1"]) @ w[f"{prefix}.ffn.W2"] + w[f"{prefix}.ffn.b2"]
    return x + dropout(f)


def _encoder_stack(x, weights, spec, mask, dropout):
    for i in range(spec.n_layers):
        x = encoder_layer(x, weights, f"layers.{i}", spec.n_heads, mask, dropout)
    return T.layer_norm(x, weights["final_ln.gain"], weights["final_ln.bias"])


def transformer_vanilla_forward(x: Tensor, weights: dict[str, Tensor], spec: ModelSpec,
                                dropout: DropoutState = EVAL, all_positions: bool = False) -> Tensor:
    """Embed + sinusoidal PE, unmasked encoder, head on the last position → ``[B, 1]``.

    ``all_positions=True`` applies the head everywhere (``[B, T, 1]``), which
    exposes the non-causal mixing of the unmasked encoder.
    """
    _check_input(x, spec.input_dim)
    steps = x.shape[1]
    h = x @ weights["embed.W"] + weights["embed.b"] + sinusoidal_pe(steps, spec.d_model)
    h = _encoder_stack(dropout(h), weights, spec, "none", dropout)
    if all_positions:
        return h @ weights["head.W"] + weights["head.b"]
    last = h[:, steps - 1, :]
    return last @ weights["head.W"] + weights["head.b"]


def transformer_modified_forward(x: Tensor, weights: dict[str, Tensor], spec: ModelSpec,
                                 dropout: DropoutState = EVAL) -> Tensor:
    """Embed without positional encoding, causal encoder, per-position head → ``[B, T, 1]``."""
    _check_input(x, spec.input_dim)
    h = x @ weights["embed.W"] + weights["embed.b"]
    h = _encoder_stack(dropout(h), weights, spec, "causal", dropout)
    return h @ weights["head.W"] + weights["head.b"]


def _check_input(x: Tensor, input_dim: int):
    if x.ndim != 3 or x.shape[2] != input_dim:
        raise ShapeError(f"model input must be [batch, seq_len, {input_dim}], got {list(x.shape)}")


def forward(spec: ModelSpec, weights: dict[str, Tensor], x: Tensor,
            dropout: DropoutState = EVAL) -> Tensor:
    if spec.variant == "lstm":
        return lstm_forward(x, weights, dropout)
    if spec.variant == "transformer_vanilla":
        return transformer_vanilla_forward(x, weights, spec, dropout)
    return transformer_modified_forward(x, weights, spec, dropout)


def last_step(yhat: Tensor) -> np.ndarray:
    """Final-position predictions ``[batch]`` from either output layout."""
    data = yhat.data
    return data[:, -1, 0].copy() if data.ndim == 3 else data[:, 0].copy()


@dataclass
class SequenceModel:
    spec: ModelSpec
    weights: dict[str, Tensor] = field(repr=False)

    @classmethod
    def initialize(cls, spec: ModelSpec, rng: RngStream) -> "SequenceModel":
        return cls(spec, init_weights(spec, rng))

    def __call__(self, x, dropout: DropoutState = EVAL) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor._wrap(np.asarray(x, dtype=np.float64))
        return forward(self.spec, self.weights, x, dropout)

    def predict_last(self, x: np.ndarray, chunk: int = 256) -> np.ndarray:
        """Evaluation-mode final-position predictions for a stack of windows."""
        out = []
        with T.no_grad():
            for start in range(0, len(x), chunk):
                out.append(last_step(self(x[start:start + chunk])))
        return np.concatenate(out) if out else np.zeros(0)

    def parameters(self) -> list[Tensor]:
        return list(self.weights.values())

    def zero_grad(self):
        for p in self.weights.values():
            p.zero_grad()

    @property
    def n_params(self) -> int:
        return int(np.sum([p.size for p in self.weights.values()]))


# ---------------------------------------------------------------------------
# serialization
#
# layout: MAGIC | u32 version | u64 header length | JSON header |
#         per tensor: u32 name length, name, u32 ndim, u64 dims..., <f8 payload |
#         sha256 digest of all preceding bytes

MAGIC = b"RBWT"
FORMAT_VERSION = 1


def dumps_weights(spec: ModelSpec, weights: dict[str, Tensor | np.ndarray], meta: dict | None = None) -> bytes:
    header = json.dumps({"spec": spec.to_dict(), "meta": meta or {}, "tensors": list(weights)},
                        sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQ", FORMAT_VERSION, len(header)))
    buf.write(header)
    for name, t in weights.items():
        arr = np.ascontiguousarray(t.data if isinstance(t, Tensor) else t, dtype="<f8")
        raw = name.encode()
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    body = buf.getvalue()
    return body + hashlib.sha256(body).digest()


def loads_weights(blob: bytes) -> tuple[ModelSpec, dict[str, Tensor], dict]:
    if len(blob) < len(MAGIC) + 12 + 32:
        raise CheckpointError("checkpoint truncated: shorter than the fixed header")
    body, digest = blob[:-32], blob[-32:]
    if body[:4] != MAGIC:
        raise CheckpointError("not a runoffbench weight file (bad magic)")
    version, hlen = struct.unpack_from("<IQ", body, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint truncated or corrupted (digest mismatch)")
    pos = 16
    header = json.loads(body[pos:pos + hlen])
    pos += hlen
    weights = {}
    try:
        for expected in header["tensors"]:
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nlen].decode()
            pos += nlen
            if name != expected:
                raise CheckpointError(f"tensor order mismatch: {name!r} vs header {expected!r}")
            (ndim,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}Q", body, pos)
            pos += 8 * ndim
            count = int(np.prod(shape))
            arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(shape)
            pos += 8 * count
            weights[name] = Tensor(arr.astype(np.float64), requires_grad=True)
    except struct.error as exc:
        raise CheckpointError(f"checkpoint payload malformed: {exc}") from None
    if pos != len(body):
        raise CheckpointError("trailing bytes after last tensor")
    spec = ModelSpec.from_dict(header["spec"])
    return spec, weights, header["meta"]


def save_weights(path, spec: ModelSpec, weights, meta: dict | None = None) -> None:
    Path(path).write_bytes(dumps_weights(spec, weights, meta))


def load_weights(path) -> tuple[ModelSpec, dict[str, Tensor], dict]:
    return loads_weights(Path(path).read_bytes())
