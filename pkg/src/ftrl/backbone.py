"""Transformer-encoder forecaster used as the pre-trained backbone.

Layout (all parameters float64, declared in this order for checkpoints):

    input projection  N -> model_dim
    positional table  T x model_dim  (learned, sinusoidal start)
    encoder layers    post-norm: LN(x + MHA(x)), LN(x + FF(x))
    projection head   model_dim -> P, applied to the mean over time
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import numerics as nx
from .numerics import ContractError, LayerNorm, Linear, Module, Tensor

MAGIC = b"FTRL1"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class BackboneConfig:
    context_length: int = 32
    num_features: int = 8
    horizon: int = 4
    model_dim: int = 64
    num_heads: int = 4
    num_layers: int = 4
    ff_dim: int = 128
    dropout: float = 0.0

    def __post_init__(self):
        if self.context_length < 1 or self.num_features < 1 or self.horizon < 1:
            raise ContractError("context_length, num_features and horizon must be >= 1")
        # zero layers is allowed as the projection-only ablation
        if self.num_layers < 0:
            raise ContractError("num_layers must be >= 0")
        if self.model_dim < 1 or self.num_heads < 1 or self.model_dim % self.num_heads:
            raise ContractError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must be in [0, 1)")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def sinusoidal_table(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def _dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    if p <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask


class EncoderLayer(Module):
    def __init__(self, dim: int, heads: int, ff_dim: int, rng: np.random.Generator):
        super().__init__()
        self.heads = heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)
        self.norm1 = LayerNorm(dim)
        self.ff1 = Linear(dim, ff_dim, rng)
        self.ff2 = Linear(ff_dim, dim, rng)
        self.norm2 = LayerNorm(dim)

    def attention(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        h, dh = self.heads, d // self.heads

        def split(z):
            return nx.transpose(nx.reshape(z, (b, t, h, dh)), (0, 2, 1, 3))

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = nx.matmul(q, nx.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
        ctx = nx.matmul(nx.softmax(scores, axis=-1), v)
        ctx = nx.reshape(nx.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
        return self.o(ctx)

    def __call__(self, x: Tensor, dropout: float = 0.0, rng=None) -> Tensor:
        x = self.norm1(x + _dropout(self.attention(x), dropout, rng))
        ff = self.ff2(nx.gelu(self.ff1(x)))
        return self.norm2(x + _dropout(ff, dropout, rng))


class Backbone(Module):
    def __init__(self, config: BackboneConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        c = config
        self.input_proj = Linear(c.num_features, c.model_dim, rng)
        self.pos = nx.param(sinusoidal_table(c.context_length, c.model_dim))
        self.layers: list[EncoderLayer] = []
        for i in range(c.num_layers):
            layer = EncoderLayer(c.model_dim, c.num_heads, c.ff_dim, rng)
            self.add_module(f"layer{i}", layer)
            self.layers.append(layer)
        self.head = Linear(c.model_dim, c.horizon, rng)
        self.frozen_layers = 0
        self.provenance: dict[str, Any] = {}

    # ------------------------------------------------------------- forward

    def _as_batch(self, s) -> tuple[Tensor, bool]:
        t = s if isinstance(s, Tensor) else Tensor(s)
        c = self.config
        expected = (c.context_length, c.num_features)
        if t.ndim == 2 and t.shape == expected:
            return nx.reshape(t, (1,) + expected), True
        if t.ndim == 3 and t.shape[1:] == expected:
            return t, False
        raise ContractError(f"backbone input shape {t.shape} does not match expected (T, N) = {expected}")

    def forward_latent(self, s, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Mean-pooled encoder output, shape (model_dim,) or (B, model_dim)."""
        x, single = self._as_batch(s)
        h = self.input_proj(x) + self.pos
        p = self.config.dropout if training else 0.0
        for layer in self.layers:
            h = layer(h, p, rng)
        latent = nx.mean(h, axis=1)
        return nx.reshape(latent, (self.config.model_dim,)) if single else latent

    def projection_head(self, latent) -> Tensor:
        return self.head(latent)

    def forward_predict(self, s, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return self.projection_head(self.forward_latent(s, training, rng))

    def predict(self, states: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Evaluation-mode forecasts for a stack of windows, shape (M, P)."""
        states = np.asarray(states, dtype=np.float64)
        out = []
        with nx.no_grad():
            for i in range(0, len(states), batch_size):
                out.append(self.forward_predict(states[i:i + batch_size]).data)
        if not out:
            return np.zeros((0, self.config.horizon))
        return np.concatenate(out, axis=0)

    # ------------------------------------------------------------- freezing

    def encoder_modules(self) -> list[Module]:
        return [self.input_proj, *self.layers]

    def set_frozen_fraction(self, f: float) -> int:
        """Freeze the first floor(f * num_layers) encoder layers.

        With f > 0 the input projection and positional table are frozen too.
        The projection head always stays trainable.
        """
        if not 0.0 <= f <= 1.0:
            raise ContractError(f"frozen fraction {f} outside [0, 1]")
        k = int(math.floor(f * self.config.num_layers + 1e-9))
        front = f > 0
        self.input_proj.set_frozen(front)
        self.pos.requires_grad = not front
        for i, layer in enumerate(self.layers):
            layer.set_frozen(i < k)
        self.head.set_frozen(False)
        self.frozen_layers = k
        return k

    def freeze_encoder(self) -> None:
        """Freeze everything except the projection head (warm-up)."""
        self.input_proj.set_frozen(True)
        self.pos.requires_grad = False
        for layer in self.layers:
            layer.set_frozen(True)
        self.head.set_frozen(False)

    def layer_groups(self) -> dict[str, list[Tensor]]:
        groups = {"input": self.input_proj.parameters() + [self.pos]}
        for i, layer in enumerate(self.layers):
            groups[f"layer{i}"] = layer.parameters()
        groups["head"] = self.head.parameters()
        return groups

    # ------------------------------------------------------------- persistence

    def save(self, path: str | Path, provenance: dict[str, Any] | None = None) -> None:
        params = list(self.named_parameters())
        meta = {
            "format_version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "seed": self.seed,
            "provenance": provenance if provenance is not None else self.provenance,
            "params": [[name, list(p.data.shape)] for name, p in params],
        }
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            for _, p in params:
                fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path, config: BackboneConfig | None = None) -> "Backbone":
        """Read a checkpoint; if ``config`` is given it must match the file."""
        meta, arrays = read_checkpoint(path)
        file_cfg = BackboneConfig(**meta["config"])
        if config is not None and config != file_cfg:
            diffs = {k: (v, getattr(file_cfg, k)) for k, v in config.to_dict().items() if getattr(file_cfg, k) != v}
            raise CheckpointError(f"config mismatch (expected, found): {diffs}")
        model = cls(file_cfg, seed=meta.get("seed", 0))
        model.load_arrays(arrays)
        model.provenance = meta.get("provenance", {})
        return model

    def load_from(self, path: str | Path) -> None:
        """Overwrite this model's parameters from a compatible checkpoint."""
        meta, arrays = read_checkpoint(path)
        file_cfg = BackboneConfig(**meta["config"])
        if file_cfg != self.config:
            diffs = {k: (v, getattr(file_cfg, k)) for k, v in self.config.to_dict().items() if getattr(file_cfg, k) != v}
            raise CheckpointError(f"config mismatch (expected, found): {diffs}")
        self.load_arrays(arrays)

    def clone(self) -> "Backbone":
        other = Backbone(self.config, self.seed)
        other.load_arrays(self.state_arrays())
        other.provenance = dict(self.provenance)
        return other


class CheckpointError(ValueError):
    pass


def read_checkpoint(path: str | Path) -> tuple[dict[str, Any], list[np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic")
    off = len(MAGIC)
    if len(raw) < off + 4:
        raise CheckpointError("truncated checkpoint header")
    (n,) = struct.unpack("<I", raw[off:off + 4])
    off += 4
    if len(raw) < off + n:
        raise CheckpointError("truncated checkpoint metadata")
    try:
        meta = json.loads(raw[off:off + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint metadata: {exc}") from None
    off += n
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')}")
    arrays = []
    for name, shape in meta["params"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if len(raw) < off + nbytes:
            raise CheckpointError(f"truncated checkpoint at parameter {name}")
        arrays.append(np.frombuffer(raw[off:off + nbytes], dtype="<f8").astype(np.float64).reshape(shape))
        off += nbytes
    if off != len(raw):
        raise CheckpointError("trailing bytes after parameters")
    return meta, arrays


# ------------------------------------------------------------------ pre-training

@dataclass
class PretrainHistory:
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    status: str = "ok"


def _mse(model: Backbone, states: np.ndarray, targets: np.ndarray) -> float:
    pred = model.predict(states)
    return float(np.mean((pred - targets) ** 2))


def pretrain(model: Backbone, dataset, epochs: int = 20, lr: float = 1e-3, batch_size: int = 64,
             seed: int = 0) -> PretrainHistory:
    """Minimise forecast MSE on the train split with Adam.

    Train and validation MSE are re-evaluated in evaluation mode after every
    epoch. A non-finite loss stops training and restores the parameters from
    the end of the last finite epoch.
    """
    train = dataset.subset("train") if dataset.tags is not None else dataset
    if len(train) == 0:
        raise ValueError("pretrain: empty training split")
    if lr < 0:
        raise ValueError("pretrain: lr must be >= 0")
    val = dataset.subset("validation") if dataset.tags is not None and dataset.has_split("validation") else None
    rng = np.random.default_rng(seed)
    opt = nx.Adam(lr=lr)
    hist = PretrainHistory()
    last_good = model.state_arrays()
    for _ in range(epochs):
        order = rng.permutation(len(train))
        try:
            for i in range(0, len(order), batch_size):
                idx = order[i:i + batch_size]
                pred = model.forward_predict(train.states[idx], training=True, rng=rng)
                loss = nx.mean(nx.square(pred - Tensor(train.targets[idx])))
                if not np.isfinite(loss.data).all():
                    raise nx.NonFiniteError("pretrain loss is not finite")
                params = model.trainable_parameters()
                opt.step(params, nx.grad(loss, params))
        except (nx.NonFiniteError, FloatingPointError):
            model.load_arrays(last_good)
            hist.status = "diverged"
            break
        tr = _mse(model, train.states, train.targets)
        if not math.isfinite(tr):
            model.load_arrays(last_good)
            hist.status = "diverged"
            break
        hist.train_mse.append(tr)
        if val is not None and len(val):
            hist.val_mse.append(_mse(model, val.states, val.targets))
        last_good = model.state_arrays()
    return hist
