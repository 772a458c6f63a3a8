"""Model assembly: the conv + bidirectional-GRU classifier with max or
attentive pooling, the CNN baseline (GRU removed, max-pooled conv output),
the regularized NLL loss, exact backprop through the whole graph, and
checkpoint round-tripping.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import layers
from .data import ConfigError, InputError, SequenceBatch, Vocab
from .tensor import StateError, glorot_init, log_softmax, make_rng

CHECKPOINT_MAGIC = b"CBGRUCKPT\n"
CHECKPOINT_VERSION = 1


class FormatError(ValueError):
    """Corrupt or incompatible checkpoint file."""


@dataclass
class ModelConfig:
    """Architecture switches plus the training-recipe hyperparameters."""

    d_w: int = 100
    d_p: int = 10
    d_c: int = 200
    d_h: int = 100
    k: int = 3
    pooling: str = "max"  # "max" | "attentive"
    use_gru: bool = True
    dropout_p: float = 0.5
    l2_beta: float = 0.0001
    seed: int = 1
    class_names: List[str] = field(default_factory=list)

    def validate(self) -> None:
        for name in ("d_w", "d_p", "d_c", "d_h", "k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.pooling not in ("max", "attentive"):
            raise ConfigError(f"unknown pooling mode '{self.pooling}'")
        if self.pooling == "attentive" and not self.use_gru:
            raise ConfigError("attentive pooling requires the GRU layer")
        if not (0.0 <= self.dropout_p < 1.0):
            raise ConfigError("dropout_p must lie in [0, 1)")
        if self.l2_beta < 0:
            raise ConfigError("l2_beta must be non-negative")

    @property
    def d_x(self) -> int:
        return self.d_w + 2 * self.d_p

    @property
    def pooled_dim(self) -> int:
        return 2 * self.d_h if self.use_gru else self.d_c

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        cfg = cls(**obj)
        cfg.validate()
        return cfg


class ParamSet:
    """Named registry of trainable arrays with matching gradient buffers.

    Parameters flagged ``decay`` enter the L2 term; embedding tables keep
    their PAD column (index 0) frozen at zero and outside the L2 sum.
    """

    def __init__(self) -> None:
        self.values: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self._decay: set = set()
        self._pad_frozen: set = set()

    def add(self, name: str, value: np.ndarray, decay: bool = True, pad_frozen: bool = False) -> None:
        if name in self.values:
            raise ConfigError(f"duplicate parameter '{name}'")
        self.values[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.values[name])
        if decay:
            self._decay.add(name)
        if pad_frozen:
            self._pad_frozen.add(name)

    def names(self) -> List[str]:
        return list(self.values)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def _decay_view(self, name: str) -> np.ndarray:
        v = self.values[name]
        if name in self._pad_frozen:
            return v[:, 1:]
        return v

    def l2_sum(self) -> float:
        return float(sum(np.sum(self._decay_view(n) ** 2) for n in sorted(self._decay)))

    def add_l2_grads(self, beta: float) -> None:
        if beta == 0.0:
            return
        for name in self._decay:
            g = 2.0 * beta * self.values[name]
            if name in self._pad_frozen:
                g[:, 0] = 0.0
            self.grads[name] += g

    def freeze_pad_columns(self) -> None:
        for name in self._pad_frozen:
            self.values[name][:, 0] = 0.0
            self.grads[name][:, 0] = 0.0

    def copy(self) -> "ParamSet":
        dup = ParamSet()
        for name, value in self.values.items():
            dup.add(name, value.copy(), decay=name in self._decay, pad_frozen=name in self._pad_frozen)
        return dup


def init_params(cfg: ModelConfig, n_tokens: int, n_positions: int) -> ParamSet:
    """Glorot-initialized weights, zero biases, zero PAD embedding columns."""
    cfg.validate()
    if not cfg.class_names:
        raise ConfigError("model config carries no class names")
    rng = make_rng(cfg.seed)
    params = ParamSet()
    params.add("embed.word", glorot_init(cfg.d_w, n_tokens, rng), pad_frozen=True)
    params.add("embed.pos", glorot_init(cfg.d_p, n_positions, rng), pad_frozen=True)
    params.add("conv.W", glorot_init(cfg.d_c, cfg.d_x * cfg.k, rng))
    params.add("conv.b", np.zeros(cfg.d_c), decay=False)
    if cfg.use_gru:
        for prefix in ("gru_f", "gru_b"):
            for gate in ("r", "z", "h"):
                params.add(f"{prefix}.W_{gate}", glorot_init(cfg.d_h, cfg.d_c, rng))
                params.add(f"{prefix}.U_{gate}", glorot_init(cfg.d_h, cfg.d_h, rng))
                params.add(f"{prefix}.b_{gate}", np.zeros(cfg.d_h), decay=False)
    if cfg.pooling == "attentive":
        params.add("att.v", glorot_init(1, 2 * cfg.d_h, rng).ravel())
    params.add("cls.W", glorot_init(len(cfg.class_names), cfg.pooled_dim, rng))
    params.freeze_pad_columns()
    return params


def _embedding_views(params: ParamSet, grads: bool = False) -> layers.EmbeddingTables:
    src = params.grads if grads else params.values
    return layers.EmbeddingTables(word=src["embed.word"], pos=src["embed.pos"])


def _gru_views(params: ParamSet, prefix: str, grads: bool = False) -> layers.GruParams:
    src = params.grads if grads else params.values
    return layers.GruParams(*(src[f"{prefix}.{name}"] for name in layers.GRU_FIELDS))


@dataclass
class ForwardTrace:
    """Per-batch caches retained for the backward pass."""

    loss: float
    probs: np.ndarray  # (batch, n_classes)
    batch: SequenceBatch
    cfg: ModelConfig
    sample_caches: List[dict]
    m: int
    consumed: bool = False


def forward(
    batch: SequenceBatch,
    cfg: ModelConfig,
    params: ParamSet,
    train_mode: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> ForwardTrace:
    """Full pipeline: embed -> conv -> (bigru) -> pool -> dropout ->
    classifier, with loss = mean NLL + l2_beta * ||theta||^2."""
    if batch.size == 0:
        raise InputError("forward called with an empty batch")
    n_classes = len(cfg.class_names)
    dropout = train_mode and cfg.dropout_p > 0.0
    if dropout and rng is None:
        raise ConfigError("training forward with dropout needs an rng")

    tables = _embedding_views(params)
    fwd = _gru_views(params, "gru_f") if cfg.use_gru else None
    bwd = _gru_views(params, "gru_b") if cfg.use_gru else None
    w_cls = params.values["cls.W"]

    probs = np.zeros((batch.size, n_classes))
    caches: List[dict] = []
    nll = 0.0
    m = batch.size
    for i in range(m):
        y = int(batch.labels[i])
        if not (0 <= y < n_classes):
            raise IndexError(f"gold label index {y} out of range for {n_classes} classes")
        n = int(batch.lengths[i])
        tok = batch.token_ids[i, :n]
        p1 = batch.pos1_ids[i, :n]
        p2 = batch.pos2_ids[i, :n]

        x = layers.embed_forward(tok, p1, p2, tables)
        c, conv_cache = layers.conv_forward(x, params.values["conv.W"], params.values["conv.b"], cfg.k)
        cache: dict = {"tok": tok, "p1": p1, "p2": p2, "conv": conv_cache, "y": y}

        if cfg.use_gru:
            h, gru_cache = layers.bigru_forward(c, fwd, bwd)
            cache["gru"] = gru_cache
        else:
            h = c
        valid = h.shape[1]
        cache["h"] = h

        if cfg.pooling == "max":
            pooled, argmax = layers.max_pool(h, valid)
            cache["argmax"] = argmax
        else:
            pooled, _, att_cache = layers.attentive_pool(h, params.values["att.v"], valid)
            cache["att"] = att_cache
        cache["pooled"] = pooled

        if dropout:
            keep = rng.random(pooled.shape[0]) >= cfg.dropout_p
            scale = keep / (1.0 - cfg.dropout_p)
            cache["drop_scale"] = scale
            dropped = pooled * scale
        else:
            dropped = pooled
        cache["dropped"] = dropped

        logits = w_cls @ dropped
        log_probs = log_softmax(logits)
        probs[i] = np.exp(log_probs)
        nll -= log_probs[y]
        caches.append(cache)

    loss = nll / m + cfg.l2_beta * params.l2_sum()
    return ForwardTrace(loss=loss, probs=probs, batch=batch, cfg=cfg, sample_caches=caches, m=m)


def backward(trace: ForwardTrace, params: ParamSet) -> None:
    """Populates the gradient buffers with the exact gradient of the loss.
    Each trace supports a single backward pass."""
    if trace.consumed:
        raise StateError("trace already consumed by a previous backward pass")
    trace.consumed = True
    cfg = trace.cfg
    params.zero_grads()

    tables_g = _embedding_views(params, grads=True)
    fwd = _gru_views(params, "gru_f") if cfg.use_gru else None
    bwd = _gru_views(params, "gru_b") if cfg.use_gru else None
    fwd_g = _gru_views(params, "gru_f", grads=True) if cfg.use_gru else None
    bwd_g = _gru_views(params, "gru_b", grads=True) if cfg.use_gru else None
    w_cls = params.values["cls.W"]

    for i, cache in enumerate(trace.sample_caches):
        d_logits = trace.probs[i].copy()
        d_logits[cache["y"]] -= 1.0
        d_logits /= trace.m

        params.grads["cls.W"] += np.outer(d_logits, cache["dropped"])
        d_dropped = w_cls.T @ d_logits
        d_pooled = d_dropped * cache["drop_scale"] if "drop_scale" in cache else d_dropped

        h = cache["h"]
        if cfg.pooling == "max":
            d_h = layers.max_pool_backward(d_pooled, cache["argmax"], h.shape)
        else:
            d_h, d_v = layers.attentive_pool_backward(d_pooled, cache["att"], h, params.values["att.v"])
            params.grads["att.v"] += d_v

        if cfg.use_gru:
            d_c = layers.bigru_backward(d_h, cache["gru"], fwd, bwd, fwd_g, bwd_g)
        else:
            d_c = d_h
        d_x, d_w, d_b = layers.conv_backward(d_c, cache["conv"], params.values["conv.W"])
        params.grads["conv.W"] += d_w
        params.grads["conv.b"] += d_b
        layers.embed_backward(d_x, cache["tok"], cache["p1"], cache["p2"], tables_g)

    params.add_l2_grads(cfg.l2_beta)
    # PAD embeddings stay frozen
    for name in ("embed.word", "embed.pos"):
        params.grads[name][:, 0] = 0.0


def predict(batch: SequenceBatch, cfg: ModelConfig, params: ParamSet) -> Tuple[np.ndarray, np.ndarray]:
    """Argmax predictions (ties break toward the lowest class index) and
    the per-sample confidence vectors. Dropout is always off."""
    trace = forward(batch, cfg, params, train_mode=False)
    return np.argmax(trace.probs, axis=1), trace.probs


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def checkpoint_save(path: str, cfg: ModelConfig, params: ParamSet, vocab: Vocab) -> None:
    """Writes a manifest (JSON) followed by raw little-endian float64
    parameter blocks, atomically (temp file + rename)."""
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "vocab": vocab.to_dict(),
        "params": [{"name": n, "shape": list(params.values[n].shape)} for n in params.names()],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(len(blob).to_bytes(8, "little"))
            fh.write(blob)
            for name in params.names():
                fh.write(params.values[name].astype("<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _expected_shapes(cfg: ModelConfig, n_tokens: int, n_positions: int) -> Dict[str, tuple]:
    probe = init_params(cfg, n_tokens, n_positions)
    return {name: probe.values[name].shape for name in probe.names()}


def checkpoint_load(path: str) -> Tuple[ModelConfig, ParamSet, Vocab]:
    """Restores a checkpoint; shape or version mismatches and truncated
    files raise FormatError."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint file")
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise FormatError(f"{path}: truncated manifest length")
        blob = fh.read(int.from_bytes(raw_len, "little"))
        try:
            manifest = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: corrupt manifest") from exc
        if manifest.get("format_version") != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported format version {manifest.get('format_version')}")
        try:
            cfg = ModelConfig.from_dict(manifest["config"])
            vocab = Vocab.from_dict(manifest["vocab"])
            entries = manifest["params"]
        except (KeyError, TypeError, ConfigError) as exc:
            raise FormatError(f"{path}: invalid manifest ({exc})") from exc

        expected = _expected_shapes(cfg, vocab.n_tokens, vocab.n_positions)
        listed = {e["name"]: tuple(e["shape"]) for e in entries}
        if listed != expected:
            raise FormatError(f"{path}: parameter shapes do not match the stored config")

        params = ParamSet()
        for entry in entries:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise FormatError(f"{path}: truncated parameter block '{entry['name']}'")
            value = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
            params.add(
                entry["name"],
                value,
                decay=not entry["name"].endswith((".b", ".b_r", ".b_z", ".b_h")),
                pad_frozen=entry["name"] in ("embed.word", "embed.pos"),
            )
    return cfg, params, vocab
