"""Finite-difference verification of every backward pass, on synthetic toy
instances: each layer in isolation plus the three full architectures.

A block passes when the max relative error between analytic gradients and
central finite differences (eps=1e-5, dropout off) stays below 1e-4.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import layers, model
from .data import SequenceBatch, Vocab
from .tensor import finite_diff_grad, make_rng, max_relative_error

THRESHOLD = 1e-4
TOY = {"d_w": 6, "d_p": 2, "d_c": 5, "d_h": 4}


@dataclass
class CheckResult:
    name: str
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < THRESHOLD


def _compare(analytic: Dict[str, np.ndarray], fd: Dict[str, np.ndarray]) -> float:
    return max(max_relative_error(analytic[name], fd[name]) for name in fd)


def _check_embed(rng: np.random.Generator) -> float:
    n, n_tok, n_pos = 6, 9, 7
    arrays = {
        "word": rng.standard_normal((TOY["d_w"], n_tok)),
        "pos": rng.standard_normal((TOY["d_p"], n_pos)),
    }
    tok = rng.integers(0, n_tok, size=n)
    p1 = rng.integers(0, n_pos, size=n)
    p2 = rng.integers(0, n_pos, size=n)
    upstream = rng.standard_normal((TOY["d_w"] + 2 * TOY["d_p"], n))

    def objective(a):
        tables = layers.EmbeddingTables(word=a["word"], pos=a["pos"])
        return float(np.sum(layers.embed_forward(tok, p1, p2, tables) * upstream))

    grads = layers.EmbeddingTables(
        word=np.zeros_like(arrays["word"]), pos=np.zeros_like(arrays["pos"])
    )
    layers.embed_backward(upstream, tok, p1, p2, grads)
    analytic = {"word": grads.word, "pos": grads.pos}
    return _compare(analytic, finite_diff_grad(objective, arrays))


def _check_conv(rng: np.random.Generator, k: int) -> float:
    d_x = TOY["d_w"] + 2 * TOY["d_p"]
    n = int(rng.integers(max(k, 3), 9))
    arrays = {
        "x": rng.standard_normal((d_x, n)),
        "W": rng.standard_normal((TOY["d_c"], d_x * k)) * 0.3,
        "b": rng.standard_normal(TOY["d_c"]) * 0.3,
    }
    upstream = rng.standard_normal((TOY["d_c"], n - k + 1))

    def objective(a):
        c, _ = layers.conv_forward(a["x"], a["W"], a["b"], k)
        return float(np.sum(c * upstream))

    c, cache = layers.conv_forward(arrays["x"], arrays["W"], arrays["b"], k)
    d_x_grad, d_w, d_b = layers.conv_backward(upstream, cache, arrays["W"])
    analytic = {"x": d_x_grad, "W": d_w, "b": d_b}
    return _compare(analytic, finite_diff_grad(objective, arrays))


def _random_gru_arrays(rng: np.random.Generator, d_in: int, d_h: int, prefix: str) -> Dict[str, np.ndarray]:
    out = {}
    for gate in ("r", "z", "h"):
        out[f"{prefix}W_{gate}"] = rng.standard_normal((d_h, d_in)) * 0.4
        out[f"{prefix}U_{gate}"] = rng.standard_normal((d_h, d_h)) * 0.4
        out[f"{prefix}b_{gate}"] = rng.standard_normal(d_h) * 0.2
    return out


def _gru_params_from(arrays: Dict[str, np.ndarray], prefix: str) -> layers.GruParams:
    return layers.GruParams(*(arrays[f"{prefix}{name}"] for name in layers.GRU_FIELDS))


def _check_bigru(rng: np.random.Generator) -> float:
    d_c, d_h = TOY["d_c"], TOY["d_h"]
    n = 5
    arrays = {"features": rng.standard_normal((d_c, n))}
    arrays.update(_random_gru_arrays(rng, d_c, d_h, "f."))
    arrays.update(_random_gru_arrays(rng, d_c, d_h, "b."))
    upstream = rng.standard_normal((2 * d_h, n))

    def objective(a):
        h, _ = layers.bigru_forward(a["features"], _gru_params_from(a, "f."), _gru_params_from(a, "b."))
        return float(np.sum(h * upstream))

    fwd = _gru_params_from(arrays, "f.")
    bwd = _gru_params_from(arrays, "b.")
    h, cache = layers.bigru_forward(arrays["features"], fwd, bwd)
    gf = layers.GruParams(*(np.zeros_like(getattr(fwd, f)) for f in layers.GRU_FIELDS))
    gb = layers.GruParams(*(np.zeros_like(getattr(bwd, f)) for f in layers.GRU_FIELDS))
    d_feat = layers.bigru_backward(upstream, cache, fwd, bwd, gf, gb)
    analytic = {"features": d_feat}
    for f in layers.GRU_FIELDS:
        analytic[f"f.{f}"] = getattr(gf, f)
        analytic[f"b.{f}"] = getattr(gb, f)
    return _compare(analytic, finite_diff_grad(objective, arrays))


def _check_max_pool(rng: np.random.Generator) -> float:
    h = rng.standard_normal((2 * TOY["d_h"], 6))
    upstream = rng.standard_normal(2 * TOY["d_h"])
    arrays = {"h": h}

    def objective(a):
        pooled, _ = layers.max_pool(a["h"], a["h"].shape[1])
        return float(pooled @ upstream)

    pooled, argmax = layers.max_pool(h, h.shape[1])
    analytic = {"h": layers.max_pool_backward(upstream, argmax, h.shape)}
    return _compare(analytic, finite_diff_grad(objective, arrays))


def _check_attentive_pool(rng: np.random.Generator) -> float:
    rows = 2 * TOY["d_h"]
    arrays = {"h": rng.standard_normal((rows, 6)), "v": rng.standard_normal(rows)}
    upstream = rng.standard_normal(rows)

    def objective(a):
        pooled, _, _ = layers.attentive_pool(a["h"], a["v"], a["h"].shape[1])
        return float(pooled @ upstream)

    pooled, _, cache = layers.attentive_pool(arrays["h"], arrays["v"], arrays["h"].shape[1])
    d_h, d_v = layers.attentive_pool_backward(upstream, cache, arrays["h"], arrays["v"])
    return _compare({"h": d_h, "v": d_v}, finite_diff_grad(objective, arrays))


def _toy_batch(rng: np.random.Generator, vocab: Vocab, n_samples: int, n_classes: int, k: int) -> SequenceBatch:
    lengths = rng.integers(max(k, 3), 9, size=n_samples)
    width = int(lengths.max())
    token_ids = np.zeros((n_samples, width), dtype=np.int64)
    pos1_ids = np.zeros((n_samples, width), dtype=np.int64)
    pos2_ids = np.zeros((n_samples, width), dtype=np.int64)
    mask = np.zeros((n_samples, width), dtype=np.int64)
    for i, n in enumerate(lengths):
        token_ids[i, :n] = rng.integers(1, vocab.n_tokens, size=n)
        pos1_ids[i, :n] = rng.integers(1, vocab.n_positions, size=n)
        pos2_ids[i, :n] = rng.integers(1, vocab.n_positions, size=n)
        mask[i, :n] = 1
    labels = rng.integers(0, n_classes, size=n_samples)
    return SequenceBatch(token_ids, pos1_ids, pos2_ids, mask, lengths.astype(np.int64), labels)


def _check_full_model(rng: np.random.Generator, pooling: str, use_gru: bool, k: int) -> float:
    class_names = ["A", "B", "C"]
    vocab = Vocab(tokens=[f"w{i}" for i in range(10)], clip=6, class_names=class_names, positive_classes=["A", "B"])
    cfg = model.ModelConfig(
        d_w=TOY["d_w"],
        d_p=TOY["d_p"],
        d_c=TOY["d_c"],
        d_h=TOY["d_h"],
        k=k,
        pooling=pooling,
        use_gru=use_gru,
        dropout_p=0.0,
        l2_beta=0.001,
        seed=int(rng.integers(0, 2**31)),
        class_names=class_names,
    )
    params = model.init_params(cfg, vocab.n_tokens, vocab.n_positions)
    batch = _toy_batch(rng, vocab, n_samples=3, n_classes=len(class_names), k=k)

    def objective(_arrays):
        return model.forward(batch, cfg, params).loss

    trace = model.forward(batch, cfg, params)
    model.backward(trace, params)
    analytic = {name: params.grads[name].copy() for name in params.names()}
    fd = finite_diff_grad(objective, params.values)
    # PAD columns are frozen: their analytic gradient is pinned to zero
    for name in ("embed.word", "embed.pos"):
        fd[name][:, 0] = 0.0
    return _compare(analytic, fd)


def run_gradcheck(seed: int = 0, corrupt: Optional[str] = None) -> List[CheckResult]:
    """Runs every block check; ``corrupt`` perturbs the named block's
    analytic result to exercise failure reporting."""
    rng = make_rng(seed)
    blocks = [
        ("embed", lambda: _check_embed(rng)),
        ("conv_k1", lambda: _check_conv(rng, 1)),
        ("conv_k2", lambda: _check_conv(rng, 2)),
        ("conv_k3", lambda: _check_conv(rng, 3)),
        ("bigru", lambda: _check_bigru(rng)),
        ("max_pool", lambda: _check_max_pool(rng)),
        ("attentive_pool", lambda: _check_attentive_pool(rng)),
        ("model_cbgru_max", lambda: _check_full_model(rng, "max", True, 3)),
        ("model_cbgru_att", lambda: _check_full_model(rng, "attentive", True, 2)),
        ("model_cnn", lambda: _check_full_model(rng, "max", False, 3)),
    ]
    results = []
    for name, check in blocks:
        err = check()
        if corrupt == name:
            err += 1.0
        results.append(CheckResult(name=name, max_rel_error=err))
    return results
