"""Forward and exact backward passes for every architectural block:
embedding lookups with position features, windowed 1-D convolution,
uni/bidirectional GRU, masked max / attentive pooling, and the softmax
classifier head.

Convention: a sequence of length n is a matrix with one column per step.
All operations here see only the valid (unpadded) steps of a sample, so
padding can never leak into activations or gradients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .tensor import (
    DegenerateInputError,
    DimensionError,
    StateError,
    sigmoid,
    softmax,
)

PAD_ID = 0
UNK_ID = 1

GRU_FIELDS = ("W_r", "U_r", "b_r", "W_z", "U_z", "b_z", "W_h", "U_h", "b_h")


@dataclass
class EmbeddingTables:
    """Word table (d_w x |V_w|) and shared position table (d_p x |V_p|)."""

    word: np.ndarray
    pos: np.ndarray


@dataclass
class GruParams:
    W_r: np.ndarray
    U_r: np.ndarray
    b_r: np.ndarray
    W_z: np.ndarray
    U_z: np.ndarray
    b_z: np.ndarray
    W_h: np.ndarray
    U_h: np.ndarray
    b_h: np.ndarray


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


def embed_forward(
    token_ids: np.ndarray,
    pos1_ids: np.ndarray,
    pos2_ids: np.ndarray,
    tables: EmbeddingTables,
) -> np.ndarray:
    """Per-step concatenation [word_vec; pos1_vec; pos2_vec], one column per
    token. Output shape (d_w + 2*d_p, n)."""
    token_ids = np.asarray(token_ids)
    pos1_ids = np.asarray(pos1_ids)
    pos2_ids = np.asarray(pos2_ids)
    if not (len(token_ids) == len(pos1_ids) == len(pos2_ids)):
        raise DimensionError("id sequences differ in length")
    for ids, table, what in (
        (token_ids, tables.word, "token"),
        (pos1_ids, tables.pos, "pos1"),
        (pos2_ids, tables.pos, "pos2"),
    ):
        if len(ids) and (ids.min() < 0 or ids.max() >= table.shape[1]):
            raise IndexError(f"{what} id out of range for table width {table.shape[1]}")
    return np.concatenate(
        [tables.word[:, token_ids], tables.pos[:, pos1_ids], tables.pos[:, pos2_ids]],
        axis=0,
    )


def embed_backward(
    d_x: np.ndarray,
    token_ids: np.ndarray,
    pos1_ids: np.ndarray,
    pos2_ids: np.ndarray,
    grads: EmbeddingTables,
) -> None:
    """Scatter-add upstream column slices into the table gradient buffers.
    A token used twice accumulates both slices."""
    d_w = grads.word.shape[0]
    d_p = grads.pos.shape[0]
    if d_x.shape != (d_w + 2 * d_p, len(token_ids)):
        raise DimensionError(f"upstream shape {d_x.shape} does not match forward output")
    np.add.at(grads.word.T, np.asarray(token_ids), d_x[:d_w].T)
    np.add.at(grads.pos.T, np.asarray(pos1_ids), d_x[d_w : d_w + d_p].T)
    np.add.at(grads.pos.T, np.asarray(pos2_ids), d_x[d_w + d_p :].T)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv_forward(
    x: np.ndarray, weight: np.ndarray, bias: np.ndarray, k: int
) -> Tuple[np.ndarray, dict]:
    """Window-concat affine map plus tanh: column j of the output is
    tanh(W . [x_j; ...; x_{j+k-1}] + b). Returns (C, cache) where C has
    n - k + 1 columns."""
    d_x, n = x.shape
    if k < 1:
        raise DimensionError("window size k must be >= 1")
    if weight.shape[1] != d_x * k:
        raise DimensionError(f"conv weight cols {weight.shape[1]} != d_x*k = {d_x * k}")
    if n < k:
        raise DegenerateInputError(f"sequence length {n} shorter than window {k}")
    steps = n - k + 1
    x_cat = np.concatenate([x[:, j : j + steps] for j in range(k)], axis=0)
    c = np.tanh(weight @ x_cat + bias[:, None])
    cache = {"x_cat": x_cat, "c": c, "d_x": d_x, "n": n, "k": k}
    return c, cache


def conv_backward(
    d_c: np.ndarray, cache: Optional[dict], weight: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (d_input, d_weight, d_bias); overlapping windows sum into the
    shared input steps."""
    if cache is None:
        raise StateError("conv_backward called without a forward cache")
    c = cache["c"]
    d_a = d_c * (1.0 - c * c)
    d_weight = d_a @ cache["x_cat"].T
    d_bias = d_a.sum(axis=1)
    d_xcat = weight.T @ d_a
    d_x = np.zeros((cache["d_x"], cache["n"]))
    steps = c.shape[1]
    dim = cache["d_x"]
    for j in range(cache["k"]):
        d_x[:, j : j + steps] += d_xcat[j * dim : (j + 1) * dim]
    return d_x, d_weight, d_bias


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------


def gru_step(
    x: np.ndarray, h_prev: np.ndarray, p: GruParams
) -> Tuple[np.ndarray, dict]:
    """One recurrence step:

        r = sigmoid(W_r x + U_r h_prev + b_r)
        z = sigmoid(W_z x + U_z h_prev + b_z)
        h_cand = tanh(W_h x + r * (U_h h_prev) + b_h)
        h = (1 - z) * h_prev + z * h_cand

    The update gate z weights the candidate state.
    """
    if x.shape[0] != p.W_r.shape[1] or h_prev.shape[0] != p.U_r.shape[1]:
        raise DimensionError("gru_step operand shapes inconsistent with parameters")
    r = sigmoid(p.W_r @ x + p.U_r @ h_prev + p.b_r)
    z = sigmoid(p.W_z @ x + p.U_z @ h_prev + p.b_z)
    uh = p.U_h @ h_prev
    h_cand = np.tanh(p.W_h @ x + r * uh + p.b_h)
    h = (1.0 - z) * h_prev + z * h_cand
    cache = {"x": x, "h_prev": h_prev, "r": r, "z": z, "uh": uh, "h_cand": h_cand}
    return h, cache


def gru_step_backward(
    d_h: np.ndarray, cache: dict, p: GruParams, grads: GruParams
) -> Tuple[np.ndarray, np.ndarray]:
    """Accumulates parameter gradients in place; returns (d_x, d_h_prev)."""
    r, z, uh, h_cand = cache["r"], cache["z"], cache["uh"], cache["h_cand"]
    x, h_prev = cache["x"], cache["h_prev"]

    d_z = d_h * (h_cand - h_prev)
    d_cand = d_h * z
    d_h_prev = d_h * (1.0 - z)

    d_ah = d_cand * (1.0 - h_cand * h_cand)
    grads.W_h += np.outer(d_ah, x)
    grads.b_h += d_ah
    d_x = p.W_h.T @ d_ah
    d_r = d_ah * uh
    d_uh = d_ah * r
    grads.U_h += np.outer(d_uh, h_prev)
    d_h_prev = d_h_prev + p.U_h.T @ d_uh

    d_ar = d_r * r * (1.0 - r)
    grads.W_r += np.outer(d_ar, x)
    grads.U_r += np.outer(d_ar, h_prev)
    grads.b_r += d_ar
    d_x += p.W_r.T @ d_ar
    d_h_prev += p.U_r.T @ d_ar

    d_az = d_z * z * (1.0 - z)
    grads.W_z += np.outer(d_az, x)
    grads.U_z += np.outer(d_az, h_prev)
    grads.b_z += d_az
    d_x += p.W_z.T @ d_az
    d_h_prev += p.U_z.T @ d_az

    return d_x, d_h_prev


def _gru_run(
    features: np.ndarray, p: GruParams, reverse: bool
) -> Tuple[np.ndarray, List[dict]]:
    d_h = p.U_r.shape[0]
    steps = features.shape[1]
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    h = np.zeros(d_h)
    out = np.zeros((d_h, steps))
    caches: List[dict] = [None] * steps  # type: ignore[list-item]
    for j in order:
        h, caches[j] = gru_step(features[:, j], h, p)
        out[:, j] = h
    return out, caches


def bigru_forward(
    features: np.ndarray, fwd: GruParams, bwd: GruParams
) -> Tuple[np.ndarray, dict]:
    """Runs both directions over the feature columns (backward direction
    consumes the steps in reverse) and stacks [h_fwd; h_bwd] per step.
    Initial hidden states are zero."""
    if features.shape[1] < 1:
        raise DegenerateInputError("bigru_forward needs at least one step")
    out_f, caches_f = _gru_run(features, fwd, reverse=False)
    out_b, caches_b = _gru_run(features, bwd, reverse=True)
    h = np.concatenate([out_f, out_b], axis=0)
    cache = {"caches_f": caches_f, "caches_b": caches_b, "d_h": fwd.U_r.shape[0]}
    return h, cache


def bigru_backward(
    d_out: np.ndarray,
    cache: Optional[dict],
    fwd: GruParams,
    bwd: GruParams,
    grads_fwd: GruParams,
    grads_bwd: GruParams,
) -> np.ndarray:
    """Backpropagation through time for both directions; returns the
    gradient with respect to the input feature columns."""
    if cache is None:
        raise StateError("bigru_backward called without a forward cache")
    d_h = cache["d_h"]
    steps = d_out.shape[1]
    d_features = np.zeros((fwd.W_r.shape[1], steps))

    carry = np.zeros(d_h)
    for j in range(steps - 1, -1, -1):
        d_x, carry = gru_step_backward(d_out[:d_h, j] + carry, cache["caches_f"][j], fwd, grads_fwd)
        d_features[:, j] += d_x
    carry = np.zeros(d_h)
    for j in range(steps):
        d_x, carry = gru_step_backward(d_out[d_h:, j] + carry, cache["caches_b"][j], bwd, grads_bwd)
        d_features[:, j] += d_x
    return d_features


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def max_pool(h: np.ndarray, valid: int) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise max over the first ``valid`` columns. Ties break toward the
    smallest column index. Returns (pooled, argmax)."""
    if valid < 1 or valid > h.shape[1]:
        raise DegenerateInputError(f"valid step count {valid} out of range for {h.shape[1]} columns")
    window = h[:, :valid]
    argmax = np.argmax(window, axis=1)
    pooled = window[np.arange(h.shape[0]), argmax]
    return pooled, argmax


def max_pool_backward(d_pooled: np.ndarray, argmax: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    d_h = np.zeros(shape)
    d_h[np.arange(shape[0]), argmax] = d_pooled
    return d_h


def attentive_pool(
    h: np.ndarray, v: np.ndarray, valid: int
) -> Tuple[np.ndarray, np.ndarray, dict]:
    """Attention-weighted summary of the first ``valid`` columns:

        alpha = softmax(v . tanh(H))   restricted to valid columns
        pooled = tanh(H alpha)

    Returns (pooled, alpha, cache) with alpha of full width and exact zeros
    at masked positions.
    """
    if valid < 1 or valid > h.shape[1]:
        raise DegenerateInputError(f"valid step count {valid} out of range for {h.shape[1]} columns")
    if v.shape[0] != h.shape[0]:
        raise DimensionError("attention vector length must equal H row count")
    hv = h[:, :valid]
    m = np.tanh(hv)
    scores = v @ m
    alpha_valid = softmax(scores)
    u = hv @ alpha_valid
    pooled = np.tanh(u)
    alpha = np.zeros(h.shape[1])
    alpha[:valid] = alpha_valid
    cache = {"m": m, "alpha": alpha_valid, "pooled": pooled, "valid": valid, "width": h.shape[1]}
    return pooled, alpha, cache


def attentive_pool_backward(
    d_pooled: np.ndarray, cache: Optional[dict], h: np.ndarray, v: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (d_H, d_v); masked columns of d_H are exactly zero."""
    if cache is None:
        raise StateError("attentive_pool_backward called without a forward cache")
    m, alpha, pooled, valid = cache["m"], cache["alpha"], cache["pooled"], cache["valid"]
    hv = h[:, :valid]

    d_u = d_pooled * (1.0 - pooled * pooled)
    d_hv = np.outer(d_u, alpha)
    d_alpha = hv.T @ d_u
    # softmax Jacobian applied to the score gradient
    d_scores = alpha * (d_alpha - float(alpha @ d_alpha))
    d_v = m @ d_scores
    d_m = np.outer(v, d_scores)
    d_hv += d_m * (1.0 - m * m)

    d_h = np.zeros_like(h)
    d_h[:, :valid] = d_hv
    return d_h, d_v


# ---------------------------------------------------------------------------
# classifier head
# ---------------------------------------------------------------------------


def classifier_forward(pooled: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Class confidence scores: softmax(W . pooled)."""
    if weight.shape[1] != pooled.shape[0]:
        raise DimensionError(f"classifier weight cols {weight.shape[1]} != pooled dim {pooled.shape[0]}")
    return softmax(weight @ pooled)
