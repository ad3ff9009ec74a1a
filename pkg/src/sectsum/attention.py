"""Sparse sentence-level attention: sliding window plus global positions.

The mask encodes, per padded position, 0 = padding, 1 = local attention,
2 = local + global.  Local attention is banded (each position sees up to w
neighbors on each side) and computed chunk-wise — w query rows at a time
against a 3w-wide key span — so cost stays O(n·w) and no n×n matrix is ever
materialized.  Global rows recompute their output over all valid positions
through a separate set of projections, and every row may attend *to* the
global columns (symmetric visibility).

Pad positions are excluded with additive -1e9 scores before the softmax, and
pad rows are zeroed after it: a softmax over an all-masked row is uniform
noise, so an explicit validity multiply is required.

A dense O(n²) implementation of the exact same semantics
(:func:`full_attention_reference`) serves as the oracle in tests and as the
quadratic baseline in benchmarks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

NEG_INF = -1e9


@dataclass(frozen=True)
class AttentionMask:
    """Per-document padded attention pattern.

    values[b][i] is 0 for padding, 1 for local-only, 2 for local+global.
    padded_len is always a multiple of the window.
    """

    values: np.ndarray
    doc_lengths: tuple[int, ...]
    window: int
    padded_len: int


def build_attention_mask(
    doc_lengths: list[int],
    window: int,
    global_positions: list[list[int]] | None = None,
    max_sentences: int = 500,
) -> AttentionMask:
    """Build the 0/1/2 mask for a batch of documents.

    padded_len is the smallest multiple of `window` covering
    min(max(doc_lengths), max_sentences); global positions must index real
    sentences of their document.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if not doc_lengths:
        raise ValueError("doc_lengths must be nonempty")
    for b, n in enumerate(doc_lengths):
        if n < 1:
            raise ValueError(f"doc {b}: length must be >= 1, got {n}")
        if n > max_sentences:
            raise ValueError(f"doc {b}: length {n} exceeds max_sentences={max_sentences}")
    target = min(max(doc_lengths), max_sentences)
    padded_len = ((target + window - 1) // window) * window
    values = np.zeros((len(doc_lengths), padded_len), dtype=np.int8)
    for b, n in enumerate(doc_lengths):
        values[b, :n] = 1
    if global_positions is not None:
        if len(global_positions) != len(doc_lengths):
            raise ValueError(
                f"global_positions has {len(global_positions)} entries for "
                f"{len(doc_lengths)} documents"
            )
        for b, positions in enumerate(global_positions):
            for p in positions:
                if not 0 <= p < doc_lengths[b]:
                    raise ValueError(
                        f"doc {b}: global position {p} outside document of length {doc_lengths[b]}"
                    )
                values[b, p] = 2
    return AttentionMask(
        values=values,
        doc_lengths=tuple(int(n) for n in doc_lengths),
        window=window,
        padded_len=padded_len,
    )


def select_global(n: int, ratio_percent: float, policy: str = "stride", seed: int = 0) -> list[int]:
    """Pick k = round(n·ratio/100) global positions, sorted ascending.

    stride: the centers of k equal strides (deterministic, evenly spread);
    random: seeded sample without replacement.
    """
    if not 0 <= ratio_percent <= 100:
        raise ValueError(f"global ratio must be in [0, 100], got {ratio_percent}")
    k = min(n, int(math.floor(n * ratio_percent / 100.0 + 0.5)))
    if k <= 0:
        return []
    if policy == "stride":
        return [int(math.floor((i + 0.5) * n / k)) for i in range(k)]
    if policy == "random":
        rng = np.random.default_rng(seed)
        return sorted(int(x) for x in rng.choice(n, size=k, replace=False))
    raise ValueError(f"unknown global selection policy {policy!r}")


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass
class HeadParams:
    query: ad.Linear
    key: ad.Linear
    value: ad.Linear
    global_query: ad.Linear
    global_key: ad.Linear
    global_value: ad.Linear


@dataclass
class AttentionParams:
    """One transformer layer: per-head projections, output proj, FFN, norms."""

    heads: list[HeadParams]
    output: ad.Linear
    ffn_inner: ad.Linear
    ffn_outer: ad.Linear
    attn_gain: ad.Tensor
    attn_bias: ad.Tensor
    ffn_gain: ad.Tensor
    ffn_bias: ad.Tensor

    @property
    def d_model(self) -> int:
        return self.output.out_features


def init_attention_params(
    rng: np.random.Generator, d_model: int, n_heads: int, ffn_dim: int
) -> AttentionParams:
    if d_model % n_heads != 0:
        raise ValueError(f"heads ({n_heads}) must divide d_model ({d_model})")
    d_head = d_model // n_heads
    heads = [
        HeadParams(
            query=ad.init_linear(rng, d_head, d_model),
            key=ad.init_linear(rng, d_head, d_model),
            value=ad.init_linear(rng, d_head, d_model),
            global_query=ad.init_linear(rng, d_head, d_model),
            global_key=ad.init_linear(rng, d_head, d_model),
            global_value=ad.init_linear(rng, d_head, d_model),
        )
        for _ in range(n_heads)
    ]
    return AttentionParams(
        heads=heads,
        output=ad.init_linear(rng, d_model, d_model),
        ffn_inner=ad.init_linear(rng, ffn_dim, d_model),
        ffn_outer=ad.init_linear(rng, d_model, ffn_dim),
        attn_gain=ad.init_param(rng, (d_model,)),
        attn_bias=ad.init_param(rng, (d_model,)),
        ffn_gain=ad.init_param(rng, (d_model,)),
        ffn_bias=ad.init_param(rng, (d_model,)),
    )


def _check_inputs(x: ad.Tensor, mask: AttentionMask, window: int, params: AttentionParams, heads: int):
    if mask.values.shape[0] != 1:
        raise ad.DimensionError(
            f"attention ops process one document at a time; mask batch is {mask.values.shape[0]}"
        )
    n_pad = mask.padded_len
    if x.shape != (n_pad, params.d_model):
        raise ad.DimensionError(f"input {x.shape} does not match (padded_len={n_pad}, d={params.d_model})")
    if n_pad % window != 0:
        raise ValueError(f"padded length {n_pad} is not a multiple of window {window}")
    if len(params.heads) != heads:
        raise ad.DimensionError(f"params carry {len(params.heads)} heads, caller asked for {heads}")


def _banded_rows(
    q: ad.Tensor,
    k: ad.Tensor,
    v: ad.Tensor,
    mask_vals: np.ndarray,
    window: int,
    global_cols: np.ndarray | None,
) -> ad.Tensor:
    """Chunked band attention for one head: w query rows vs a 3w key span.

    When global_cols is given those columns are removed from the band and
    appended as extra targets for every row (so band ∩ global never double
    counts).  Pad rows come out as zeros.
    """
    n_pad = q.shape[0]
    valid = mask_vals > 0
    band_ok = valid.copy()
    extra = global_cols is not None and global_cols.size > 0
    if extra:
        band_ok[global_cols] = False
        k_glob_cols = ad.gather_rows(k, global_cols)
        v_glob_cols = ad.gather_rows(v, global_cols)

    positions = np.arange(n_pad)
    chunks = []
    for c in range(n_pad // window):
        lo, hi = c * window, (c + 1) * window
        klo, khi = max(0, lo - window), min(n_pad, hi + window)
        span = khi - klo
        in_band = (
            np.abs(positions[lo:hi, None] - positions[None, klo:khi]) <= window
        ) & band_ok[None, klo:khi]
        scores = ad.matmul(ad.narrow(q, 0, lo, window), ad.transpose(ad.narrow(k, 0, klo, span)))
        scores = ad.add(scores, ad.Tensor(np.where(in_band, 0.0, NEG_INF)))
        if extra:
            scores = ad.concat(
                [scores, ad.matmul(ad.narrow(q, 0, lo, window), ad.transpose(k_glob_cols))], axis=1
            )
        probs = ad.softmax(scores, axis=1)
        out = ad.matmul(ad.narrow(probs, 1, 0, span), ad.narrow(v, 0, klo, span))
        if extra:
            out = ad.add(
                out,
                ad.matmul(ad.narrow(probs, 1, span, int(global_cols.size)), v_glob_cols),
            )
        chunks.append(out)
    banded = chunks[0] if len(chunks) == 1 else ad.concat(chunks, axis=0)
    return ad.mul(banded, ad.Tensor(valid.astype(np.float64)[:, None]))


def _head_projections(x: ad.Tensor, head: HeadParams) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    d_head = head.query.out_features
    q = ad.scale(head.query(x), 1.0 / math.sqrt(d_head))
    return q, head.key(x), head.value(x)


def sliding_window_attention(
    x: ad.Tensor, mask: AttentionMask, params: AttentionParams, window: int, heads: int
) -> ad.Tensor:
    """Pure banded local attention (no global handling), output-projected."""
    _check_inputs(x, mask, window, params, heads)
    mask_vals = mask.values[0]
    per_head = []
    for head in params.heads:
        q, k, v = _head_projections(x, head)
        per_head.append(_banded_rows(q, k, v, mask_vals, window, global_cols=None))
    merged = per_head[0] if heads == 1 else ad.concat(per_head, axis=1)
    out = params.output(merged)
    return ad.mul(out, ad.Tensor((mask_vals > 0).astype(np.float64)[:, None]))


def global_attention(x: ad.Tensor, mask: AttentionMask, params: AttentionParams, heads: int) -> ad.Tensor:
    """The full sparse attention: banded local plus symmetric global visibility.

    Non-global rows attend to their band and to every global column; rows
    marked 2 recompute their output over all valid positions via the separate
    global projections.  With no global rows this reduces exactly to
    :func:`sliding_window_attention`.
    """
    _check_inputs(x, mask, mask.window, params, heads)
    mask_vals = mask.values[0]
    n_pad = mask.padded_len
    valid = mask_vals > 0
    glob = np.nonzero(mask_vals == 2)[0]
    d_head = params.heads[0].query.out_features

    per_head = []
    for head in params.heads:
        q, k, v = _head_projections(x, head)
        local_out = _banded_rows(q, k, v, mask_vals, mask.window, global_cols=glob if glob.size else None)
        if glob.size:
            q_glob = ad.scale(head.global_query(ad.gather_rows(x, glob)), 1.0 / math.sqrt(d_head))
            k_glob = head.global_key(x)
            v_glob = head.global_value(x)
            scores = ad.matmul(q_glob, ad.transpose(k_glob))
            scores = ad.add(scores, ad.Tensor(np.where(valid, 0.0, NEG_INF)[None, :]))
            glob_out = ad.matmul(ad.softmax(scores, axis=1), v_glob)
            keep_local = (valid & (mask_vals != 2)).astype(np.float64)[:, None]
            combined = ad.add(
                ad.mul(local_out, ad.Tensor(keep_local)),
                ad.scatter_rows(glob_out, glob, n_pad),
            )
        else:
            combined = local_out
        per_head.append(combined)
    merged = per_head[0] if heads == 1 else ad.concat(per_head, axis=1)
    out = params.output(merged)
    return ad.mul(out, ad.Tensor(valid.astype(np.float64)[:, None]))


def transformer_layer(h_prev: ad.Tensor, mask: AttentionMask, params: AttentionParams) -> ad.Tensor:
    """One layer, keeping the residual-of-normalized-sublayer order:

    h~ = h_prev + LayerNorm(SparseAttention(h_prev))
    h  = h~ + LayerNorm(FFN(h~)),  FFN = Linear → ReLU → Linear
    """
    attn = global_attention(h_prev, mask, params, len(params.heads))
    h_mid = ad.add(h_prev, ad.layer_norm(attn, params.attn_gain, params.attn_bias))
    ff = params.ffn_outer(ad.relu(params.ffn_inner(h_mid)))
    return ad.add(h_mid, ad.layer_norm(ff, params.ffn_gain, params.ffn_bias))


def full_attention_reference(
    x: ad.Tensor, mask: AttentionMask, params: AttentionParams, heads: int
) -> ad.Tensor:
    """Dense O(n²) attention with identical semantics; oracle/baseline only."""
    _check_inputs(x, mask, mask.window, params, heads)
    mask_vals = mask.values[0]
    n_pad = mask.padded_len
    valid = mask_vals > 0
    glob_flags = mask_vals == 2
    glob = np.nonzero(glob_flags)[0]
    d_head = params.heads[0].query.out_features

    positions = np.arange(n_pad)
    in_band = np.abs(positions[:, None] - positions[None, :]) <= mask.window
    # local rows: banded valid non-global targets, plus every global column
    local_allowed = (in_band & valid[None, :] & ~glob_flags[None, :]) | glob_flags[None, :]
    local_additive = np.where(local_allowed, 0.0, NEG_INF)

    per_head = []
    for head in params.heads:
        q, k, v = _head_projections(x, head)
        scores = ad.add(ad.matmul(q, ad.transpose(k)), ad.Tensor(local_additive))
        local_out = ad.matmul(ad.softmax(scores, axis=1), v)
        local_out = ad.mul(local_out, ad.Tensor(valid.astype(np.float64)[:, None]))
        if glob.size:
            q_glob = ad.scale(head.global_query(ad.gather_rows(x, glob)), 1.0 / math.sqrt(d_head))
            g_scores = ad.matmul(q_glob, ad.transpose(head.global_key(x)))
            g_scores = ad.add(g_scores, ad.Tensor(np.where(valid, 0.0, NEG_INF)[None, :]))
            glob_out = ad.matmul(ad.softmax(g_scores, axis=1), head.global_value(x))
            keep_local = (valid & ~glob_flags).astype(np.float64)[:, None]
            combined = ad.add(
                ad.mul(local_out, ad.Tensor(keep_local)),
                ad.scatter_rows(glob_out, glob, n_pad),
            )
        else:
            combined = local_out
        per_head.append(combined)
    merged = per_head[0] if heads == 1 else ad.concat(per_head, axis=1)
    out = params.output(merged)
    return ad.mul(out, ad.Tensor(valid.astype(np.float64)[:, None]))
