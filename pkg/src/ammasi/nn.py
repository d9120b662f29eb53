"""Differentiable building blocks in numpy with hand-written backward passes.

Parameters are plain dicts of float64 arrays so the optimizer and the
finite-difference checker can treat every model uniformly. A two-stack FC
block is ``{"w1", "b1", "w2", "b2"}``; giving the weights a leading head
axis (``w1`` of shape ``(K, n_in, hidden)``) evaluates K independent blocks
on the same input.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

log = logging.getLogger(__name__)

MASK_FILL = -1e30
MASK_DIRECTIONS = ("below", "above")


def elu(z: np.ndarray) -> np.ndarray:
    # max(z, 0) + expm1(min(z, 0)) equals the usual branch form exactly and
    # avoids a select.
    return np.maximum(z, 0.0) + np.expm1(np.minimum(z, 0.0))


def elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_fc2(rng: np.random.Generator, n_in: int, n_hidden: int, n_out: int, heads: int | None = None,
             out_bias: bool = True) -> dict:
    lead = () if heads is None else (heads,)
    p = {
        "w1": glorot(rng, n_in, n_hidden, lead + (n_in, n_hidden)),
        "b1": np.zeros(lead + (n_hidden,)),
        "w2": glorot(rng, n_hidden, n_out, lead + (n_hidden, n_out)),
    }
    if out_bias:
        p["b2"] = np.zeros(lead + (n_out,))
    return p


def _check_width(x: np.ndarray, w1: np.ndarray) -> None:
    if x.shape[-1] != w1.shape[-2]:
        raise ValueError(f"input width {x.shape[-1]} does not match layer width {w1.shape[-2]}")


def fc2_forward(x: np.ndarray, p: Mapping[str, np.ndarray]) -> tuple:
    """``elu(x @ w1 + b1) @ w2 + b2``; returns ``(out, cache)``.

    With head-stacked weights the output gains a head axis just before the
    feature axis: ``(..., n_in) -> (..., K, n_out)``. ``b2`` is optional.
    """
    w1, b1, w2 = p["w1"], p["b1"], p["w2"]
    _check_width(x, w1)
    if w1.ndim == 2:
        h = x @ w1 + b1
        a = elu(h)
        out = a @ w2
    else:
        k, n_in, hid = w1.shape
        lead = x.shape[:-1]
        h = (x.reshape(-1, n_in) @ w1.transpose(1, 0, 2).reshape(n_in, k * hid)).reshape(*lead, k, hid) + b1
        a = elu(h)
        out = np.matmul(a.reshape(-1, k, hid).transpose(1, 0, 2), w2).transpose(1, 0, 2)
        out = out.reshape(*lead, k, w2.shape[-1])
    if "b2" in p:
        out = out + p["b2"]
    return out, (x, h, a)


def fc2_backward(dout: np.ndarray, cache: tuple, p: Mapping[str, np.ndarray]) -> tuple:
    """Returns ``(dx, grads)`` for an :func:`fc2_forward` call."""
    x, h, a = cache
    w1, w2 = p["w1"], p["w2"]
    if w1.ndim == 2:
        a2 = a.reshape(-1, a.shape[-1])
        d2 = dout.reshape(-1, dout.shape[-1])
        gw2 = a2.T @ d2
        gb2 = d2.sum(axis=0)
        dh = (dout @ w2.T) * elu_grad(h)
        dh2 = dh.reshape(-1, dh.shape[-1])
        gw1 = x.reshape(-1, x.shape[-1]).T @ dh2
        gb1 = dh2.sum(axis=0)
        dx = dh @ w1.T
    else:
        k, n_in, hid = w1.shape
        a2 = a.reshape(-1, k, hid).transpose(1, 0, 2)
        d2 = dout.reshape(-1, k, dout.shape[-1]).transpose(1, 0, 2)
        gw2 = np.matmul(a2.transpose(0, 2, 1), d2)
        gb2 = d2.sum(axis=1)
        dh = np.matmul(d2, w2.transpose(0, 2, 1)).transpose(1, 0, 2) * elu_grad(h.reshape(-1, k, hid))
        dh2 = dh.reshape(-1, k * hid)
        x2 = x.reshape(-1, n_in)
        gw1 = (x2.T @ dh2).reshape(n_in, k, hid).transpose(1, 0, 2)
        gb1 = dh.sum(axis=0)
        dx = (dh2 @ w1.transpose(1, 0, 2).reshape(n_in, k * hid).T).reshape(x.shape)
    grads = {"w1": gw1, "b1": gb1, "w2": gw2}
    if "b2" in p:
        grads["b2"] = gb2
    return dx, grads


def init_mha(rng: np.random.Generator, n_query: int, n_ref: int, heads: int, head_dim: int) -> dict:
    """Independent per-head two-stack FCs for query, key and value.

    The key block has no output bias: a per-head constant added to every key
    shifts all logits of a query equally and cancels in the softmax.
    """
    return {
        "q": init_fc2(rng, n_query, head_dim, head_dim, heads),
        "k": init_fc2(rng, n_ref, head_dim, head_dim, heads, out_bias=False),
        "v": init_fc2(rng, n_ref, head_dim, head_dim, heads),
    }


def distance_mask(dists: np.ndarray, sigma: float, direction: str = "below") -> np.ndarray:
    """True where a reference is masked out.

    ``below`` masks references closer than ``sigma``; ``above`` masks those
    farther than ``sigma``.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    dists = np.asarray(dists, dtype=float)
    if direction == "below":
        return dists < sigma
    if direction == "above":
        return dists > sigma
    raise ValueError(f"unknown mask direction {direction!r}")


def attention_forward(query_x: np.ndarray, ref_x: np.ndarray, masked: np.ndarray, p: Mapping) -> tuple:
    """Batched masked multi-head attention.

    Shapes: ``query_x (B, Fq)``, ``ref_x (B, N, Fr)``, ``masked (B, N)``.
    Returns ``(out (B, K*d), cache)``. Rows whose references are all masked
    attend over every reference instead; ``cache["fallback"]`` flags them.
    """
    if ref_x.shape[1] == 0:
        raise ValueError("no reference houses")
    q, cq = fc2_forward(query_x, p["q"])
    k, ck = fc2_forward(ref_x, p["k"])
    v, cv = fc2_forward(ref_x, p["v"])
    batch, heads, d = q.shape
    fallback = masked.all(axis=1)
    effective = masked & ~fallback[:, None]
    scale = 1.0 / math.sqrt(d)
    logits = np.einsum("bkd,bnkd->bkn", q, k) * scale
    logits = logits + np.where(effective, MASK_FILL, 0.0)[:, None, :]
    logits = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(logits)
    s = e / e.sum(axis=-1, keepdims=True)
    o = np.einsum("bkn,bnkd->bkd", s, v)
    cache = {"q": q, "k": k, "v": v, "s": s, "cq": cq, "ck": ck, "cv": cv,
             "scale": scale, "fallback": fallback}
    return o.reshape(batch, heads * d), cache


def attention_backward(dout: np.ndarray, cache: dict, p: Mapping) -> tuple:
    """Returns ``(d_query_x, d_ref_x, grads)``."""
    q, k, v, s = cache["q"], cache["k"], cache["v"], cache["s"]
    do = dout.reshape(q.shape)
    ds = np.einsum("bkd,bnkd->bkn", do, v)
    dv = np.einsum("bkn,bkd->bnkd", s, do)
    dlogits = s * (ds - np.sum(s * ds, axis=-1, keepdims=True))
    dq = np.einsum("bkn,bnkd->bkd", dlogits, k) * cache["scale"]
    dk = np.einsum("bkn,bkd->bnkd", dlogits, q) * cache["scale"]
    dxq, gq = fc2_backward(dq, cache["cq"], p["q"])
    dxk, gk = fc2_backward(dk, cache["ck"], p["k"])
    dxv, gv = fc2_backward(dv, cache["cv"], p["v"])
    return dxq, dxk + dxv, {"q": gq, "k": gk, "v": gv}


@dataclass
class AttentionResult:
    output: np.ndarray
    weights: np.ndarray
    fallback: bool


def masked_mha(query_feat, ref_feats, dists, sigma: float, p: Mapping, mask_direction: str = "below") -> AttentionResult:
    """Masked multi-head attention for one target house.

    ``output`` is ``(1, K*d)``; ``weights`` holds the ``(K, N)`` attention
    scores. ``fallback`` is set when every reference was masked and the
    mask was dropped for this query.
    """
    ref_feats = np.atleast_2d(np.asarray(ref_feats, dtype=float))
    dists = np.asarray(dists, dtype=float).ravel()
    if len(ref_feats) == 0:
        raise ValueError("no reference houses")
    if len(dists) != len(ref_feats):
        raise ValueError(f"{len(dists)} distances for {len(ref_feats)} references")
    masked = distance_mask(dists, sigma, mask_direction)
    out, cache = attention_forward(
        np.asarray(query_feat, dtype=float).reshape(1, -1), ref_feats[None], masked[None], p
    )
    fallback = bool(cache["fallback"][0])
    if fallback:
        log.warning("all %d references masked; attending over all of them", len(dists))
    return AttentionResult(out, cache["s"][0], fallback)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def flatten_params(params: Mapping, prefix: str = "") -> dict:
    """Nested parameter dicts to a flat ``{"a.b.w1": array}`` view (arrays shared)."""
    flat = {}
    for key, val in params.items():
        name = f"{prefix}{key}"
        if isinstance(val, Mapping):
            flat.update(flatten_params(val, name + "."))
        else:
            flat[name] = val
    return flat


def adam_step(params: Mapping, grads: Mapping, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    flat_p = flatten_params(params)
    flat_g = flatten_params(grads)
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in flat_p.items():
        g = flat_g[name]
        if p.shape != g.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def grad_check(f: Callable, params: Mapping, h: float = 1e-5, per_tensor: bool = False,
               value_fn: Callable | None = None):
    """Compare analytic gradients with central differences.

    ``f(params)`` must return ``(value, grads)`` with ``grads`` shaped like
    ``params``; ``value_fn(params)``, if given, returns the value alone and
    is used for the perturbed evaluations. Relative error per coordinate is
    ``|a - n| / max(1e-8, |a| + |n|)``; the maximum is returned, or a dict
    of per-tensor maxima when ``per_tensor`` is set.
    """
    value, grads = f(params)
    if value_fn is None:
        value_fn = lambda q: f(q)[0]
    if not np.isfinite(value):
        raise ValueError("function value is not finite")
    flat_p = flatten_params(params)
    flat_g = flatten_params(grads)
    report = {}
    for name, p in flat_p.items():
        analytic = np.asarray(flat_g[name], dtype=float)
        worst = 0.0
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = p[ix]
            p[ix] = orig + h
            f_plus = value_fn(params)
            p[ix] = orig - h
            f_minus = value_fn(params)
            p[ix] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise ValueError(f"function value is not finite near {name}{list(ix)}")
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[ix]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
        report[name] = worst
    if per_tensor:
        return report
    return max(report.values()) if report else 0.0
