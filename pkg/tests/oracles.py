"""Slow, independent reference implementations used as test oracles.

Everything here works on plain Python floats or numpy float64 with explicit
loops, so it shares no code path with the vectorized library versions.
"""

from __future__ import annotations

import math

import numpy as np


# -- contrastive losses ---------------------------------------------------

def _unit(v):
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v] if n > 0 else list(v)


def _dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def _log_softmax_at(anchor, candidates, target, tau):
    """log( exp(a.target/tau) / sum_c exp(a.c/tau) ) with a max shift for range safety."""
    logits = [_dot(anchor, c) / tau for c in candidates]
    m = max(logits)
    denom = sum(math.exp(v - m) for v in logits)
    return _dot(anchor, target) / tau - m - math.log(denom)


def interaction_loss(Z, R, valid, tau, same, normalize=True):
    """Sum over valid anchors of the mean negative log-probability of their positives.

    ``same(anchor, candidate)`` decides positives; ``anchor``/``candidate`` are
    ``(b, t)`` index pairs. Anchors with no positive are skipped.
    """
    B, L = len(Z), len(Z[0])
    cells = [(b, t) for b in range(B) for t in range(L) if valid[b][t]]
    z = {c: (_unit(Z[c[0]][c[1]]) if normalize else list(Z[c[0]][c[1]])) for c in cells}
    r = {c: (_unit(R[c[0]][c[1]]) if normalize else list(R[c[0]][c[1]])) for c in cells}
    total = 0.0
    for a in cells:
        gamma = [c for c in cells if c != a]
        pos = [c for c in gamma if same(a, c)]
        if not pos:
            continue
        cand = [r[c] for c in gamma]
        total += -sum(_log_softmax_at(z[a], cand, r[p], tau) for p in pos) / len(pos)
    return total


def milcpc_oracle(Z, R, valid, tau, normalize=True, future_only=False):
    def same(a, c):
        return a[0] == c[0] and (not future_only or c[1] > a[1])
    return interaction_loss(Z, R, valid, tau, same, normalize)


def supcpc_oracle(Z, R, labels, valid, tau, normalize=True):
    return interaction_loss(Z, R, valid, tau, lambda a, c: labels[a[0]][a[1]] == labels[c[0]][c[1]], normalize)


def c_supcpc_oracle(Z, R, labels, items, valid, tau, normalize=True):
    def same(a, c):
        return labels[a[0]][a[1]] == labels[c[0]][c[1]] and items[a[0]][a[1]] == items[c[0]][c[1]]
    return interaction_loss(Z, R, valid, tau, same, normalize)


def concat_infonce_oracle(views, tau, normalize=True):
    """``views[i] = (view_a, view_b)`` for user i; every one of the 2N embeddings is an anchor."""
    emb = []
    for i, (a, b) in enumerate(views):
        emb.append((i, _unit(a) if normalize else list(a)))
        emb.append((i, _unit(b) if normalize else list(b)))
    total = 0.0
    for k, (user, e) in enumerate(emb):
        others = [j for j in range(len(emb)) if j != k]
        partner = next(emb[j][1] for j in others if emb[j][0] == user)
        total += -_log_softmax_at(e, [emb[j][1] for j in others], partner, tau)
    return total


def concat_supcontrast_oracle(views, labels, tau, normalize=True):
    emb = []
    for i, (a, b) in enumerate(views):
        emb.append((labels[i], _unit(a) if normalize else list(a)))
        emb.append((labels[i], _unit(b) if normalize else list(b)))
    total = 0.0
    for k, (y, e) in enumerate(emb):
        others = [x for j, x in enumerate(emb) if j != k]
        pos = [x for j, x in enumerate(emb) if j != k and emb[j][0] == y]
        if not pos:
            continue
        total += -sum(_log_softmax_at(e, [x[1] for x in others], p[1], tau) for p in pos) / len(pos)
    return total


def bce_oracle(probs, labels, mask):
    terms = []
    for p, y, m in zip(probs, labels, mask):
        if not m or y < 0:
            continue
        p = min(max(p, 1e-7), 1 - 1e-7)
        terms.append(-(y * math.log(p) + (1 - y) * math.log(1 - p)))
    return sum(terms) / len(terms)


# -- encoders -------------------------------------------------------------

def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def lstm_oracle(x, w_ih, w_hh, b_ih, b_hh):
    """Single-layer LSTM, one scalar at a time. Gate row blocks are ordered input, forget, cell, output."""
    H = len(w_hh[0])
    h = [0.0] * H
    c = [0.0] * H
    out = []
    for xt in x:
        pre = [sum(w_ih[r][k] * xt[k] for k in range(len(xt))) + sum(w_hh[r][k] * h[k] for k in range(H))
               + b_ih[r] + b_hh[r] for r in range(4 * H)]
        new_h, new_c = [], []
        for j in range(H):
            i_g = _sig(pre[j])
            f_g = _sig(pre[H + j])
            g_g = math.tanh(pre[2 * H + j])
            o_g = _sig(pre[3 * H + j])
            cj = f_g * c[j] + i_g * g_g
            new_c.append(cj)
            new_h.append(o_g * math.tanh(cj))
        h, c = new_h, new_c
        out.append(list(h))
    return out


def _layer_norm(v, w, b, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    return [(x - mu) / math.sqrt(var + eps) * wi + bi for x, wi, bi in zip(v, w, b)]


def _linear(W, b, v):
    return [sum(W[r][k] * v[k] for k in range(len(v))) + b[r] for r in range(len(W))]


def transformer_layer_oracle(x, valid, p, heads, causal):
    """Post-norm attention + ReLU feedforward layer, attention computed pair by pair.

    ``p`` maps names (q_w, q_b, k_w, ..., ff1_w, norm1_w, ...) to nested lists.
    Queries with no visible key get a zero attention output.
    """
    L, D = len(x), len(x[0])
    dh = D // heads
    q = [_linear(p["q_w"], p["q_b"], v) for v in x]
    k = [_linear(p["k_w"], p["k_b"], v) for v in x]
    val = [_linear(p["v_w"], p["v_b"], v) for v in x]
    out = []
    for t in range(L):
        mixed = [0.0] * D
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            keys = [s for s in range(L) if valid[s] and (not causal or s <= t)]
            if not keys:
                continue
            scores = [sum(a * b for a, b in zip(q[t][sl], k[s][sl])) / math.sqrt(dh) for s in keys]
            m = max(scores)
            w = [math.exp(sc - m) for sc in scores]
            z = sum(w)
            for s, ws in zip(keys, w):
                for d in range(h * dh, (h + 1) * dh):
                    mixed[d] += ws / z * val[s][d]
        a = _linear(p["o_w"], p["o_b"], mixed)
        y = _layer_norm([xi + ai for xi, ai in zip(x[t], a)], p["norm1_w"], p["norm1_b"])
        f = [max(0.0, v) for v in _linear(p["ff1_w"], p["ff1_b"], y)]
        f = _linear(p["ff2_w"], p["ff2_b"], f)
        out.append(_layer_norm([yi + fi for yi, fi in zip(y, f)], p["norm2_w"], p["norm2_b"]))
    return out


def conv1d_same_oracle(x, w, b):
    """``x`` is (C_in, L); ``w`` is (C_out, C_in, K) with zero padding K // 2 on both sides."""
    C_in, L = len(x), len(x[0])
    C_out, K = len(w), len(w[0][0])
    pad = K // 2
    out = [[0.0] * L for _ in range(C_out)]
    for o in range(C_out):
        for t in range(L):
            s = b[o]
            for c in range(C_in):
                for j in range(K):
                    u = t + j - pad
                    if 0 <= u < L:
                        s += w[o][c][j] * x[c][u]
            out[o][t] = s
    return out


# -- optimizer ------------------------------------------------------------

def radam_quadratic_oracle(w0, lr, steps, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """Trajectory of RAdam on f(w) = w**2, written directly from the published recurrence."""
    rho_inf = 2.0 / (1.0 - beta2) - 1.0
    w, m, v = w0, 0.0, 0.0
    path = []
    for t in range(1, steps + 1):
        g = 2.0 * w
        w = w * (1.0 - lr * weight_decay)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        rho_t = rho_inf - 2.0 * t * beta2 ** t / (1.0 - beta2 ** t)
        if rho_t > 4.0:
            v_hat = math.sqrt(v / (1.0 - beta2 ** t))
            r_t = math.sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
            w = w - lr * r_t * m_hat / (v_hat + eps)
        else:
            w = w - lr * m_hat
        path.append(w)
    return path


# -- metrics --------------------------------------------------------------

def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    hits = 0.0
    for p in pos:
        for n in neg:
            hits += 1.0 if p > n else 0.5 if p == n else 0.0
    return hits / (len(pos) * len(neg))


def random_instance(rng: np.random.Generator, B: int, L: int, d: int):
    """Random Z, R, labels, items and a valid prefix mask (at least one valid position per row)."""
    Z = rng.normal(size=(B, L, d))
    R = rng.normal(size=(B, L, d))
    lengths = rng.integers(1, L + 1, size=B)
    valid = np.arange(L)[None, :] < lengths[:, None]
    labels = rng.integers(0, 2, size=(B, L))
    items = rng.integers(0, 3, size=(B, L))
    return Z, R, labels, items, valid
