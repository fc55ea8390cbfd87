"""Brute-force reference implementations used by the unit and acceptance tests.

Everything here is written per token / per pixel with plain numpy in float64,
independently of the library's vectorised code paths.
"""

import math

import numpy as np


def window_neighbours(h, w, size, shift):
    """For every padded-frame position, its original (y, x) and the set of allowed keys.

    Positions live in the rolled, padded frame. Two positions may attend to
    each other iff they share a window and neither axis wraps between them
    (their pre-roll coordinates were contiguous). Valid queries never see
    padded keys.
    """
    hp, wp = h + (-h % size), w + (-w % size)
    pos = [(py, px) for py in range(hp) for px in range(wp)]

    def info(py, px):
        oy, ox = (py + shift) % hp, (px + shift) % wp
        wrapped = ((py + shift) >= hp, (px + shift) >= wp)
        return oy, ox, (py // size, px // size), wrapped, oy < h and ox < w

    table = {p: info(*p) for p in pos}
    allowed = {}
    for q in pos:
        oy, ox, win, wr, valid = table[q]
        if not valid:
            continue
        keys = [
            k
            for k in pos
            if table[k][2] == win and table[k][3] == wr and table[k][4]
        ]
        allowed[(oy, ox)] = (q, keys, table)
    return allowed


def dense_window_attention(x, size, shift, heads, wq, bq, wk, bk, wv, bv, wp, bp, rel_table, cosine=False, tau=1.0, qbias=None):
    """Reference for one window-attention sublayer on (B, H, W, C) tokens.

    ``cosine`` selects cosine-similarity logits divided by ``tau`` (with the
    optional additive ``qbias`` on the query) instead of scaled dot products.
    Returns (B, H, W, C) outputs and a dict of attention rows keyed by
    (b, y, x, head) mapping key coordinates to weights.
    """
    x = np.asarray(x, dtype=np.float64)
    B, H, W, C = x.shape
    d = C // heads
    allowed = window_neighbours(H, W, size, shift)
    out = np.zeros_like(x)
    rows = {}
    tsize = int(round((math.sqrt(rel_table.shape[0]) + 1) / 2))
    for b in range(B):
        for (oy, ox), (q, keys, table) in allowed.items():
            xi = x[b, oy, ox]
            qi = xi @ wq + (bq if bq is not None else 0)
            if qbias is not None:
                qi = qi + qbias
            heads_out = []
            for h in range(heads):
                sl = slice(h * d, (h + 1) * d)
                logits, vals, coords = [], [], []
                for k in keys:
                    ky, kx = table[k][0], table[k][1]
                    xj = x[b, ky, kx]
                    kj = xj @ wk + (bk if bk is not None else 0)
                    vj = xj @ wv + (bv if bv is not None else 0)
                    if cosine:
                        a, c = qi[sl], kj[sl]
                        s = (a / (np.linalg.norm(a) + 1e-8)) @ (c / (np.linalg.norm(c) + 1e-8)) / max(tau, 0.01)
                    else:
                        s = qi[sl] @ kj[sl] / math.sqrt(d)
                    dy = (q[0] % size) - (k[0] % size)
                    dx = (q[1] % size) - (k[1] % size)
                    s += rel_table[(dy + tsize - 1) * (2 * tsize - 1) + (dx + tsize - 1), h]
                    logits.append(s)
                    vals.append(vj[sl])
                    coords.append((ky, kx))
                logits = np.array(logits)
                wts = np.exp(logits - logits.max())
                wts /= wts.sum()
                rows[(b, oy, ox, h)] = dict(zip(coords, wts))
                heads_out.append(wts @ np.array(vals))
            out[b, oy, ox] = np.concatenate(heads_out) @ wp + bp
    return out, rows


def metrics_loop(pred, gt, mask, lo, hi):
    """Per-pixel accumulation of the seven depth metrics after clamping to [lo, hi]."""
    n = 0
    abs_rel = sq_rel = se = sle = 0.0
    hits = [0, 0, 0]
    for p, g, m in zip(np.ravel(pred), np.ravel(gt), np.ravel(mask)):
        if not m:
            continue
        p = min(max(float(p), lo), hi)
        g = min(max(float(g), lo), hi)
        n += 1
        abs_rel += abs(p - g) / g
        sq_rel += (p - g) ** 2 / g
        se += (p - g) ** 2
        sle += (math.log(p) - math.log(g)) ** 2
        r = max(p / g, g / p)
        for k in range(3):
            if r < 1.25 ** (k + 1):
                hits[k] += 1
    return dict(
        abs_rel=abs_rel / n,
        sq_rel=sq_rel / n,
        rmse=math.sqrt(se / n),
        log_rmse=math.sqrt(sle / n),
        d1=hits[0] / n,
        d2=hits[1] / n,
        d3=hits[2] / n,
        k=n,
    )


def silog_loop(pred, gt, mask, lam=0.85, alpha=10.0):
    ds = [math.log(p) - math.log(g) for p, g, m in zip(np.ravel(pred), np.ravel(gt), np.ravel(mask)) if m]
    k = len(ds)
    s1 = sum(ds)
    s2 = sum(v * v for v in ds)
    return alpha * math.sqrt(max(s2 / k - lam * s1 * s1 / (k * k), 0.0))


def crf_energy_loop(y, unary, weights, window):
    """Double sum over ordered pixel pairs sharing a window."""
    H, W = y.shape
    total = float(np.sum(unary * y))
    pair = 0.0
    nw = W // window
    for wy in range(H // window):
        for wx in range(nw):
            cells = [(wy * window + i, wx * window + j) for i in range(window) for j in range(window)]
            w = weights[wy * nw + wx]
            for a, (ya, xa) in enumerate(cells):
                for b, (yb, xb) in enumerate(cells):
                    pair += w[a, b] * abs(y[ya, xa] - y[yb, xb])
    return total, pair
