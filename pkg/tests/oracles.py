"""Slow reference implementations used to cross-check the fast paths.

Everything here runs plain Python loops over numpy scalars in float64. The
point is independence: none of these call into the package, so agreement is
evidence rather than tautology.
"""

import math

import numpy as np


def conv2d_ref(x, w, b=None, stride=1, pad=0):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, cin, h, wd = x.shape
    cout, cin_w, k, _ = w.shape
    assert cin == cin_w
    xp = np.zeros((n, cin, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for ni in range(n):
        for co in range(cout):
            for oi in range(oh):
                for oj in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for ki in range(k):
                            for kj in range(k):
                                acc += (xp[ni, ci, oi * stride + ki,
                                           oj * stride + kj]
                                        * w[co, ci, ki, kj])
                    if b is not None:
                        acc += float(b[0, co, 0, 0])
                    out[ni, co, oi, oj] = acc
    return out


def conv_transpose2d_ref(x, w, b=None, stride=2):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, cin, h, wd = x.shape
    cin_w, cout, k, _ = w.shape
    assert cin == cin_w
    oh = (h - 1) * stride + k
    ow = (wd - 1) * stride + k
    out = np.zeros((n, cout, oh, ow))
    for ni in range(n):
        for ci in range(cin):
            for ii in range(h):
                for jj in range(wd):
                    v = x[ni, ci, ii, jj]
                    for co in range(cout):
                        for ki in range(k):
                            for kj in range(k):
                                out[ni, co, ii * stride + ki,
                                    jj * stride + kj] += v * w[ci, co, ki, kj]
    if b is not None:
        for co in range(cout):
            out[:, co] += float(b[0, co, 0, 0])
    return out


def maxpool2d_ref(x, window=2):
    x = np.asarray(x, dtype=np.float64)
    n, c, h, w = x.shape
    oh, ow = h // window, w // window
    out = np.zeros((n, c, oh, ow))
    for ni in range(n):
        for ci in range(c):
            for oi in range(oh):
                for oj in range(ow):
                    best = -math.inf
                    for ki in range(window):
                        for kj in range(window):
                            v = x[ni, ci, oi * window + ki, oj * window + kj]
                            if v > best:
                                best = v
                    out[ni, ci, oi, oj] = best
    return out


def _sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def channel_attention_ref(f, w1, b1, w2, b2):
    """Gate per (image, channel): sigmoid(mlp(spatial mean) + mlp(spatial max))."""
    f = np.asarray(f, dtype=np.float64)
    n, c, h, w = f.shape
    hidden = w1.shape[0]

    def mlp(vec):
        hid = []
        for j in range(hidden):
            acc = float(b1[0, j, 0, 0])
            for i in range(c):
                acc += float(w1[j, i, 0, 0]) * vec[i]
            hid.append(max(acc, 0.0))
        out = []
        for i in range(c):
            acc = float(b2[0, i, 0, 0])
            for j in range(hidden):
                acc += float(w2[i, j, 0, 0]) * hid[j]
            out.append(acc)
        return out

    gate = np.zeros((n, c, 1, 1))
    for ni in range(n):
        avg = [float(f[ni, ci].mean()) for ci in range(c)]
        mx = [float(f[ni, ci].max()) for ci in range(c)]
        a, m = mlp(avg), mlp(mx)
        for ci in range(c):
            gate[ni, ci, 0, 0] = _sigmoid(a[ci] + m[ci])
    return gate


def spatial_attention_ref(f, w, b):
    """Gate per pixel: sigmoid(conv7x7 over [channel mean, channel max]))."""
    f = np.asarray(f, dtype=np.float64)
    n, c, h, wd = f.shape
    k = w.shape[2]
    pad = (k - 1) // 2
    stats = np.zeros((n, 2, h, wd))
    for ni in range(n):
        for i in range(h):
            for j in range(wd):
                col = [float(f[ni, ci, i, j]) for ci in range(c)]
                stats[ni, 0, i, j] = sum(col) / c
                stats[ni, 1, i, j] = max(col)
    conv = conv2d_ref(stats, w, b, stride=1, pad=pad)
    out = np.zeros_like(conv)
    for ni in range(n):
        for i in range(h):
            for j in range(wd):
                out[ni, 0, i, j] = _sigmoid(conv[ni, 0, i, j])
    return out


def rdab_ref(f, convs, lff, ca=None, sa=None):
    """Literal block execution: dense conv+relu stack, 1x1 fusion, optional
    channel/spatial gating, residual sum of all stages.

    ``convs`` is a list of (w, b); ``lff`` is (w, b); ``ca`` is
    (w1, b1, w2, b2); ``sa`` is (w, b).
    """
    f = np.asarray(f, dtype=np.float64)
    feats = [f]
    for w, b in convs:
        x = feats[0] if len(feats) == 1 else np.concatenate(feats, axis=1)
        feats.append(np.maximum(conv2d_ref(x, w, b, pad=1), 0.0))
    f_int = conv2d_ref(np.concatenate(feats, axis=1), lff[0], lff[1])
    if ca is None:
        return f + f_int
    gate_c = channel_attention_ref(f_int, *ca)
    f_ca = f_int * gate_c
    gate_s = spatial_attention_ref(f_ca, *sa)
    f_sa = f_ca * gate_s
    return f + f_int + f_ca + f_sa


def mrae_ref(pred, gt, eps=1e-6):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    total = 0.0
    count = 0
    for p, g in zip(pred.ravel(), gt.ravel()):
        total += abs(float(p) - float(g)) / (float(g) + eps)
        count += 1
    return total / count


def rmse_ref(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    total = 0.0
    count = 0
    for p, g in zip(pred.ravel(), gt.ravel()):
        total += (float(p) - float(g)) ** 2
        count += 1
    return math.sqrt(total / count)


def project_rgb_ref(cube, matrix):
    cube = np.asarray(cube, dtype=np.float64)
    matrix = np.asarray(matrix, dtype=np.float64)
    bands, h, w = cube.shape
    out = np.zeros((3, h, w))
    for r in range(3):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for bi in range(bands):
                    acc += matrix[r, bi] * cube[bi, i, j]
                out[r, i, j] = acc
    return out
