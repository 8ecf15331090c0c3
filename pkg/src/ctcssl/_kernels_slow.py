"""Pure numpy versions of the compiled kernels (same signatures and results)."""
from __future__ import annotations

import numpy as np


def _extended(target, blank):
    ext = np.full(2 * len(target) + 1, blank, dtype=np.intp)
    ext[1::2] = target
    # skip transition s-2 -> s allowed only onto a label differing from s-2
    skip = np.zeros(len(ext), dtype=bool)
    if len(ext) > 2:
        skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])
    return ext, skip


def _alpha(logp, ext, skip):
    T, S = logp.shape[0], len(ext)
    alpha = np.full((T, S), -np.inf)
    alpha[0, 0] = logp[0, ext[0]]
    if S > 1:
        alpha[0, 1] = logp[0, ext[1]]
    for t in range(1, T):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + logp[t, ext]
    ll = alpha[-1, -1] if S == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    return float(ll), alpha


def ctc_forward(logp, target, blank):
    ext, skip = _extended(np.asarray(target, dtype=np.intp), blank)
    ll, _ = _alpha(np.asarray(logp, dtype=np.float64), ext, skip)
    return ll


def ctc_occupancy(logp, target, blank):
    logp = np.asarray(logp, dtype=np.float64)
    ext, skip = _extended(np.asarray(target, dtype=np.intp), blank)
    T, K = logp.shape
    S = len(ext)
    ll, alpha = _alpha(logp, ext, skip)
    gamma = np.zeros((T, K))
    if ll == -np.inf:
        return ll, gamma
    beta = np.full((T, S), -np.inf)
    beta[-1, -1] = 0.0
    if S > 1:
        beta[-1, -2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + logp[t + 1, ext]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b
    post = alpha + beta - ll
    for k in np.unique(ext):
        cols = post[:, ext == k]
        gamma[:, k] = np.exp(np.logaddexp.reduce(cols, axis=1))
    return ll, gamma


def edit_counts(ref, hyp):
    n, m = len(ref), len(hyp)
    d = np.zeros((n + 1, m + 1), dtype=np.intp)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            d[i, j] = min(
                d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]),
                d[i - 1, j] + 1,
                d[i, j - 1] + 1,
            )
    s = dl = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i, j] == d[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += int(ref[i - 1] != hyp[j - 1])
            i, j = i - 1, j - 1
        elif i > 0 and d[i, j] == d[i - 1, j] + 1:
            dl += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return s, dl, ins
