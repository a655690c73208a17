"""Compiled inner loops for split search, routing and tree SHAP.

Rows take part in a split search through ``slot``: ``slot[r]`` is the index
of the frontier node holding row ``r`` or -1 when the row is inactive.
``order`` is the per-feature argsort of X, shape (n_features, n_rows).
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Gains within this relative distance count as ties (lowest feature, then
# lowest threshold wins).
TIE_RTOL = 1e-12


@njit(cache=True)
def _term(gs, hs, lam):
    d = hs + lam
    if d > 0.0:
        return gs * gs / d
    return 0.0


@njit(cache=True)
def split_gain(gl, hl, g, h, lam):
    """Structural score of a split, without the per-leaf penalty."""
    return 0.5 * (_term(gl, hl, lam) + _term(g - gl, h - hl, lam) - _term(g, h, lam))


@njit(cache=True)
def _beats(gain, best, have_best):
    if not have_best:
        return True
    return gain > best + TIE_RTOL * max(1.0, abs(best))


@njit(cache=True)
def _midpoint(a, b):
    t = a + (b - a) * 0.5
    if t >= b:
        t = a
    return t


@njit(cache=True)
def slot_totals(slot, n_slots, g, h):
    G = np.zeros(n_slots)
    H = np.zeros(n_slots)
    C = np.zeros(n_slots, np.int64)
    for r in range(slot.shape[0]):
        k = slot[r]
        if k >= 0:
            G[k] += g[r]
            H[k] += h[r]
            C[k] += 1
    return G, H, C


@njit(cache=True)
def best_gradient_splits(X, order, slot, n_slots, g, h, lam, gamma, min_leaf):
    n, nf = X.shape
    G, H, C = slot_totals(slot, n_slots, g, h)
    best_feat = np.full(n_slots, -1, np.int64)
    best_thr = np.zeros(n_slots)
    best_gain = np.zeros(n_slots)
    GL = np.zeros(n_slots)
    HL = np.zeros(n_slots)
    CL = np.zeros(n_slots, np.int64)
    last = np.zeros(n_slots)
    for f in range(nf):
        GL[:] = 0.0
        HL[:] = 0.0
        CL[:] = 0
        for q in range(n):
            r = order[f, q]
            k = slot[r]
            if k < 0:
                continue
            x = X[r, f]
            if CL[k] > 0 and x > last[k] and CL[k] >= min_leaf and C[k] - CL[k] >= min_leaf:
                gain = split_gain(GL[k], HL[k], G[k], H[k], lam) - gamma
                if gain > 0.0 and _beats(gain, best_gain[k], best_feat[k] >= 0):
                    best_feat[k] = f
                    best_thr[k] = _midpoint(last[k], x)
                    best_gain[k] = gain
            GL[k] += g[r]
            HL[k] += h[r]
            CL[k] += 1
            last[k] = x
    return best_feat, best_thr, best_gain, G, H, C


@njit(cache=True)
def _gini_mass(p, q):
    w = p + q
    if w > 0.0:
        return 2.0 * p * q / w
    return 0.0


@njit(cache=True)
def best_gini_splits(X, order, slot, n_slots, wpos, wneg, min_leaf):
    """Weighted Gini decrease; zero-decrease splits are allowed (first valid
    candidate is always taken) so impure nodes keep splitting to max depth."""
    n, nf = X.shape
    P, N, C = slot_totals(slot, n_slots, wpos, wneg)
    best_feat = np.full(n_slots, -1, np.int64)
    best_thr = np.zeros(n_slots)
    best_gain = np.zeros(n_slots)
    PL = np.zeros(n_slots)
    NL = np.zeros(n_slots)
    CL = np.zeros(n_slots, np.int64)
    last = np.zeros(n_slots)
    for f in range(nf):
        PL[:] = 0.0
        NL[:] = 0.0
        CL[:] = 0
        for q in range(n):
            r = order[f, q]
            k = slot[r]
            if k < 0:
                continue
            x = X[r, f]
            if CL[k] > 0 and x > last[k] and CL[k] >= min_leaf and C[k] - CL[k] >= min_leaf:
                gain = (_gini_mass(P[k], N[k]) - _gini_mass(PL[k], NL[k])
                        - _gini_mass(P[k] - PL[k], N[k] - NL[k]))
                if _beats(gain, best_gain[k], best_feat[k] >= 0):
                    best_feat[k] = f
                    best_thr[k] = _midpoint(last[k], x)
                    best_gain[k] = gain
            PL[k] += wpos[r]
            NL[k] += wneg[r]
            CL[k] += 1
            last[k] = x
    return best_feat, best_thr, best_gain, P, N, C


@njit(cache=True)
def _level_score(GL, HL, G, H, lam):
    s = 0.0
    for k in range(G.shape[0]):
        s += split_gain(GL[k], HL[k], G[k], H[k], lam)
    return s


@njit(cache=True)
def best_oblivious_split(X, order, slot, n_slots, g, h, lam, gamma):
    """One (feature, threshold) for every node of a level, maximising the
    summed gain minus gamma per node."""
    n, nf = X.shape
    G, H, C = slot_totals(slot, n_slots, g, h)
    penalty = gamma * n_slots
    best_f = -1
    best_t = 0.0
    best = 0.0
    GL = np.zeros(n_slots)
    HL = np.zeros(n_slots)
    parts = np.zeros(n_slots)
    for f in range(nf):
        GL[:] = 0.0
        HL[:] = 0.0
        parts[:] = 0.0
        running = 0.0
        have_last = False
        last = 0.0
        for q in range(n):
            r = order[f, q]
            k = slot[r]
            if k < 0:
                continue
            x = X[r, f]
            if have_last and x > last:
                # running sum only screens; winners are rescored exactly
                if running - penalty > 0.0 and _beats(running - penalty, best, best_f >= 0):
                    exact = _level_score(GL, HL, G, H, lam) - penalty
                    if exact > 0.0 and _beats(exact, best, best_f >= 0):
                        best_f = f
                        best_t = _midpoint(last, x)
                        best = exact
            GL[k] += g[r]
            HL[k] += h[r]
            new = split_gain(GL[k], HL[k], G[k], H[k], lam)
            running += new - parts[k]
            parts[k] = new
            last = x
            have_last = True
    return best_f, best_t, best, G, H, C


@njit(cache=True)
def apply_tree(feature, threshold, left, right, X):
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def predict_tree_rows(feature, threshold, left, right, value, X):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def ordered_prefix_values(leaf, g, h, perm, lam, n_nodes):
    """Leaf value each row would get from the rows before it in ``perm``."""
    Gs = np.zeros(n_nodes)
    Hs = np.zeros(n_nodes)
    out = np.zeros(leaf.shape[0])
    for q in range(perm.shape[0]):
        r = perm[q]
        k = leaf[r]
        d = Hs[k] + lam
        if d > 0.0:
            out[r] = -Gs[k] / d
        Gs[k] += g[r]
        Hs[k] += h[r]
    return out


@njit(cache=True)
def shap_leaf_paths(X, path_len, path_feat, path_lo, path_hi, path_z, leaf_value, weights, scale, phi):
    """Accumulate path-dependent Shapley values of one tree into ``phi``.

    For a leaf with unique path features U, each feature k carries a zero
    fraction z_k (cover share of the leaf's side when k is unknown) and a one
    fraction o_k (1 if x satisfies every test on k).  The leaf's value game
    is a product over U, so feature j receives
        v * (o_j - z_j) * sum_s weights[d, s] * e_s(prod_{k != j} (z_k + o_k t))
    where e_s is the t**s coefficient and d = |U|.
    """
    m = X.shape[0]
    n_leaves = path_len.shape[0]
    dmax = path_feat.shape[1]
    o = np.zeros(dmax)
    p = np.zeros(dmax + 1)
    qv = np.zeros(dmax + 1)
    for i in range(m):
        for leaf in range(n_leaves):
            d = path_len[leaf]
            if d == 0:
                continue
            v = leaf_value[leaf] * scale
            for k in range(d):
                xv = X[i, path_feat[leaf, k]]
                o[k] = 1.0 if (xv > path_lo[leaf, k] and xv <= path_hi[leaf, k]) else 0.0
            p[0] = 1.0
            for s in range(1, d + 1):
                p[s] = 0.0
            for k in range(d):
                z = path_z[leaf, k]
                for s in range(k + 1, 0, -1):
                    p[s] = p[s] * z + p[s - 1] * o[k]
                p[0] = p[0] * z
            for j in range(d):
                z = path_z[leaf, j]
                if o[j] == z:
                    continue
                if o[j] == 0.0:
                    for s in range(d):
                        qv[s] = p[s] / z
                else:
                    qv[d - 1] = p[d]
                    for s in range(d - 1, 0, -1):
                        qv[s - 1] = p[s] - z * qv[s]
                total = 0.0
                for s in range(d):
                    total += weights[d, s] * qv[s]
                phi[i, path_feat[leaf, j]] += v * (o[j] - z) * total
