"""Pure-Python (numpy) tree kernels.

This module is the reference implementation of the hot loops and the
fallback used when the compiled extension is unavailable.  The compiled
kernels in ``_kernels.pyx`` follow the same protocol step by step and
consume the same pre-drawn random numbers, so both backends produce the
same chains for the same seed.

Forest state layout (heap indexing, node ``i`` has children ``2i+1`` and
``2i+2``; capacity ``2**(max_depth+1) - 1`` nodes per tree):

``kind``    int8  (m, C)   0 unused, 1 leaf, 2 interior
``var``     int32 (m, C)   split variable of interior nodes, else -1
``cut``     int32 (m, C)   cut index: row goes left iff ``xb[i, var] <= cut``
``val``     f8    (m, C)   leaf values
``leaf_of`` int32 (m, n)   leaf holding each training row
``top``     int32 (m,)     one past the highest used node index
``nleaves`` int32 (m,)     number of leaves per tree

``xb`` is the binned predictor matrix: ``xb[i, v]`` is the number of grid
cutpoints of variable ``v`` strictly below ``x[i, v]``, so ``x <= cuts[k]``
exactly when ``xb <= k``.

Each tree update consumes one row ``u[j]`` of five uniforms (move type,
node, variable, cutpoint, acceptance) and the first ``nleaves[j]`` entries
of ``z[j]`` (standard normals, one per leaf in ascending node order).
"""

from __future__ import annotations

import math

import numpy as np

LEAF = 1
INTERIOR = 2

# indices into the per-sweep move counter
GROW_PROPOSED, GROW_ACCEPTED, PRUNE_PROPOSED, PRUNE_ACCEPTED, CHANGE_PROPOSED, CHANGE_ACCEPTED = range(6)


def node_depth(i: int) -> int:
    return (i + 1).bit_length() - 1


def split_prob(depth: int, alpha: float, beta: float) -> float:
    return alpha * (1.0 + depth) ** (-beta)


def move_probs(b: int, w: int, pg: float, pp: float, pc: float) -> tuple[float, float, float]:
    """State-dependent move probabilities given ``b`` growable leaves and ``w`` prunable nodes."""
    g = pg if b > 0 else 0.0
    p = pp if w > 0 else 0.0
    c = pc if w > 0 else 0.0
    tot = g + p + c
    if tot <= 0.0:
        return 0.0, 0.0, 0.0
    return g / tot, p / tot, c / tot


def leaf_loglik(cnt: float, s: float, sigma2: float, modified: bool, gamma: float, tau2: float) -> float:
    """Leaf-dependent part of log p(residuals in leaf | sigma2) with the leaf value integrated out."""
    if modified:
        return -0.5 * math.log(1.0 + cnt / gamma) + s * s / (2.0 * sigma2 * (cnt + gamma))
    return -0.5 * math.log(1.0 + cnt * tau2 / sigma2) + 0.5 * tau2 * s * s / (sigma2 * (sigma2 + cnt * tau2))


def _range(xb_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return xb_rows.min(axis=0), xb_rows.max(axis=0)


def _growable(lo: np.ndarray, hi: np.ndarray, depth: int, max_depth: int) -> bool:
    return depth < max_depth and bool(np.any(hi > lo))


def grow_log_ratio(*, depth, lik_parent, lik_left, lik_right, grow_left, grow_right,
                   b, w, w_new, b_new, alpha, beta, max_depth, probs):
    """log MH ratio for splitting a growable leaf at ``depth``.

    ``b``/``w`` count growable leaves / prunable nodes of the current tree,
    ``b_new``/``w_new`` those of the proposed tree.  The uniform rule
    proposal cancels against the uniform rule prior.
    """
    pg_cur = move_probs(b, w, *probs)[0]
    pp_new = move_probs(b_new, w_new, *probs)[1]
    ps = split_prob(depth, alpha, beta)
    pchild = split_prob(depth + 1, alpha, beta)
    log_prior = math.log(ps) - math.log(1.0 - ps)
    if grow_left:
        log_prior += math.log(1.0 - pchild)
    if grow_right:
        log_prior += math.log(1.0 - pchild)
    log_prop = math.log(pp_new) - math.log(w_new) - math.log(pg_cur) + math.log(b)
    return log_prior + log_prop + lik_left + lik_right - lik_parent


def sweep(xb, y, fit, kind, var, cut, val, leaf_of, top, nleaves, sigma2,
          modified, gamma, tau2, alpha, beta, max_depth, pg, pp, pc, u, z, counts):
    """One backfitting pass over all trees; updates the state arrays in place."""
    m, n = leaf_of.shape
    probs = (pg, pp, pc)
    for j in range(m):
        lo_j = leaf_of[j]
        r = y - fit + val[j, lo_j]
        t = int(top[j])
        cnt = np.bincount(lo_j, minlength=t).astype(float)
        sm = np.bincount(lo_j, weights=r, minlength=t)
        leaves = [i for i in range(t) if kind[j, i] == LEAF]
        rng_of = {}
        growable = {}
        for i in leaves:
            lo, hi = _range(xb[lo_j == i])
            rng_of[i] = (lo, hi)
            growable[i] = _growable(lo, hi, node_depth(i), max_depth)
        grow_list = [i for i in leaves if growable[i]]
        nog = [i for i in range(t) if kind[j, i] == INTERIOR
               and kind[j, 2 * i + 1] == LEAF and kind[j, 2 * i + 2] == LEAF]
        b, w = len(grow_list), len(nog)
        P = move_probs(b, w, *probs)
        uj = u[j]
        if P[0] + P[1] + P[2] > 0.0:
            if uj[0] < P[0]:
                counts[GROW_PROPOSED] += 1
                eta = grow_list[int(uj[1] * b)]
                lo, hi = rng_of[eta]
                elig = np.flatnonzero(hi > lo)
                v = int(elig[int(uj[2] * elig.size)])
                c = int(lo[v]) + int(uj[3] * (int(hi[v]) - int(lo[v])))
                rows = np.flatnonzero(lo_j == eta)
                go_left = xb[rows, v] <= c
                stats_c = np.bincount(go_left.astype(np.intp), minlength=2).astype(float)
                stats_s = np.bincount(go_left.astype(np.intp), weights=r[rows], minlength=2)
                cl, sl, cr, sr = stats_c[1], stats_s[1], stats_c[0], stats_s[0]
                d = node_depth(eta)
                llo, lhi = _range(xb[rows[go_left]])
                rlo, rhi = _range(xb[rows[~go_left]])
                gl = _growable(llo, lhi, d + 1, max_depth)
                gr = _growable(rlo, rhi, d + 1, max_depth)
                sib_leaf = eta > 0 and kind[j, eta - 1 if eta % 2 == 0 else eta + 1] == LEAF
                w_new = w + 1 - (1 if sib_leaf else 0)
                b_new = b - 1 + int(gl) + int(gr)
                lr = grow_log_ratio(
                    depth=d,
                    lik_parent=leaf_loglik(cnt[eta], sm[eta], sigma2, modified, gamma, tau2),
                    lik_left=leaf_loglik(cl, sl, sigma2, modified, gamma, tau2),
                    lik_right=leaf_loglik(cr, sr, sigma2, modified, gamma, tau2),
                    grow_left=gl, grow_right=gr, b=b, w=w, w_new=w_new, b_new=b_new,
                    alpha=alpha, beta=beta, max_depth=max_depth, probs=probs)
                if math.log(uj[4]) < lr:
                    counts[GROW_ACCEPTED] += 1
                    kind[j, eta] = INTERIOR
                    var[j, eta] = v
                    cut[j, eta] = c
                    kind[j, 2 * eta + 1] = LEAF
                    kind[j, 2 * eta + 2] = LEAF
                    lo_j[rows[go_left]] = 2 * eta + 1
                    lo_j[rows[~go_left]] = 2 * eta + 2
                    top[j] = max(t, 2 * eta + 3)
                    nleaves[j] += 1
            elif uj[0] < P[0] + P[1]:
                counts[PRUNE_PROPOSED] += 1
                eta = nog[int(uj[1] * w)]
                left, right = 2 * eta + 1, 2 * eta + 2
                d = node_depth(eta)
                gl, gr = growable[left], growable[right]
                b_new = b - int(gl) - int(gr) + 1
                w_new = w - 1 + (1 if eta > 0 and kind[j, eta - 1 if eta % 2 == 0 else eta + 1] == LEAF else 0)
                # prune is the reverse of growing eta in the pruned tree
                lr = -grow_log_ratio(
                    depth=d,
                    lik_parent=leaf_loglik(cnt[left] + cnt[right], sm[left] + sm[right], sigma2, modified, gamma, tau2),
                    lik_left=leaf_loglik(cnt[left], sm[left], sigma2, modified, gamma, tau2),
                    lik_right=leaf_loglik(cnt[right], sm[right], sigma2, modified, gamma, tau2),
                    grow_left=gl, grow_right=gr, b=b_new, w=w_new, w_new=w, b_new=b,
                    alpha=alpha, beta=beta, max_depth=max_depth, probs=probs)
                if math.log(uj[4]) < lr:
                    counts[PRUNE_ACCEPTED] += 1
                    kind[j, eta] = LEAF
                    var[j, eta] = -1
                    cut[j, eta] = -1
                    kind[j, left] = 0
                    kind[j, right] = 0
                    val[j, left] = 0.0
                    val[j, right] = 0.0
                    lo_j[(lo_j == left) | (lo_j == right)] = eta
                    nt = t
                    while nt > 1 and kind[j, nt - 1] == 0:
                        nt -= 1
                    top[j] = nt
                    nleaves[j] -= 1
            else:
                counts[CHANGE_PROPOSED] += 1
                eta = nog[int(uj[1] * w)]
                left, right = 2 * eta + 1, 2 * eta + 2
                rows = np.flatnonzero((lo_j == left) | (lo_j == right))
                lo, hi = _range(xb[rows])
                elig = np.flatnonzero(hi > lo)
                v = int(elig[int(uj[2] * elig.size)])
                c = int(lo[v]) + int(uj[3] * (int(hi[v]) - int(lo[v])))
                go_left = xb[rows, v] <= c
                stats_c = np.bincount(go_left.astype(np.intp), minlength=2).astype(float)
                stats_s = np.bincount(go_left.astype(np.intp), weights=r[rows], minlength=2)
                d = node_depth(eta)
                llo, lhi = _range(xb[rows[go_left]])
                rlo, rhi = _range(xb[rows[~go_left]])
                gl_new = _growable(llo, lhi, d + 1, max_depth)
                gr_new = _growable(rlo, rhi, d + 1, max_depth)
                gl, gr = growable[left], growable[right]
                pchild = split_prob(d + 1, alpha, beta)
                log_prior = math.log(1.0 - pchild) * ((int(gl_new) + int(gr_new)) - (int(gl) + int(gr)))
                b_new = b - int(gl) - int(gr) + int(gl_new) + int(gr_new)
                log_prop = math.log(move_probs(b_new, w, *probs)[2]) - math.log(P[2])
                lik = (leaf_loglik(stats_c[1], stats_s[1], sigma2, modified, gamma, tau2)
                       + leaf_loglik(stats_c[0], stats_s[0], sigma2, modified, gamma, tau2)
                       - leaf_loglik(cnt[left], sm[left], sigma2, modified, gamma, tau2)
                       - leaf_loglik(cnt[right], sm[right], sigma2, modified, gamma, tau2))
                if math.log(uj[4]) < log_prior + log_prop + lik:
                    counts[CHANGE_ACCEPTED] += 1
                    var[j, eta] = v
                    cut[j, eta] = c
                    lo_j[rows[go_left]] = left
                    lo_j[rows[~go_left]] = right

        # conjugate leaf values given the (possibly new) structure
        t = int(top[j])
        cnt = np.bincount(lo_j, minlength=t).astype(float)
        sm = np.bincount(lo_j, weights=r, minlength=t)
        k = 0
        for i in range(t):
            if kind[j, i] != LEAF:
                continue
            if modified:
                prec = (cnt[i] + gamma) / sigma2
                mean = sm[i] / (cnt[i] + gamma)
            else:
                prec = cnt[i] / sigma2 + 1.0 / tau2
                mean = (sm[i] / sigma2) / prec
            val[j, i] = mean + z[j, k] / math.sqrt(prec)
            k += 1
        fit[:] = y - r + val[j, lo_j]


def sample_forest(xb, m, alpha, beta, max_depth, u):
    """Grow ``m`` trees from the tree prior; returns ``None`` if ``u`` runs out.

    Nodes are visited breadth first.  A node that admits a valid split (both
    children nonempty) and is above ``max_depth`` consumes one uniform for the
    split decision and, if it splits, two more for variable and cutpoint.
    ``var`` and ``cut`` are meaningful only at interior nodes.
    """
    n, p = xb.shape
    C = 2 ** (max_depth + 1) - 1
    kind = np.zeros((m, C), dtype=np.int8)
    var = np.zeros((m, C), dtype=np.int32)
    cut = np.zeros((m, C), dtype=np.int32)
    leaf_of = np.zeros((m, n), dtype=np.int32)
    top = np.ones(m, dtype=np.int32)
    pos = 0
    nu = u.shape[0]
    for j in range(m):
        kind[j, 0] = LEAF
        queue = [0]
        qi = 0
        while qi < len(queue):
            eta = queue[qi]
            qi += 1
            d = node_depth(eta)
            if d >= max_depth:
                continue
            rows = np.flatnonzero(leaf_of[j] == eta)
            lo, hi = _range(xb[rows])
            elig = np.flatnonzero(hi > lo)
            if elig.size == 0:
                continue
            if pos >= nu:
                return None
            if not u[pos] < split_prob(d, alpha, beta):
                pos += 1
                continue
            if pos + 2 >= nu:
                return None
            v = int(elig[int(u[pos + 1] * elig.size)])
            c = int(lo[v]) + int(u[pos + 2] * (int(hi[v]) - int(lo[v])))
            pos += 3
            go_left = xb[rows, v] <= c
            kind[j, eta] = INTERIOR
            var[j, eta] = v
            cut[j, eta] = c
            kind[j, 2 * eta + 1] = LEAF
            kind[j, 2 * eta + 2] = LEAF
            leaf_of[j, rows[go_left]] = 2 * eta + 1
            leaf_of[j, rows[~go_left]] = 2 * eta + 2
            top[j] = max(top[j], 2 * eta + 3)
            queue.extend((2 * eta + 1, 2 * eta + 2))
    return kind, var, cut, leaf_of, top, pos


def cooccurrence(leaf_of: np.ndarray) -> np.ndarray:
    """``R[k, l]`` = fraction of trees in which rows ``k`` and ``l`` share a leaf."""
    m, n = leaf_of.shape
    stride = np.int64(leaf_of.max()) + 1
    keys = (leaf_of.astype(np.int64) + stride * np.arange(m, dtype=np.int64)[:, None]).ravel()
    _, cols = np.unique(keys, return_inverse=True)
    Z = np.zeros((n, int(cols.max()) + 1))
    Z[np.tile(np.arange(n), m), cols.ravel()] = 1.0
    return (Z @ Z.T) / m


def compact(kind, var, cut, val, top, cut_values, cut_offsets):
    """Pack heap-indexed trees into flat arrays with explicit child pointers.

    Returns ``(tree_ptr, pvar, pcut, pleft, pright, pval)``; node 0 of each
    tree's slice is its root, leaves have ``pvar == -1``.
    """
    m = kind.shape[0]
    sizes = np.array([int(np.count_nonzero(kind[j, :top[j]])) for j in range(m)], dtype=np.int64)
    tree_ptr = np.zeros(m + 1, dtype=np.int64)
    tree_ptr[1:] = np.cumsum(sizes)
    total = int(tree_ptr[-1])
    pvar = np.full(total, -1, dtype=np.int32)
    pcut = np.zeros(total)
    pleft = np.full(total, -1, dtype=np.int32)
    pright = np.full(total, -1, dtype=np.int32)
    pval = np.zeros(total)
    for j in range(m):
        t = int(top[j])
        used = np.flatnonzero(kind[j, :t])
        local = np.full(t, -1, dtype=np.int64)
        local[used] = np.arange(used.size)
        base = tree_ptr[j]
        for h in used:
            k = base + local[h]
            if kind[j, h] == INTERIOR:
                v = var[j, h]
                pvar[k] = v
                pcut[k] = cut_values[cut_offsets[v] + cut[j, h]]
                pleft[k] = local[2 * h + 1]
                pright[k] = local[2 * h + 2]
            else:
                pval[k] = val[j, h]
    return tree_ptr, pvar, pcut, pleft, pright, pval


def leaf_index(tree_ptr, pvar, pcut, pleft, pright, X):
    """Local leaf index of every row of ``X`` in every tree, shape (m, n)."""
    m = tree_ptr.shape[0] - 1
    n = X.shape[0]
    out = np.zeros((m, n), dtype=np.int32)
    for j in range(m):
        base = tree_ptr[j]
        node = np.zeros(n, dtype=np.int64)
        active = pvar[base + node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            k = base + node[idx]
            v = pvar[k]
            left = X[idx, v] <= pcut[k]
            node[idx] = np.where(left, pleft[k], pright[k])
            active[idx] = pvar[base + node[idx]] >= 0
        out[j] = node
    return out


def predict(tree_ptr, pvar, pcut, pleft, pright, pval, X):
    """Sum over trees of the leaf value each row of ``X`` lands in."""
    leaves = leaf_index(tree_ptr, pvar, pcut, pleft, pright, X)
    out = np.zeros(X.shape[0])
    for j in range(leaves.shape[0]):
        out += pval[tree_ptr[j] + leaves[j]]
    return out
