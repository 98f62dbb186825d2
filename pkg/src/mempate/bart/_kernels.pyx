# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tree kernels; protocol and state layout as in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, pow

cnp.import_array()

cdef enum:
    LEAF = 1
    INTERIOR = 2


cdef inline int node_depth(Py_ssize_t i) nogil:
    cdef int d = 0
    i += 1
    while i > 1:
        i >>= 1
        d += 1
    return d


cdef inline double split_prob(int depth, double alpha, double beta) nogil:
    return alpha * pow(1.0 + depth, -beta)


cdef inline void move_probs(Py_ssize_t b, Py_ssize_t w, double pg, double pp, double pc,
                            double* out) nogil:
    cdef double g = pg if b > 0 else 0.0
    cdef double p = pp if w > 0 else 0.0
    cdef double c = pc if w > 0 else 0.0
    cdef double tot = g + p + c
    if tot <= 0.0:
        out[0] = 0.0
        out[1] = 0.0
        out[2] = 0.0
    else:
        out[0] = g / tot
        out[1] = p / tot
        out[2] = c / tot


cdef inline double leaf_loglik(double cnt, double s, double sigma2, bint modified,
                               double gamma, double tau2) nogil:
    if modified:
        return -0.5 * log(1.0 + cnt / gamma) + s * s / (2.0 * sigma2 * (cnt + gamma))
    return -0.5 * log(1.0 + cnt * tau2 / sigma2) + 0.5 * tau2 * s * s / (sigma2 * (sigma2 + cnt * tau2))


cdef inline double grow_log_ratio(int depth, double lik_parent, double lik_left, double lik_right,
                                  bint grow_left, bint grow_right, Py_ssize_t b, Py_ssize_t w,
                                  Py_ssize_t w_new, Py_ssize_t b_new, double alpha, double beta,
                                  double pg, double pp, double pc) nogil:
    cdef double P[3]
    cdef double pg_cur, pp_new, ps, pchild, log_prior, log_prop
    move_probs(b, w, pg, pp, pc, P)
    pg_cur = P[0]
    move_probs(b_new, w_new, pg, pp, pc, P)
    pp_new = P[1]
    ps = split_prob(depth, alpha, beta)
    pchild = split_prob(depth + 1, alpha, beta)
    log_prior = log(ps) - log(1.0 - ps)
    if grow_left:
        log_prior += log(1.0 - pchild)
    if grow_right:
        log_prior += log(1.0 - pchild)
    log_prop = log(pp_new) - log(<double>w_new) - log(pg_cur) + log(<double>b)
    return log_prior + log_prop + lik_left + lik_right - lik_parent


cdef inline bint any_range(int[::1] lo, int[::1] hi, Py_ssize_t p) nogil:
    cdef Py_ssize_t v
    for v in range(p):
        if hi[v] > lo[v]:
            return True
    return False


cdef inline Py_ssize_t pick_rule(int[::1] lo, int[::1] hi, Py_ssize_t p, double u_var,
                                 double u_cut, int* cut_out) nogil:
    """Uniform eligible variable, then uniform valid cut index; returns the variable."""
    cdef Py_ssize_t v, ne = 0, k, target
    for v in range(p):
        if hi[v] > lo[v]:
            ne += 1
    target = <Py_ssize_t>(u_var * ne)
    k = 0
    for v in range(p):
        if hi[v] > lo[v]:
            if k == target:
                cut_out[0] = lo[v] + <int>(u_cut * (hi[v] - lo[v]))
                return v
            k += 1
    return -1


cdef void child_ranges(const int[:, ::1] xb, int[::1] lof, const double[::1] r, Py_ssize_t node_a,
                       Py_ssize_t node_b, Py_ssize_t v, int c,
                       int[::1] llo, int[::1] lhi, int[::1] rlo, int[::1] rhi,
                       double* stats) nogil:
    """Scan rows currently in ``node_a`` or ``node_b`` and split them by ``xb[:, v] <= c``.

    ``stats`` receives (count_left, sum_left, count_right, sum_right).
    """
    cdef Py_ssize_t n = xb.shape[0], p = xb.shape[1], i, q
    cdef int x
    for q in range(p):
        llo[q] = 2147483647
        lhi[q] = -1
        rlo[q] = 2147483647
        rhi[q] = -1
    stats[0] = 0.0
    stats[1] = 0.0
    stats[2] = 0.0
    stats[3] = 0.0
    for i in range(n):
        if lof[i] != node_a and lof[i] != node_b:
            continue
        if xb[i, v] <= c:
            stats[0] += 1.0
            stats[1] += r[i]
            for q in range(p):
                x = xb[i, q]
                if x < llo[q]:
                    llo[q] = x
                if x > lhi[q]:
                    lhi[q] = x
        else:
            stats[2] += 1.0
            stats[3] += r[i]
            for q in range(p):
                x = xb[i, q]
                if x < rlo[q]:
                    rlo[q] = x
                if x > rhi[q]:
                    rhi[q] = x


def sweep(const int[:, ::1] xb, const double[::1] y, double[::1] fit, signed char[:, ::1] kind,
          int[:, ::1] var, int[:, ::1] cut, double[:, ::1] val, int[:, ::1] leaf_of,
          int[::1] top, int[::1] nleaves, double sigma2, bint modified, double gamma, double tau2,
          double alpha, double beta, int max_depth, double pg, double pp, double pc,
          const double[:, ::1] u, const double[:, ::1] z, cnp.int64_t[::1] counts):
    cdef Py_ssize_t m = leaf_of.shape[0], n = leaf_of.shape[1], p = xb.shape[1]
    cdef Py_ssize_t C = kind.shape[1]
    cdef Py_ssize_t j, i, q, t, eta, left, right, b, w, k, target, b_new, w_new, nt
    cdef Py_ssize_t v
    cdef int c, x, d
    cdef bint gl, gr, gl_new, gr_new, sib_leaf
    cdef double P[3]
    cdef double PN[3]
    cdef double stats[4]
    cdef double lr, prec, mean, pchild, log_prior, log_prop, lik

    r_arr = np.empty(n, dtype=np.float64)
    cnt_arr = np.zeros(C, dtype=np.float64)
    sm_arr = np.zeros(C, dtype=np.float64)
    lo_arr = np.empty((C, p), dtype=np.int32)
    hi_arr = np.empty((C, p), dtype=np.int32)
    growable_arr = np.zeros(C, dtype=np.int8)
    scratch = np.empty((4, p), dtype=np.int32)
    cdef double[::1] r = r_arr
    cdef double[::1] cnt = cnt_arr
    cdef double[::1] sm = sm_arr
    cdef int[:, ::1] lo = lo_arr
    cdef int[:, ::1] hi = hi_arr
    cdef signed char[::1] growable = growable_arr
    cdef int[::1] llo = scratch[0]
    cdef int[::1] lhi = scratch[1]
    cdef int[::1] rlo = scratch[2]
    cdef int[::1] rhi = scratch[3]
    cdef int[::1] lof

    with nogil:
        for j in range(m):
            lof = leaf_of[j]
            t = top[j]
            for i in range(n):
                r[i] = y[i] - fit[i] + val[j, lof[i]]
            for i in range(t):
                cnt[i] = 0.0
                sm[i] = 0.0
                for q in range(p):
                    lo[i, q] = 2147483647
                    hi[i, q] = -1
            for i in range(n):
                k = lof[i]
                cnt[k] += 1.0
                sm[k] += r[i]
                for q in range(p):
                    x = xb[i, q]
                    if x < lo[k, q]:
                        lo[k, q] = x
                    if x > hi[k, q]:
                        hi[k, q] = x
            b = 0
            w = 0
            for i in range(t):
                growable[i] = 0
                if kind[j, i] == LEAF:
                    if node_depth(i) < max_depth and any_range(lo[i], hi[i], p):
                        growable[i] = 1
                        b += 1
                elif kind[j, i] == INTERIOR:
                    if kind[j, 2 * i + 1] == LEAF and kind[j, 2 * i + 2] == LEAF:
                        w += 1
            move_probs(b, w, pg, pp, pc, P)
            if P[0] + P[1] + P[2] > 0.0:
                if u[j, 0] < P[0]:
                    counts[0] += 1
                    target = <Py_ssize_t>(u[j, 1] * b)
                    k = 0
                    eta = -1
                    for i in range(t):
                        if kind[j, i] == LEAF and growable[i]:
                            if k == target:
                                eta = i
                                break
                            k += 1
                    v = pick_rule(lo[eta], hi[eta], p, u[j, 2], u[j, 3], &c)
                    child_ranges(xb, lof, r, eta, eta, v, c, llo, lhi, rlo, rhi, stats)
                    d = node_depth(eta)
                    gl = d + 1 < max_depth and any_range(llo, lhi, p)
                    gr = d + 1 < max_depth and any_range(rlo, rhi, p)
                    sib_leaf = False
                    if eta > 0:
                        sib_leaf = kind[j, eta - 1 if eta % 2 == 0 else eta + 1] == LEAF
                    w_new = w + 1 - (1 if sib_leaf else 0)
                    b_new = b - 1 + gl + gr
                    lr = grow_log_ratio(
                        d,
                        leaf_loglik(cnt[eta], sm[eta], sigma2, modified, gamma, tau2),
                        leaf_loglik(stats[0], stats[1], sigma2, modified, gamma, tau2),
                        leaf_loglik(stats[2], stats[3], sigma2, modified, gamma, tau2),
                        gl, gr, b, w, w_new, b_new, alpha, beta, pg, pp, pc)
                    if log(u[j, 4]) < lr:
                        counts[1] += 1
                        kind[j, eta] = INTERIOR
                        var[j, eta] = <int>v
                        cut[j, eta] = c
                        left = 2 * eta + 1
                        right = 2 * eta + 2
                        kind[j, left] = LEAF
                        kind[j, right] = LEAF
                        for i in range(n):
                            if lof[i] == eta:
                                lof[i] = <int>(left if xb[i, v] <= c else right)
                        if 2 * eta + 3 > t:
                            top[j] = <int>(2 * eta + 3)
                        nleaves[j] += 1
                elif u[j, 0] < P[0] + P[1]:
                    counts[2] += 1
                    target = <Py_ssize_t>(u[j, 1] * w)
                    k = 0
                    eta = -1
                    for i in range(t):
                        if kind[j, i] == INTERIOR and kind[j, 2 * i + 1] == LEAF and kind[j, 2 * i + 2] == LEAF:
                            if k == target:
                                eta = i
                                break
                            k += 1
                    left = 2 * eta + 1
                    right = 2 * eta + 2
                    d = node_depth(eta)
                    gl = growable[left]
                    gr = growable[right]
                    b_new = b - gl - gr + 1
                    sib_leaf = False
                    if eta > 0:
                        sib_leaf = kind[j, eta - 1 if eta % 2 == 0 else eta + 1] == LEAF
                    w_new = w - 1 + (1 if sib_leaf else 0)
                    lr = -grow_log_ratio(
                        d,
                        leaf_loglik(cnt[left] + cnt[right], sm[left] + sm[right], sigma2, modified, gamma, tau2),
                        leaf_loglik(cnt[left], sm[left], sigma2, modified, gamma, tau2),
                        leaf_loglik(cnt[right], sm[right], sigma2, modified, gamma, tau2),
                        gl, gr, b_new, w_new, w, b, alpha, beta, pg, pp, pc)
                    if log(u[j, 4]) < lr:
                        counts[3] += 1
                        kind[j, eta] = LEAF
                        var[j, eta] = -1
                        cut[j, eta] = -1
                        kind[j, left] = 0
                        kind[j, right] = 0
                        val[j, left] = 0.0
                        val[j, right] = 0.0
                        for i in range(n):
                            if lof[i] == left or lof[i] == right:
                                lof[i] = <int>eta
                        nt = t
                        while nt > 1 and kind[j, nt - 1] == 0:
                            nt -= 1
                        top[j] = <int>nt
                        nleaves[j] -= 1
                else:
                    counts[4] += 1
                    target = <Py_ssize_t>(u[j, 1] * w)
                    k = 0
                    eta = -1
                    for i in range(t):
                        if kind[j, i] == INTERIOR and kind[j, 2 * i + 1] == LEAF and kind[j, 2 * i + 2] == LEAF:
                            if k == target:
                                eta = i
                                break
                            k += 1
                    left = 2 * eta + 1
                    right = 2 * eta + 2
                    # range of the rows under eta = union of its two leaves
                    for q in range(p):
                        llo[q] = lo[left, q] if lo[left, q] < lo[right, q] else lo[right, q]
                        lhi[q] = hi[left, q] if hi[left, q] > hi[right, q] else hi[right, q]
                    v = pick_rule(llo, lhi, p, u[j, 2], u[j, 3], &c)
                    child_ranges(xb, lof, r, left, right, v, c, llo, lhi, rlo, rhi, stats)
                    d = node_depth(eta)
                    gl_new = d + 1 < max_depth and any_range(llo, lhi, p)
                    gr_new = d + 1 < max_depth and any_range(rlo, rhi, p)
                    gl = growable[left]
                    gr = growable[right]
                    pchild = split_prob(d + 1, alpha, beta)
                    log_prior = log(1.0 - pchild) * <double>((gl_new + gr_new) - (gl + gr))
                    b_new = b - gl - gr + gl_new + gr_new
                    move_probs(b_new, w, pg, pp, pc, PN)
                    log_prop = log(PN[2]) - log(P[2])
                    lik = (leaf_loglik(stats[0], stats[1], sigma2, modified, gamma, tau2)
                           + leaf_loglik(stats[2], stats[3], sigma2, modified, gamma, tau2)
                           - leaf_loglik(cnt[left], sm[left], sigma2, modified, gamma, tau2)
                           - leaf_loglik(cnt[right], sm[right], sigma2, modified, gamma, tau2))
                    if log(u[j, 4]) < log_prior + log_prop + lik:
                        counts[5] += 1
                        var[j, eta] = <int>v
                        cut[j, eta] = c
                        for i in range(n):
                            if lof[i] == left or lof[i] == right:
                                lof[i] = <int>(left if xb[i, v] <= c else right)

            t = top[j]
            for i in range(t):
                cnt[i] = 0.0
                sm[i] = 0.0
            for i in range(n):
                cnt[lof[i]] += 1.0
                sm[lof[i]] += r[i]
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
                val[j, i] = mean + z[j, k] / sqrt(prec)
                k += 1
            for i in range(n):
                fit[i] = y[i] - r[i] + val[j, lof[i]]


def sample_forest(const int[:, ::1] xb, int m, double alpha, double beta, int max_depth,
                  const double[::1] u):
    cdef Py_ssize_t n = xb.shape[0], p = xb.shape[1]
    cdef Py_ssize_t C = (1 << (max_depth + 1)) - 1
    cdef Py_ssize_t nu = u.shape[0]
    # zero-filled (lazily paged) heaps; var/cut are meaningful only at interior nodes
    kind_arr = np.zeros((m, C), dtype=np.int8)
    var_arr = np.zeros((m, C), dtype=np.int32)
    cut_arr = np.zeros((m, C), dtype=np.int32)
    leaf_arr = np.zeros((m, n), dtype=np.int32)
    top_arr = np.ones(m, dtype=np.int32)
    queue_arr = np.empty(C, dtype=np.intp)
    scratch = np.empty((2, p), dtype=np.int32)
    cdef signed char[:, ::1] kind = kind_arr
    cdef int[:, ::1] var = var_arr
    cdef int[:, ::1] cut = cut_arr
    cdef int[:, ::1] leaf_of = leaf_arr
    cdef int[::1] top = top_arr
    cdef Py_ssize_t[::1] queue = queue_arr
    cdef int[::1] lo = scratch[0]
    cdef int[::1] hi = scratch[1]
    cdef Py_ssize_t j, i, q, qi, qn, eta, pos = 0, v
    cdef int d, x, c
    cdef bint exhausted = False
    with nogil:
        for j in range(m):
            kind[j, 0] = LEAF
            queue[0] = 0
            qi = 0
            qn = 1
            while qi < qn:
                eta = queue[qi]
                qi += 1
                d = node_depth(eta)
                if d >= max_depth:
                    continue
                for q in range(p):
                    lo[q] = 2147483647
                    hi[q] = -1
                for i in range(n):
                    if leaf_of[j, i] == eta:
                        for q in range(p):
                            x = xb[i, q]
                            if x < lo[q]:
                                lo[q] = x
                            if x > hi[q]:
                                hi[q] = x
                if not any_range(lo, hi, p):
                    continue
                if pos >= nu:
                    exhausted = True
                    break
                if not u[pos] < split_prob(d, alpha, beta):
                    pos += 1
                    continue
                if pos + 2 >= nu:
                    exhausted = True
                    break
                v = pick_rule(lo, hi, p, u[pos + 1], u[pos + 2], &c)
                pos += 3
                kind[j, eta] = INTERIOR
                var[j, eta] = <int>v
                cut[j, eta] = c
                kind[j, 2 * eta + 1] = LEAF
                kind[j, 2 * eta + 2] = LEAF
                for i in range(n):
                    if leaf_of[j, i] == eta:
                        leaf_of[j, i] = <int>(2 * eta + 1 if xb[i, v] <= c else 2 * eta + 2)
                if 2 * eta + 3 > top[j]:
                    top[j] = <int>(2 * eta + 3)
                queue[qn] = 2 * eta + 1
                queue[qn + 1] = 2 * eta + 2
                qn += 2
            if exhausted:
                break
    if exhausted:
        return None
    return kind_arr, var_arr, cut_arr, leaf_arr, top_arr, pos


def cooccurrence(const int[:, ::1] leaf_of):
    cdef Py_ssize_t m = leaf_of.shape[0], n = leaf_of.shape[1], j, k, l
    counts_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] counts = counts_arr
    cdef int a
    with nogil:
        for j in range(m):
            for k in range(n):
                a = leaf_of[j, k]
                counts[k, k] += 1.0
                for l in range(k + 1, n):
                    if leaf_of[j, l] == a:
                        counts[k, l] += 1.0
        for k in range(n):
            for l in range(k + 1, n):
                counts[l, k] = counts[k, l]
            for l in range(n):
                counts[k, l] = counts[k, l] / m
    return counts_arr


def compact(const signed char[:, ::1] kind, const int[:, ::1] var, const int[:, ::1] cut,
            const double[:, ::1] val, const int[::1] top, const double[::1] cut_values,
            const cnp.int64_t[::1] cut_offsets):
    cdef Py_ssize_t m = kind.shape[0], C = kind.shape[1], j, h, k, total = 0, base
    cdef int v
    ptr_arr = np.zeros(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] ptr = ptr_arr
    for j in range(m):
        for h in range(top[j]):
            if kind[j, h] != 0:
                total += 1
        ptr[j + 1] = total
    pvar_arr = np.full(total, -1, dtype=np.int32)
    pcut_arr = np.zeros(total, dtype=np.float64)
    pleft_arr = np.full(total, -1, dtype=np.int32)
    pright_arr = np.full(total, -1, dtype=np.int32)
    pval_arr = np.zeros(total, dtype=np.float64)
    local_arr = np.full(C, -1, dtype=np.int64)
    cdef int[::1] pvar = pvar_arr
    cdef double[::1] pcut = pcut_arr
    cdef int[::1] pleft = pleft_arr
    cdef int[::1] pright = pright_arr
    cdef double[::1] pval = pval_arr
    cdef cnp.int64_t[::1] local = local_arr
    with nogil:
        for j in range(m):
            k = 0
            for h in range(top[j]):
                if kind[j, h] != 0:
                    local[h] = k
                    k += 1
            base = ptr[j]
            for h in range(top[j]):
                if kind[j, h] == 0:
                    continue
                k = base + local[h]
                if kind[j, h] == INTERIOR:
                    v = var[j, h]
                    pvar[k] = v
                    pcut[k] = cut_values[cut_offsets[v] + cut[j, h]]
                    pleft[k] = <int>local[2 * h + 1]
                    pright[k] = <int>local[2 * h + 2]
                else:
                    pval[k] = val[j, h]
    return ptr_arr, pvar_arr, pcut_arr, pleft_arr, pright_arr, pval_arr


def leaf_index(const cnp.int64_t[::1] tree_ptr, const int[::1] pvar, const double[::1] pcut,
               const int[::1] pleft, const int[::1] pright, const double[:, ::1] X):
    cdef Py_ssize_t m = tree_ptr.shape[0] - 1, n = X.shape[0], j, i, base, node
    out_arr = np.zeros((m, n), dtype=np.int32)
    cdef int[:, ::1] out = out_arr
    with nogil:
        for j in range(m):
            base = tree_ptr[j]
            for i in range(n):
                node = 0
                while pvar[base + node] >= 0:
                    if X[i, pvar[base + node]] <= pcut[base + node]:
                        node = pleft[base + node]
                    else:
                        node = pright[base + node]
                out[j, i] = <int>node
    return out_arr


def predict(const cnp.int64_t[::1] tree_ptr, const int[::1] pvar, const double[::1] pcut,
            const int[::1] pleft, const int[::1] pright, const double[::1] pval,
            const double[:, ::1] X):
    cdef Py_ssize_t m = tree_ptr.shape[0] - 1, n = X.shape[0], j, i, base, node
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for j in range(m):
            base = tree_ptr[j]
            for i in range(n):
                node = 0
                while pvar[base + node] >= 0:
                    if X[i, pvar[base + node]] <= pcut[base + node]:
                        node = pleft[base + node]
                    else:
                        node = pright[base + node]
                out[i] += pval[base + node]
    return out_arr
