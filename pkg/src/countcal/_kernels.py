"""Compiled inner loops: Matérn-5/2 factors, local Cholesky, kriging.

The separable kernel is always evaluated as

    tau2 * F(x_s, x'_s) * F(x_u, x'_u),
    F(a, b) = prod_k (1 + sqrt5 r_k + 5/3 r_k^2) * exp(-sqrt5 sum_k r_k),

where ``s`` are the first ``split`` (spatial) columns and ``u`` the rest. The
grid-structured fast paths multiply cached spatial and parameter factors in
exactly this order, so they reproduce the generic path bit for bit.

All loops are sequential with a fixed reduction order.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

SQRT5 = math.sqrt(5.0)
LOG2PI = math.log(2.0 * math.pi)
FIVE_THIRDS = 5.0 / 3.0


@njit(cache=True)
def factor(a, b, inv_theta, lo, hi):
    s = 0.0
    p = 1.0
    for k in range(lo, hi):
        r = abs(a[k] - b[k]) * inv_theta[k]
        s += r
        p *= 1.0 + SQRT5 * r + FIVE_THIRDS * r * r
    return p * math.exp(-SQRT5 * s)


@njit(cache=True)
def kern(a, b, inv_theta, tau2, split):
    return tau2 * factor(a, b, inv_theta, 0, split) * factor(a, b, inv_theta, split, a.shape[0])


@njit(cache=True)
def factor_matrix(A, B, inv_theta, lo, hi):
    """Factor F between rows of A and rows of B over columns lo..hi."""
    out = np.empty((A.shape[0], B.shape[0]))
    for i in range(A.shape[0]):
        for j in range(B.shape[0]):
            out[i, j] = factor(A[i], B[j], inv_theta, lo, hi)
    return out


@njit(cache=True)
def sqdist(a, b, inv_theta):
    s = 0.0
    for k in range(a.shape[0]):
        t = (a[k] - b[k]) * inv_theta[k]
        s += t * t
    return s


@njit(cache=True)
def _chol_inplace(C, K):
    """Lower Cholesky of the leading K x K block; False if not PD."""
    for a in range(K):
        s = C[a, a]
        for c in range(a):
            s -= C[a, c] * C[a, c]
        if not (s > 0.0):
            return False
        d = math.sqrt(s)
        C[a, a] = d
        for b in range(a + 1, K):
            t = C[b, a]
            for c in range(a):
                t -= C[b, c] * C[a, c]
            C[b, a] = t / d
    return True


@njit(cache=True)
def _forward(C, rhs, out, K):
    for a in range(K):
        t = rhs[a]
        for c in range(a):
            t -= C[a, c] * out[c]
        out[a] = t / C[a, a]


# ---------------------------------------------------------------------------
# Vecchia likelihood terms
# ---------------------------------------------------------------------------


@njit(cache=True)
def _local_terms(C, rhs, z, K, y_i):
    """Cholesky + forward solve of an assembled local block; the last row is
    the conditioned point. Returns (ok, term, cmean, cvar)."""
    if not _chol_inplace(C, K):
        return False, 0.0, 0.0, 0.0
    _forward(C, rhs, z, K)
    sd = C[K - 1, K - 1]
    zl = z[K - 1]
    return True, -0.5 * LOG2PI - math.log(sd) - 0.5 * zl * zl, y_i - zl * sd, sd * sd


@njit(cache=True)
def vecchia_terms(X, y, nb, inv_theta, tau2, g, split):
    """Per-row conditional log densities, means and variances.

    ``nb[i]`` lists the conditioning indices of row ``i`` (padded with -1),
    sorted ascending. Returns ``(terms, cmean, cvar, fail)`` where ``fail`` is
    the first row whose local matrix was not PD, or -1. Each local point set
    is gathered into a contiguous buffer before the kernel is assembled.
    """
    n, m = nb.shape
    d = X.shape[1]
    terms = np.empty(n)
    cmean = np.empty(n)
    cvar = np.empty(n)
    C = np.empty((m + 1, m + 1))
    rhs = np.empty(m + 1)
    z = np.empty(m + 1)
    idx = np.empty(m + 1, dtype=np.int64)
    L = np.empty((m + 1, d))
    for i in range(n):
        k = 0
        for j in range(m):
            if nb[i, j] >= 0:
                idx[k] = nb[i, j]
                k += 1
        idx[k] = i
        K = k + 1
        for a in range(K):
            for e in range(d):
                L[a, e] = X[idx[a], e]
            rhs[a] = y[idx[a]]
        for a in range(K):
            for b in range(a + 1):
                C[a, b] = kern(L[a], L[b], inv_theta, tau2, split)
            C[a, a] += g
        ok, terms[i], cmean[i], cvar[i] = _local_terms(C, rhs, z, K, y[i])
        if not ok:
            return terms, cmean, cvar, i
    return terms, cmean, cvar, -1


@njit(cache=True)
def grid_pair_keys(gi, nb, n_grid):
    """Keys ``min(ga, gb) * n_grid + max(ga, gb)`` of the spatial grid pairs in
    each row's local block, lower triangle row-major (row ``i`` is last);
    unused slots hold -1."""
    n, m = nb.shape
    P = (m + 1) * (m + 2) // 2
    out = np.full((n, P), -1, dtype=np.int64)
    gg = np.empty(m + 1, dtype=np.int64)
    for i in range(n):
        k = 0
        for j in range(m):
            if nb[i, j] >= 0:
                gg[k] = gi[nb[i, j]]
                k += 1
        gg[k] = gi[i]
        t = 0
        for a in range(k + 1):
            for b in range(a + 1):
                lo = min(gg[a], gg[b])
                hi = max(gg[a], gg[b])
                out[i, t] = lo * n_grid + hi
                t += 1
    return out


@njit(cache=True)
def pair_factors(G, pa, pb, inv_s):
    out = np.empty(pa.size)
    for t in range(pa.size):
        out[t] = factor(G[pa[t]], G[pb[t]], inv_s, 0, G.shape[1])
    return out


@njit(cache=True)
def vecchia_terms_grid(slot, ri, Fp, Fu, y, nb, tau2, g):
    """Same as :func:`vecchia_terms` for grid x design products.

    ``Fp`` holds the spatial factor of every distinct grid pair and
    ``slot[i]`` points each local pair of row ``i`` into it (layout of
    :func:`grid_pair_keys`); ``Fu`` holds all parameter factors between runs.
    """
    n, m = nb.shape
    terms = np.empty(n)
    cmean = np.empty(n)
    cvar = np.empty(n)
    C = np.empty((m + 1, m + 1))
    rhs = np.empty(m + 1)
    z = np.empty(m + 1)
    idx = np.empty(m + 1, dtype=np.int64)
    rr = np.empty(m + 1, dtype=np.int64)
    for i in range(n):
        k = 0
        for j in range(m):
            if nb[i, j] >= 0:
                idx[k] = nb[i, j]
                k += 1
        idx[k] = i
        K = k + 1
        for a in range(K):
            rr[a] = ri[idx[a]]
            rhs[a] = y[idx[a]]
        t = 0
        for a in range(K):
            for b in range(a + 1):
                C[a, b] = tau2 * Fp[slot[i, t]] * Fu[rr[a], rr[b]]
                t += 1
            C[a, a] += g
        ok, terms[i], cmean[i], cvar[i] = _local_terms(C, rhs, z, K, y[i])
        if not ok:
            return terms, cmean, cvar, i
    return terms, cmean, cvar, -1


@njit(cache=True)
def ordered_sum(a):
    s = 0.0
    for v in a:
        s += v
    return s


# ---------------------------------------------------------------------------
# Local kriging
# ---------------------------------------------------------------------------


@njit(cache=True)
def krige(Xtr, ytr, Xq, nb, inv_theta, tau2, g, split, jitters):
    """Kriging mean (centered) and latent variance for each query row.

    ``nb[q]`` holds the training indices to condition on (padded with -1).
    ``jitters`` is the escalation ladder tried in turn for each query.
    Returns ``(mean, var, used_jitter, fail)``; ``fail`` is -1 on success.
    """
    nq, m = nb.shape
    mean = np.empty(nq)
    var = np.empty(nq)
    used = np.zeros(nq)
    C = np.empty((m, m))
    kv = np.empty(m)
    yv = np.empty(m)
    w = np.empty(m)
    z = np.empty(m)
    idx = np.empty(m, dtype=np.int64)
    for q in range(nq):
        k = 0
        for j in range(m):
            if nb[q, j] >= 0:
                idx[k] = nb[q, j]
                k += 1
        xq = Xq[q]
        prior = kern(xq, xq, inv_theta, tau2, split)
        ok = False
        for jit in jitters:
            for a in range(k):
                xa = Xtr[idx[a]]
                for b in range(a):
                    C[a, b] = kern(xa, Xtr[idx[b]], inv_theta, tau2, split)
                C[a, a] = kern(xa, xa, inv_theta, tau2, split) + g + jit
            if _chol_inplace(C, k):
                used[q] = jit
                ok = True
                break
        if not ok:
            return mean, var, used, q
        for a in range(k):
            kv[a] = kern(xq, Xtr[idx[a]], inv_theta, tau2, split)
            yv[a] = ytr[idx[a]]
        _forward(C, kv, w, k)
        _forward(C, yv, z, k)
        mu = 0.0
        red = 0.0
        for a in range(k):
            mu += w[a] * z[a]
            red += w[a] * w[a]
        mean[q] = mu
        v = prior - red
        var[q] = v if v > 0.0 else 0.0
    return mean, var, used, -1


@njit(cache=True)
def krige_grid(ri, ytr, Fcc, Fq, Fu_all, Fu_q, nb, slot, tau2, g, jitters):
    """Kriging at every field location for one parameter vector.

    Field location ``j`` conditions on training rows ``nb[j]`` whose grid
    points sit in candidate slots ``slot[j]``. ``Fcc[j, s, t]`` is the spatial
    factor between candidate slots, ``Fq[j, s]`` between the field location
    and a slot, ``Fu_all`` the run-run parameter factors and ``Fu_q[r]`` the
    factors between the query parameters and run ``r``.
    """
    nq, m = nb.shape
    mean = np.empty(nq)
    var = np.empty(nq)
    used = np.zeros(nq)
    C = np.empty((m, m))
    kv = np.empty(m)
    yv = np.empty(m)
    w = np.empty(m)
    z = np.empty(m)
    idx = np.empty(m, dtype=np.int64)
    sl = np.empty(m, dtype=np.int64)
    prior = tau2 * 1.0 * 1.0
    for q in range(nq):
        k = 0
        for j in range(m):
            if nb[q, j] >= 0:
                idx[k] = nb[q, j]
                sl[k] = slot[q, j]
                k += 1
        ok = False
        for jit in jitters:
            for a in range(k):
                sa = sl[a]
                ra = ri[idx[a]]
                for b in range(a):
                    C[a, b] = tau2 * Fcc[q, sa, sl[b]] * Fu_all[ra, ri[idx[b]]]
                C[a, a] = tau2 * Fcc[q, sa, sa] * Fu_all[ra, ra] + g + jit
            if _chol_inplace(C, k):
                used[q] = jit
                ok = True
                break
        if not ok:
            return mean, var, used, q
        for a in range(k):
            kv[a] = tau2 * Fq[q, sl[a]] * Fu_q[ri[idx[a]]]
            yv[a] = ytr[idx[a]]
        _forward(C, kv, w, k)
        _forward(C, yv, z, k)
        mu = 0.0
        red = 0.0
        for a in range(k):
            mu += w[a] * z[a]
            red += w[a] * w[a]
        mean[q] = mu
        v = prior - red
        var[q] = v if v > 0.0 else 0.0
    return mean, var, used, -1


# ---------------------------------------------------------------------------
# Neighbor selection
# ---------------------------------------------------------------------------


@njit(cache=True)
def select_smallest(dist, rank, m, out):
    """Write the ``m`` entries with smallest (dist, rank) into ``out``.

    Returns the number written (``min(m, len(dist))``); ``out`` holds
    positions into ``dist`` sorted by (dist, rank).
    """
    n = dist.shape[0]
    k = 0
    for i in range(n):
        d = dist[i]
        r = rank[i]
        if k == m:
            last = out[m - 1]
            if d > dist[last] or (d == dist[last] and r > rank[last]):
                continue
            pos = m - 1
        else:
            pos = k
            k += 1
        while pos > 0:
            prev = out[pos - 1]
            if dist[prev] > d or (dist[prev] == d and rank[prev] > r):
                out[pos] = prev
                pos -= 1
            else:
                break
        out[pos] = i
    return k


@njit(cache=True)
def maximin(Z, inv_scale, first):
    """Greedy farthest-point ordering of rows of ``Z`` starting at ``first``.

    Distances are scaled squared Euclidean; ties go to the lowest row index.
    """
    n, d = Z.shape
    order = np.empty(n, dtype=np.int64)
    mind = np.full(n, np.inf)
    taken = np.zeros(n, dtype=np.bool_)
    cur = first
    for t in range(n):
        order[t] = cur
        taken[cur] = True
        best = -1
        bestd = -1.0
        for j in range(n):
            if taken[j]:
                continue
            s = 0.0
            for k in range(d):
                diff = (Z[j, k] - Z[cur, k]) * inv_scale[k]
                s += diff * diff
            if s < mind[j]:
                mind[j] = s
            if mind[j] > bestd:
                bestd = mind[j]
                best = j
        cur = best
    return order


@njit(cache=True)
def field_candidates(ds_part, cand, cand_cnt, au, run_order, rank_of, run_base, m, out_nb, out_slot):
    """Nearest training points for product-structured queries.

    For field location ``j`` the admissible grid points are
    ``cand[j, :cand_cnt[j]]``, sorted by their partial squared distances
    ``ds_part[j, c]`` over the spatial coordinates. ``au[r, :]`` holds the
    per-run squared parameter terms, added in coordinate order so the total
    matches :func:`sqdist` exactly. Rounding is monotone, so within a run the
    totals are non-decreasing along the candidate list and the scan stops at
    the first one that cannot enter the current best ``m``. ``run_order`` only
    affects speed. ``run_base[r]`` is the stacked index of grid point 0 in run
    ``r``. Selected rows are written sorted by ordered rank, with their
    candidate slot alongside.
    """
    nF = cand.shape[0]
    n_runs, p = au.shape
    bd = np.empty(m)
    br = np.empty(m, dtype=np.int64)
    bt = np.empty(m, dtype=np.int64)
    bs = np.empty(m, dtype=np.int64)
    for j in range(nF):
        k = 0
        for ro in range(n_runs):
            r = run_order[ro]
            for a in range(cand_cnt[j]):
                s = ds_part[j, a]
                for e in range(p):
                    s += au[r, e]
                t = run_base[r] + cand[j, a]
                rk = rank_of[t]
                if k == m:
                    if s > bd[m - 1]:
                        break
                    if s == bd[m - 1] and rk > br[m - 1]:
                        continue
                    pos = m - 1
                else:
                    pos = k
                    k += 1
                while pos > 0 and (bd[pos - 1] > s or (bd[pos - 1] == s and br[pos - 1] > rk)):
                    bd[pos] = bd[pos - 1]
                    br[pos] = br[pos - 1]
                    bt[pos] = bt[pos - 1]
                    bs[pos] = bs[pos - 1]
                    pos -= 1
                bd[pos] = s
                br[pos] = rk
                bt[pos] = t
                bs[pos] = a
        # conditioning sets are stored sorted by ordered rank
        for a in range(1, k):
            vr = br[a]
            vt = bt[a]
            vs = bs[a]
            b = a - 1
            while b >= 0 and br[b] > vr:
                br[b + 1] = br[b]
                bt[b + 1] = bt[b]
                bs[b + 1] = bs[b]
                b -= 1
            br[b + 1] = vr
            bt[b + 1] = vt
            bs[b + 1] = vs
        for a in range(m):
            if a < k:
                out_nb[j, a] = bt[a]
                out_slot[j, a] = bs[a]
            else:
                out_nb[j, a] = -1
                out_slot[j, a] = -1
    return out_nb


@njit(cache=True)
def finish_neighbors(X, inv_scale, rows, cj, cd, m, r_tol, a_tol, complete, nb):
    """Turn tree candidates into exact ordered-predecessor neighbor sets.

    ``cj[q]``/``cd[q]`` are tree indices/distances for ordered row ``rows[q]``
    (ascending distance; missing entries have index >= n). Only predecessors
    count. A row is resolved when it has all its predecessors, or when the
    furthest candidate lies strictly beyond the m-th predecessor distance (so
    no unseen point can tie or beat it). Otherwise ``False`` is recorded in
    the returned mask and the caller retries with more candidates.
    """
    nq, kq = cj.shape
    done = np.zeros(nq, dtype=np.bool_)
    dist = np.empty(kq)
    rank = np.empty(kq, dtype=np.int64)
    sel = np.empty(m, dtype=np.int64)
    for q in range(nq):
        i = rows[q]
        need = m if m < i else i
        c = 0
        rm = -1.0
        for a in range(kq):
            j = cj[q, a]
            if j < i:
                rank[c] = j
                c += 1
                if c == need:
                    rm = cd[q, a]
        if not complete:
            if c < need:
                continue
            if need < i and not (cd[q, kq - 1] > rm * (1.0 + r_tol) + a_tol):
                continue
        for a in range(c):
            dist[a] = sqdist(X[i], X[rank[a]], inv_scale)
        k = select_smallest(dist[:c], rank[:c], need, sel)
        vals = np.empty(k, dtype=np.int64)
        for a in range(k):
            vals[a] = rank[sel[a]]
        vals.sort()
        for a in range(nb.shape[1]):
            nb[i, a] = vals[a] if a < k else -1
        done[q] = True
    return done



@njit(cache=True)
def nearest_exact(Xtr, inv_scale, Xq, rank_of, cj, cd, m, r_tol, a_tol, complete, nb):
    """Exact ``m`` nearest training rows for each query from tree candidates.

    Same resolution rule as :func:`finish_neighbors`; ties in the exact scaled
    squared distance go to the lower ordered rank. Sets are written sorted
    by rank.
    """
    nq, kq = cj.shape
    n = Xtr.shape[0]
    done = np.zeros(nq, dtype=np.bool_)
    dist = np.empty(kq)
    rank = np.empty(kq, dtype=np.int64)
    sel = np.empty(m, dtype=np.int64)
    for q in range(nq):
        c = 0
        for a in range(kq):
            if cj[q, a] < n:
                c += 1
        if not complete:
            if c < m or not (cd[q, kq - 1] > cd[q, m - 1] * (1.0 + r_tol) + a_tol):
                continue
        for a in range(c):
            dist[a] = sqdist(Xq[q], Xtr[cj[q, a]], inv_scale)
            rank[a] = rank_of[cj[q, a]]
        k = select_smallest(dist[:c], rank[:c], m, sel)
        for a in range(1, k):
            v = sel[a]
            b = a - 1
            while b >= 0 and rank[sel[b]] > rank[v]:
                sel[b + 1] = sel[b]
                b -= 1
            sel[b + 1] = v
        for a in range(m):
            nb[q, a] = cj[q, sel[a]] if a < k else -1
        done[q] = True
    return done


@njit(cache=True)
def field_factors(Q, G, cand, cand_cnt, inv_s):
    """Spatial factors field-to-candidate ``Fq`` and candidate-to-candidate ``Fcc``."""
    nF, maxc = cand.shape
    split = Q.shape[1]
    Fq = np.zeros((nF, maxc))
    Fcc = np.zeros((nF, maxc, maxc))
    for j in range(nF):
        for a in range(cand_cnt[j]):
            ga = cand[j, a]
            Fq[j, a] = factor(Q[j], G[ga], inv_s, 0, split)
            for b in range(a + 1):
                v = factor(G[ga], G[cand[j, b]], inv_s, 0, split)
                Fcc[j, a, b] = v
                Fcc[j, b, a] = v
    return Fq, Fcc
