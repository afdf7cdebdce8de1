"""Inner loops shared by the proximal operators.

Kernels take flat arrays only, so the same source compiles under numba and
runs unchanged as plain Python when ``HSM_NUMBA=0``. Group structures arrive
in CSR form: ``indptr`` (n_groups + 1) and ``indices`` (0-based coordinates).
Per-group state (latents, dual blocks, path blocks) is stored aligned with
``indices``.

The three path-graph operators only need the per-node squared norms
``z[i] = ||y_{s_i}||^2`` and return one multiplicative scale per node.
"""
import math

import numpy as np

from ._accel import jit

# Relative slack under which two values of the knot statistic count as tied.
TIE_RTOL = 1e-12
# Tail sweeps spent on each dual point built around an mGL Newton solution.
SPLIT_SWEEPS = 50


@jit
def log_path_knots(z, w2, lam, tie_rtol):
    """Knot chain of the LOG prox on a directed path.

    ``w2`` holds the squared group weights, strictly increasing. Returns the
    knots as node counts (1..D), the statistic f at each knot, the number of
    passes through the knot loop (always m + 1, the last pass being the one
    that stops) and the number of f evaluations.
    """
    D = z.shape[0]
    knots = np.empty(D, np.int64)
    fvals = np.empty(D)
    lam2 = lam * lam
    m = 0
    k = 0
    wk2 = 0.0
    n_loops = 0
    n_fevals = 0
    while True:
        n_loops += 1
        if k >= D:
            break
        num = 0.0
        best = -1.0
        best_at = -1
        f_at = 0.0
        for j in range(k, D):
            num += z[j]
            f2 = num / (w2[j] - wk2)
            n_fevals += 1
            # ties go to the larger j
            if f2 >= best * (1.0 - tie_rtol):
                if f2 > best:
                    best = f2
                best_at = j
                f_at = f2
        if best <= lam2:
            break
        knots[m] = best_at + 1
        fvals[m] = math.sqrt(f_at)
        m += 1
        wk2 = w2[best_at]
        k = best_at + 1
    return knots[:m].copy(), fvals[:m].copy(), n_loops, n_fevals


@jit
def knot_scales(D, knots, fvals, lam):
    """Per-node scales from a knot chain, truncated where f <= lam."""
    scales = np.zeros(D)
    start = 0
    for i in range(knots.shape[0]):
        f = fvals[i]
        if f <= lam:
            break
        s = 1.0 - lam / f
        for j in range(start, knots[i]):
            scales[j] = s
        start = knots[i]
    return scales


@jit
def knot_penalty(knots, fvals, w2, lam):
    """LOG penalty of the thresholded output, sum_j w_{k_j} ||v^(k_j)||.

    Uses ||v^(k_j)|| = w_{k_j} (a_j - a_{j+1}) for the latent construction
    behind the knot algorithm, with a_{m+1} = lam.
    """
    total = 0.0
    m = 0
    for i in range(knots.shape[0]):
        if fvals[i] <= lam:
            break
        m += 1
    for i in range(m):
        nxt = fvals[i + 1] if i + 1 < m else lam
        total += w2[knots[i] - 1] * (fvals[i] - nxt)
    return total


@jit
def gl_path_scales(z, w, lam):
    """GL prox on a directed path, one backward sweep.

    ``w[l]`` weighs the group rooted at node l (node l and everything below).
    Also returns ``a[l]``, the squared norm of that group when its block is
    reached in the sweep.
    """
    D = z.shape[0]
    c = np.empty(D)
    a = np.empty(D)
    carry = 0.0
    for l in range(D - 1, -1, -1):
        a[l] = z[l] + carry
        r = math.sqrt(a[l])
        mu = lam * w[l]
        if r > mu:
            c[l] = 1.0 - mu / r
            carry = (r - mu) * (r - mu)
        else:
            c[l] = 0.0
            carry = 0.0
    scales = np.empty(D)
    acc = 1.0
    for l in range(D):
        acc *= c[l]
        scales[l] = acc
    return scales, a


@jit
def _mgl_sums(bn, W, i, v):
    h = 0.0
    h3 = 0.0
    for m in range(i, bn.shape[0]):
        w2 = W[i, m] * W[i, m]
        d = w2 + v
        t = w2 * bn[m] / (d * d)
        h += t
        h3 += t / d
    return h, h3


@jit
def _mgl_root(bn, W, i, lam, max_iter):
    """Solve sum_m W^2 bn / (W^2 + v)^2 = lam^2 for v > 0.

    Newton on 1 - lam / sqrt(h(v)) inside a bracket, bisecting whenever a
    step leaves it.
    """
    lam2 = lam * lam
    lo = 0.0
    hi = 1.0
    for _ in range(2100):
        h, _h3 = _mgl_sums(bn, W, i, hi)
        if h < lam2:
            break
        lo = hi
        hi *= 2.0
    v = lo
    for _ in range(max_iter):
        h, h3 = _mgl_sums(bn, W, i, v)
        g = h - lam2
        if abs(g) <= 1e-12 * lam2:
            return v, True
        if g > 0.0:
            lo = v
        else:
            hi = v
        if hi - lo <= 1e-14 * (1.0 + v):
            return v, True
        vn = v - (h - h * math.sqrt(h) / lam) / h3
        if not (lo < vn < hi):
            vn = 0.5 * (lo + hi)
        v = vn
    return v, False


@jit
def _mgl_sweep(z, ynorm, W, lam, max_iter, t, a, lo, r, bn, vhat):
    """One backward dual BCD sweep over groups D-1, ..., lo, in place.

    Every iterate is a per-node multiple of y, so ``t[m]`` scales node m and
    ``a[l, m]`` is the dual coefficient of group l on node m. Returns the
    largest change ``|dt_m| * ||y_{s_m}||`` and the root-finding flag.
    """
    D = z.shape[0]
    lam2 = lam * lam
    change = 0.0
    ok = True
    for i in range(D - 1, lo - 1, -1):
        s = 0.0
        for m in range(i, D):
            r[m] = t[m] + W[i, m] * a[i, m]
            bn[m] = r[m] * r[m] * z[m]
            s += bn[m] / (W[i, m] * W[i, m])
        if lam2 >= s:
            vhat[i] = 0.0
            for m in range(i, D):
                a[i, m] = r[m] / W[i, m]
                change = max(change, abs(t[m]) * ynorm[m])
                t[m] = 0.0
            continue
        v, conv = _mgl_root(bn, W, i, lam, max_iter)
        ok = ok and conv
        vhat[i] = v
        for m in range(i, D):
            w2 = W[i, m] * W[i, m]
            a[i, m] = W[i, m] * r[m] / (w2 + v)
            tn = r[m] * v / (w2 + v)
            change = max(change, abs(tn - t[m]) * ynorm[m])
            t[m] = tn
    return change, ok


@jit
def _mgl_roots_residual(c, W, lam, K, p, u, N, F):
    """Stationarity of the mGL prox on nodes ``:K`` in log-roots ``p``.

    With ``v_l = exp(p_l)`` the optimality conditions read
    ``u_m = c_m / (1 + sum_{l<=m} W[l, m]^2 / v_l)`` and
    ``lam v_l = ||W[l, l:K] u[l:K]||``. Fills ``u``, the squared group norms
    ``N`` and the residual ``F_l = log(sqrt(N_l) / lam) - p_l``; returns
    False when a group norm vanishes.
    """
    for m in range(K):
        s = 1.0
        for l in range(m + 1):
            s += W[l, m] * W[l, m] * math.exp(-p[l])
        u[m] = c[m] / s
    for l in range(K):
        n2 = 0.0
        for m in range(l, K):
            n2 += W[l, m] * W[l, m] * u[m] * u[m]
        if not n2 > 0.0:
            return False
        N[l] = n2
        F[l] = 0.5 * math.log(n2) - math.log(lam) - p[l]
    return True


@jit
def _mgl_roots_newton(c, W, lam, K, p, u, tol, max_iter):
    """Damped Newton on the log-root stationarity system, in place.

    Returns True once ``max |F_l| <= tol``. Failure (a vanishing group or
    no progress) means the support guess ``K`` is too long.
    """
    N = np.empty(K)
    F = np.empty(K)
    N2 = np.empty(K)
    F2 = np.empty(K)
    u2 = np.empty(c.shape[0])
    p2 = np.empty(K)
    du = np.empty(K)
    if not _mgl_roots_residual(c, W, lam, K, p, u, N, F):
        return False
    for _ in range(max_iter):
        fmax = np.max(np.abs(F))
        if fmax <= tol:
            return True
        J = -np.eye(K)
        for j in range(K):
            ej = math.exp(-p[j])
            # du_m / dp_j for m >= j
            for m in range(j, K):
                du[m] = (u[m] * u[m] / c[m] if c[m] > 0.0 else 0.0) * W[j, m] * W[j, m] * ej
            for l in range(K):
                acc = 0.0
                for m in range(max(l, j), K):
                    acc += W[l, m] * W[l, m] * u[m] * du[m]
                J[l, j] += acc / N[l]
        try:
            step = np.linalg.solve(J, F)
        except Exception:
            return False
        s = 1.0
        accepted = False
        for _ls in range(50):
            for l in range(K):
                p2[l] = p[l] - s * step[l]
            if _mgl_roots_residual(c, W, lam, K, p2, u2, N2, F2):
                if np.max(np.abs(F2)) < (1.0 - 1e-4 * s) * fmax:
                    accepted = True
                    break
            s *= 0.5
        if not accepted:
            return False
        for l in range(K):
            p[l] = p2[l]
            N[l] = N2[l]
            F[l] = F2[l]
        for m in range(K):
            u[m] = u2[m]
    return np.max(np.abs(F)) <= tol


@jit
def _effective_end(t, ynorm, thresh):
    """One past the last node with ``|t_m| ||y_{s_m}|| > thresh``."""
    for m in range(t.shape[0] - 1, -1, -1):
        if abs(t[m]) * ynorm[m] > thresh:
            return m + 1
    return 0


@jit
def _mgl_primal(c, W, lam, u):
    """``0.5 ||c - u||^2 + lam sum_l ||W[l, l:] u[l:]||``."""
    D = c.shape[0]
    f = 0.0
    for m in range(D):
        f += 0.5 * (c[m] - u[m]) * (c[m] - u[m])
    for l in range(D):
        s = 0.0
        for m in range(l, D):
            s += W[l, m] * W[l, m] * u[m] * u[m]
        f += lam * math.sqrt(s)
    return f


@jit
def _mgl_split_gap(z, c, W, lam, K, u, max_iter, max_sweeps, gap_tol):
    """Duality gap of ``u`` (zero beyond node K) against a built dual point.

    Groups l < K get ``lam W[l] u / ||W[l] u||``, scaled down if rounding
    pushes them past the ball. Groups from K on come from dual BCD sweeps on
    the tail alone, whose residual is the tail iterate. Sweeps stop once the
    gap is at most ``gap_tol``. Returns the gap and the number of sweeps.
    """
    D = c.shape[0]
    res = c.copy()
    for l in range(K):
        n2 = 0.0
        for m in range(l, K):
            n2 += W[l, m] * W[l, m] * u[m] * u[m]
        n = math.sqrt(n2)
        if not n > 0.0:
            return np.inf, 0
        # alpha_l = f * W u; make sure its norm is at most lam
        f = lam / n
        an2 = 0.0
        for m in range(l, K):
            an2 += (f * W[l, m] * u[m]) ** 2
        if an2 > lam * lam:
            f *= lam / math.sqrt(an2)
        for m in range(l, K):
            res[m] -= W[l, m] * f * W[l, m] * u[m]
    head = 0.0
    for m in range(K):
        head += res[m] * res[m]
    upper = _mgl_primal(c, W, lam, u)
    half = 0.5 * np.dot(c, c)
    if K >= D:
        return upper - (half - 0.5 * head), 0
    t = np.ones(D)
    a = np.zeros((D, D))
    r = np.empty(D)
    bn = np.empty(D)
    vh = np.zeros(D)
    gap = np.inf
    for k in range(max_sweeps):
        _mgl_sweep(z, c, W, lam, max_iter, t, a, K, r, bn, vh)
        tail = 0.0
        for m in range(K, D):
            tail += (c[m] * t[m]) ** 2
        gap = upper - (half - 0.5 * (head + tail))
        if gap <= gap_tol:
            return gap, k + 1
    return gap, max_sweeps


@jit
def mgl_path_scales(z, W, lam, max_iter, tol, max_passes):
    """Modified-GL prox on a directed path.

    ``W[l, m]`` (m >= l) weighs node m inside the group rooted at node l.
    The first backward sweep is the one-pass scheme; it is exact when each
    group's weights are constant over its nodes and otherwise only a
    starting point. With ``max_passes > 1`` the sweeps continue as dual BCD.
    The dual blocks stay feasible, so ``0.5 ||y||^2 - 0.5 ||beta||^2`` is a
    lower bound on the optimal value; the best primal candidate, either the
    current iterate or Newton on the log-root system over a truncated
    support, gives an upper bound. Stops when the gap is at most
    ``tol * (1 + 0.5 ||y||^2)``; since the objective is 1-strongly convex,
    ``||beta - prox||^2 <= 2 gap``.

    Returns the per-node scales, the root ``v_l`` per group (``lam v_l`` is
    the weighted norm of group l at the returned point; 0 where zeroed), the
    number of sweeps and a convergence flag.
    """
    D = z.shape[0]
    t = np.ones(D)
    vhat = np.zeros(D)
    if lam == 0.0:
        return t, vhat, 1, True
    a = np.zeros((D, D))
    r = np.empty(D)
    bn = np.empty(D)
    c = np.sqrt(z)
    scale = 1.0 + np.max(c)
    half = 0.5 * np.dot(c, c)
    gap_tol = tol * (1.0 + half)
    _change, ok = _mgl_sweep(z, c, W, lam, max_iter, t, a, 0, r, bn, vhat)
    if max_passes == 1:
        return t, vhat, 1, ok
    u = np.empty(D)
    un = np.zeros(D)
    sweeps = 1
    next_polish = 2
    while sweeps < max_passes:
        _change, good = _mgl_sweep(z, c, W, lam, max_iter, t, a, 0, r, bn, vhat)
        ok = ok and good
        sweeps += 1
        for m in range(D):
            u[m] = c[m] * t[m]
        if _mgl_primal(c, W, lam, u) - (half - 0.5 * np.dot(u, u)) <= gap_tol:
            return t, vhat, sweeps, ok
        if sweeps < next_polish:
            continue
        next_polish *= 2
        lastK = -1
        for k in range(4):
            K = _effective_end(t, c, 10.0 ** (-3 - 3 * k) * scale)
            if K == lastK:
                continue
            lastK = K
            pk = np.empty(K)
            prev = 0.0
            for l in range(K):
                pk[l] = math.log(vhat[l]) if vhat[l] > 0.0 else prev - 2.0
                prev = pk[l]
            un[:] = 0.0
            if K > 0 and not _mgl_roots_newton(c, W, lam, K, pk, un, 1e-13, 30):
                continue
            gap, n = _mgl_split_gap(z, c, W, lam, K, un, max_iter, SPLIT_SWEEPS,
                                    gap_tol)
            sweeps += n
            if gap <= gap_tol:
                for m in range(D):
                    t[m] = un[m] / c[m] if (m < K and c[m] > 0.0) else 0.0
                    vhat[m] = math.exp(pk[m]) if m < K else 0.0
                return t, vhat, sweeps, ok
    return t, vhat, sweeps, False


@jit
def log_naive_bcd(y, indptr, indices, w, lam, tol, max_cycles, beta, v):
    """Cyclic BCD over LOG latents; ``beta`` and ``v`` are updated in place."""
    G = indptr.shape[0] - 1
    p = y.shape[0]
    ymax = 0.0
    for i in range(p):
        ymax = max(ymax, abs(y[i]))
    thresh = tol * (1.0 + ymax)
    prev = np.empty(p)
    for cycle in range(1, max_cycles + 1):
        prev[:] = beta
        for g in range(G):
            a = indptr[g]
            b = indptr[g + 1]
            nrm2 = 0.0
            for q in range(a, b):
                i = indices[q]
                r = y[i] - beta[i] + v[q]
                nrm2 += r * r
            nrm = math.sqrt(nrm2)
            mu = lam * w[g]
            fac = 1.0 - mu / nrm if nrm > mu else 0.0
            for q in range(a, b):
                i = indices[q]
                r = y[i] - beta[i] + v[q]
                new = fac * r
                beta[i] += new - v[q]
                v[q] = new
        if G <= 1:
            return cycle, True
        change = 0.0
        for i in range(p):
            change = max(change, abs(beta[i] - prev[i]))
        if change <= thresh:
            return cycle, True
    return max_cycles, False


@jit
def gl_dual_bcd(y, indptr, indices, w, lam, tol, max_cycles, beta, eta):
    """Cyclic BCD on the GL dual blocks; ``beta`` and ``eta`` in place.

    Each block is the projection of the current residual onto the ball of
    radius lam * w_g. With ``max_cycles == 1`` this is a single pass.
    """
    G = indptr.shape[0] - 1
    p = y.shape[0]
    ymax = 0.0
    for i in range(p):
        ymax = max(ymax, abs(y[i]))
    thresh = tol * (1.0 + ymax)
    prev = np.empty(p)
    for cycle in range(1, max_cycles + 1):
        prev[:] = beta
        for g in range(G):
            a = indptr[g]
            b = indptr[g + 1]
            nrm2 = 0.0
            for q in range(a, b):
                r = beta[indices[q]] + eta[q]
                nrm2 += r * r
            nrm = math.sqrt(nrm2)
            mu = lam * w[g]
            fac = mu / nrm if nrm > mu else 1.0
            for q in range(a, b):
                i = indices[q]
                r = beta[i] + eta[q]
                e = fac * r
                beta[i] = r - e
                eta[q] = e
        if G <= 1:
            return cycle, True
        change = 0.0
        for i in range(p):
            change = max(change, abs(beta[i] - prev[i]))
        if change <= thresh:
            return cycle, True
    return max_cycles, False


@jit
def _path_block_update(r_src, beta, blocks, idx, node_ptr, n0, n1, w2, lam,
                       tie_rtol, subtract):
    """Exact LOG prox of one path block against the current residual.

    ``r_src`` is the target vector: y for BCD (residual y - beta + block) or
    the ADMM point itself when ``subtract`` is False. Writes the new block
    and returns its penalty value.
    """
    D = n1 - n0
    z = np.zeros(D)
    for j in range(D):
        for q in range(node_ptr[n0 + j], node_ptr[n0 + j + 1]):
            if subtract:
                i = idx[q]
                r = r_src[i] - beta[i] + blocks[q]
            else:
                r = r_src[q]
            z[j] += r * r
    knots, fvals, _l, _f = log_path_knots(z, w2[n0:n1], lam, tie_rtol)
    sc = knot_scales(D, knots, fvals, lam)
    for j in range(D):
        s = sc[j]
        for q in range(node_ptr[n0 + j], node_ptr[n0 + j + 1]):
            if subtract:
                i = idx[q]
                r = r_src[i] - beta[i] + blocks[q]
                new = s * r
                beta[i] += new - blocks[q]
                blocks[q] = new
            else:
                blocks[q] = s * r_src[q]
    return knot_penalty(knots, fvals, w2[n0:n1], lam)


@jit
def log_path_bcd(y, path_ptr, node_ptr, idx, w2, lam, tol, max_cycles, beta,
                 blocks, penalties, tie_rtol):
    """Path-based BCD for the LOG prox; each block update is exact.

    Path l owns path-nodes ``path_ptr[l]:path_ptr[l+1]``; path-node j owns
    ``idx[node_ptr[j]:node_ptr[j+1]]``. ``blocks`` is aligned with ``idx``.
    """
    L = path_ptr.shape[0] - 1
    p = y.shape[0]
    ymax = 0.0
    for i in range(p):
        ymax = max(ymax, abs(y[i]))
    thresh = tol * (1.0 + ymax)
    prev = np.empty(p)
    for cycle in range(1, max_cycles + 1):
        prev[:] = beta
        for l in range(L):
            penalties[l] = _path_block_update(
                y, beta, blocks, idx, node_ptr, path_ptr[l], path_ptr[l + 1],
                w2, lam, tie_rtol, True)
        if L <= 1:
            return cycle, True
        change = 0.0
        for i in range(p):
            change = max(change, abs(beta[i] - prev[i]))
        if change <= thresh:
            return cycle, True
    return max_cycles, False


@jit
def log_paths_prox(v, path_ptr, node_ptr, w2, lam, out, penalties, tie_rtol):
    """Independent LOG prox on every path block of a stacked vector ``v``."""
    L = path_ptr.shape[0] - 1
    dummy = np.empty(0)
    idx = np.empty(0, np.int64)
    for l in range(L):
        penalties[l] = _path_block_update(
            v, dummy, out, idx, node_ptr, path_ptr[l], path_ptr[l + 1],
            w2, lam, tie_rtol, False)


@jit
def subdiagonal_stats(S, T):
    """Per-lag sums over both triangles: ||S_m||^2, <S_m, T_m>, ||T_m||^2.

    Lag 0 (the diagonal) is counted once.
    """
    p = S.shape[0]
    zs = np.zeros(p)
    cross = np.zeros(p)
    zt = np.zeros(p)
    for m in range(p):
        a = 0.0
        b = 0.0
        c = 0.0
        for i in range(p - m):
            s1 = S[i, i + m]
            s2 = S[i + m, i]
            t1 = T[i, i + m]
            t2 = T[i + m, i]
            if m == 0:
                a += s1 * s1
                b += s1 * t1
                c += t1 * t1
            else:
                a += s1 * s1 + s2 * s2
                b += s1 * t1 + s2 * t2
                c += t1 * t1 + t2 * t2
        zs[m] = a
        cross[m] = b
        zt[m] = c
    return zs, cross, zt
