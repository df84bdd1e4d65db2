"""Numba kernels for tree growing, prediction and Shapley attribution.

Everything here is deterministic: split scans run in fixed feature and
row order, reductions are sequential, and thread count never changes the
floating-point result (parallel loops only touch disjoint slices).
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def grow_tree(XT, presortT, g, h, in_sample, col_ok, max_depth, max_nodes,
              lam, gamma, min_child_h):
    """Grow one regression tree by exact greedy split search, level by level.

    XT / presortT are feature-major (p, n): presortT[f] lists row indices in
    ascending order of feature f, computed once per training matrix. Each
    level scans every feature over all rows, keeping running prefix sums of
    gradient/hessian per active node; candidate thresholds sit at midpoints
    between distinct adjacent values within a node.

    Gain ties break toward the lower feature index and lower threshold
    (strict > while scanning features ascending / values ascending).

    Returns (feature, threshold, left, right, cover, value, node_g, node_h,
    n_nodes); leaves have feature = -1 and weight -G/(H+lam) in value.
    """
    p, n = XT.shape

    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    cover = np.zeros(max_nodes, np.float64)
    value = np.zeros(max_nodes, np.float64)
    node_g = np.zeros(max_nodes, np.float64)
    node_h = np.zeros(max_nodes, np.float64)

    node_of = np.full(n, -1, np.int64)
    g_total = 0.0
    h_total = 0.0
    for r in range(n):
        if in_sample[r]:
            node_of[r] = 0
            g_total += g[r]
            h_total += h[r]
    node_g[0] = g_total
    node_h[0] = h_total
    cover[0] = h_total

    n_nodes = 1
    level_start = 0
    level_end = 1

    for _depth in range(max_depth):
        n_level = level_end - level_start
        if n_level == 0:
            break

        cand_gain = np.full((p, n_level), -np.inf, np.float64)
        cand_thr = np.zeros((p, n_level), np.float64)
        cand_gl = np.zeros((p, n_level), np.float64)
        cand_hl = np.zeros((p, n_level), np.float64)

        for f in prange(p):
            if col_ok[f]:
                run_g = np.zeros(n_level, np.float64)
                run_h = np.zeros(n_level, np.float64)
                run_cnt = np.zeros(n_level, np.int64)
                last_val = np.zeros(n_level, np.float64)
                for ii in range(n):
                    r = presortT[f, ii]
                    nd = node_of[r]
                    if nd < level_start or nd >= level_end:
                        continue
                    j = nd - level_start
                    v = XT[f, r]
                    if run_cnt[j] > 0 and v > last_val[j]:
                        gl = run_g[j]
                        hl = run_h[j]
                        gr = node_g[nd] - gl
                        hr = node_h[nd] - hl
                        if hl >= min_child_h and hr >= min_child_h:
                            gt = node_g[nd]
                            ht = node_h[nd]
                            gain = 0.5 * (gl * gl / (hl + lam)
                                          + gr * gr / (hr + lam)
                                          - gt * gt / (ht + lam)) - gamma
                            if gain > cand_gain[f, j]:
                                cand_gain[f, j] = gain
                                cand_thr[f, j] = 0.5 * (last_val[j] + v)
                                cand_gl[f, j] = gl
                                cand_hl[f, j] = hl
                    run_g[j] += g[r]
                    run_h[j] += h[r]
                    run_cnt[j] += 1
                    last_val[j] = v

        # Sequential reduction: positive gain required, lowest feature wins ties.
        for nd in range(level_start, level_end):
            j = nd - level_start
            best_gain = 0.0
            best_f = -1
            best_thr = 0.0
            best_gl = 0.0
            best_hl = 0.0
            for f in range(p):
                if cand_gain[f, j] > best_gain:
                    best_gain = cand_gain[f, j]
                    best_f = f
                    best_thr = cand_thr[f, j]
                    best_gl = cand_gl[f, j]
                    best_hl = cand_hl[f, j]
            if best_f >= 0 and n_nodes + 2 <= max_nodes:
                feature[nd] = best_f
                threshold[nd] = best_thr
                lchild = n_nodes
                rchild = n_nodes + 1
                n_nodes += 2
                left[nd] = lchild
                right[nd] = rchild
                node_g[lchild] = best_gl
                node_h[lchild] = best_hl
                cover[lchild] = best_hl
                node_g[rchild] = node_g[nd] - best_gl
                node_h[rchild] = node_h[nd] - best_hl
                cover[rchild] = node_h[rchild]
            else:
                value[nd] = -node_g[nd] / (node_h[nd] + lam)

        if n_nodes > level_end:
            for r in range(n):
                nd = node_of[r]
                if level_start <= nd < level_end and feature[nd] >= 0:
                    fx = feature[nd]
                    if XT[fx, r] < threshold[nd]:
                        node_of[r] = left[nd]
                    else:
                        node_of[r] = right[nd]

        level_start = level_end
        level_end = n_nodes

    # Whatever remains active at the depth cap becomes a leaf.
    for nd in range(level_start, level_end):
        value[nd] = -node_g[nd] / (node_h[nd] + lam)

    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes],
            right[:n_nodes], cover[:n_nodes], value[:n_nodes],
            node_g[:n_nodes], node_h[:n_nodes], n_nodes)


@njit(cache=True, parallel=True)
def tree_leaf_values(X, feature, threshold, left, right, value, out):
    """Per-row leaf weight reached in a single tree (rows strictly below
    the threshold go left)."""
    for i in prange(X.shape[0]):
        nd = 0
        while feature[nd] >= 0:
            if X[i, feature[nd]] < threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] = value[nd]


@njit(cache=True, parallel=True)
def predict_margin_batch(X, roots, feature, threshold, left, right, value,
                         learning_rate, base_margin, tree_limit, out):
    """Margin prediction over packed trees (node indices are global)."""
    for i in prange(X.shape[0]):
        m = base_margin
        for t in range(tree_limit):
            nd = roots[t]
            while feature[nd] >= 0:
                if X[i, feature[nd]] < threshold[nd]:
                    nd = left[nd]
                else:
                    nd = right[nd]
            m += learning_rate * value[nd]
        out[i] = m


@njit(cache=True)
def _shap_one_tree(x, root, feature, threshold, left, right, cover, value,
                   arena_d, arena_z, arena_o, arena_w,
                   stk_node, stk_ud, stk_rd, stk_pz, stk_po, stk_pi, phi):
    """Path-dependent Shapley attribution of one tree's margin contribution.

    Explicit-stack depth-first walk. Each frame copies its parent's feature
    path into its own arena slab, extends it with the incoming edge's
    (zero_fraction, one_fraction) pair, and at a leaf unwinds each on-path
    feature out of the permutation-weight polynomial to read off its
    contribution. zero fractions are products of child/parent cover ratios
    (the conditional-expectation weight when the feature is unknown); one
    fractions are 1 while the row keeps following its own branch for that
    feature and 0 otherwise. A feature met twice on a path is first unwound
    and its fractions folded into the new edge, so each path element stays
    unique per feature.
    """
    sp = 0
    stk_node[sp] = root
    stk_ud[sp] = 0
    stk_rd[sp] = 0
    stk_pz[sp] = 1.0
    stk_po[sp] = 1.0
    stk_pi[sp] = -1
    sp = 1

    while sp > 0:
        sp -= 1
        nd = stk_node[sp]
        ud = stk_ud[sp]
        rd = stk_rd[sp]
        pz = stk_pz[sp]
        po = stk_po[sp]
        pi = stk_pi[sp]

        if rd > 0:
            for i in range(ud):
                arena_d[rd, i] = arena_d[rd - 1, i]
                arena_z[rd, i] = arena_z[rd - 1, i]
                arena_o[rd, i] = arena_o[rd - 1, i]
                arena_w[rd, i] = arena_w[rd - 1, i]

        # Extend the path with the incoming edge.
        arena_d[rd, ud] = pi
        arena_z[rd, ud] = pz
        arena_o[rd, ud] = po
        arena_w[rd, ud] = 1.0 if ud == 0 else 0.0
        for i in range(ud - 1, -1, -1):
            arena_w[rd, i + 1] += po * arena_w[rd, i] * (i + 1.0) / (ud + 1.0)
            arena_w[rd, i] = pz * arena_w[rd, i] * (ud - i) / (ud + 1.0)

        last = ud  # index of the last path element
        f = feature[nd]

        if f < 0:
            leaf_value = value[nd]
            for k in range(1, last + 1):
                zk = arena_z[rd, k]
                ok = arena_o[rd, k]
                next_one = arena_w[rd, last]
                total = 0.0
                if ok != 0.0:
                    for j in range(last - 1, -1, -1):
                        tmp = next_one * (last + 1.0) / ((j + 1.0) * ok)
                        total += tmp
                        next_one = arena_w[rd, j] - tmp * zk * (last - j) / (last + 1.0)
                else:
                    for j in range(last - 1, -1, -1):
                        total += arena_w[rd, j] * (last + 1.0) / (zk * (last - j))
                phi[arena_d[rd, k]] += total * (ok - zk) * leaf_value
            continue

        if x[f] < threshold[nd]:
            hot = left[nd]
            cold = right[nd]
        else:
            hot = right[nd]
            cold = left[nd]
        hot_z = cover[hot] / cover[nd]
        cold_z = cover[cold] / cover[nd]

        incoming_z = 1.0
        incoming_o = 1.0
        kfound = -1
        for k in range(1, last + 1):
            if arena_d[rd, k] == f:
                kfound = k
                break
        if kfound >= 0:
            incoming_z = arena_z[rd, kfound]
            incoming_o = arena_o[rd, kfound]
            # Unwind the earlier occurrence out of the weight polynomial.
            next_one = arena_w[rd, last]
            if incoming_o != 0.0:
                for j in range(last - 1, -1, -1):
                    tmp = arena_w[rd, j]
                    arena_w[rd, j] = next_one * (last + 1.0) / ((j + 1.0) * incoming_o)
                    next_one = tmp - arena_w[rd, j] * incoming_z * (last - j) / (last + 1.0)
            else:
                for j in range(last - 1, -1, -1):
                    arena_w[rd, j] = arena_w[rd, j] * (last + 1.0) / (incoming_z * (last - j))
            for j in range(kfound, last):
                arena_d[rd, j] = arena_d[rd, j + 1]
                arena_z[rd, j] = arena_z[rd, j + 1]
                arena_o[rd, j] = arena_o[rd, j + 1]
            last -= 1

        # Cold branch pushed first so the hot branch is explored first.
        stk_node[sp] = cold
        stk_ud[sp] = last + 1
        stk_rd[sp] = rd + 1
        stk_pz[sp] = cold_z * incoming_z
        stk_po[sp] = 0.0
        stk_pi[sp] = f
        sp += 1
        stk_node[sp] = hot
        stk_ud[sp] = last + 1
        stk_rd[sp] = rd + 1
        stk_pz[sp] = hot_z * incoming_z
        stk_po[sp] = incoming_o
        stk_pi[sp] = f
        sp += 1


@njit(cache=True, parallel=True)
def shap_batch(X, roots, feature, threshold, left, right, cover, value,
               max_depth, learning_rate, phi_out):
    """Per-row Shapley values over packed trees, scaled by learning rate.

    phi_out must be zero-initialised with shape (n_rows, n_features);
    the caller adds the model-wide base value separately.
    """
    n_rows = X.shape[0]
    n_feats = phi_out.shape[1]
    n_trees = roots.shape[0]
    slab = max_depth + 3
    stack_size = 2 * slab + 8
    for i in prange(n_rows):
        arena_d = np.empty((slab, slab), np.int64)
        arena_z = np.empty((slab, slab), np.float64)
        arena_o = np.empty((slab, slab), np.float64)
        arena_w = np.empty((slab, slab), np.float64)
        stk_node = np.empty(stack_size, np.int64)
        stk_ud = np.empty(stack_size, np.int64)
        stk_rd = np.empty(stack_size, np.int64)
        stk_pz = np.empty(stack_size, np.float64)
        stk_po = np.empty(stack_size, np.float64)
        stk_pi = np.empty(stack_size, np.int64)
        for t in range(n_trees):
            _shap_one_tree(X[i], roots[t], feature, threshold, left, right,
                           cover, value, arena_d, arena_z, arena_o, arena_w,
                           stk_node, stk_ud, stk_rd, stk_pz, stk_po, stk_pi,
                           phi_out[i])
        for j in range(n_feats):
            phi_out[i, j] *= learning_rate
