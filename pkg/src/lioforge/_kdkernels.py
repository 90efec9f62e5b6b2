"""Numba kernels behind :class:`lioforge.ikd_tree.IkdTree`.

The tree lives in flat arrays indexed by node slot:

    pt (C,3)  point          lc, rc, par   child / parent slot (-1 for none)
    ax        split axis     sz            nodes in subtree (deleted included)
    nd        deleted nodes in subtree     dl   node itself deleted
    lo, hi    bounding box of the *live* points of the subtree
    dirty     counters need recomputation

``meta`` holds [root, high-water slot, free count, rebuild count].
"""

import math

import numpy as np
from numba import njit

ROOT, NALLOC, NFREE, NREBUILD = 0, 1, 2, 3
STACK = 256


@njit(cache=True)
def _alloc(meta, free):
    if meta[NFREE] > 0:
        meta[NFREE] -= 1
        return free[meta[NFREE]]
    s = meta[NALLOC]
    meta[NALLOC] += 1
    return s


@njit(cache=True)
def _release(meta, free, s):
    free[meta[NFREE]] = s
    meta[NFREE] += 1


@njit(cache=True)
def _recompute(n, pt, lc, rc, sz, nd, dl, lo, hi):
    s = 1
    d = 1 if dl[n] else 0
    for a in range(3):
        if dl[n]:
            lo[n, a] = np.inf
            hi[n, a] = -np.inf
        else:
            lo[n, a] = pt[n, a]
            hi[n, a] = pt[n, a]
    for c in (lc[n], rc[n]):
        if c >= 0:
            s += sz[c]
            d += nd[c]
            for a in range(3):
                if lo[c, a] < lo[n, a]:
                    lo[n, a] = lo[c, a]
                if hi[c, a] > hi[n, a]:
                    hi[n, a] = hi[c, a]
    sz[n] = s
    nd[n] = d


@njit(cache=True)
def _violates(n, lc, rc, sz, nd, balance_alpha, deletion_alpha):
    s = sz[n]
    l = sz[lc[n]] if lc[n] >= 0 else 0
    r = sz[rc[n]] if rc[n] >= 0 else 0
    m = l if l > r else r
    if m > balance_alpha * s:
        return True
    if nd[n] > deletion_alpha * s:
        return True
    return False


@njit(cache=True)
def _link(meta, lc, rc, parent, side, child):
    if parent < 0:
        meta[ROOT] = child
    elif side == 0:
        lc[parent] = child
    else:
        rc[parent] = child


@njit(cache=True)
def _build_into(src, slots, parent, side, pt, lc, rc, par, ax, sz, nd, dl, lo, hi, dirty, meta):
    """Balanced subtree over ``src`` written into ``slots``; returns its root slot."""
    m = src.shape[0]
    if m == 0:
        _link(meta, lc, rc, parent, side, -1)
        return -1
    idx = np.arange(m)
    st_s = np.empty(STACK * 4, np.int64)
    st_e = np.empty(STACK * 4, np.int64)
    st_p = np.empty(STACK * 4, np.int64)
    st_d = np.empty(STACK * 4, np.int64)
    top = 0
    st_s[0] = 0
    st_e[0] = m
    st_p[0] = parent
    st_d[0] = side
    top = 1
    used = 0
    root = -1
    while top > 0:
        top -= 1
        s = st_s[top]
        e = st_e[top]
        p = st_p[top]
        sd = st_d[top]
        # widest-spread axis
        best_axis = 0
        best_spread = -1.0
        for a in range(3):
            mn = np.inf
            mx = -np.inf
            for k in range(s, e):
                v = src[idx[k], a]
                if v < mn:
                    mn = v
                if v > mx:
                    mx = v
            if mx - mn > best_spread:
                best_spread = mx - mn
                best_axis = a
        seg = idx[s:e].copy()
        keys = np.empty(e - s)
        for k in range(e - s):
            keys[k] = src[seg[k], best_axis]
        order = np.argsort(keys, kind="mergesort")
        for k in range(e - s):
            idx[s + k] = seg[order[k]]
        mid = s + (e - s) // 2
        node = slots[used]
        used += 1
        for a in range(3):
            pt[node, a] = src[idx[mid], a]
        ax[node] = best_axis
        lc[node] = -1
        rc[node] = -1
        par[node] = p
        dl[node] = False
        dirty[node] = 0
        if p < 0 and sd < 0:
            meta[ROOT] = node
        else:
            _link(meta, lc, rc, p, sd, node)
        if root < 0:
            root = node
        if mid + 1 < e:
            st_s[top] = mid + 1
            st_e[top] = e
            st_p[top] = node
            st_d[top] = 1
            top += 1
        if s < mid:
            st_s[top] = s
            st_e[top] = mid
            st_p[top] = node
            st_d[top] = 0
            top += 1
    # children were created after parents: reverse order is a valid post-order
    for k in range(used - 1, -1, -1):
        _recompute(slots[k], pt, lc, rc, sz, nd, dl, lo, hi)
    return root


@njit(cache=True)
def _rebuild(n, pt, lc, rc, par, ax, sz, nd, dl, lo, hi, dirty, meta, free):
    parent = par[n]
    side = -1
    if parent >= 0:
        side = 0 if lc[parent] == n else 1
    total = sz[n]
    nodes = np.empty(total, np.int64)
    stack = np.empty(STACK, np.int64)
    stack[0] = n
    top = 1
    cnt = 0
    nlive = 0
    while top > 0:
        top -= 1
        x = stack[top]
        nodes[cnt] = x
        cnt += 1
        if not dl[x]:
            nlive += 1
        if lc[x] >= 0:
            stack[top] = lc[x]
            top += 1
        if rc[x] >= 0:
            stack[top] = rc[x]
            top += 1
    src = np.empty((nlive, 3))
    k = 0
    for i in range(cnt):
        x = nodes[i]
        if not dl[x]:
            for a in range(3):
                src[k, a] = pt[x, a]
            k += 1
    # slots kept in ascending order so rebuilt layouts are reproducible
    nodes = np.sort(nodes[:cnt])
    for i in range(nlive, cnt):
        _release(meta, free, nodes[i])
        lc[nodes[i]] = -1
        rc[nodes[i]] = -1
        dirty[nodes[i]] = 0
    meta[NREBUILD] += 1
    if parent < 0:
        side = -1
    return _build_into(src, nodes[:nlive], parent, side, pt, lc, rc, par, ax, sz, nd, dl,
                       lo, hi, dirty, meta)


@njit(cache=True)
def _fix(pt, lc, rc, par, ax, sz, nd, dl, lo, hi, dirty, meta, free, balance_alpha, deletion_alpha):
    """Post-order pass over dirty nodes: recompute counters, rebuild violators."""
    root = meta[ROOT]
    if root < 0 or not dirty[root]:
        return
    stack = np.empty(STACK, np.int64)
    state = np.empty(STACK, np.int64)
    stack[0] = root
    state[0] = 0
    top = 1
    while top > 0:
        n = stack[top - 1]
        if state[top - 1] == 0:
            state[top - 1] = 1
            for c in (lc[n], rc[n]):
                if c >= 0 and dirty[c]:
                    stack[top] = c
                    state[top] = 0
                    top += 1
            continue
        top -= 1
        _recompute(n, pt, lc, rc, sz, nd, dl, lo, hi)
        dirty[n] = 0
        if _violates(n, lc, rc, sz, nd, balance_alpha, deletion_alpha):
            _rebuild(n, pt, lc, rc, par, ax, sz, nd, dl, lo, hi, dirty, meta, free)


@njit(cache=True)
def _mark_up(n, par, dirty):
    while n >= 0 and not dirty[n]:
        dirty[n] = 1
        n = par[n]


@njit(cache=True)
def _occupied(q, voxel, pt, lc, rc, dl, lo, hi, meta):
    """True when a live point shares ``q``'s voxel (or equals ``q`` if voxel == 0)."""
    root = meta[ROOT]
    if root < 0:
        return False
    blo = np.empty(3)
    bhi = np.empty(3)
    key = np.empty(3)
    if voxel > 0.0:
        for a in range(3):
            key[a] = math.floor(q[a] / voxel)
            blo[a] = key[a] * voxel - 1e-9 * (1.0 + abs(key[a] * voxel))
            bhi[a] = (key[a] + 1.0) * voxel + 1e-9 * (1.0 + abs(key[a] * voxel))
    else:
        for a in range(3):
            blo[a] = q[a]
            bhi[a] = q[a]
    stack = np.empty(STACK, np.int64)
    stack[0] = root
    top = 1
    while top > 0:
        top -= 1
        n = stack[top]
        skip = False
        for a in range(3):
            if hi[n, a] < blo[a] or lo[n, a] > bhi[a]:
                skip = True
                break
        if skip:
            continue
        if not dl[n]:
            hit = True
            for a in range(3):
                if voxel > 0.0:
                    if math.floor(pt[n, a] / voxel) != key[a]:
                        hit = False
                        break
                elif pt[n, a] != q[a]:
                    hit = False
                    break
            if hit:
                return True
        if lc[n] >= 0:
            stack[top] = lc[n]
            top += 1
        if rc[n] >= 0:
            stack[top] = rc[n]
            top += 1
    return False


@njit(cache=True)
def insert_points(points, voxel, pt, lc, rc, par, ax, sz, nd, dl, lo, hi, dirty, meta, free,
                  balance_alpha, deletion_alpha):
    inserted = 0
    for i in range(points.shape[0]):
        q = points[i]
        if _occupied(q, voxel, pt, lc, rc, dl, lo, hi, meta):
            continue
        node = _alloc(meta, free)
        for a in range(3):
            pt[node, a] = q[a]
            lo[node, a] = q[a]
            hi[node, a] = q[a]
        lc[node] = -1
        rc[node] = -1
        dl[node] = False
        sz[node] = 1
        nd[node] = 0
        dirty[node] = 1
        root = meta[ROOT]
        if root < 0:
            par[node] = -1
            ax[node] = 0
            meta[ROOT] = node
        else:
            n = root
            while True:
                dirty[n] = 1
                sz[n] += 1
                for a in range(3):
                    if q[a] < lo[n, a]:
                        lo[n, a] = q[a]
                    if q[a] > hi[n, a]:
                        hi[n, a] = q[a]
                a = ax[n]
                if q[a] < pt[n, a]:
                    if lc[n] < 0:
                        lc[n] = node
                        break
                    n = lc[n]
                else:
                    if rc[n] < 0:
                        rc[n] = node
                        break
                    n = rc[n]
            par[node] = n
            ax[node] = (ax[n] + 1) % 3
        inserted += 1
        _fix(pt, lc, rc, par, ax, sz, nd, dl, lo, hi, dirty, meta, free, balance_alpha, deletion_alpha)
    return inserted


@njit(cache=True)
def delete_points(points, tol, pt, lc, rc, par, ax, sz, nd, dl, lo, hi, dirty, meta, free,
                  balance_alpha, deletion_alpha):
    removed = 0
    stack = np.empty(STACK, np.int64)
    for i in range(points.shape[0]):
        q = points[i]
        root = meta[ROOT]
        if root < 0:
            break
        stack[0] = root
        top = 1
        while top > 0:
            top -= 1
            n = stack[top]
            skip = False
            for a in range(3):
                if hi[n, a] < q[a] - tol or lo[n, a] > q[a] + tol:
                    skip = True
                    break
            if skip:
                continue
            if not dl[n]:
                hit = True
                for a in range(3):
                    if abs(pt[n, a] - q[a]) > tol:
                        hit = False
                        break
                if hit:
                    dl[n] = True
                    removed += 1
                    _mark_up(n, par, dirty)
            if lc[n] >= 0:
                stack[top] = lc[n]
                top += 1
            if rc[n] >= 0:
                stack[top] = rc[n]
                top += 1
        _fix(pt, lc, rc, par, ax, sz, nd, dl, lo, hi, dirty, meta, free, balance_alpha, deletion_alpha)
    return removed


@njit(cache=True)
def delete_box(blo, bhi, pt, lc, rc, par, ax, sz, nd, dl, lo, hi, dirty, meta, free,
               balance_alpha, deletion_alpha):
    """Lazily delete every live point with blo <= p < bhi."""
    root = meta[ROOT]
    if root < 0:
        return 0
    removed = 0
    stack = np.empty(STACK, np.int64)
    stack[0] = root
    top = 1
    while top > 0:
        top -= 1
        n = stack[top]
        skip = False
        for a in range(3):
            if hi[n, a] < blo[a] or lo[n, a] >= bhi[a]:
                skip = True
                break
        if skip:
            continue
        if not dl[n]:
            inside = True
            for a in range(3):
                if not (blo[a] <= pt[n, a] < bhi[a]):
                    inside = False
                    break
            if inside:
                dl[n] = True
                removed += 1
                _mark_up(n, par, dirty)
        if lc[n] >= 0:
            stack[top] = lc[n]
            top += 1
        if rc[n] >= 0:
            stack[top] = rc[n]
            top += 1
    _fix(pt, lc, rc, par, ax, sz, nd, dl, lo, hi, dirty, meta, free, balance_alpha, deletion_alpha)
    return removed


@njit(cache=True)
def _key_less(d, p, nd_, q):
    """(d, p) < (nd_, q) in (distance, x, y, z) order."""
    if d != nd_:
        return d < nd_
    for a in range(3):
        if p[a] != q[a]:
            return p[a] < q[a]
    return False


@njit(cache=True)
def knn_batch(queries, k, max_d2, pt, lc, rc, dl, lo, hi, meta):
    m = queries.shape[0]
    out_i = np.full((m, k), -1, np.int64)
    out_d = np.full((m, k), np.inf)
    count = np.zeros(m, np.int64)
    root = meta[ROOT]
    if root < 0:
        return out_i, out_d, count
    stack = np.empty(STACK, np.int64)
    for qi in range(m):
        q = queries[qi]
        c = 0
        top = 0
        stack[0] = root
        top = 1
        while top > 0:
            top -= 1
            n = stack[top]
            worst = out_d[qi, k - 1] if c == k else max_d2
            bd = 0.0
            for a in range(3):
                if q[a] < lo[n, a]:
                    t = lo[n, a] - q[a]
                    bd += t * t
                elif q[a] > hi[n, a]:
                    t = q[a] - hi[n, a]
                    bd += t * t
            if bd > worst:
                continue
            if not dl[n]:
                d = 0.0
                for a in range(3):
                    t = pt[n, a] - q[a]
                    d += t * t
                if d <= max_d2:
                    if c < k:
                        pos = c
                        c += 1
                    elif _key_less(d, pt[n], out_d[qi, k - 1], pt[out_i[qi, k - 1]]):
                        pos = k - 1
                    else:
                        pos = -1
                    if pos >= 0:
                        while pos > 0 and _key_less(d, pt[n], out_d[qi, pos - 1], pt[out_i[qi, pos - 1]]):
                            out_d[qi, pos] = out_d[qi, pos - 1]
                            out_i[qi, pos] = out_i[qi, pos - 1]
                            pos -= 1
                        out_d[qi, pos] = d
                        out_i[qi, pos] = n
            # visit the child on the query's side first
            l = lc[n]
            r = rc[n]
            near = l
            far = r
            if l >= 0 and r >= 0:
                dl_ = 0.0
                dr_ = 0.0
                for a in range(3):
                    if q[a] < lo[l, a]:
                        dl_ += (lo[l, a] - q[a]) ** 2
                    elif q[a] > hi[l, a]:
                        dl_ += (q[a] - hi[l, a]) ** 2
                    if q[a] < lo[r, a]:
                        dr_ += (lo[r, a] - q[a]) ** 2
                    elif q[a] > hi[r, a]:
                        dr_ += (q[a] - hi[r, a]) ** 2
                if dr_ < dl_:
                    near = r
                    far = l
            if far >= 0:
                stack[top] = far
                top += 1
            if near >= 0:
                stack[top] = near
                top += 1
        count[qi] = c
    return out_i, out_d, count
