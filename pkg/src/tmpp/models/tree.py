"""Exact greedy decision trees grown level by level.

Every feature value is replaced by its rank among the distinct training
values, so a threshold between two consecutive distinct values is one
rank boundary and no value is binned approximately.  A level is scored
per feature from a (node, rank) histogram of the live rows or, when that
histogram would outgrow the rows themselves, by a scan over the rows
sorted by rank.  Without per-node feature sampling, only the smaller child
of each split is histogrammed; its sibling is the parent minus the child.

Split quality is the reduction of the weighted squared error,
``S_L^2/W_L + S_R^2/W_R - S^2/W``; for 0/1 targets this is half the
weighted Gini decrease, so one routine serves regression and
classification.  Ties go to the lowest feature index, then the lowest
threshold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

_MIN_GAIN = 1e-12
# re-sort the live rows once fewer than this share of the sorted rows is live
_COMPACT_BELOW = 0.7
# cap on (node, rank) cells held for one level
_LEVEL_CELLS = 1 << 22


class BinnedFeatures:
    """Rank codes of a training matrix, one contiguous row per feature.

    Built once and shared by every tree fit on the same matrix.
    """

    def __init__(self, X: np.ndarray):
        self.X = np.asarray(X)
        self.n, self.d = self.X.shape
        self.codes = np.empty((self.d, self.n), dtype=np.uint16)
        self.values: list[np.ndarray] = []
        for j in range(self.d):
            vals, inv = np.unique(self.X[:, j], return_inverse=True)
            if len(vals) > 2**16 and self.codes.dtype == np.uint16:
                self.codes = self.codes.astype(np.int32)
            self.codes[j] = inv
            self.values.append(vals)
        self.n_unique_all = np.asarray([len(v) for v in self.values], dtype=np.int64)

    def n_unique(self, j: int) -> int:
        return len(self.values[j])


@numba.njit(cache=True, nogil=True)
def _presort(codes, n_unique, rows):
    """Live rows of every feature ordered by (rank, row): a counting sort."""
    d = codes.shape[0]
    m = rows.shape[0]
    order = np.empty((d, m), dtype=np.int32)
    for f in range(d):
        u = n_unique[f]
        start = np.zeros(u + 1, dtype=np.int64)
        for k in range(m):
            start[codes[f, rows[k]] + 1] += 1
        for c in range(u):
            start[c + 1] += start[c]
        for k in range(m):
            i = rows[k]
            c = codes[f, i]
            order[f, start[c]] = i
            start[c] += 1
    return order


@numba.njit(cache=True, nogil=True)
def _consider(s, f, code, wl, sl, W, S, base, min_leaf, best_gain, best_f, best_code):
    wr = W[s] - wl
    if wl >= min_leaf and wr >= min_leaf:
        sr = S[s] - sl
        g = sl * sl / wl + sr * sr / wr - base[s]
        # features may arrive out of index order, so equal gains go to the lower index
        if g > best_gain[s] or (g == best_gain[s] and 0 <= f < best_f[s]):
            best_gain[s] = g
            best_f[s] = f
            best_code[s] = code


@numba.njit(cache=True, nogil=True)
def _fill_hist(codes, n_unique, feats, off, rows, slot, w, wy, allowed, HW, HS):
    """Accumulate rows into ``H[slot, off[t] + code]`` for every feature ``feats[t]``."""
    use_allowed = allowed.shape[0] > 0
    for t in range(feats.shape[0]):
        f = feats[t]
        o = off[t]
        for k in range(rows.shape[0]):
            i = rows[k]
            s = slot[i]
            if use_allowed and not allowed[s, f]:
                continue
            h = o + codes[f, i]
            HW[s, h] += w[i]
            HS[s, h] += wy[i]


@numba.njit(cache=True, nogil=True)
def _eval_hist(n_unique, feats, off, HW, HS, W, S, base, min_leaf, allowed, best_gain, best_f, best_code):
    use_allowed = allowed.shape[0] > 0
    for t in range(feats.shape[0]):
        f = feats[t]
        u = n_unique[f]
        o = off[t]
        for s in range(W.shape[0]):
            if use_allowed and not allowed[s, f]:
                continue
            wl = 0.0
            sl = 0.0
            prev = -1
            for c in range(u):
                hw = HW[s, o + c]
                if hw == 0.0:
                    continue
                if prev >= 0:
                    _consider(s, f, prev, wl, sl, W, S, base, min_leaf, best_gain, best_f, best_code)
                wl += hw
                sl += HS[s, o + c]
                prev = c


@numba.njit(cache=True, nogil=True)
def _scan_sorted(codes, order, slot, w, wy, feats, W, S, base, min_leaf, allowed,
                 best_gain, best_f, best_code):
    n_front = W.shape[0]
    use_allowed = allowed.shape[0] > 0
    WL = np.empty(n_front)
    SL = np.empty(n_front)
    last = np.empty(n_front, dtype=np.int64)
    for t in range(feats.shape[0]):
        f = feats[t]
        WL[:] = 0.0
        SL[:] = 0.0
        last[:] = -1
        for k in range(order.shape[1]):
            i = order[f, k]
            s = slot[i]
            if s < 0:
                continue
            if use_allowed and not allowed[s, f]:
                continue
            c = codes[f, i]
            if last[s] >= 0 and c != last[s]:
                _consider(s, f, last[s], WL[s], SL[s], W, S, base, min_leaf, best_gain, best_f, best_code)
            WL[s] += w[i]
            SL[s] += wy[i]
            last[s] = c


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self) -> int:
        depth = np.zeros(len(self.feature), dtype=np.int64)
        for i in range(len(self.feature)):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if len(depth) else 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index of every row; ``x <= threshold`` goes left."""
        node = np.zeros(len(X), dtype=np.int64)
        idx = np.flatnonzero(self.feature[node] >= 0)
        while len(idx):
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            idx = idx[self.feature[node[idx]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
        )


def grow_tree(
    binned: BinnedFeatures,
    y: np.ndarray,
    weight: np.ndarray | None = None,
    max_depth: int = 4,
    min_samples_leaf: float = 1,
    max_features: int | None = None,
    rng: np.random.Generator | None = None,
) -> Tree:
    """Fit one tree to targets ``y`` under (integer or real) sample weights.

    With ``max_features`` set, each node draws its own feature subset from
    ``rng``.
    """
    d, X = binned.d, binned.X
    y = np.asarray(y, dtype=np.float64)
    w = np.ones(binned.n) if weight is None else np.asarray(weight, dtype=np.float64)
    wy = w * y
    min_leaf = max(float(min_samples_leaf), 1.0)
    subsample = max_features is not None and max_features < d
    no_mask = np.zeros((0, 0), dtype=np.bool_)
    # parent-minus-child histograms are exact only for integer weights
    subtract_ok = not subsample and bool(np.all(w == np.round(w)))

    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    frontier = [0]
    # frontier slot of each row, -1 once it sits in a finished leaf
    slot = np.where(w > 0, 0, -1).astype(np.int64)
    rows = np.flatnonzero(slot >= 0)
    codes, n_unique = binned.codes, binned.n_unique_all
    order = np.zeros((d, 0), dtype=np.int32)
    # previous level's histograms: (features, HW, HS) and each node's parent and sibling
    prev = None
    parent = sibling = None

    for _depth in range(max_depth + 1):
        if not frontier or len(rows) == 0:
            break
        n_front = len(frontier)
        live = slot[rows]
        W = np.bincount(live, weights=w[rows], minlength=n_front)
        S = np.bincount(live, weights=wy[rows], minlength=n_front)
        for i, node in enumerate(frontier):
            value[node] = S[i] / W[i] if W[i] > 0 else 0.0
        if _depth == max_depth:
            break
        if subsample:
            allowed = np.zeros((n_front, d), dtype=np.bool_)
            for i in range(n_front):
                allowed[i, rng.choice(d, size=max_features, replace=False)] = True
            candidates = np.flatnonzero(allowed.any(axis=0))
        else:
            allowed = no_mask
            candidates = np.arange(d)
        candidates = candidates[n_unique[candidates] > 1]

        base = np.where(W > 0, S * S / np.where(W > 0, W, 1.0), 0.0)
        best_gain = np.full(n_front, _MIN_GAIN)
        best_f = np.full(n_front, -1, dtype=np.int64)
        best_code = np.zeros(n_front, dtype=np.int64)

        # a histogram costs n_front * n_unique cells, a sorted scan one pass over the rows
        use_hist = n_front * n_unique[candidates] <= len(rows)
        hist_feats = candidates[use_hist]
        off = np.concatenate([[0], np.cumsum(n_unique[hist_feats])])
        level = None
        if len(hist_feats) and n_front * off[-1] <= _LEVEL_CELLS:
            HW = np.zeros((n_front, off[-1]))
            HS = np.zeros((n_front, off[-1]))
            if subtract_ok and prev is not None and np.array_equal(prev[0], hist_feats):
                count = np.bincount(live, minlength=n_front)
                small = count <= count[sibling]
                small &= ~(small[sibling] & (np.arange(n_front) > sibling))  # one per pair
                direct = rows[small[live]]
                _fill_hist(codes, n_unique, hist_feats, off[:-1], direct, slot, w, wy, no_mask, HW, HS)
                big = np.flatnonzero(~small)
                HW[big] = prev[1][parent[big]] - HW[sibling[big]]
                HS[big] = prev[2][parent[big]] - HS[sibling[big]]
            else:
                _fill_hist(codes, n_unique, hist_feats, off[:-1], rows, slot, w, wy, allowed, HW, HS)
            _eval_hist(n_unique, hist_feats, off[:-1], HW, HS, W, S, base, min_leaf, allowed,
                       best_gain, best_f, best_code)
            if subtract_ok:
                level = (hist_feats, HW, HS)
        elif len(hist_feats):
            # too many cells for one table: histogram the features in groups
            lo = 0
            while lo < len(hist_feats):
                hi = lo + 1
                while hi < len(hist_feats) and n_front * (off[hi + 1] - off[lo]) <= _LEVEL_CELLS:
                    hi += 1
                group = hist_feats[lo:hi]
                goff = off[lo:hi] - off[lo]
                HW = np.zeros((n_front, off[hi] - off[lo]))
                HS = np.zeros_like(HW)
                _fill_hist(codes, n_unique, group, goff, rows, slot, w, wy, allowed, HW, HS)
                _eval_hist(n_unique, group, goff, HW, HS, W, S, base, min_leaf, allowed,
                           best_gain, best_f, best_code)
                lo = hi
        prev = level
        sort_feats = candidates[~use_hist]
        if len(sort_feats):
            if order.shape[1] == 0 or len(rows) < _COMPACT_BELOW * order.shape[1]:
                order = _presort(codes, n_unique, rows.astype(np.int64))
            _scan_sorted(codes, order, slot, w, wy, sort_feats, W, S, base, min_leaf, allowed,
                         best_gain, best_f, best_code)

        new_frontier = []
        slot_left = np.full(n_front, -1)
        slot_right = np.full(n_front, -1)
        thr = np.zeros(n_front)
        for i, node in enumerate(frontier):
            if best_f[i] < 0:
                continue
            f = int(best_f[i])
            feature[node] = f
            threshold[node] = thr[i] = float(binned.values[f][best_code[i]])
            for side in (left, right):
                side[node] = len(feature)
                feature.append(-1)
                threshold.append(0.0)
                left.append(-1)
                right.append(-1)
                value.append(0.0)
            slot_left[i] = len(new_frontier)
            new_frontier.append(left[node])
            slot_right[i] = len(new_frontier)
            new_frontier.append(right[node])
        split_nodes = np.flatnonzero(best_f >= 0)
        parent = np.repeat(split_nodes, 2)
        sibling = np.arange(len(new_frontier)) ^ 1

        s = live
        f = best_f[s]
        split = f >= 0
        moved = rows[split]
        go_left = X[moved, f[split]] <= thr[s[split]]
        slot[moved] = np.where(go_left, slot_left[s[split]], slot_right[s[split]])
        slot[rows[~split]] = -1
        rows = moved
        frontier = new_frontier

    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=np.float64),
    )
