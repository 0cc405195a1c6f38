"""Brute-force reference implementations shared by unit and acceptance tests."""

import math

import numpy as np


def reference_segment(image: np.ndarray, k: float, min_size: int) -> np.ndarray:
    """Same merge rule with explicit component sets, no union-find, no smoothing."""
    _, h, w = image.shape
    edges = []
    for y in range(h):
        for x in range(w):
            for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
                yy, xx = y + dy, x + dx
                if 0 <= yy < h and 0 <= xx < w:
                    d = image[:, y, x] - image[:, yy, xx]
                    edges.append((math.sqrt(float((d * d).sum())), y * w + x, yy * w + xx))
    edges.sort()
    comps = [{i} for i in range(h * w)]
    internal = [0.0] * (h * w)

    def owner(p):
        return next(i for i, c in enumerate(comps) if p in c)

    for wt, a, b in edges:
        ia, ib = owner(a), owner(b)
        if ia == ib:
            continue
        tau_a = internal[ia] + k / len(comps[ia])
        tau_b = internal[ib] + k / len(comps[ib])
        if wt <= min(tau_a, tau_b):
            comps[ia] |= comps[ib]
            internal[ia] = max(internal[ia], internal[ib], wt)
            del comps[ib], internal[ib]
    for wt, a, b in edges:
        ia, ib = owner(a), owner(b)
        if ia != ib and (len(comps[ia]) < min_size or len(comps[ib]) < min_size):
            comps[ia] |= comps[ib]
            del comps[ib], internal[ib]
    labels = np.empty(h * w, dtype=np.int64)
    for i, c in enumerate(comps):
        labels[list(c)] = i
    return labels.reshape(h, w)


def same_partition(a: np.ndarray, b: np.ndarray) -> bool:
    pairs = set(zip(a.ravel().tolist(), b.ravel().tolist()))
    return len(pairs) == len(np.unique(a)) == len(np.unique(b))


def group_by_mean(labels: np.ndarray, patches: np.ndarray, num_centers: int) -> np.ndarray:
    out = np.zeros((num_centers, patches.shape[1]))
    for k in range(num_centers):
        rows = [patches[j] for j in range(len(labels)) if labels[j] == k]
        if rows:
            acc = np.zeros(patches.shape[1])
            for r in rows:
                acc += r
            out[k] = acc / len(rows)
    return out


def brute_iou(pred, gt, num_classes, include_background=True):
    classes = list(range(num_classes)) + ([-1] if include_background else [])
    ious = []
    for c in classes:
        inter = union = 0
        for p, g in zip(pred.ravel().tolist(), gt.ravel().tolist()):
            inter += p == c and g == c
            union += p == c or g == c
        if union:
            ious.append(inter / union)
    return sum(ious) / len(ious)


def kl(p, q):
    return sum(a * (math.log(a + 1e-12) - math.log(b + 1e-12)) for a, b in zip(p, q))


def scalar_sup_loss(rows, labels):
    n = len(rows)
    total = 0.0
    for j in range(n):
        members = [i for i in range(n) if labels[i] == labels[j]]
        avg = [sum(rows[i][c] for i in members) / len(members) for c in range(len(rows[j]))]
        m = max(avg)
        e = [math.exp(a - m) for a in avg]
        target = [x / sum(e) for x in e]
        total += kl(rows[j], target) + kl(target, rows[j])
    return total / (2 * n)
