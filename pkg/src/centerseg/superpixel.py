"""Graph-based superpixels (Felzenszwalb-Huttenlocher) and super-patch groups."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

# 8-connectivity, each undirected edge once: right, down, down-right, down-left
_OFFSETS = ((0, 1), (1, 0), (1, 1), (1, -1))


@dataclass
class PixelGraph:
    width: int
    height: int
    a: np.ndarray
    b: np.ndarray
    weight: np.ndarray

    @property
    def num_edges(self) -> int:
        return len(self.weight)


@dataclass
class SuperpixelLabeling:
    pixel_ids: np.ndarray  # H x W
    num_segments: int
    patch_labels: np.ndarray | None = None
    groups: list[np.ndarray] | None = None


def smooth(image: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return image
    return np.stack([gaussian_filter(ch, sigma, mode="nearest", truncate=4.0) for ch in image])


def build_graph(image: np.ndarray, sigma: float = 0.8) -> PixelGraph:
    """8-neighbour grid graph weighted by RGB distance of ``image`` (``[3, H, W]``)."""
    img = smooth(np.asarray(image, dtype=np.float64), sigma)
    _, h, w = img.shape
    ids = np.arange(h * w).reshape(h, w)
    a_parts, b_parts, w_parts = [], [], []
    for dy, dx in _OFFSETS:
        y0, y1 = 0, h - dy
        x0, x1 = max(0, -dx), w - max(0, dx)
        if y1 <= y0 or x1 <= x0:
            continue
        src = ids[y0:y1, x0:x1]
        dst = ids[y0 + dy:y1 + dy, x0 + dx:x1 + dx]
        diff = img[:, y0:y1, x0:x1] - img[:, y0 + dy:y1 + dy, x0 + dx:x1 + dx]
        a_parts.append(src.ravel())
        b_parts.append(dst.ravel())
        w_parts.append(np.sqrt((diff * diff).sum(axis=0)).ravel())
    return PixelGraph(w, h, np.concatenate(a_parts), np.concatenate(b_parts), np.concatenate(w_parts))


class _DisjointSet:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n
        self.internal = [0.0] * n  # max MST edge inside the component

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, x: int, y: int, weight: float) -> int:
        if self.size[x] < self.size[y]:
            x, y = y, x
        self.parent[y] = x
        self.size[x] += self.size[y]
        self.internal[x] = max(self.internal[x], self.internal[y], weight)
        return x


def felzenszwalb_segment(graph: PixelGraph, k: float = 0.4, min_size: int = 1) -> SuperpixelLabeling:
    """Merge components along ascending edges while ``w <= min(Int(C) + k/|C|)``.

    Ties are broken by ``(weight, a, b)``. Components smaller than ``min_size``
    are then merged across their cheapest boundary edge. Ids are dense, in
    raster order of first appearance.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    order = np.lexsort((graph.b, graph.a, graph.weight))
    a = graph.a[order].tolist()
    b = graph.b[order].tolist()
    wt = graph.weight[order].tolist()
    ds = _DisjointSet(graph.width * graph.height)
    for u, v, w in zip(a, b, wt):
        ru, rv = ds.find(u), ds.find(v)
        if ru == rv:
            continue
        if w <= min(ds.internal[ru] + k / ds.size[ru], ds.internal[rv] + k / ds.size[rv]):
            ds.union(ru, rv, w)
    if min_size > 1:
        for u, v, w in zip(a, b, wt):
            ru, rv = ds.find(u), ds.find(v)
            if ru != rv and (ds.size[ru] < min_size or ds.size[rv] < min_size):
                ds.union(ru, rv, w)
    roots = np.array([ds.find(i) for i in range(graph.width * graph.height)])
    _, first, inverse = np.unique(roots, return_index=True, return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(len(first))
    pixel_ids = rank[inverse].reshape(graph.height, graph.width)
    return SuperpixelLabeling(pixel_ids, len(first))


def segment_image(image: np.ndarray, sigma: float = 0.8, k: float = 0.4,
                  min_size: int = 1) -> SuperpixelLabeling:
    return felzenszwalb_segment(build_graph(image, sigma), k, min_size)


def super_patch_groups(pixel_ids: np.ndarray, patch_size: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Patch label = floor of the mean pixel id; ``groups[j]`` = patches sharing j's label."""
    h, w = pixel_ids.shape
    if h % patch_size or w % patch_size:
        raise ValueError(f"{h}x{w} ids not divisible by patch size {patch_size}")
    blocks = pixel_ids.reshape(h // patch_size, patch_size, w // patch_size, patch_size)
    means = blocks.astype(np.float64).mean(axis=(1, 3))
    labels = np.floor(means).astype(np.int64).ravel()
    groups = [np.flatnonzero(labels == lab) for lab in labels]
    return labels, groups


def group_average_matrix(patch_labels: np.ndarray) -> np.ndarray:
    """``A[j, i] = 1/|G_j|`` if patches i and j share a label, else 0."""
    same = (patch_labels[:, None] == patch_labels[None, :]).astype(np.float64)
    return same / same.sum(axis=1, keepdims=True)


def alias_rate(pixel_ids: np.ndarray, patch_labels: np.ndarray, patch_size: int) -> float:
    """Fraction of patches whose floor-of-mean label matches none of their own pixels."""
    h, w = pixel_ids.shape
    blocks = pixel_ids.reshape(h // patch_size, patch_size, w // patch_size, patch_size)
    blocks = blocks.transpose(0, 2, 1, 3).reshape(-1, patch_size * patch_size)
    missing = [lab not in set(row.tolist()) for row, lab in zip(blocks, patch_labels)]
    return float(np.mean(missing))


# -- cache files ---------------------------------------------------------------

_HEADER = struct.Struct("<III")


def write_cache(path: str | Path, labeling: SuperpixelLabeling) -> None:
    ids = labeling.pixel_ids
    h, w = ids.shape
    payload = _HEADER.pack(w, h, labeling.num_segments) + ids.astype("<u4").tobytes()
    Path(path).write_bytes(payload)


def read_cache(path: str | Path) -> SuperpixelLabeling:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated superpixel cache")
    w, h, n = _HEADER.unpack_from(raw)
    body = raw[_HEADER.size:]
    if len(body) != 4 * w * h:
        raise ValueError(f"{path}: expected {w * h} ids, found {len(body) // 4}")
    ids = np.frombuffer(body, dtype="<u4").astype(np.int64).reshape(h, w)
    return SuperpixelLabeling(ids, n)
