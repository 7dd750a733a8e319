"""Event localization on a weighted point cloud.

Pipeline per triggered frame: weighted DBSCAN -> heaviest cluster -> tight
axis-aligned box -> per-action extent rule, scored by 3D IoU against the
ground-truth box.

Weighted DBSCAN here means: a point is *core* when the summed weight of all
points within ``radius`` (inclusive, itself included) reaches
``min_weight``.  Core points within ``radius`` of each other share a
cluster.  A non-core point within ``radius`` of core points joins the
cluster with the lowest root index among them, the same outcome as
expanding clusters one after another in index order.  Everything else is
noise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .geometry import Aabb3, OrientedBox3, WeightedPointCloud
from .profiles import ActionProfile, FixedCube

IOU_THRESHOLDS = (0.05, 0.10, 0.20, 0.40)


@dataclass(frozen=True)
class ClusterParams:
    radius: float = 0.030
    min_weight: float = 200.0

    def __post_init__(self):
        if self.radius <= 0 or self.min_weight <= 0:
            raise ValueError("radius and min_weight must be positive")


@dataclass
class Cluster:
    indices: np.ndarray  # sorted point indices
    total_weight: float


# --------------------------------------------------------------------------
# neighbour search on a voxel hash (voxel edge == radius)
# --------------------------------------------------------------------------

class _VoxelIndex:
    """Points bucketed by voxel; a query visits the 27 voxels around a key."""

    def __init__(self, vox, ids, dims):
        self.dims = dims
        keys = self.key(vox[ids])
        order = np.argsort(keys, kind="stable")
        self.members = ids[order]
        self.uniq, self.starts = np.unique(keys[order], return_index=True)
        self.ends = np.append(self.starts[1:], len(order))

    def key(self, v):
        return (v[:, 0] * self.dims[1] + v[:, 1]) * self.dims[2] + v[:, 2]


@numba.njit(cache=True, nogil=True)
def _slot(uniq, k):
    pos = np.searchsorted(uniq, k)
    if pos < uniq.size and uniq[pos] == k:
        return pos
    return -1


@numba.njit(cache=True, nogil=True)
def _neighbour_weights(points, weights, r2, min_weight, keys, members, uniq, starts, ends, d1, d2):
    """Summed weight within ``sqrt(r2)`` of every point (self included).

    Points whose 27-voxel neighbourhood cannot reach ``min_weight`` are
    skipped and report that upper bound instead (it is below the threshold).
    """
    n = points.shape[0]
    vsum = np.zeros(uniq.size)
    for u in range(uniq.size):
        for jj in range(starts[u], ends[u]):
            vsum[u] += weights[members[jj]]
    out = np.zeros(n)
    for i in range(n):
        bound = 0.0
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    pos = _slot(uniq, keys[i] + (dx * d1 + dy) * d2 + dz)
                    if pos >= 0:
                        bound += vsum[pos]
        if bound < min_weight:
            out[i] = bound
            continue
        s = 0.0
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    pos = _slot(uniq, keys[i] + (dx * d1 + dy) * d2 + dz)
                    if pos < 0:
                        continue
                    for jj in range(starts[pos], ends[pos]):
                        j = members[jj]
                        ex = points[i, 0] - points[j, 0]
                        ey = points[i, 1] - points[j, 1]
                        ez = points[i, 2] - points[j, 2]
                        if ex * ex + ey * ey + ez * ez <= r2:
                            s += weights[j]
        out[i] = s
    return out


@numba.njit(cache=True, nogil=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@numba.njit(cache=True, nogil=True)
def _core_components(points, core, r2, keys, members, uniq, starts, ends, d1, d2):
    """Cluster label per point from an index holding core points only.

    Core points are joined by union-find (a component's root is its lowest
    index).  A border point takes the lowest root among the core points in
    range, which is what expanding clusters in index order would give it.
    Noise gets -1.
    """
    n = points.shape[0]
    parent = np.arange(n)
    label = np.full(n, -1)
    for sweep in range(2):
        for i in range(n):
            if core[i] != (sweep == 0):
                continue
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for dz in (-1, 0, 1):
                        pos = _slot(uniq, keys[i] + (dx * d1 + dy) * d2 + dz)
                        if pos < 0:
                            continue
                        for jj in range(starts[pos], ends[pos]):
                            j = members[jj]
                            ex = points[i, 0] - points[j, 0]
                            ey = points[i, 1] - points[j, 1]
                            ez = points[i, 2] - points[j, 2]
                            if ex * ex + ey * ey + ez * ez > r2:
                                continue
                            a, b = _find(parent, i), _find(parent, j)
                            if sweep == 0:
                                if a < b:
                                    parent[b] = a
                                elif b < a:
                                    parent[a] = b
                            elif label[i] < 0 or b < label[i]:
                                label[i] = b
    for i in range(n):
        if core[i]:
            label[i] = _find(parent, i)
    return label


def weighted_dbscan(points, weights, params: ClusterParams = ClusterParams()):
    """Clusters ordered by their lowest core-point index."""
    points = np.ascontiguousarray(points, dtype=float).reshape(-1, 3)
    weights = np.ascontiguousarray(weights, dtype=float).reshape(-1)
    if weights.shape[0] != points.shape[0]:
        raise ValueError("one weight per point required")
    if weights.size and weights.min() < 0:
        raise ValueError("weights must be non-negative")
    if len(points) == 0:
        return []
    r2 = params.radius ** 2
    vox = np.floor(points / params.radius).astype(np.int64)
    vox -= vox.min(axis=0) - 1
    dims = vox.max(axis=0) + 2
    heavy = _VoxelIndex(vox, np.flatnonzero(weights > 0), dims)
    keys = heavy.key(vox)
    nw = _neighbour_weights(points, weights, r2, params.min_weight, keys, heavy.members, heavy.uniq,
                            heavy.starts, heavy.ends, dims[1], dims[2])
    core = nw >= params.min_weight
    if not core.any():
        return []
    cores = _VoxelIndex(vox, np.flatnonzero(core), dims)
    label = _core_components(points, core, r2, keys, cores.members, cores.uniq, cores.starts,
                             cores.ends, dims[1], dims[2])
    clusters = []
    for root in np.unique(label[core]):
        idx = np.flatnonzero(label == root)
        clusters.append(Cluster(idx, float(weights[idx].sum())))
    return clusters


def select_cluster(clusters):
    """Heaviest cluster; ties go to the cluster with the lowest member index."""
    best = None
    for c in clusters:
        if best is None or c.total_weight > best.total_weight or (
                c.total_weight == best.total_weight and c.indices[0] < best.indices[0]):
            best = c
    return best


def tight_box(points):
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise ValueError("cannot bound an empty cluster")
    return Aabb3(points.min(axis=0), points.max(axis=0))


def weighted_centroid(points, weights):
    w = np.asarray(weights, dtype=float)
    if w.sum() <= 0:
        return np.mean(points, axis=0)
    return (np.asarray(points) * w[:, None]).sum(axis=0) / w.sum()


def clamp_extents(box: Aabb3, profile: ActionProfile, centroid=None):
    """Apply the action's box rule.

    Instrument rule: each axis longer than the instrument is shrunk to the
    instrument size about the box center.  Fixed-cube rule: the box becomes
    a cube of the given edge centered on ``centroid`` (the cluster's
    weighted centroid; the box center if omitted).
    """
    rule = profile.box_rule
    if isinstance(rule, FixedCube):
        c = box.center if centroid is None else np.asarray(centroid, dtype=float)
        return Aabb3.from_center(c, np.full(3, rule.edge))
    ext = np.minimum(box.extents, np.asarray(rule.extents, dtype=float))
    return Aabb3.from_center(box.center, ext)


# --------------------------------------------------------------------------
# IoU
# --------------------------------------------------------------------------

def _aabb_iou(a: Aabb3, b: Aabb3):
    overlap = np.clip(np.minimum(a.max, b.max) - np.maximum(a.min, b.min), 0.0, None)
    inter = float(np.prod(overlap))
    union = a.volume + b.volume - inter
    if union <= 0:
        return 1.0 if np.array_equal(a.min, b.min) and np.array_equal(a.max, b.max) else 0.0
    return inter / union


def sampled_intersection(pred: Aabb3, gt: OrientedBox3, per_axis=128):
    """Volume of ``pred`` inside ``gt`` by midpoint sampling on a regular grid.

    The grid spans the overlap of ``pred`` with the bounding box of ``gt``
    (nothing outside it can be in both); ``per_axis ** 3`` samples.
    """
    g = gt.aabb()
    lo = np.maximum(pred.min, g.min)
    hi = np.minimum(pred.max, g.max)
    if np.any(hi <= lo):
        return 0.0
    axes = [lo[k] + (np.arange(per_axis) + 0.5) * (hi[k] - lo[k]) / per_axis for k in range(3)]
    cell = float(np.prod((hi - lo) / per_axis))
    inside = 0
    X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
    xy = np.column_stack([X.ravel(), Y.ravel()])
    for z in axes[2]:
        pts = np.column_stack([xy, np.full(len(xy), z)])
        inside += int(np.count_nonzero(gt.contains(pts)))
    return inside * cell


def iou3d(pred, gt, per_axis=128, sampled=False):
    """IoU of an axis-aligned prediction and a (possibly rotated) ground-truth box.

    Axis-aligned ground truth takes the exact path; rotated ground truth (or
    ``sampled=True``) is integrated numerically with ``per_axis ** 3``
    (default about 2.1e6) samples.
    """
    if pred is None:
        return 0.0
    if isinstance(gt, Aabb3) and not sampled:
        return _aabb_iou(pred, gt)
    if isinstance(gt, Aabb3):
        gt = OrientedBox3.from_aabb(gt)
    if gt.is_axis_aligned and not sampled:
        return _aabb_iou(pred, Aabb3(gt.center - gt.half_extents, gt.center + gt.half_extents))
    inter = sampled_intersection(pred, gt, per_axis)
    union = pred.volume + gt.volume - inter
    return float(min(1.0, max(0.0, inter / union))) if union > 0 else 0.0


@dataclass
class RecallTable:
    thresholds: tuple
    recalls: tuple
    count: int
    undefined: bool = False

    def as_dict(self):
        return {
            "thresholds": list(self.thresholds), "recall": list(self.recalls),
            "count": self.count, "undefined": self.undefined,
        }


def recall_table(ious, thresholds=IOU_THRESHOLDS):
    """Fraction of localizations with IoU >= t for each threshold.

    No localizations at all gives zeros with ``undefined`` set.
    """
    ious = np.asarray(list(ious), dtype=float)
    if ious.size == 0:
        return RecallTable(tuple(thresholds), tuple(0.0 for _ in thresholds), 0, True)
    recalls = tuple(float(np.mean(ious >= t)) for t in thresholds)
    return RecallTable(tuple(thresholds), recalls, int(ious.size))


def iou_histogram(ious, bin_width=0.05):
    """Counts of IoU values in bins of ``bin_width`` over [0, 1]."""
    nbins = int(math.ceil(1.0 / bin_width - 1e-9))
    edges = np.minimum(np.arange(nbins + 1) * bin_width, 1.0)
    counts, _ = np.histogram(np.asarray(list(ious), dtype=float), bins=edges)
    return counts, edges


# --------------------------------------------------------------------------
# composition
# --------------------------------------------------------------------------

@dataclass
class LocalizationResult:
    predicted: Aabb3 | None
    ground_truth: OrientedBox3 | None
    iou: float
    cluster_weight: float
    timestamp: float
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "timestamp": self.timestamp,
            "predicted_box": self.predicted.to_dict() if self.predicted is not None else None,
            "gt_box": self.ground_truth.to_dict() if self.ground_truth is not None else None,
            "iou": self.iou,
            "cluster_weight": self.cluster_weight,
            **self.extra,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def localize_event(cloud: WeightedPointCloud, profile: ActionProfile, params: ClusterParams = ClusterParams(),
                   ground_truth: OrientedBox3 | None = None, timestamp=0.0):
    """Cluster, box and score one fused frame."""
    clusters = weighted_dbscan(cloud.points, cloud.weights, params)
    best = select_cluster(clusters)
    if best is None:
        return LocalizationResult(None, ground_truth, 0.0, 0.0, timestamp)
    pts = cloud.points[best.indices]
    box = tight_box(pts)
    centroid = weighted_centroid(pts, cloud.weights[best.indices])
    pred = clamp_extents(box, profile, centroid)
    iou = iou3d(pred, ground_truth) if ground_truth is not None else float("nan")
    return LocalizationResult(pred, ground_truth, iou, best.total_weight, timestamp)
