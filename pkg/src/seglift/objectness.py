"""Per-class world point clouds and multi-view objectness scoring.

Every labeled region pixel with valid depth is lifted to a world point. A
point's objectness score counts how many labeled regions of its class, across
all views, see it again: the point must project in front of the camera, land
(after pixel rounding) inside the region, and pass the visibility test
z_cam <= stored depth + depth_eps. Scores are max-normalized per class into
probabilities in (0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .projection import (
    WorldPoint,
    depth_at_pixels,
    project_points,
    round_half_away,
    unproject_pixels,
)
from .scene import Scene

DEFAULT_DEPTH_EPS = 0.02  # meters of slack over the stored depth


@dataclass(frozen=True)
class ScoredPoint:
    pos: WorldPoint
    class_id: int
    score: int
    prob: float


class ClassPointCloud:
    """World points of one class with per-point scores and probabilities.

    Stored as parallel arrays: xyz (N, 3) float64, scores (N,) int64,
    probs (N,) float64.
    """

    def __init__(self, class_id: int, xyz: np.ndarray, scores=None, probs=None):
        self.class_id = int(class_id)
        self.xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        n = len(self.xyz)
        self.scores = (
            np.ones(n, dtype=np.int64) if scores is None
            else np.asarray(scores, dtype=np.int64)
        )
        self.probs = (
            np.zeros(n, dtype=np.float64) if probs is None
            else np.asarray(probs, dtype=np.float64)
        )
        if len(self.scores) != n or len(self.probs) != n:
            raise ValidationError("point cloud arrays have mismatched lengths")

    def __len__(self) -> int:
        return len(self.xyz)

    def point(self, i: int) -> ScoredPoint:
        x, y, z = self.xyz[i]
        return ScoredPoint(
            pos=WorldPoint(float(x), float(y), float(z)),
            class_id=self.class_id,
            score=int(self.scores[i]),
            prob=float(self.probs[i]),
        )


def build_class_cloud(scene: Scene, class_id: int, stride: int = 1) -> ClassPointCloud:
    """Lift every stride-grid pixel of every region of a class into world space.

    Pixels with invalid depth are skipped. A class with no labels yields an
    empty cloud. Fresh points carry score 1 and probability 0.
    """
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    chunks = []
    for label in scene.labels_for_class(class_id):
        view = scene.view(label.view_id)
        us, vs = label.grid_pixels(stride)
        ds = view.depth.values[vs, us]
        keep = ds > 0
        if keep.any():
            chunks.append(unproject_pixels(view, us[keep], vs[keep], ds[keep]))
    xyz = np.concatenate(chunks, axis=0) if chunks else np.empty((0, 3))
    return ClassPointCloud(class_id=class_id, xyz=xyz)


def score_points(
    cloud: ClassPointCloud,
    scene: Scene,
    depth_eps: float = DEFAULT_DEPTH_EPS,
    occlusion_in_scoring: bool = True,
) -> ClassPointCloud:
    """Count, for each point, the labeled regions of its class that recapture it.

    A region recaptures a point when the point projects in front of that
    region's camera, its rounded pixel lies inside the region, and (unless
    occlusion_in_scoring is off) the point is not hidden behind the stored
    depth surface. Points behind the camera or landing on invalid depth
    contribute nothing for that region.
    """
    scores = np.zeros(len(cloud), dtype=np.int64)
    for label in scene.labels_for_class(cloud.class_id):
        view = scene.view(label.view_id)
        uvz, in_front = project_points(view, cloud.xyz)
        pu = round_half_away(uvz[..., 0])
        pv = round_half_away(uvz[..., 1])
        hit = in_front & label.region.contains(pu, pv)
        if occlusion_in_scoring:
            depths, valid = depth_at_pixels(view, uvz[..., 0], uvz[..., 1])
            hit &= valid & (uvz[..., 2] <= depths + depth_eps)
        scores += hit
    return ClassPointCloud(cloud.class_id, cloud.xyz, scores=scores, probs=cloud.probs)


def normalize_scores(cloud: ClassPointCloud) -> ClassPointCloud:
    """Divide scores by the class maximum; empty clouds pass through."""
    if len(cloud) == 0:
        return cloud
    probs = cloud.scores / cloud.scores.max()
    return ClassPointCloud(cloud.class_id, cloud.xyz, scores=cloud.scores, probs=probs)


def dump_cloud(cloud: ClassPointCloud, path) -> None:
    """Write one 'x y z score prob' line per point."""
    with open(path, "w", encoding="utf-8") as fh:
        for (x, y, z), s, p in zip(cloud.xyz, cloud.scores, cloud.probs):
            fh.write(f"{x!r} {y!r} {z!r} {s} {p!r}\n")
