"""Back-project scored point clouds into per-view sparse probability masks.

Each point is projected into the target view and dropped when it falls behind
the camera, outside the image after pixel rounding, on an invalid depth
pixel, or more than depth_eps behind the stored depth surface (the nearest
distance threshold: only points at or in front of the observed surface may
land). Collisions at a pixel keep the maximum probability, so the result is
independent of point ordering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .objectness import DEFAULT_DEPTH_EPS, ClassPointCloud
from .projection import depth_at_pixels, project_points, round_half_away
from .scene import CameraView

__all__ = ["ObjectnessMask", "splat_class", "splat_all", "write_debug_mask"]


@dataclass(frozen=True)
class ObjectnessMask:
    """Sparse per-class probability splat image for one view.

    values is 0 wherever splatted is False. provenance holds the index of the
    cloud point that supplied each splatted pixel's value (-1 elsewhere),
    kept so occlusion audits can re-check every splat.
    """

    view_id: str
    class_id: int
    values: np.ndarray  # (H, W) float64 in [0, 1]
    splatted: np.ndarray  # (H, W) bool
    provenance: np.ndarray  # (H, W) int64, -1 where unsplatted


def splat_class(
    cloud: ClassPointCloud, view: CameraView, depth_eps: float = DEFAULT_DEPTH_EPS
) -> ObjectnessMask:
    """Project a normalized cloud into one view, max-combining collisions."""
    h, w = view.depth.values.shape
    values = np.zeros((h, w), dtype=np.float64)
    splatted = np.zeros((h, w), dtype=bool)
    provenance = np.full((h, w), -1, dtype=np.int64)
    if len(cloud):
        uvz, in_front = project_points(view, cloud.xyz)
        pu = round_half_away(uvz[:, 0])
        pv = round_half_away(uvz[:, 1])
        inside = in_front & (pu >= 0) & (pu < w) & (pv >= 0) & (pv < h)
        depths, depth_ok = depth_at_pixels(view, uvz[:, 0], uvz[:, 1])
        keep = inside & depth_ok & (uvz[:, 2] <= depths + depth_eps)
        idx = np.nonzero(keep)[0]
        # ascending-probability write order makes the last writer the max
        order = idx[np.argsort(cloud.probs[idx], kind="stable")]
        values[pv[order], pu[order]] = cloud.probs[order]
        splatted[pv[order], pu[order]] = True
        provenance[pv[order], pu[order]] = order
    return ObjectnessMask(
        view_id=view.view_id,
        class_id=cloud.class_id,
        values=values,
        splatted=splatted,
        provenance=provenance,
    )


def splat_all(
    clouds: list[ClassPointCloud],
    views: list[CameraView],
    depth_eps: float = DEFAULT_DEPTH_EPS,
) -> dict[tuple[str, int], ObjectnessMask]:
    """Splat every cloud into every view, labeled or not."""
    return {
        (view.view_id, cloud.class_id): splat_class(cloud, view, depth_eps)
        for view in views
        for cloud in clouds
    }


def write_debug_mask(mask: ObjectnessMask, path) -> None:
    """Dump a mask as 16-bit PNG: round(prob * 65535), 0 where unsplatted."""
    raw = np.round(mask.values * 65535).astype(np.uint16)
    Image.fromarray(raw).save(path, format="PNG")
