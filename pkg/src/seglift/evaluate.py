"""Pixel intersection-over-union evaluation of label maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .scene import SegmentProposal


@dataclass(frozen=True)
class EvalReport:
    """Per-class IoU with the intersection/union pixel counts behind it."""

    per_class_iou: dict[int, float]
    miou: float
    intersections: dict[int, int]
    unions: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "per_class": {str(c): iou for c, iou in sorted(self.per_class_iou.items())},
            "miou": self.miou,
            "counts": {
                str(c): {"intersection": self.intersections[c], "union": self.unions[c]}
                for c in sorted(self.per_class_iou)
            },
        }


def evaluate(
    preds: dict[str, SegmentProposal], gts: dict[str, SegmentProposal]
) -> EvalReport:
    """Aggregate per-class IoU over all views; mIoU is the unweighted mean.

    Counted classes are those present in either side, except that background
    (0) only enters when it appears in the ground truth; classes absent from
    both sides are undefined (0/0) and excluded.
    """
    if not preds:
        raise ValidationError("no views to evaluate")
    if set(preds) != set(gts):
        raise ValidationError(
            f"prediction views {sorted(preds)} != ground-truth views {sorted(gts)}"
        )
    classes: set[int] = set()
    for vid in preds:
        p, g = preds[vid].labels, gts[vid].labels
        if p.shape != g.shape:
            raise ValidationError(
                f"view {vid!r}: prediction shape {p.shape} != ground truth {g.shape}"
            )
        classes.update(np.unique(p).tolist())
        classes.update(np.unique(g).tolist())
    if 0 in classes and not any(0 in np.unique(g.labels) for g in gts.values()):
        classes.discard(0)

    inter = {c: 0 for c in classes}
    union = {c: 0 for c in classes}
    for vid in preds:
        p, g = preds[vid].labels, gts[vid].labels
        for c in classes:
            pm, gm = p == c, g == c
            inter[c] += int(np.count_nonzero(pm & gm))
            union[c] += int(np.count_nonzero(pm | gm))

    per_class = {c: inter[c] / union[c] for c in classes if union[c] > 0}
    if not per_class:
        raise ValidationError("no classes present in predictions or ground truth")
    miou = float(np.mean(list(per_class.values())))
    return EvalReport(
        per_class_iou=per_class,
        miou=miou,
        intersections={c: inter[c] for c in per_class},
        unions={c: union[c] for c in per_class},
    )
