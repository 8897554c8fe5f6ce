"""End-to-end proposal generation and the recursive relabeling step.

generate_proposals runs, per class: lift labeled regions to a world cloud,
score each point by how many labeled regions recapture it, max-normalize,
splat into every view (labeled or not); then per view: densify each class
mask and fuse into one label map.

recursive_iterate accepts dense predictions (from an external model or a
previous pass), clears each class outside its boxes where box labels exist,
lifts the surviving regions as mask labels, and reruns proposal generation
with those masks in place of the boxes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError, LoadError, ValidationError
from .objectness import (
    DEFAULT_DEPTH_EPS,
    build_class_cloud,
    normalize_scores,
    score_points,
)
from .refine import (
    DEFAULT_CLOSE_RADIUS,
    DEFAULT_UNARY_CONFIDENCE,
    CrfParams,
    PairwiseKernel,
    densify_class,
    fuse_classes,
)
from .scene import (
    MaskRegion,
    RegionLabel,
    Scene,
    SegmentProposal,
    load_labelmaps,
)
from .splatting import splat_all


@dataclass(frozen=True)
class PipelineConfig:
    stride: int = 1
    depth_eps: float = DEFAULT_DEPTH_EPS
    close_radius: int = DEFAULT_CLOSE_RADIUS
    unary_confidence: float = DEFAULT_UNARY_CONFIDENCE
    occlusion_in_scoring: bool = True
    iterations: int = 3  # relabeling rounds an external training loop should run
    crf: CrfParams = field(default_factory=CrfParams)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        data = dict(data)
        crf = CrfParams(**data.pop("crf", {}))
        try:
            return cls(crf=crf, **data)
        except TypeError as exc:
            raise ConfigError(f"unknown configuration key: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "stride": self.stride,
            "depth_eps": self.depth_eps,
            "close_radius": self.close_radius,
            "unary_confidence": self.unary_confidence,
            "occlusion_in_scoring": self.occlusion_in_scoring,
            "iterations": self.iterations,
            "crf": {
                "w_app": self.crf.w_app,
                "w_smooth": self.crf.w_smooth,
                "theta_alpha": self.crf.theta_alpha,
                "theta_beta": self.crf.theta_beta,
                "theta_gamma": self.crf.theta_gamma,
                "iterations": self.crf.iterations,
            },
        }


def load_config(path) -> PipelineConfig:
    """Read a TOML or JSON config file holding PipelineConfig keys."""
    path = Path(path)
    if not path.is_file():
        raise LoadError(f"missing config file: {path}")
    text = path.read_bytes()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # py>=3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        try:
            data = tomllib.loads(text.decode("utf-8"))
        except Exception as exc:
            raise LoadError(f"cannot parse {path}: {exc}") from exc
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise LoadError(f"cannot parse {path}: {exc}") from exc
    return PipelineConfig.from_dict(data)


def generate_proposals(
    scene: Scene,
    labels,
    cfg: PipelineConfig = PipelineConfig(),
) -> dict[str, SegmentProposal]:
    """Produce a dense per-pixel labeling for every view of the scene.

    `labels` (boxes on the first pass, masks on recursive passes) replaces
    the scene's own label list for this run. Proposals come back for every
    view, including ones that contributed no labels.
    """
    labels = list(labels)
    if not labels:
        raise ValidationError("generate_proposals needs at least one label")
    work = scene.with_labels(labels)
    class_ids = sorted({lab.class_id for lab in labels})

    clouds = []
    for class_id in class_ids:
        cloud = build_class_cloud(work, class_id, stride=cfg.stride)
        cloud = score_points(
            cloud, work, depth_eps=cfg.depth_eps,
            occlusion_in_scoring=cfg.occlusion_in_scoring,
        )
        clouds.append(normalize_scores(cloud))

    masks = splat_all(clouds, work.views, depth_eps=cfg.depth_eps)

    proposals = {}
    for view in work.views:
        kernel = None
        if cfg.crf.iterations > 0 and (cfg.crf.w_app > 0 or cfg.crf.w_smooth > 0):
            h, w = view.intrinsics.height, view.intrinsics.width
            kernel = PairwiseKernel((h, w), view.rgb, cfg.crf)
        per_class = {
            class_id: densify_class(
                masks[(view.view_id, class_id)],
                view.rgb,
                radius=cfg.close_radius,
                crf=cfg.crf,
                unary_confidence=cfg.unary_confidence,
                kernel=kernel,
            )
            for class_id in class_ids
        }
        proposals[view.view_id] = fuse_classes(view.view_id, per_class)
    return proposals


def mask_predictions(
    pred: SegmentProposal, boxes: list[RegionLabel]
) -> SegmentProposal:
    """Clear each predicted class outside the union of its boxes.

    Applies per class: pixels predicted as c but outside every class-c box
    become background; a class with no box in this view is cleared entirely.
    Views with an empty box list pass through unchanged. Idempotent.
    """
    if not boxes:
        return pred
    h, w = pred.labels.shape
    allowed = {}
    for box in boxes:
        if box.view_id != pred.view_id:
            raise ValidationError(
                f"box for view {box.view_id!r} applied to prediction {pred.view_id!r}"
            )
        m = box.region.to_mask(h, w)
        if box.class_id in allowed:
            allowed[box.class_id] |= m
        else:
            allowed[box.class_id] = m
    out = pred.labels.copy()
    for class_id in [c for c in set(out.ravel().tolist()) if c != 0]:
        keep = allowed.get(class_id)
        sel = out == class_id
        if keep is None:
            out[sel] = 0
        else:
            out[sel & ~keep] = 0
    return SegmentProposal(view_id=pred.view_id, labels=out)


def predictions_to_labels(
    predictions: dict[str, SegmentProposal]
) -> list[RegionLabel]:
    """Lift dense label maps into per-class mask region labels."""
    labels = []
    for vid in sorted(predictions):
        arr = predictions[vid].labels
        for class_id in sorted(set(arr.ravel().tolist())):
            if class_id == 0:
                continue
            labels.append(
                RegionLabel(view_id=vid, class_id=int(class_id),
                            region=MaskRegion(mask=arr == class_id))
            )
    return labels


def recursive_iterate(
    scene: Scene,
    predictions: dict[str, SegmentProposal],
    boxes,
    cfg: PipelineConfig = PipelineConfig(),
) -> dict[str, SegmentProposal]:
    """One relabeling round: constrain predictions by boxes, regenerate.

    Predictions on views that have boxes are masked by them; views without
    boxes pass through. The masked maps become per-class mask labels that
    replace the boxes in a fresh generate_proposals run, so proposals are
    again produced for every view.
    """
    if not predictions:
        raise ValidationError("recursive_iterate needs predictions for >= 1 view")
    boxes = list(boxes)
    masked = {}
    for vid, pred in predictions.items():
        view_boxes = [b for b in boxes if b.view_id == vid]
        masked[vid] = mask_predictions(pred, view_boxes)
    labels = predictions_to_labels(masked)
    if not labels:
        raise ValidationError("all masked predictions are empty; nothing to lift")
    return generate_proposals(scene, labels, cfg)


def load_predictions(path, scene: Scene) -> dict[str, SegmentProposal]:
    """Read predictions/<id>.png label maps and validate them against a scene."""
    out = {}
    for vid, arr in load_labelmaps(path).items():
        view = scene.view(vid)
        h, w = view.intrinsics.height, view.intrinsics.width
        if arr.shape != (h, w):
            raise ValidationError(
                f"prediction for view {vid!r} has shape {arr.shape}, expected {(h, w)}"
            )
        out[vid] = SegmentProposal(view_id=vid, labels=arr)
    return out
