"""Data model for multi-view RGB-D scenes, region annotations, and dataset I/O.

A scene directory looks like::

    meta.json                  {"classes": [{"id", "name"}], "depth_scale": f, "views": [ids]}
    views/<id>/camera.json     {"R": 9 floats row-major, "C": [3], "f", "px", "py", "width", "height"}
    views/<id>/depth.png       16-bit grayscale, meters = raw * depth_scale, raw 0 = invalid
    views/<id>/rgb.png         optional 8-bit RGB
    labels/boxes.json          [{"view", "class", "x0", "y0", "x1", "y1"}]
    labels/masks/<id>.png      optional 8-bit label indices (mask annotations)
    gt/<id>.png                optional 8-bit ground-truth label indices

Depth stores the camera-frame z coordinate of the surface, not euclidean ray
length. All loaded arrays are marked read-only; instances are safe to share
across parallel workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image

from .errors import LoadError, ValidationError

ROTATION_TOL = 1e-9
DEFAULT_DEPTH_SCALE = 0.001
MAX_CLASS_ID = 255  # labels are stored as 8-bit images


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics: focal length and principal point in pixels."""

    f: float
    px: float
    py: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.f > 0):
            raise ValidationError(f"focal length must be positive, got {self.f}")
        if self.width < 1 or self.height < 1:
            raise ValidationError(
                f"image size must be at least 1x1, got {self.width}x{self.height}"
            )

    def matrix(self) -> np.ndarray:
        """3x3 camera matrix K."""
        return np.array(
            [[self.f, 0.0, self.px], [0.0, self.f, self.py], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Pose:
    """Camera pose: world-to-camera rotation R and camera center C in world frame."""

    R: np.ndarray  # (3, 3) float64
    C: np.ndarray  # (3,) float64

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        C = np.asarray(self.C, dtype=np.float64)
        if R.shape != (3, 3):
            raise ValidationError(f"rotation must be 3x3, got shape {R.shape}")
        if C.shape != (3,):
            raise ValidationError(f"camera center must have 3 components, got {C.shape}")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > ROTATION_TOL:
            raise ValidationError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3g})")
        det = np.linalg.det(R)
        if abs(det - 1.0) > ROTATION_TOL:
            raise ValidationError(f"rotation must have determinant 1, got {det!r}")
        object.__setattr__(self, "R", _freeze(R))
        object.__setattr__(self, "C", _freeze(C))


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel camera-frame z depth in meters. Non-positive values are invalid."""

    values: np.ndarray  # (H, W) float64

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError(f"depth map must be 2-D, got shape {values.shape}")
        if not np.isfinite(values).all():
            raise ValidationError("depth map contains non-finite values")
        object.__setattr__(self, "values", _freeze(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def valid_mask(self) -> np.ndarray:
        return self.values > 0


@dataclass(frozen=True)
class CameraView:
    """One viewpoint: intrinsics, pose, depth buffer, and optional color image."""

    view_id: str
    intrinsics: Intrinsics
    pose: Pose
    depth: DepthMap
    rgb: Optional[np.ndarray] = None  # (H, W, 3) uint8

    def __post_init__(self):
        w, h = self.intrinsics.width, self.intrinsics.height
        if (self.depth.height, self.depth.width) != (h, w):
            raise ValidationError(
                f"view {self.view_id!r}: depth size {self.depth.width}x{self.depth.height}"
                f" does not match intrinsics {w}x{h}"
            )
        if self.rgb is not None:
            rgb = np.asarray(self.rgb, dtype=np.uint8)
            if rgb.shape != (h, w, 3):
                raise ValidationError(
                    f"view {self.view_id!r}: rgb shape {rgb.shape} does not match {h}x{w}x3"
                )
            object.__setattr__(self, "rgb", _freeze(rgb))


@dataclass(frozen=True)
class Box:
    """Half-open pixel rectangle: x0 <= x < x1, y0 <= y < y1."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValidationError(f"degenerate box {self}")

    def contains(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Membership test for integer pixel coordinates."""
        return (us >= self.x0) & (us < self.x1) & (vs >= self.y0) & (vs < self.y1)

    def to_mask(self, height: int, width: int) -> np.ndarray:
        m = np.zeros((height, width), dtype=bool)
        m[self.y0 : self.y1, self.x0 : self.x1] = True
        return m


@dataclass(frozen=True)
class MaskRegion:
    """Arbitrary binary pixel region."""

    mask: np.ndarray  # (H, W) bool

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise ValidationError(f"region mask must be 2-D, got shape {mask.shape}")
        if not mask.any():
            raise ValidationError("region mask has no set pixels")
        object.__setattr__(self, "mask", _freeze(mask))

    def contains(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        h, w = self.mask.shape
        inside = (us >= 0) & (us < w) & (vs >= 0) & (vs < h)
        out = np.zeros(np.shape(us), dtype=bool)
        out[inside] = self.mask[vs[inside], us[inside]]
        return out

    def to_mask(self, height: int, width: int) -> np.ndarray:
        if self.mask.shape != (height, width):
            raise ValidationError(
                f"region mask shape {self.mask.shape} does not match view {height}x{width}"
            )
        return self.mask.copy()


Region = Union[Box, MaskRegion]


@dataclass(frozen=True)
class RegionLabel:
    """A class-tagged pixel region in one view: a box or an arbitrary mask."""

    view_id: str
    class_id: int
    region: Region

    def __post_init__(self):
        if not (1 <= self.class_id <= MAX_CLASS_ID):
            raise ValidationError(
                f"class id must be in [1, {MAX_CLASS_ID}], got {self.class_id}"
            )

    def grid_pixels(self, stride: int) -> tuple[np.ndarray, np.ndarray]:
        """Integer pixel coordinates (us, vs) of the region sampled on a stride
        grid anchored at the region's top-left corner."""
        if stride < 1:
            raise ValidationError(f"stride must be >= 1, got {stride}")
        if isinstance(self.region, Box):
            b = self.region
            us = np.arange(b.x0, b.x1, stride)
            vs = np.arange(b.y0, b.y1, stride)
        else:
            ys, xs = np.nonzero(self.region.mask)
            us = np.arange(xs.min(), xs.max() + 1, stride)
            vs = np.arange(ys.min(), ys.max() + 1, stride)
        uu, vv = np.meshgrid(us, vs)
        uu, vv = uu.ravel(), vv.ravel()
        keep = self.region.contains(uu, vv)
        return uu[keep], vv[keep]


@dataclass(frozen=True)
class SegmentProposal:
    """Dense per-pixel class labeling for one view; 0 is background."""

    view_id: str
    labels: np.ndarray  # (H, W) uint8

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValidationError(f"label map must be 2-D, got shape {labels.shape}")
        object.__setattr__(self, "labels", _freeze(labels.astype(np.uint8)))


@dataclass(frozen=True)
class Scene:
    """A set of camera views, the region labels on a subset of them, and the
    class id -> name table. Class ids are contiguous starting at 1; 0 is
    reserved for background."""

    views: tuple[CameraView, ...]
    labels: tuple[RegionLabel, ...]
    class_table: dict[int, str]

    def __post_init__(self):
        object.__setattr__(self, "views", tuple(self.views))
        object.__setattr__(self, "labels", tuple(self.labels))
        ids = sorted(self.class_table)
        if ids != list(range(1, len(ids) + 1)):
            raise ValidationError(f"class ids must be contiguous from 1, got {ids}")
        by_id = {}
        for v in self.views:
            if v.view_id in by_id:
                raise ValidationError(f"duplicate view id {v.view_id!r}")
            by_id[v.view_id] = v
        object.__setattr__(self, "_by_id", by_id)
        for i, lab in enumerate(self.labels):
            if lab.view_id not in by_id:
                raise ValidationError(
                    f"label {i} references unknown view {lab.view_id!r}"
                )
            if lab.class_id not in self.class_table:
                raise ValidationError(
                    f"label {i} references unknown class {lab.class_id}"
                )
            view = by_id[lab.view_id]
            w, h = view.intrinsics.width, view.intrinsics.height
            if isinstance(lab.region, Box):
                b = lab.region
                if not (0 <= b.x0 and b.x1 <= w and 0 <= b.y0 and b.y1 <= h):
                    raise ValidationError(
                        f"label {i}: box {b} exceeds view {lab.view_id!r} bounds {w}x{h}"
                    )
            else:
                if lab.region.mask.shape != (h, w):
                    raise ValidationError(
                        f"label {i}: mask shape {lab.region.mask.shape} does not match"
                        f" view {lab.view_id!r} size {h}x{w}"
                    )

    def view(self, view_id: str) -> CameraView:
        try:
            return self._by_id[view_id]
        except KeyError:
            raise ValidationError(f"unknown view {view_id!r}") from None

    def view_ids(self) -> list[str]:
        return [v.view_id for v in self.views]

    def labels_for_class(self, class_id: int) -> list[RegionLabel]:
        return [lab for lab in self.labels if lab.class_id == class_id]

    def with_labels(self, labels) -> "Scene":
        """Copy of this scene with the label list replaced."""
        return replace(self, labels=tuple(labels))


# ---------------------------------------------------------------------------
# directory I/O


def _read_json(path: Path):
    if not path.is_file():
        raise LoadError(f"missing file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"cannot parse {path}: {exc}") from exc


def _read_image(path: Path) -> np.ndarray:
    if not path.is_file():
        raise LoadError(f"missing file: {path}")
    try:
        with Image.open(path) as im:
            return np.array(im)
    except OSError as exc:
        raise LoadError(f"cannot read image {path}: {exc}") from exc


def read_label_image(path: Path) -> np.ndarray:
    """Read an 8-bit label-index image."""
    arr = _read_image(Path(path))
    if arr.ndim != 2:
        raise LoadError(f"label image {path} is not single-channel")
    return arr.astype(np.uint8)


def write_label_image(labels: np.ndarray, path: Path) -> None:
    """Write an 8-bit label-index image. Byte output is deterministic."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="L").save(path, format="PNG")


def write_depth_image(depth_m: np.ndarray, path: Path, depth_scale: float) -> None:
    """Quantize depth in meters to 16-bit PNG; invalid (<= 0) maps to raw 0."""
    raw = np.round(np.asarray(depth_m, dtype=np.float64) / depth_scale)
    raw = np.where(np.asarray(depth_m) > 0, np.clip(raw, 0, 65535), 0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(raw.astype(np.uint16)).save(path, format="PNG")


def _load_camera(path: Path) -> tuple[Intrinsics, Pose]:
    data = _read_json(path)
    try:
        R = np.array(data["R"], dtype=np.float64).reshape(3, 3)
        C = np.array(data["C"], dtype=np.float64)
        intr = Intrinsics(
            f=float(data["f"]),
            px=float(data["px"]),
            py=float(data["py"]),
            width=int(data["width"]),
            height=int(data["height"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"malformed camera file {path}: {exc}") from exc
    try:
        pose = Pose(R=R, C=C)
    except ValidationError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    return intr, pose


def load_scene(path) -> Scene:
    """Load and validate a scene directory."""
    root = Path(path)
    meta = _read_json(root / "meta.json")
    try:
        class_table = {int(c["id"]): str(c["name"]) for c in meta["classes"]}
        depth_scale = float(meta.get("depth_scale", DEFAULT_DEPTH_SCALE))
        view_ids = [str(v) for v in meta["views"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"malformed meta file {root / 'meta.json'}: {exc}") from exc
    if depth_scale <= 0:
        raise ValidationError(f"{root / 'meta.json'}: depth_scale must be positive")

    views = []
    for vid in view_ids:
        vdir = root / "views" / vid
        intr, pose = _load_camera(vdir / "camera.json")
        raw = _read_image(vdir / "depth.png")
        if raw.ndim != 2:
            raise LoadError(f"depth image {vdir / 'depth.png'} is not single-channel")
        meters = raw.astype(np.float64) * depth_scale
        meters[raw <= 0] = 0.0
        rgb = None
        rgb_path = vdir / "rgb.png"
        if rgb_path.is_file():
            rgb = _read_image(rgb_path)
            if rgb.ndim != 3 or rgb.shape[2] < 3:
                raise LoadError(f"rgb image {rgb_path} is not 3-channel")
            rgb = rgb[:, :, :3].astype(np.uint8)
        try:
            views.append(
                CameraView(view_id=vid, intrinsics=intr, pose=pose,
                           depth=DepthMap(values=meters), rgb=rgb)
            )
        except ValidationError as exc:
            raise ValidationError(f"view {vid!r}: {exc}") from exc

    labels: list[RegionLabel] = []
    boxes_path = root / "labels" / "boxes.json"
    if boxes_path.is_file():
        for i, entry in enumerate(_read_json(boxes_path)):
            try:
                labels.append(
                    RegionLabel(
                        view_id=str(entry["view"]),
                        class_id=int(entry["class"]),
                        region=Box(int(entry["x0"]), int(entry["y0"]),
                                   int(entry["x1"]), int(entry["y1"])),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise LoadError(f"malformed box {i} in {boxes_path}: {exc}") from exc

    masks_dir = root / "labels" / "masks"
    if masks_dir.is_dir():
        for mpath in sorted(masks_dir.glob("*.png")):
            vid = mpath.stem
            indices = read_label_image(mpath)
            for class_id in np.unique(indices):
                if class_id == 0:
                    continue
                labels.append(
                    RegionLabel(view_id=vid, class_id=int(class_id),
                                region=MaskRegion(mask=indices == class_id))
                )

    return Scene(views=tuple(views), labels=tuple(labels), class_table=class_table)


def load_labelmaps(path) -> dict[str, np.ndarray]:
    """Read every <id>.png in a directory as an 8-bit label map keyed by id."""
    root = Path(path)
    if not root.is_dir():
        raise LoadError(f"missing directory: {root}")
    out = {}
    for p in sorted(root.glob("*.png")):
        out[p.stem] = read_label_image(p)
    return out


def load_gt(path) -> dict[str, SegmentProposal]:
    """Load ground-truth label maps from a scene's gt/ directory."""
    return {
        vid: SegmentProposal(view_id=vid, labels=arr)
        for vid, arr in load_labelmaps(Path(path) / "gt").items()
    }


def save_proposals(scene: Scene, proposals: dict[str, SegmentProposal], path) -> None:
    """Write one 8-bit label image per proposal into a directory."""
    root = Path(path)
    for vid, prop in sorted(proposals.items()):
        view = scene.view(vid)
        h, w = view.intrinsics.height, view.intrinsics.width
        if prop.labels.shape != (h, w):
            raise ValidationError(
                f"proposal for view {vid!r} has shape {prop.labels.shape}, expected {(h, w)}"
            )
        try:
            write_label_image(prop.labels, root / f"{vid}.png")
        except OSError as exc:
            raise LoadError(f"cannot write {root / f'{vid}.png'}: {exc}") from exc


def load_proposals(path) -> dict[str, SegmentProposal]:
    """Inverse of save_proposals."""
    return {
        vid: SegmentProposal(view_id=vid, labels=arr)
        for vid, arr in load_labelmaps(path).items()
    }
