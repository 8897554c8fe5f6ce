"""Analytic synthetic RGB-D scenes used as a verification oracle.

Scenes are a rectangular room seen from inside, containing axis-aligned boxes
and spheres with flat albedo colors. Every pixel is ray-cast against the
analytic primitives, so rendered depth is exact (no meshes), ground-truth
label masks are exact, and per-view ground-truth boxes are tight by
construction. Rays are parameterized so that the hit parameter t equals the
camera-frame z depth directly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from .errors import ValidationError
from .scene import (
    Box,
    CameraView,
    DepthMap,
    Intrinsics,
    Pose,
    RegionLabel,
    Scene,
    SegmentProposal,
    write_depth_image,
    write_label_image,
)

_EPS = 1e-9
SUITE_SIZE = 8


@dataclass(frozen=True)
class BoxShape:
    center: tuple[float, float, float]
    size: tuple[float, float, float]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=np.float64)
        h = np.asarray(self.size, dtype=np.float64) / 2.0
        return c - h, c + h


@dataclass(frozen=True)
class SphereShape:
    center: tuple[float, float, float]
    radius: float

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, dtype=np.float64)
        return c - self.radius, c + self.radius


Shape = Union[BoxShape, SphereShape]


@dataclass(frozen=True)
class SynthObject:
    class_id: int
    shape: Shape
    albedo: tuple[int, int, int]


@dataclass(frozen=True)
class CameraSpec:
    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    f: float
    width: int = 64
    height: int = 48
    px: float | None = None  # defaults to the image center
    py: float | None = None


@dataclass(frozen=True)
class SceneSpec:
    name: str
    room_min: tuple[float, float, float]
    room_max: tuple[float, float, float]
    objects: tuple[SynthObject, ...]
    cameras: tuple[CameraSpec, ...]
    labeled: tuple[int, ...]  # indices of cameras that get ground-truth boxes
    class_names: dict[int, str]
    wall_albedo: tuple[int, int, int] = (120, 120, 120)
    tags: tuple[str, ...] = ()


@dataclass(frozen=True)
class RenderedScene:
    """A scene plus its exact ground truth."""

    spec: SceneSpec
    scene: Scene
    gt: dict[str, SegmentProposal]
    instances: dict[str, np.ndarray]  # per-pixel object index, -1 for room


def validate_spec(spec: SceneSpec) -> None:
    rmin = np.asarray(spec.room_min, dtype=np.float64)
    rmax = np.asarray(spec.room_max, dtype=np.float64)
    if not (rmin < rmax).all():
        raise ValidationError(f"scene {spec.name!r}: degenerate room bounds")
    if not spec.cameras:
        raise ValidationError(f"scene {spec.name!r}: needs at least one camera")
    for k, obj in enumerate(spec.objects):
        lo, hi = obj.shape.bounds()
        if not ((lo >= rmin).all() and (hi <= rmax).all()):
            raise ValidationError(f"scene {spec.name!r}: object {k} leaves the room")
    for i, cam in enumerate(spec.cameras):
        p = np.asarray(cam.position, dtype=np.float64)
        if not ((p > rmin).all() and (p < rmax).all()):
            raise ValidationError(f"scene {spec.name!r}: camera {i} is outside the room")
        for k, obj in enumerate(spec.objects):
            lo, hi = obj.shape.bounds()
            if ((p >= lo) & (p <= hi)).all():
                raise ValidationError(
                    f"scene {spec.name!r}: camera {i} is inside object {k}"
                )
    for i in spec.labeled:
        if not 0 <= i < len(spec.cameras):
            raise ValidationError(f"scene {spec.name!r}: labeled index {i} out of range")


def look_at_rotation(position, target) -> np.ndarray:
    """World-to-camera rotation for a camera at `position` looking at `target`.

    Camera axes: x right, y down, z forward. World up is +z, with a +y
    fallback when the view direction is (anti-)parallel to it.
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - position
    norm = np.linalg.norm(fwd)
    if norm < _EPS:
        raise ValidationError("camera position and look-at target coincide")
    fwd = fwd / norm
    up = np.array([0.0, 0.0, 1.0])
    if abs(fwd @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd])


def _room_exit(o: np.ndarray, d: np.ndarray, rmin, rmax) -> np.ndarray:
    """Distance to the room wall for rays starting inside; d has unit z in
    camera frame so the parameter equals camera z depth."""
    t = np.full(d.shape[:-1], np.inf)
    for a in range(3):
        da = d[..., a]
        with np.errstate(divide="ignore"):
            t_pos = (rmax[a] - o[a]) / da
            t_neg = (rmin[a] - o[a]) / da
        ta = np.where(da > 0, t_pos, np.where(da < 0, t_neg, np.inf))
        t = np.minimum(t, ta)
    return t


def _intersect_box(o, d, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    tn = np.full(d.shape[:-1], -np.inf)
    tf = np.full(d.shape[:-1], np.inf)
    for a in range(3):
        da = np.where(d[..., a] == 0.0, 1e-300, d[..., a])
        t1 = (lo[a] - o[a]) / da
        t2 = (hi[a] - o[a]) / da
        tn = np.maximum(tn, np.minimum(t1, t2))
        tf = np.minimum(tf, np.maximum(t1, t2))
    hit = (tn <= tf) & (tf > _EPS)
    t = np.where(tn > _EPS, tn, tf)
    return t, hit & (t > _EPS)


def _intersect_sphere(o, d, center, radius) -> tuple[np.ndarray, np.ndarray]:
    oc = o - center
    a = (d * d).sum(axis=-1)
    b = (d * oc).sum(axis=-1)
    c = oc @ oc - radius * radius
    disc = b * b - a * c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t_near = (-b - sq) / a
    t_far = (-b + sq) / a
    t = np.where(t_near > _EPS, t_near, t_far)
    return t, hit & (t > _EPS)


def render(spec: SceneSpec) -> RenderedScene:
    """Ray-cast every camera; exact depth, flat-shaded color, per-pixel labels.

    Ground-truth boxes for labeled cameras tightly bound each object's
    visible mask.
    """
    validate_spec(spec)
    rmin = np.asarray(spec.room_min, dtype=np.float64)
    rmax = np.asarray(spec.room_max, dtype=np.float64)

    views, labels = [], []
    gt: dict[str, SegmentProposal] = {}
    instances: dict[str, np.ndarray] = {}
    for i, cam in enumerate(spec.cameras):
        vid = f"cam{i:02d}"
        w, h = cam.width, cam.height
        px = (w - 1) / 2.0 if cam.px is None else cam.px
        py = (h - 1) / 2.0 if cam.py is None else cam.py
        R = look_at_rotation(cam.position, cam.look_at)
        C = np.asarray(cam.position, dtype=np.float64)

        uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                             np.arange(h, dtype=np.float64))
        xc = (uu - px) / cam.f
        yc = (vv - py) / cam.f
        # world ray direction R^T (xc, yc, 1); t along it equals camera z
        dirs = np.stack(
            [
                R[0, 0] * xc + R[1, 0] * yc + R[2, 0],
                R[0, 1] * xc + R[1, 1] * yc + R[2, 1],
                R[0, 2] * xc + R[1, 2] * yc + R[2, 2],
            ],
            axis=-1,
        )

        depth = _room_exit(C, dirs, rmin, rmax)
        winner = np.full((h, w), -1, dtype=np.int32)
        for k, obj in enumerate(spec.objects):
            if isinstance(obj.shape, BoxShape):
                t, hit = _intersect_box(C, dirs, *obj.shape.bounds())
            else:
                t, hit = _intersect_sphere(
                    C, dirs, np.asarray(obj.shape.center), obj.shape.radius
                )
            closer = hit & (t < depth)
            depth = np.where(closer, t, depth)
            winner[closer] = k

        rgb = np.empty((h, w, 3), dtype=np.uint8)
        rgb[:] = spec.wall_albedo
        gt_labels = np.zeros((h, w), dtype=np.uint8)
        for k, obj in enumerate(spec.objects):
            sel = winner == k
            rgb[sel] = obj.albedo
            gt_labels[sel] = obj.class_id

        views.append(
            CameraView(
                view_id=vid,
                intrinsics=Intrinsics(f=cam.f, px=px, py=py, width=w, height=h),
                pose=Pose(R=R, C=C),
                depth=DepthMap(values=depth),
                rgb=rgb,
            )
        )
        gt[vid] = SegmentProposal(view_id=vid, labels=gt_labels)
        instances[vid] = winner

        if i in spec.labeled:
            for k, obj in enumerate(spec.objects):
                ys, xs = np.nonzero(winner == k)
                if len(xs) == 0:
                    continue
                labels.append(
                    RegionLabel(
                        view_id=vid,
                        class_id=obj.class_id,
                        region=Box(int(xs.min()), int(ys.min()),
                                   int(xs.max()) + 1, int(ys.max()) + 1),
                    )
                )

    scene = Scene(views=tuple(views), labels=tuple(labels),
                  class_table=dict(spec.class_names))
    return RenderedScene(spec=spec, scene=scene, gt=gt, instances=instances)


def write_scene(rendered: RenderedScene, path, depth_scale: float = 0.001) -> None:
    """Write the standard scene directory plus gt/ and a float depth sidecar.

    Depth PNGs quantize to 16 bits; views/<id>/depth_f64.npy keeps the exact
    values for tests that need them.
    """
    import json

    root = Path(path)
    scene = rendered.scene
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "classes": [{"id": i, "name": n} for i, n in sorted(scene.class_table.items())],
        "depth_scale": depth_scale,
        "views": scene.view_ids(),
    }
    (root / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    for view in scene.views:
        vdir = root / "views" / view.view_id
        vdir.mkdir(parents=True, exist_ok=True)
        intr, pose = view.intrinsics, view.pose
        cam = {
            "R": [float(x) for x in pose.R.ravel()],
            "C": [float(x) for x in pose.C],
            "f": intr.f, "px": intr.px, "py": intr.py,
            "width": intr.width, "height": intr.height,
        }
        (vdir / "camera.json").write_text(json.dumps(cam, indent=2, sort_keys=True))
        write_depth_image(view.depth.values, vdir / "depth.png", depth_scale)
        np.save(vdir / "depth_f64.npy", view.depth.values)
        Image.fromarray(view.rgb, mode="RGB").save(vdir / "rgb.png", format="PNG")

    boxes = []
    for lab in scene.labels:
        b = lab.region
        boxes.append({"view": lab.view_id, "class": lab.class_id,
                      "x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1})
    (root / "labels").mkdir(exist_ok=True)
    (root / "labels" / "boxes.json").write_text(json.dumps(boxes, indent=2))

    for vid, prop in rendered.gt.items():
        write_label_image(prop.labels, root / "gt" / f"{vid}.png")


# ---------------------------------------------------------------------------
# the deterministic scene family used by the verification suite


def _ring_camera(rng, center, azimuth, dist, height, f=58.0, width=64, height_px=48):
    cx, cy, cz = center
    pos = (
        cx + dist * np.cos(azimuth) + rng.uniform(-0.04, 0.04),
        cy + dist * np.sin(azimuth) + rng.uniform(-0.04, 0.04),
        height + rng.uniform(-0.04, 0.04),
    )
    target = (
        cx + rng.uniform(-0.03, 0.03),
        cy + rng.uniform(-0.03, 0.03),
        cz + rng.uniform(-0.03, 0.03),
    )
    return CameraSpec(
        position=pos,
        look_at=target,
        f=f,
        width=width,
        height=height_px,
        px=(width - 1) / 2.0 + rng.uniform(-0.2, 0.2),
        py=(height_px - 1) / 2.0 + rng.uniform(-0.2, 0.2),
    )


_ROOM = dict(room_min=(0.0, 0.0, 0.0), room_max=(6.0, 6.0, 3.0))
_CRATE = (196, 64, 54)
_BALL = (58, 182, 70)
_SLAB = (66, 112, 204)


def scene_suite(seed: int) -> list[SceneSpec]:
    """Deterministic family of verification scenes.

    Contains frontal and diagonal viewings, a partially occluded object, at
    least one unlabeled camera, 1-3 objects and 2-8 cameras per scene.
    Identical seeds produce identical specs.
    """
    rng = np.random.default_rng(seed)
    specs = []

    # simple frontal object seen from two nearby labeled cameras
    center = (3.0, 3.2, 1.1)
    cube = SynthObject(1, BoxShape(center, (1.0, 1.0, 1.0)), _CRATE)
    cams = (
        _ring_camera(rng, center, np.deg2rad(-90.0 + rng.uniform(-4, 4)), 2.3, 1.15),
        _ring_camera(rng, center, np.deg2rad(-58.0 + rng.uniform(-4, 4)), 2.3, 1.3),
    )
    specs.append(SceneSpec(
        name="frontal-cube", objects=(cube,), cameras=cams, labeled=(0, 1),
        class_names={1: "crate"}, tags=(), **_ROOM,
    ))

    # one labeled and one unlabeled camera on the same object
    center = (3.1, 3.0, 1.0)
    cube = SynthObject(1, BoxShape(center, (1.1, 1.0, 1.1)), _CRATE)
    cams = (
        _ring_camera(rng, center, np.deg2rad(-90.0 + rng.uniform(-3, 3)), 2.2, 1.1),
        _ring_camera(rng, center, np.deg2rad(-64.0 + rng.uniform(-3, 3)), 2.2, 1.2),
    )
    specs.append(SceneSpec(
        name="two-cam-unlabeled", objects=(cube,), cameras=cams, labeled=(0,),
        class_names={1: "crate"}, tags=("unlabeled_view",), **_ROOM,
    ))

    # table-like slab partially hiding a crate from the frontal camera
    center = (3.0, 3.3, 0.9)
    crate = SynthObject(1, BoxShape(center, (1.0, 0.9, 1.0)), _CRATE)
    slab = SynthObject(
        2, BoxShape((3.0, 2.2, 0.93), (1.7, 0.5, 0.16)), _SLAB
    )
    cams = (
        _ring_camera(rng, center, np.deg2rad(-90.0 + rng.uniform(-3, 3)), 2.4, 0.95),
        _ring_camera(rng, center, np.deg2rad(-55.0 + rng.uniform(-3, 3)), 2.4, 1.25),
        _ring_camera(rng, center, np.deg2rad(-125.0 + rng.uniform(-3, 3)), 2.4, 1.25),
    )
    specs.append(SceneSpec(
        name="occluder", objects=(crate, slab), cameras=cams, labeled=(0, 1, 2),
        class_names={1: "crate", 2: "slab"}, tags=("occlusion", "nonconvex"), **_ROOM,
    ))

    # a sphere: its silhouette fills only ~pi/4 of its bounding box
    center = (2.9, 3.1, 1.2)
    ball = SynthObject(1, SphereShape(center, 0.55), _BALL)
    cams = (
        _ring_camera(rng, center, np.deg2rad(-96.0 + rng.uniform(-3, 3)), 2.3, 1.2),
        _ring_camera(rng, center, np.deg2rad(-70.0 + rng.uniform(-3, 3)), 2.3, 1.05),
        _ring_camera(rng, center, np.deg2rad(-122.0 + rng.uniform(-3, 3)), 2.3, 1.35),
    )
    specs.append(SceneSpec(
        name="sphere", objects=(ball,), cameras=cams, labeled=(0, 1, 2),
        class_names={1: "ball"}, tags=("nonconvex",), **_ROOM,
    ))

    # two crates forming an L: a non-convex union under one class
    block_a = SynthObject(1, BoxShape((3.0, 3.2, 0.75), (1.4, 0.8, 0.7)), _CRATE)
    block_b = SynthObject(1, BoxShape((2.75, 3.2, 1.45), (0.9, 0.8, 0.7)), _CRATE)
    cams = (
        _ring_camera(rng, (2.9, 3.2, 1.1), np.deg2rad(-90.0 + rng.uniform(-3, 3)), 2.5, 1.1),
        _ring_camera(rng, (2.9, 3.2, 1.1), np.deg2rad(-62.0 + rng.uniform(-3, 3)), 2.5, 1.25),
        _ring_camera(rng, (2.9, 3.2, 1.1), np.deg2rad(-118.0 + rng.uniform(-3, 3)), 2.5, 1.0),
        _ring_camera(rng, (2.9, 3.2, 1.1), np.deg2rad(-76.0 + rng.uniform(-3, 3)), 2.6, 1.35),
    )
    specs.append(SceneSpec(
        name="l-blocks", objects=(block_a, block_b), cameras=cams, labeled=(0, 1, 2),
        class_names={1: "crate"}, tags=("nonconvex",), **_ROOM,
    ))

    # cube seen from cameras near its diagonal: loose bounding boxes
    center = (3.2, 3.0, 1.05)
    cube = SynthObject(1, BoxShape(center, (1.05, 1.05, 1.05)), _CRATE)
    cams = (
        _ring_camera(rng, center, np.deg2rad(-45.0 + rng.uniform(-4, 4)), 2.4, 1.5),
        _ring_camera(rng, center, np.deg2rad(-20.0 + rng.uniform(-4, 4)), 2.4, 1.2),
        _ring_camera(rng, center, np.deg2rad(-70.0 + rng.uniform(-4, 4)), 2.4, 1.0),
    )
    specs.append(SceneSpec(
        name="diagonal-cube", objects=(cube,), cameras=cams, labeled=(0, 1, 2),
        class_names={1: "crate"}, tags=("nonconvex", "diagonal"), **_ROOM,
    ))

    # randomized fillers: 1-3 objects, up to 8 cameras, some unlabeled
    for idx in range(SUITE_SIZE - len(specs)):
        n_obj = int(rng.integers(1, 4))
        objects = []
        class_names = {}
        for k in range(n_obj):
            cx = 2.4 + 1.2 * (k % 2) + rng.uniform(-0.15, 0.15)
            cy = 2.6 + 1.0 * (k // 2) + rng.uniform(-0.15, 0.15)
            if rng.random() < 0.5:
                shape = BoxShape(
                    (cx, cy, 0.9 + 0.5 * k),
                    tuple(rng.uniform(0.62, 0.95, size=3)),
                )
                objects.append(SynthObject(k + 1, shape, _CRATE))
                class_names[k + 1] = f"crate-{k + 1}"
            else:
                shape = SphereShape((cx, cy, 0.95 + 0.45 * k), rng.uniform(0.32, 0.46))
                objects.append(SynthObject(k + 1, shape, _BALL))
                class_names[k + 1] = f"ball-{k + 1}"
        centroid = tuple(
            float(np.mean([o.shape.center[a] for o in objects])) for a in range(3)
        )
        n_cam = int(rng.integers(3, 9))
        base_az = rng.uniform(-np.pi, np.pi)
        cams = []
        for j in range(n_cam):
            cam = _ring_camera(
                rng, centroid,
                base_az + np.deg2rad(26.0) * j + rng.uniform(-0.05, 0.05),
                2.4 + rng.uniform(-0.1, 0.2),
                1.0 + 0.12 * (j % 3),
            )
            # the ring can poke through a wall; clamp back inside
            pos = np.clip(cam.position, np.array(_ROOM["room_min"]) + 0.25,
                          np.array(_ROOM["room_max"]) - 0.25)
            cams.append(replace(cam, position=tuple(float(x) for x in pos)))
        cams = tuple(cams)
        n_labeled = max(2, n_cam - int(rng.integers(1, 3)))
        labeled = tuple(sorted(rng.choice(n_cam, size=n_labeled, replace=False).tolist()))
        tags = () if n_labeled == n_cam else ("unlabeled_view",)
        specs.append(SceneSpec(
            name=f"random-{idx}", objects=tuple(objects), cameras=cams,
            labeled=labeled, class_names=class_names, tags=tags, **_ROOM,
        ))

    for spec in specs:
        validate_spec(spec)
    return specs
