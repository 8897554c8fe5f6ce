"""Densify sparse objectness masks into per-view segment proposals.

Per class and view: threshold the splatted probabilities (Otsu over 256
uniform bins), fill holes with a morphological close, then run mean-field
inference on a fully connected pairwise model with Potts compatibility and
two Gaussian kernels (an appearance kernel over position+color and a
smoothness kernel over position). Per-class binary results are fused into a
single label map by highest foreground probability, ties to the lowest id.

Message passing is exact (every pixel pair), not lattice-approximated; at the
image sizes this package targets that is affordable, and it keeps the
zero-weight and small-fixture behavior bit-predictable. Contractions go
through einsum so results do not depend on BLAS threading.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import ConfigError, ValidationError
from .scene import SegmentProposal
from .splatting import ObjectnessMask

OTSU_BINS = 256
DEFAULT_CLOSE_RADIUS = 5
DEFAULT_UNARY_CONFIDENCE = 0.9
# full pairwise matrix is cached up to this many entries, else recomputed in blocks
_KERNEL_CACHE_ENTRIES = 2 * 10**7


@dataclass(frozen=True)
class CrfParams:
    """Weights, bandwidths, and iteration count for the pairwise model.

    theta_alpha / theta_beta are the appearance kernel's spatial and color
    bandwidths, theta_gamma the smoothness kernel's spatial bandwidth.
    """

    w_app: float = 10.0
    w_smooth: float = 3.0
    theta_alpha: float = 60.0
    theta_beta: float = 20.0
    theta_gamma: float = 3.0
    iterations: int = 10

    def __post_init__(self):
        if self.w_app < 0 or self.w_smooth < 0:
            raise ValidationError("kernel weights must be >= 0")
        if min(self.theta_alpha, self.theta_beta, self.theta_gamma) <= 0:
            raise ValidationError("kernel bandwidths must be > 0")
        if self.iterations < 0:
            raise ValidationError("iteration count must be >= 0")


def otsu_threshold(values) -> float:
    """Between-class-variance maximizing threshold over 256 uniform bins.

    Splits are evaluated at bin boundaries; the returned threshold is the
    upper edge of the best low-side bin, first (lowest) bin on ties, and
    pixels strictly above it are foreground. If all values are identical the
    threshold is nudged just below them so everything is foreground.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValidationError("otsu_threshold needs at least one value")
    if values.min() < 0 or values.max() > 1:
        raise ValidationError("otsu_threshold expects probabilities in [0, 1]")
    if values.min() == values.max():
        return float(np.nextafter(values[0], -np.inf))
    bins = np.minimum((values * OTSU_BINS).astype(np.int64), OTSU_BINS - 1)
    hist = np.bincount(bins, minlength=OTSU_BINS).astype(np.float64)
    centers = (np.arange(OTSU_BINS) + 0.5) / OTSU_BINS
    w0 = np.cumsum(hist)
    m0 = np.cumsum(hist * centers)
    total_w, total_m = w0[-1], m0[-1]
    w1 = total_w - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m0 / w0
        mu1 = (total_m - m0) / w1
        var = w0 * w1 * (mu0 - mu1) ** 2
    var[(w0 == 0) | (w1 == 0)] = 0.0
    k = int(np.argmax(var))  # argmax takes the first maximum: lowest bin wins ties
    return (k + 1) / OTSU_BINS


def _disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return xx * xx + yy * yy <= r * r


def morph_close(mask: np.ndarray, radius: int) -> np.ndarray:
    """Binary closing by a disk: dilate then erode with the same element.

    The input is padded by the radius before dilating, so the result equals
    the closing computed on an unbounded grid (the closing of a set never
    escapes its convex hull, hence never the image). Radius 0 is the identity.
    """
    mask = np.asarray(mask, dtype=bool)
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return mask.copy()
    disk = _disk(radius)
    padded = np.pad(mask, radius)
    dilated = ndimage.binary_dilation(padded, structure=disk)
    eroded = ndimage.binary_erosion(dilated, structure=disk)
    return eroded[radius:-radius, radius:-radius]


class PairwiseKernel:
    """Pairwise Gaussian affinities for one image, reusable across classes.

    k(i, j) = w_app * exp(-|p_i-p_j|^2 / (2 ta^2) - |I_i-I_j|^2 / (2 tb^2))
            + w_smooth * exp(-|p_i-p_j|^2 / (2 tg^2))

    message(Q)[i] = sum over j != i of k(i, j) Q[j].
    """

    def __init__(self, shape: tuple[int, int], rgb: Optional[np.ndarray], params: CrfParams):
        h, w = shape
        self.params = params
        if params.w_app > 0:
            if rgb is None:
                raise ConfigError("appearance kernel weight > 0 requires an rgb image")
            if rgb.shape[:2] != (h, w):
                raise ValidationError(
                    f"rgb shape {rgb.shape[:2]} does not match unary shape {(h, w)}"
                )
            self.colors = np.asarray(rgb, dtype=np.float64).reshape(-1, rgb.shape[2])
        else:
            self.colors = None
        ys, xs = np.mgrid[0:h, 0:w]
        self.pos = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
        self.n = h * w
        self.self_weight = params.w_app + params.w_smooth
        self._cached = self._build_rows(np.arange(self.n)) if (
            self.n * self.n <= _KERNEL_CACHE_ENTRIES
        ) else None

    def _build_rows(self, rows: np.ndarray) -> np.ndarray:
        p = self.params
        d2 = ((self.pos[rows, None, :] - self.pos[None, :, :]) ** 2).sum(axis=2)
        k = p.w_smooth * np.exp(-d2 / (2.0 * p.theta_gamma**2))
        if p.w_app > 0:
            c2 = ((self.colors[rows, None, :] - self.colors[None, :, :]) ** 2).sum(axis=2)
            k += p.w_app * np.exp(
                -d2 / (2.0 * p.theta_alpha**2) - c2 / (2.0 * p.theta_beta**2)
            )
        return k

    def message(self, q: np.ndarray) -> np.ndarray:
        if self._cached is not None:
            m = np.einsum("ij,jl->il", self._cached, q, optimize=False)
        else:
            m = np.empty_like(q)
            step = max(1, _KERNEL_CACHE_ENTRIES // self.n)
            for start in range(0, self.n, step):
                rows = np.arange(start, min(start + step, self.n))
                m[rows] = np.einsum(
                    "ij,jl->il", self._build_rows(rows), q, optimize=False
                )
        return m - self.self_weight * q  # drop each pixel's message to itself


def crf_refine(
    unary: np.ndarray,
    rgb: Optional[np.ndarray],
    params: CrfParams,
    kernel: Optional[PairwiseKernel] = None,
) -> np.ndarray:
    """Mean-field marginals for a fully connected Potts model.

    unary is (H, W, L) with rows summing to 1. Each iteration computes every
    pixel's kernel-weighted sum of the other pixels' marginals, applies the
    Potts compatibility (sum of the competing labels' messages), adds the
    unary log-potential, and renormalizes. With zero kernel weights or zero
    iterations the unary is returned unchanged.
    """
    unary = np.asarray(unary, dtype=np.float64)
    if unary.ndim != 3 or unary.shape[2] < 2:
        raise ValidationError(f"unary must be (H, W, L>=2), got shape {unary.shape}")
    sums = unary.sum(axis=2)
    if np.abs(sums - 1.0).max() > 1e-6:
        raise ValidationError("unary rows must sum to 1 within 1e-6")
    if params.iterations == 0 or (params.w_app == 0 and params.w_smooth == 0):
        return unary.copy()
    h, w, nl = unary.shape
    if kernel is None:
        kernel = PairwiseKernel((h, w), rgb, params)
    log_unary = np.log(np.clip(unary.reshape(-1, nl), 1e-30, None))
    q = unary.reshape(-1, nl).copy()
    for _ in range(params.iterations):
        m = kernel.message(q)
        pairwise = m.sum(axis=1, keepdims=True) - m
        logits = log_unary - pairwise
        logits -= logits.max(axis=1, keepdims=True)
        q = np.exp(logits)
        q /= q.sum(axis=1, keepdims=True)
    return q.reshape(h, w, nl)


def densify_class(
    mask: ObjectnessMask,
    rgb: Optional[np.ndarray],
    radius: int = DEFAULT_CLOSE_RADIUS,
    crf: CrfParams = CrfParams(),
    unary_confidence: float = DEFAULT_UNARY_CONFIDENCE,
    kernel: Optional[PairwiseKernel] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Turn one sparse splat mask into a dense binary mask plus fg probability.

    Pipeline: Otsu over the splatted values only (unsplatted pixels carry no
    evidence), binarize, close, build a two-label unary (foreground prob =
    unary_confidence inside the closed mask, 1 - unary_confidence outside),
    refine, argmax. A mask with no splats densifies to all background.
    """
    if not 0.5 < unary_confidence < 1.0:
        raise ConfigError(
            f"unary_confidence must be in (0.5, 1), got {unary_confidence}"
        )
    h, w = mask.values.shape
    if not mask.splatted.any():
        return np.zeros((h, w), dtype=bool), np.zeros((h, w), dtype=np.float64)
    t = otsu_threshold(mask.values[mask.splatted])
    fg = (mask.values > t) & mask.splatted
    closed = morph_close(fg, radius)
    p_fg = np.where(closed, unary_confidence, 1.0 - unary_confidence)
    unary = np.stack([1.0 - p_fg, p_fg], axis=-1)
    marginals = crf_refine(unary, rgb, crf, kernel=kernel)
    fg_prob = marginals[:, :, 1]
    return fg_prob > marginals[:, :, 0], fg_prob


def fuse_classes(
    view_id: str, per_class: dict[int, tuple[np.ndarray, np.ndarray]]
) -> SegmentProposal:
    """Merge per-class (binary, fg probability) results into one label map.

    A pixel claimed by several classes goes to the one with the highest
    carried probability; exact ties go to the lowest class id; unclaimed
    pixels stay background.
    """
    if not per_class:
        raise ValidationError("fuse_classes needs at least one class result")
    shapes = {binary.shape for binary, _ in per_class.values()}
    if len(shapes) > 1:
        raise ValidationError(f"per-class masks disagree on shape: {shapes}")
    shape = shapes.pop()
    labels = np.zeros(shape, dtype=np.uint8)
    best = np.full(shape, -1.0)
    for class_id in sorted(per_class):
        binary, prob = per_class[class_id]
        wins = binary & (prob > best)
        labels[wins] = class_id
        best[wins] = prob[wins]
    return SegmentProposal(view_id=view_id, labels=labels)
