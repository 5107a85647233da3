"""Raster primitives shared by every stage of the pipeline.

Gray images are 2-D float64 arrays with intensities in [0, 1]; binary masks
are 2-D bool arrays. Row index is y (pointing down), column index is x.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage, signal


EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def check_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("gray intensities must lie in [0, 1]")
    return img


def pool2x2(img: np.ndarray, mode: str = "max") -> np.ndarray:
    """Halve an image by taking the max (or min) over 2x2 blocks.

    Odd edges are padded with the neutral element of the reduction, 0 for
    ``max`` and 1 for ``min``, so padding never creates or removes evidence.
    Works for bool masks too (``max`` is logical or).
    """
    if mode not in ("max", "min"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    img = np.asarray(img)
    h, w = img.shape
    if h < 1 or w < 1:
        raise ValueError("cannot pool an empty image")
    is_bool = img.dtype == bool
    a = img.astype(np.float64)
    pad_value = 0.0 if mode == "max" else 1.0
    a = np.pad(a, ((0, h % 2), (0, w % 2)), constant_values=pad_value)
    blocks = a.reshape(a.shape[0] // 2, 2, a.shape[1] // 2, 2)
    out = blocks.max(axis=(1, 3)) if mode == "max" else blocks.min(axis=(1, 3))
    return out.astype(bool) if is_bool else out


def dilate_gray(img: np.ndarray, kernel: int = 5) -> np.ndarray:
    """Flat square gray-scale dilation with edge-clamped windows."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd and >= 1, got {kernel}")
    img = np.asarray(img, dtype=np.float64)
    if kernel == 1:
        return img.copy()
    return ndimage.grey_dilation(img, size=(kernel, kernel), mode="nearest")


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from every pixel to the nearest set pixel."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("distance transform of an empty mask is undefined")
    return ndimage.distance_transform_edt(~mask)


def _box_sum(a: np.ndarray, h: int, w: int) -> np.ndarray:
    """Sums over every h x w window (valid positions only)."""
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    c[1:, 1:] = a.cumsum(0).cumsum(1)
    return c[h:, w:] - c[:-h, w:] - c[h:, :-w] + c[:-h, :-w]


def ncc_map(img: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Zero-mean normalized cross-correlation of ``template`` at every valid offset.

    Entry ``[y, x]`` scores the window whose top-left corner is ``(x, y)``.
    Windows with no intensity variation score 0.
    """
    img = np.asarray(img, dtype=np.float64)
    t = np.asarray(template, dtype=np.float64)
    th, tw = t.shape
    if th > img.shape[0] or tw > img.shape[1]:
        raise ValueError("template larger than image")
    t0 = t - t.mean()
    t_norm = np.sqrt((t0 ** 2).sum())
    if t_norm < 1e-12:
        raise ValueError("constant template: NCC undefined")
    n = th * tw
    num = signal.correlate(img, t0, mode="valid", method="fft")
    s1 = _box_sum(img, th, tw)
    s2 = _box_sum(img * img, th, tw)
    var = np.maximum(s2 - s1 * s1 / n, 0.0)
    # FFT round-off leaves ~1e-12 residue on flat windows
    flat = var < 1e-9 * max(1.0, n)
    score = np.zeros_like(num)
    ok = ~flat
    score[ok] = num[ok] / (np.sqrt(var[ok]) * t_norm)
    return np.clip(score, -1.0, 1.0)


def template_hits(img: np.ndarray, template: np.ndarray, threshold: float,
                  mirror: bool = False) -> list[tuple[int, int, int, int]]:
    """Detections of ``template`` under all quarter-turns (and mirrors).

    Returns ``(y, x, h, w)`` boxes: top-left corner and size of the matched
    template variant. A detection is a 3x3 local maximum of the NCC map
    scoring at least ``threshold``.
    """
    template = np.asarray(template, dtype=np.float64)
    variants = [rotate_quarter(template, k) for k in range(4)]
    if mirror:
        flipped = template[:, ::-1]
        variants += [rotate_quarter(flipped, k) for k in range(4)]
    hits: set[tuple[int, int, int, int]] = set()
    for v in variants:
        vh, vw = v.shape
        if vh >= img.shape[0] or vw >= img.shape[1]:
            continue
        score = ncc_map(img, v)
        peak = ndimage.maximum_filter(score, size=3, mode="nearest")
        ys, xs = np.nonzero((score >= threshold) & (score >= peak))
        hits.update((int(y), int(x), vh, vw) for y, x in zip(ys, xs))
    return sorted(hits)


def match_template(img: np.ndarray, template: np.ndarray, threshold: float) -> np.ndarray:
    """Mask marking the top-left corner of every NCC detection, all four rotations unioned."""
    img = np.asarray(img, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    if template.shape[0] >= img.shape[0] or template.shape[1] >= img.shape[1]:
        raise ValueError("template must be strictly smaller than the image")
    out = np.zeros(img.shape, dtype=bool)
    for y, x, _, _ in template_hits(img, template, threshold):
        out[y, x] = True
    return out


def remove_small_components(img: np.ndarray, ink_threshold: float = 0.4,
                            min_area: float = 0) -> np.ndarray:
    """Whiten 8-connected ink components (intensity < ink_threshold) smaller than min_area."""
    if not 0.0 <= ink_threshold <= 1.0:
        raise ValueError("ink_threshold must lie in [0, 1]")
    img = np.asarray(img, dtype=np.float64)
    out = img.copy()
    if min_area <= 0:
        return out
    labels, n = ndimage.label(img < ink_threshold, structure=EIGHT_CONNECTED)
    if n == 0:
        return out
    area = np.bincount(labels.ravel())
    small = area < min_area
    small[0] = False
    out[small[labels]] = 1.0
    return out


def rotate_quarter(img: np.ndarray, k: int) -> np.ndarray:
    """Lossless counter-clockwise rotation by ``90 * k`` degrees (as displayed)."""
    return np.ascontiguousarray(np.rot90(np.asarray(img), k % 4))


def rotate_vector(dx, dy, k: int):
    """Image-frame offset (dx, dy) after a ``k`` quarter-turn, matching :func:`rotate_quarter`."""
    k %= 4
    if k == 0:
        return dx, dy
    if k == 1:
        return dy, -dx
    if k == 2:
        return -dx, -dy
    return -dy, dx


def rotate_point(x: int, y: int, shape: tuple[int, int], k: int) -> tuple[int, int]:
    """Where pixel (x, y) of an image of ``shape`` lands after :func:`rotate_quarter`."""
    h, w = shape
    k %= 4
    if k == 0:
        return x, y
    if k == 1:
        return y, w - 1 - x
    if k == 2:
        return w - 1 - x, h - 1 - y
    return h - 1 - y, x


# --- serialization -----------------------------------------------------------

def load_gray(path: str | Path) -> np.ndarray:
    """Read an 8- or 16-bit grayscale PNG or binary PGM as intensities in [0, 1]."""
    with Image.open(path) as im:
        # Pillow rescales PGM maxval to the full 8/16-bit range on load
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            return np.clip(np.asarray(im, dtype=np.float64) / 65535.0, 0.0, 1.0)
        if im.mode == "1":
            return np.asarray(im, dtype=np.float64)
        if im.mode != "L":
            im = im.convert("L")
        return np.asarray(im, dtype=np.float64) / 255.0


def save_gray(path: str | Path, img: np.ndarray, bits: int = 8) -> None:
    """Write intensities in [0, 1] as 8- or 16-bit grayscale (format from the suffix)."""
    img = check_gray(img)
    if bits == 8:
        im = Image.fromarray(np.round(img * 255.0).astype(np.uint8))
    elif bits == 16:
        im = Image.fromarray(np.round(img * 65535.0).astype(np.uint16))
    else:
        raise ValueError("bits must be 8 or 16")
    im.save(path)


def load_mask(path: str | Path) -> np.ndarray:
    return load_gray(path) >= 0.5


def save_mask(path: str | Path, mask: np.ndarray) -> None:
    mask = np.asarray(mask, dtype=bool)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)
