"""Bit-exact image preprocessing for both training sets.

Resampling convention (frozen; golden fixtures depend on it): bilinear with
half-pixel centers, edge clamp, float64 accumulation in the fixed term order
p00*w00 + p01*w01 + p10*w10 + p11*w11, then round-half-up to 8 bits.
"""

from __future__ import annotations

import numpy as np

from ..core import Image

__all__ = [
    "WrongInputSizeError",
    "resize_bilinear",
    "preprocess_vla_images",
    "augment_diffusion_image",
    "VLA_CAM1_SIZE",
    "VLA_CAM2_SIZE",
    "VLA_OUTPUT_SIZE",
    "DIFFUSION_INPUT_SIZE",
    "DIFFUSION_CROP_SIZE",
]

VLA_CAM1_SIZE = (224, 144)          # (width, height)
VLA_CAM2_SIZE = (224, 80)
VLA_OUTPUT_SIZE = (224, 224)
DIFFUSION_INPUT_SIZE = (320, 240)
DIFFUSION_CROP_SIZE = (288, 216)


class WrongInputSizeError(ValueError):
    pass


def _axis_weights(n_in: int, n_out: int):
    centers = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    centers = np.clip(centers, 0.0, n_in - 1)
    lo = np.floor(centers).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = centers - lo
    return lo, hi, frac


def resize_bilinear(img: Image, out_width: int, out_height: int) -> Image:
    """Deterministic bilinear resize (works for up- and downscaling)."""
    src = img.to_array().astype(np.float64)
    y0, y1, fy = _axis_weights(img.height, out_height)
    x0, x1, fx = _axis_weights(img.width, out_width)

    p00 = src[y0][:, x0]
    p01 = src[y0][:, x1]
    p10 = src[y1][:, x0]
    p11 = src[y1][:, x1]
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    w00 = (1.0 - fy) * (1.0 - fx)
    w01 = (1.0 - fy) * fx
    w10 = fy * (1.0 - fx)
    w11 = fy * fx
    acc = p00 * w00 + p01 * w01 + p10 * w10 + p11 * w11
    out = np.clip(np.floor(acc + 0.5), 0.0, 255.0).astype(np.uint8)
    return Image.from_array(out)


def preprocess_vla_images(cam1: Image, cam2: Image) -> Image:
    """Resize the static view to 224x144 and the wrist view to 224x80, then
    stack them vertically into one 224x224 frame (static view on top)."""
    top = resize_bilinear(cam1, *VLA_CAM1_SIZE)
    bottom = resize_bilinear(cam2, *VLA_CAM2_SIZE)
    stacked = np.vstack([top.to_array(), bottom.to_array()])
    return Image.from_array(stacked)


def augment_diffusion_image(img: Image, seed: int) -> Image:
    """Random 288x216 crop out of a 320x240 frame, seeded and pure.

    The crop origin is drawn uniformly from the integer lattice
    x in [0, 32], y in [0, 24].
    """
    if (img.width, img.height) != DIFFUSION_INPUT_SIZE:
        raise WrongInputSizeError(
            f"expected {DIFFUSION_INPUT_SIZE[0]}x{DIFFUSION_INPUT_SIZE[1]}, "
            f"got {img.width}x{img.height}")
    rng = np.random.default_rng(seed)
    max_x = DIFFUSION_INPUT_SIZE[0] - DIFFUSION_CROP_SIZE[0]
    max_y = DIFFUSION_INPUT_SIZE[1] - DIFFUSION_CROP_SIZE[1]
    ox = int(rng.integers(0, max_x + 1))
    oy = int(rng.integers(0, max_y + 1))
    return crop(img, ox, oy, *DIFFUSION_CROP_SIZE)


def crop(img: Image, ox: int, oy: int, width: int, height: int) -> Image:
    arr = img.to_array()[oy:oy + height, ox:ox + width]
    return Image.from_array(arr)
