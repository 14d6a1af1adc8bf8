"""Small image helpers shared across the pipeline: dtype conversion, PNG
(de)serialization and bilinear sampling.

Images are numpy arrays throughout. Grayscale is (H, W) float32 in [0, 1],
color is (H, W, 3) float32 in [0, 1]; 8-bit only at file/wire boundaries.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


def to_u8(img: np.ndarray) -> np.ndarray:
    """Quantize a float image in [0, 1] to uint8 (round-half-even via np.rint)."""
    if img.dtype == np.uint8:
        return img
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def from_u8(img: np.ndarray) -> np.ndarray:
    if img.dtype != np.uint8:
        return img.astype(np.float32)
    return img.astype(np.float32) / 255.0


def encode_png(img: np.ndarray) -> bytes:
    """Encode a float or uint8 image as PNG bytes (deterministic)."""
    arr = to_u8(img)
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG bytes to a float32 image in [0, 1]."""
    with Image.open(io.BytesIO(data)) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        return from_u8(np.asarray(im))


def png_b64(img: np.ndarray) -> str:
    return base64.b64encode(encode_png(img)).decode("ascii")


def png_from_b64(s: str) -> np.ndarray:
    return decode_png(base64.b64decode(s))


def save_png(path, img: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_png(img))


def load_png(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_png(f.read())


def bilinear_sample(img: np.ndarray, x: np.ndarray, y: np.ndarray, *, wrap: bool = False) -> np.ndarray:
    """Sample `img` at fractional pixel coordinates (x, y).

    Coordinates are in pixel units where (0, 0) is the center of the top-left
    pixel. Borders clamp by default; wrap=True tiles the image periodically
    (for repeating material maps). Works for (H, W) and (H, W, C) images;
    returns float samples with one row per coordinate.
    """
    h, w = img.shape[:2]
    if wrap:
        x = np.mod(np.asarray(x, dtype=np.float64), w)
        y = np.mod(np.asarray(y, dtype=np.float64), h)
        x0 = np.floor(x).astype(np.int64)
        y0 = np.floor(y).astype(np.int64)
        x1 = (x0 + 1) % w
        y1 = (y0 + 1) % h
        x0 %= w
        y0 %= h
    else:
        x = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1.0)
        y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1.0)
        x0 = np.floor(x).astype(np.int64)
        y0 = np.floor(y).astype(np.int64)
        x1 = np.minimum(x0 + 1, w - 1)
        y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0).astype(np.float32)
    fy = (y - y0).astype(np.float32)
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = img[y0, x0]
    v01 = img[y0, x1]
    v10 = img[y1, x0]
    v11 = img[y1, x1]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy


def resize(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize to (height, width), via PIL for speed."""
    h, w = size
    arr = to_u8(img)
    mode = "L" if arr.ndim == 2 else "RGB"
    out = Image.fromarray(arr, mode=mode).resize((w, h), Image.BILINEAR)
    return from_u8(np.asarray(out))


# D65 white point and the sRGB-to-XYZ matrix (IEC 61966-2-1)
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_D65 = np.array([0.95047, 1.0, 1.08883])


def srgb_to_lab(img: np.ndarray) -> np.ndarray:
    """Convert sRGB in [0, 1] (any leading shape, last axis RGB) to CIE Lab.

    L lands in [0, 100]; a*, b* stay well inside [-110, 110] for the sRGB
    gamut, which is what the histogram binning ranges assume.
    """
    rgb = from_u8(np.asarray(img)).astype(np.float64)
    lin = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _SRGB_TO_XYZ.T / _D65
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    out = np.empty_like(xyz)
    out[..., 0] = 116.0 * f[..., 1] - 16.0
    out[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    out[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return out


def lab_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Euclidean distance in Lab between two sRGB images (delta E 76)."""
    return np.linalg.norm(srgb_to_lab(a) - srgb_to_lab(b), axis=-1)
