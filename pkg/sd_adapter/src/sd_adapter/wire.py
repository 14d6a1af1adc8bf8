"""JSON wire schema of the generation protocol, stated locally.

The service speaks the same single-POST protocol the texturing pipeline's
client does: image fields travel as base64 PNG, the world-position buffer
as base64 raw little-endian float32 triplets (row-major, NaN marking
background), and the reply is ``{"image": <b64 png>, "seed": <int>}``.
This module re-declares that schema so the service package has no import
dependency on the pipeline; the recorded corpus under tests/golden/ pins
cross-compatibility between the two encoders.

Anything that violates the schema raises WireError, which the service
maps to HTTP 4xx.
"""

from __future__ import annotations

import base64
import binascii
import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

MODES = ("full", "refine", "inpaint")

# square (S, S) or (S, S, 3) uint8 rasters, base64 PNG on the wire
IMAGE_FIELDS = ("depth", "lineart", "mask", "init_image", "inpaint_region")

DEFAULT_CONTROL_WEIGHT = 0.5


class WireError(ValueError):
    """Payload violates the documented request/response schema."""


# -- PNG and buffer codecs ------------------------------------------------


def image_to_u8(img: np.ndarray) -> np.ndarray:
    """Floats in [0, 1] quantize via rint; uint8 passes through."""
    arr = np.asarray(img)
    if arr.dtype == np.uint8:
        return arr
    return np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def image_to_b64(img: np.ndarray) -> str:
    arr = image_to_u8(img)
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def image_from_b64(s) -> np.ndarray:
    try:
        data = base64.b64decode(s)
        with Image.open(io.BytesIO(data)) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            return np.asarray(im)
    except (binascii.Error, ValueError, TypeError, OSError) as exc:
        raise WireError(f"bad image field: {exc}") from exc


def aux_to_b64(aux: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(aux, dtype="<f4").tobytes()).decode("ascii")


def aux_from_b64(s, size: int) -> np.ndarray:
    try:
        buf = np.frombuffer(base64.b64decode(s, validate=True), dtype="<f4")
        return buf.reshape(size, size, 3).copy()
    except (binascii.Error, ValueError, TypeError) as exc:
        raise WireError(f"bad aux_world_pos: {exc}") from exc


# -- generation requests ---------------------------------------------------


@dataclass
class WireRequest:
    """One decoded /generate payload. Image fields are uint8 arrays;
    aux_world_pos is (S, S, 3) float32 with NaN for background pixels."""

    mode: str
    prompt: str
    negative_prompt: str = ""
    image_size: int = 64
    denoise_steps: int = 50
    total_steps: int = 50
    control_weight_depth: float = DEFAULT_CONTROL_WEIGHT
    control_weight_lineart: float = DEFAULT_CONTROL_WEIGHT
    seed: int = 0
    depth: np.ndarray | None = None
    lineart: np.ndarray | None = None
    mask: np.ndarray | None = None
    init_image: np.ndarray | None = None
    inpaint_region: np.ndarray | None = None
    aux_world_pos: np.ndarray | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise WireError(f"unknown mode {self.mode!r}")
        if self.mode in ("refine", "inpaint") and self.init_image is None:
            raise WireError(f"{self.mode} request needs init_image")
        if self.mode == "inpaint" and self.inpaint_region is None:
            raise WireError("inpaint request needs inpaint_region")
        if not 0 <= self.denoise_steps <= self.total_steps:
            raise WireError("need 0 <= denoise_steps <= total_steps")
        for name in ("control_weight_depth", "control_weight_lineart"):
            w = getattr(self, name)
            if not 0.0 <= w <= 1.0:
                raise WireError(f"{name} must be in [0, 1], got {w}")
        s = self.image_size
        for name in IMAGE_FIELDS:
            img = getattr(self, name)
            if img is not None and img.shape[:2] != (s, s):
                raise WireError(f"{name} is {img.shape[:2]}, expected {(s, s)}")
        if self.aux_world_pos is not None and self.aux_world_pos.shape != (s, s, 3):
            raise WireError("aux_world_pos must be (size, size, 3)")


def parse_request(payload) -> WireRequest:
    """Decode and validate one /generate payload; WireError on any schema
    violation (missing keys, bad base64, wrong sizes, out-of-range fields)."""
    if not isinstance(payload, dict):
        raise WireError("request body must be a JSON object")
    try:
        prompt = payload["prompt"]
        if not isinstance(prompt, str):
            raise TypeError("prompt must be a string")
        size = int(payload["image_size"])
        if size <= 0:
            raise ValueError("image_size must be positive")
        req = WireRequest(
            mode=payload["mode"],
            prompt=prompt,
            negative_prompt=str(payload.get("negative_prompt") or ""),
            image_size=size,
            denoise_steps=int(payload["denoise_steps"]),
            total_steps=int(payload["total_steps"]),
            control_weight_depth=float(payload.get("control_weight_depth", DEFAULT_CONTROL_WEIGHT)),
            control_weight_lineart=float(payload.get("control_weight_lineart", DEFAULT_CONTROL_WEIGHT)),
            seed=int(payload.get("seed", 0)),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise WireError(f"bad request payload: {exc}") from exc
    for name in IMAGE_FIELDS:
        b64 = payload.get(name)
        if b64:
            setattr(req, name, image_from_b64(b64))
    aux = payload.get("aux_world_pos")
    if aux:
        req.aux_world_pos = aux_from_b64(aux, size)
    req.validate()
    return req


def encode_response(image: np.ndarray, seed: int) -> dict:
    return {"image": image_to_b64(image), "seed": int(seed)}


def decode_response(payload) -> tuple[np.ndarray, int]:
    """Client-side view of a reply; used to check schema conformance of the
    recorded corpus and of the service's own output."""
    if not isinstance(payload, dict):
        raise WireError("response body must be a JSON object")
    try:
        img = image_from_b64(payload["image"])
        seed = int(payload.get("seed", 0))
    except (KeyError, ValueError, TypeError) as exc:
        raise WireError(f"bad response payload: {exc}") from exc
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img, seed


# -- embedding and categorization payloads ---------------------------------


def parse_embed(payload) -> np.ndarray:
    """{"image": <b64 png>} -> uint8 array."""
    if not isinstance(payload, dict):
        raise WireError("request body must be a JSON object")
    if "image" not in payload:
        raise WireError("embed request needs an image field")
    return image_from_b64(payload["image"])


def parse_categories(payload) -> tuple[str, list[str], list[str], bool]:
    """{"object", "parts", "categories", "want_size"} -> typed tuple."""
    if not isinstance(payload, dict):
        raise WireError("request body must be a JSON object")
    try:
        obj = payload["object"]
        parts = payload["parts"]
        cats = payload["categories"]
    except KeyError as exc:
        raise WireError(f"categories request needs {exc}") from exc
    if not isinstance(obj, str):
        raise WireError("object must be a string")
    for name, val in (("parts", parts), ("categories", cats)):
        if not isinstance(val, list) or not all(isinstance(v, str) for v in val):
            raise WireError(f"{name} must be a list of strings")
    return obj, list(parts), list(cats), bool(payload.get("want_size", True))
