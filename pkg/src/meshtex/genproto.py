"""Generation requests, grid assembly, wire protocol, and the mock backend.

Wire protocol (the boundary any image backend implements):
  HTTP POST, JSON body, fields exactly as GenerationRequest. Images travel as
  base64 PNG; aux_world_pos as base64 raw little-endian float32 triplets
  (row-major, NaN marks background). Response: {"image": <b64 png>, "seed": int}.

Background contract for real diffusion backends: encode a white image, noise
it to timestep t = 980, and at that first step blend latents through the
dilated object mask M as z_t = (1 - M) * z_white_t + M * z_t, so everything
outside the object denoises toward white. The mock backend reproduces the
observable effect (background pixels come out white) directly in pixel space.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import time
from dataclasses import dataclass, field, replace

import numpy as np
import requests as _requests

from .imageops import from_u8, png_b64, png_from_b64, to_u8
from .views import Camera

GRID_SIDE = 4
GRID_TILES = GRID_SIDE * GRID_SIDE
DEFAULT_GRID_RESOLUTION = 1600
DEFAULT_INPAINT_RESOLUTION = 512
FULL_STEPS = 50
REFINE_STEPS = 20
DEFAULT_CONTROL_WEIGHT = 0.5
BACKGROUND_TIMESTEP = 980  # white-latent blend step, applied backend-side
MOCK_ENDPOINT = "mock"

MODES = ("full", "refine", "inpaint")

_IMAGE_FIELDS = ("depth", "lineart", "mask", "init_image", "inpaint_region")


class BackendError(Exception):
    pass


class TransportError(BackendError):
    """Endpoint unreachable or timed out (after one retry)."""


class MalformedResponseError(BackendError):
    """Response was not the documented JSON/PNG shape."""


class SizeMismatchError(BackendError):
    """Backend returned an image at the wrong resolution."""


@dataclass
class GenerationRequest:
    mode: str
    prompt: str
    negative_prompt: str = ""
    image_size: int = DEFAULT_GRID_RESOLUTION
    depth: np.ndarray | None = None  # (S, S) uint8
    lineart: np.ndarray | None = None  # (S, S) uint8
    mask: np.ndarray | None = None  # (S, S) uint8, object white, pre-dilated
    init_image: np.ndarray | None = None  # (S, S, 3) uint8
    inpaint_region: np.ndarray | None = None  # (S, S) uint8
    denoise_steps: int = FULL_STEPS
    total_steps: int = FULL_STEPS
    control_weight_depth: float = DEFAULT_CONTROL_WEIGHT
    control_weight_lineart: float = DEFAULT_CONTROL_WEIGHT
    seed: int = 0
    aux_world_pos: np.ndarray | None = None  # (S, S, 3) float32, NaN = background

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode in ("refine", "inpaint") and self.init_image is None:
            raise ValueError(f"{self.mode} request needs init_image")
        if self.mode == "inpaint" and self.inpaint_region is None:
            raise ValueError("inpaint request needs inpaint_region")
        if not 0 <= self.denoise_steps <= self.total_steps:
            raise ValueError("need 0 <= denoise_steps <= total_steps")
        for name in ("control_weight_depth", "control_weight_lineart"):
            w = getattr(self, name)
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {w}")
        s = self.image_size
        for name in _IMAGE_FIELDS:
            img = getattr(self, name)
            if img is not None and img.shape[:2] != (s, s):
                raise ValueError(f"{name} is {img.shape[:2]}, expected {(s, s)}")
        if self.aux_world_pos is not None and self.aux_world_pos.shape != (s, s, 3):
            raise ValueError("aux_world_pos must be (size, size, 3)")


@dataclass
class GridImage:
    """16 per-view tiles plus their cameras, row-major."""

    tiles: list[np.ndarray]
    tile_size: int
    cameras: list[Camera] = field(default_factory=list)

    def assembled(self) -> np.ndarray:
        return assemble_grid(self.tiles)

    @classmethod
    def from_image(cls, image: np.ndarray, cameras=None) -> "GridImage":
        tiles = split_grid(image)
        return cls(tiles=tiles, tile_size=tiles[0].shape[0], cameras=list(cameras or []))


def assemble_grid(views: list[np.ndarray]) -> np.ndarray:
    """Row-major 4x4 mosaic of equal square tiles."""
    if len(views) != GRID_TILES:
        raise ValueError(f"expected {GRID_TILES} views, got {len(views)}")
    s = views[0].shape[0]
    for v in views:
        if v.shape[0] != v.shape[1] or v.shape[0] != s or v.shape[2:] != views[0].shape[2:]:
            raise ValueError("grid tiles must be square and identically shaped")
    rows = [np.concatenate(views[r * GRID_SIDE : (r + 1) * GRID_SIDE], axis=1) for r in range(GRID_SIDE)]
    return np.concatenate(rows, axis=0)


def split_grid(image: np.ndarray) -> list[np.ndarray]:
    """Inverse of assemble_grid; bit-exact round trip."""
    size = image.shape[0]
    if image.shape[1] != size or size % GRID_SIDE:
        raise ValueError("grid image must be square with side divisible by 4")
    s = size // GRID_SIDE
    return [
        image[r * s : (r + 1) * s, c * s : (c + 1) * s].copy()
        for r in range(GRID_SIDE)
        for c in range(GRID_SIDE)
    ]


def build_request(kind: str, cond, init_image=None, config=None, *, inpaint_region=None, aux_world_pos=None, seed=None) -> GenerationRequest:
    """Fill a request for one of the three pass types.

    `cond` carries the assembled conditioning mosaics (attributes depth_norm,
    lineart, mask). `config` supplies prompt/steps/weights; attributes are
    read with library defaults as fallback so any config-like object works.
    """

    def cfg(name, default):
        return getattr(config, name, default) if config is not None else default

    size = int(cond.depth_norm.shape[0])
    total = int(cfg("pass1_steps", FULL_STEPS))
    if kind == "full":
        steps = total
    elif kind == "refine":
        if init_image is None:
            raise ValueError("refine request needs an init image")
        steps = int(cfg("pass2_steps", REFINE_STEPS))
    elif kind == "inpaint":
        if init_image is None:
            raise ValueError("inpaint request needs an init image")
        if inpaint_region is None:
            raise ValueError("inpaint request needs the unseen-region mask")
        steps = total
    else:
        raise ValueError(f"unknown pass kind {kind!r}")

    weights = cfg("control_weights", (DEFAULT_CONTROL_WEIGHT, DEFAULT_CONTROL_WEIGHT))
    req = GenerationRequest(
        mode=kind,
        prompt=cfg("prompt", ""),
        negative_prompt=cfg("negative_prompt", ""),
        image_size=size,
        depth=cond.depth_norm,
        lineart=cond.lineart,
        mask=cond.mask,
        init_image=init_image,
        inpaint_region=inpaint_region,
        denoise_steps=steps,
        total_steps=total,
        control_weight_depth=float(weights[0]),
        control_weight_lineart=float(weights[1]),
        seed=int(cfg("seed", 0) if seed is None else seed),
        aux_world_pos=aux_world_pos,
    )
    req.validate()
    return req


# -- mock backend ------------------------------------------------------------

_MIX1 = np.uint64(0x9E3779B97F4A7C15)
_MIX2 = np.uint64(0xBF58476D1CE4E5B9)
_MIX3 = np.uint64(0x94D049BB133111EB)
_PX = np.uint64(0x8DA6B343EC53F6A5)
_PY = np.uint64(0xD8163841E869A8C1)
_PZ = np.uint64(0xCB1AB31F2FD7B1A3)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z + _MIX1).astype(np.uint64)
    z = ((z ^ (z >> np.uint64(30))) * _MIX2).astype(np.uint64)
    z = ((z ^ (z >> np.uint64(27))) * _MIX3).astype(np.uint64)
    return z ^ (z >> np.uint64(31))


def _lattice_value(ix, iy, iz, salt: np.uint64) -> np.ndarray:
    """Hash integer lattice coordinates to uniform values in [0, 1)."""
    h = (
        ix.astype(np.int64).astype(np.uint64) * _PX
        ^ iy.astype(np.int64).astype(np.uint64) * _PY
        ^ iz.astype(np.int64).astype(np.uint64) * _PZ
        ^ salt
    )
    return _mix64(h).astype(np.float64) / float(2**64)


def value_noise(points: np.ndarray, frequency: float, salt: int) -> np.ndarray:
    """Smooth 3D value noise in [0, 1): trilinear blend of hashed lattice
    corners with smoothstep weights. Pure integer hashing keeps it
    platform-stable."""
    p = np.asarray(points, dtype=np.float64) * frequency
    i0 = np.floor(p)
    f = p - i0
    t = f * f * (3.0 - 2.0 * f)
    i0 = i0.astype(np.int64)
    s = np.uint64(salt & 0xFFFFFFFFFFFFFFFF)
    vals = np.empty((len(p), 2, 2, 2))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                vals[:, dx, dy, dz] = _lattice_value(
                    i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz, s
                )
    vx = vals[:, 0] * (1 - t[:, 0, None, None]) + vals[:, 1] * t[:, 0, None, None]
    vy = vx[:, 0] * (1 - t[:, 1, None]) + vx[:, 1] * t[:, 1, None]
    return vy[:, 0] * (1 - t[:, 2]) + vy[:, 1] * t[:, 2]


def prompt_fingerprint(prompt: str) -> int:
    digest = hashlib.blake2b(prompt.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def prompt_palette(prompt: str) -> tuple[np.ndarray, np.ndarray]:
    """Two anchor colors derived from the prompt, kept off pure white."""
    h = prompt_fingerprint(prompt)
    raw = _mix64(np.arange(6, dtype=np.uint64) + np.uint64(h)).astype(np.float64) / float(2**64)
    lo, hi = 0.12, 0.88
    cols = lo + (hi - lo) * raw
    return cols[:3], cols[3:]


def mock_world_color(points: np.ndarray, prompt: str) -> np.ndarray:
    """The mock's texture: a pure function of (prompt, world position).

    Two palette anchors mixed by low-frequency value noise, modulated by a
    higher-frequency brightness channel. Every view of the same surface point
    therefore agrees exactly, which is what the consistency checks lean on.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    h = prompt_fingerprint(prompt)
    c0, c1 = prompt_palette(prompt)
    mix = value_noise(pts, 2.5, h ^ 0x3C6EF372)[:, None]
    bright = 0.72 + 0.28 * value_noise(pts, 5.0, h ^ 0xA54FF53A)[:, None]
    out = (c0[None, :] * (1.0 - mix) + c1[None, :] * mix) * bright
    return out.reshape(np.asarray(points).shape)


def mock_generate(request: GenerationRequest, seed: int | None = None) -> np.ndarray:
    """Deterministic stand-in for a diffusion backend.

    Foreground pixels (finite aux_world_pos) take the world-position color;
    everything else is white. Refine blends toward the generated image by
    denoise_steps/total_steps; inpaint replaces only the inpaint region.
    Output is float in [0, 1].
    """
    request.validate()
    if request.aux_world_pos is None:
        raise ValueError("mock backend needs aux_world_pos in the request")
    del seed  # the mock texture is seed-independent by design
    s = request.image_size
    aux = request.aux_world_pos
    finite = np.isfinite(aux).all(axis=2)
    gen = np.ones((s, s, 3), dtype=np.float64)
    if finite.any():
        gen[finite] = mock_world_color(aux[finite], request.prompt)

    if request.mode == "full":
        return gen
    init = from_u8(request.init_image).astype(np.float64)
    if init.ndim == 2:
        init = np.repeat(init[..., None], 3, axis=2)
    if request.mode == "refine":
        frac = request.denoise_steps / request.total_steps if request.total_steps else 0.0
        if frac == 0.0:
            return init
        return (1.0 - frac) * init + frac * gen
    region = from_u8(request.inpaint_region) > 0.5
    out = init.copy()
    out[region] = gen[region]
    return out


# -- wire serialization -------------------------------------------------------


def request_to_wire(request: GenerationRequest) -> dict:
    request.validate()
    payload = {
        "mode": request.mode,
        "prompt": request.prompt,
        "negative_prompt": request.negative_prompt,
        "image_size": request.image_size,
        "denoise_steps": request.denoise_steps,
        "total_steps": request.total_steps,
        "control_weight_depth": request.control_weight_depth,
        "control_weight_lineart": request.control_weight_lineart,
        "seed": request.seed,
    }
    for name in _IMAGE_FIELDS:
        img = getattr(request, name)
        payload[name] = png_b64(img) if img is not None else None
    aux = request.aux_world_pos
    if aux is not None:
        payload["aux_world_pos"] = base64.b64encode(
            np.ascontiguousarray(aux, dtype="<f4").tobytes()
        ).decode("ascii")
    else:
        payload["aux_world_pos"] = None
    return payload


def request_from_wire(payload: dict) -> GenerationRequest:
    try:
        size = int(payload["image_size"])
        kwargs = {
            "mode": payload["mode"],
            "prompt": payload["prompt"],
            "negative_prompt": payload.get("negative_prompt", ""),
            "image_size": size,
            "denoise_steps": int(payload["denoise_steps"]),
            "total_steps": int(payload["total_steps"]),
            "control_weight_depth": float(payload.get("control_weight_depth", DEFAULT_CONTROL_WEIGHT)),
            "control_weight_lineart": float(payload.get("control_weight_lineart", DEFAULT_CONTROL_WEIGHT)),
            "seed": int(payload.get("seed", 0)),
        }
        for name in _IMAGE_FIELDS:
            b64 = payload.get(name)
            kwargs[name] = to_u8(png_from_b64(b64)) if b64 else None
        aux_b64 = payload.get("aux_world_pos")
        if aux_b64:
            buf = np.frombuffer(base64.b64decode(aux_b64, validate=True), dtype="<f4")
            kwargs["aux_world_pos"] = buf.reshape(size, size, 3).copy()
        else:
            kwargs["aux_world_pos"] = None
    except (KeyError, ValueError, TypeError, binascii.Error) as exc:
        raise MalformedResponseError(f"bad request payload: {exc}") from exc
    req = GenerationRequest(**kwargs)
    req.validate()
    return req


def response_to_wire(image: np.ndarray, seed: int) -> dict:
    return {"image": png_b64(image), "seed": int(seed)}


def response_from_wire(payload: dict) -> tuple[np.ndarray, int]:
    try:
        img = from_u8(to_u8(png_from_b64(payload["image"])))
        seed = int(payload.get("seed", 0))
    except (KeyError, ValueError, TypeError, binascii.Error) as exc:
        raise MalformedResponseError(f"bad response payload: {exc}") from exc
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return img, seed


def call_backend(
    request: GenerationRequest,
    endpoint: str = MOCK_ENDPOINT,
    *,
    timeout: float = 120.0,
    retry_wait: float = 0.5,
) -> np.ndarray:
    """Send a request to an image backend and return the float image.

    `endpoint` is either the literal "mock" (in-process deterministic
    backend) or an HTTP URL implementing the wire protocol. One retry on
    transient transport failure.
    """
    if endpoint == MOCK_ENDPOINT:
        return mock_generate(request, request.seed)

    payload = request_to_wire(request)
    last_exc = None
    for attempt in range(2):
        try:
            resp = _requests.post(endpoint, json=payload, timeout=timeout)
            resp.raise_for_status()
            body = resp.json()
            break
        except (_requests.ConnectionError, _requests.Timeout) as exc:
            last_exc = exc
            if attempt == 0:
                time.sleep(retry_wait)
        except (_requests.HTTPError, ValueError) as exc:
            raise MalformedResponseError(f"backend rejected request: {exc}") from exc
    else:
        raise TransportError(f"backend unreachable at {endpoint}: {last_exc}") from last_exc

    image, _ = response_from_wire(body)
    if image.shape[:2] != (request.image_size, request.image_size):
        raise SizeMismatchError(
            f"backend returned {image.shape[:2]}, expected {(request.image_size,) * 2}"
        )
    return image


def with_seed(request: GenerationRequest, seed: int) -> GenerationRequest:
    return replace(request, seed=seed)
