"""Generation, embedding, and categorization engines.

Two tiers. The toy tier (ToyEngine, ToyEmbedder, KeywordCategorizer) is
deterministic, CPU-only, and carries the whole test suite; it honors every
protocol semantic (mode handling, zero-strength identity, white background)
without producing meaningful textures. The model tier (DiffusionEngine,
ClipEmbedder, LlmProxy) wraps Stable Diffusion v1.5 with depth and lineart
ControlNets, a CLIP image tower, and a hosted LLM; it imports its heavy
dependencies lazily, needs the [gpu] extra plus real hardware, and is
exercised manually, never in CI.
"""

from __future__ import annotations

import hashlib

import httpx
import numpy as np
from PIL import Image

from . import wire


class EngineError(Exception):
    """Model-side failure; the service maps it to HTTP 5xx."""


def _fingerprint(prompt: str, seed: int) -> int:
    digest = hashlib.blake2b(f"{seed}|{prompt}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _as_rgb_float(img: np.ndarray) -> np.ndarray:
    out = img.astype(np.float64) / 255.0
    if out.ndim == 2:
        out = np.repeat(out[..., None], 3, axis=2)
    return out


# -- toy tier ---------------------------------------------------------------


class ToyEngine:
    """Deterministic CPU generator.

    Produces a smooth two-color sine field keyed by (prompt, seed). Pixels
    with no world position (or outside the object mask when no positions are
    sent) come out white, mirroring in pixel space what the diffusion engine
    does with white-latent blending at the first timestep. Refine blends
    init toward the field by denoise_steps/total_steps and is an exact
    identity at zero strength; inpaint rewrites only the requested region.
    """

    def generate(self, request: wire.WireRequest) -> np.ndarray:
        s = request.image_size
        rng = np.random.default_rng(_fingerprint(request.prompt, request.seed))
        c0, c1 = rng.uniform(0.12, 0.88, (2, 3))
        fx, fy = rng.uniform(1.0, 3.0, 2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        yy, xx = np.mgrid[0:s, 0:s] / max(s - 1, 1)
        mix = 0.5 + 0.5 * np.sin(2.0 * np.pi * (fx * xx + fy * yy) + phase)
        gen = c0 + (c1 - c0) * mix[..., None]
        gen = np.where(self._foreground(request)[..., None], gen, 1.0)
        if request.mode == "full":
            return gen
        init = _as_rgb_float(request.init_image)
        if request.mode == "refine":
            frac = request.denoise_steps / request.total_steps if request.total_steps else 0.0
            if frac == 0.0:
                return init
            return (1.0 - frac) * init + frac * gen
        region = request.inpaint_region > 127
        out = init.copy()
        out[region] = gen[region]
        return out

    @staticmethod
    def _foreground(request: wire.WireRequest) -> np.ndarray:
        if request.aux_world_pos is not None:
            return np.isfinite(request.aux_world_pos).all(axis=2)
        if request.mask is not None:
            return request.mask > 127
        return np.ones((request.image_size, request.image_size), dtype=bool)


class ToyEmbedder:
    """Deterministic 195-dim embedding: 8x8 RGB block means, two contrast
    statistics, and a bias term that keeps the norm away from zero."""

    def embed(self, image: np.ndarray) -> np.ndarray:
        arr = image if image.ndim == 3 else np.repeat(image[..., None], 3, axis=2)
        small = np.asarray(
            Image.fromarray(arr).resize((8, 8), Image.BILINEAR), dtype=np.float64
        ) / 255.0
        gray = small.mean(axis=2)
        vec = np.concatenate(
            [small.reshape(-1), [gray.std(), float(np.abs(np.diff(gray, axis=1)).mean())], [1.0]]
        )
        return vec / np.linalg.norm(vec)


class KeywordCategorizer:
    """LLM stand-in: a part lands in the first category whose name occurs in
    the part name (case-insensitive). Unmatched parts are left out of the
    reply, which the client treats as uncategorized."""

    def categorize(self, object_name, parts, categories, want_size) -> dict:
        del object_name, want_size
        out = {}
        for part in parts:
            low = part.lower()
            for cat in categories:
                if cat.lower() in low:
                    out[part] = cat
                    break
        return {"parts": out, "physical_size_m": None}


# -- model tier --------------------------------------------------------------


class LlmProxy:
    """Forwards categorization payloads verbatim to a hosted LLM endpoint and
    returns the reply constrained to the documented keys."""

    def __init__(self, endpoint: str, *, timeout: float = 60.0, transport=None):
        self.endpoint = endpoint
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def categorize(self, object_name, parts, categories, want_size) -> dict:
        payload = {
            "object": object_name,
            "parts": parts,
            "categories": categories,
            "want_size": want_size,
        }
        try:
            resp = self._client.post(self.endpoint, json=payload)
            resp.raise_for_status()
            body = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise EngineError(f"LLM endpoint failed: {exc}") from exc
        if not isinstance(body, dict) or not isinstance(body.get("parts", {}), dict):
            raise EngineError("LLM endpoint returned an unexpected shape")
        return {"parts": dict(body.get("parts", {})), "physical_size_m": body.get("physical_size_m")}


class ClipEmbedder:
    """CLIP image tower behind /embed; weights load on first use."""

    def __init__(self, config):
        self.config = config
        self._model = None
        self._processor = None

    def warmup(self) -> None:
        if self._model is not None:
            return
        try:
            import torch  # noqa: F401
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EngineError(f"CLIP embedder needs the [gpu] extra: {exc}") from exc
        self._model = CLIPModel.from_pretrained(self.config.clip_model).to(self.config.device).eval()
        self._processor = CLIPProcessor.from_pretrained(self.config.clip_model)

    def embed(self, image: np.ndarray) -> np.ndarray:
        self.warmup()
        import torch

        arr = image if image.ndim == 3 else np.repeat(image[..., None], 3, axis=2)
        inputs = self._processor(images=Image.fromarray(arr), return_tensors="pt").to(self.config.device)
        with torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        vec = feats[0].float().cpu().numpy().astype(np.float64)
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            raise EngineError("CLIP returned a zero feature vector")
        return vec / norm


class DiffusionEngine:
    """Stable Diffusion v1.5 with depth and lineart ControlNets.

    full: text-to-image conditioned on both control maps, with the
    background latents replaced by a noised white-image latent at the first
    timestep (t = 980) through the pre-dilated object mask. refine: partial
    denoise of the init image using denoise_steps of total_steps. inpaint:
    masked regeneration inside the requested region. All three share one
    set of weights; requests are already serialized by the service lock.
    """

    BACKGROUND_TIMESTEP = 980

    def __init__(self, config):
        self.config = config
        self._torch = None
        self._txt2img = None
        self._img2img = None
        self._inpaint = None

    def warmup(self) -> None:
        if self._txt2img is not None:
            return
        try:
            import torch
            from diffusers import (
                ControlNetModel,
                StableDiffusionControlNetImg2ImgPipeline,
                StableDiffusionControlNetInpaintPipeline,
                StableDiffusionControlNetPipeline,
            )
        except ImportError as exc:
            raise EngineError(f"diffusion engine needs the [gpu] extra: {exc}") from exc
        dtype = torch.float16 if "cuda" in self.config.device else torch.float32
        controlnets = [
            ControlNetModel.from_pretrained(self.config.controlnet_depth, torch_dtype=dtype),
            ControlNetModel.from_pretrained(self.config.controlnet_lineart, torch_dtype=dtype),
        ]
        self._txt2img = StableDiffusionControlNetPipeline.from_pretrained(
            self.config.sd_model, controlnet=controlnets, torch_dtype=dtype, safety_checker=None
        ).to(self.config.device)
        self._img2img = StableDiffusionControlNetImg2ImgPipeline(**self._txt2img.components)
        self._inpaint = StableDiffusionControlNetInpaintPipeline(**self._txt2img.components)
        self._torch = torch

    def generate(self, request: wire.WireRequest) -> np.ndarray:
        self.warmup()
        torch = self._torch
        gen = torch.Generator(self.config.device).manual_seed(request.seed)
        controls = self._control_images(request)
        common = dict(
            prompt=request.prompt,
            negative_prompt=request.negative_prompt or None,
            image=None,
            num_inference_steps=request.total_steps,
            guidance_scale=self.config.guidance_scale,
            controlnet_conditioning_scale=[
                float(request.control_weight_depth),
                float(request.control_weight_lineart),
            ],
            generator=gen,
            output_type="np",
        )
        try:
            if request.mode == "full":
                common["image"] = controls
                common["callback_on_step_end"] = self._background_blend(request, gen)
                out = self._txt2img(**common).images[0]
            elif request.mode == "refine":
                if request.denoise_steps == 0:
                    return _as_rgb_float(request.init_image)
                common["image"] = self._pil(request.init_image)
                common["control_image"] = controls
                common["strength"] = request.denoise_steps / request.total_steps
                out = self._img2img(**common).images[0]
            else:
                common["image"] = self._pil(request.init_image)
                common["mask_image"] = self._pil(request.inpaint_region)
                common["control_image"] = controls
                out = self._inpaint(**common).images[0]
        except Exception as exc:  # model/driver failures surface as 5xx
            raise EngineError(f"generation failed: {exc}") from exc
        return np.asarray(out, dtype=np.float64)

    def _control_images(self, request: wire.WireRequest) -> list:
        s = request.image_size
        depth = request.depth if request.depth is not None else np.zeros((s, s), np.uint8)
        lineart = request.lineart if request.lineart is not None else np.zeros((s, s), np.uint8)
        return [self._pil(depth), self._pil(lineart)]

    @staticmethod
    def _pil(arr: np.ndarray) -> Image.Image:
        img = arr if arr.ndim == 3 else np.repeat(arr[..., None], 3, axis=2)
        return Image.fromarray(img)

    def _background_blend(self, request: wire.WireRequest, gen):
        """Step-end callback replacing background latents with a noised
        white-image latent at the first timestep."""
        torch = self._torch
        if request.mask is not None:
            fg = request.mask > 127
        elif request.aux_world_pos is not None:
            fg = np.isfinite(request.aux_world_pos).all(axis=2)
        else:
            return None
        pipe = self._txt2img
        s = request.image_size

        def callback(pipe_, step, timestep, kwargs):
            if step != 0:
                return kwargs
            latents = kwargs["latents"]
            white = torch.ones((1, 3, s, s), dtype=pipe.vae.dtype, device=latents.device)
            white = pipe.vae.encode(white * 2.0 - 1.0).latent_dist.mode() * pipe.vae.config.scaling_factor
            noise = torch.randn(white.shape, generator=gen, device=latents.device, dtype=white.dtype)
            t = torch.tensor([self.BACKGROUND_TIMESTEP], device=latents.device)
            z_white = pipe_.scheduler.add_noise(white, noise, t)
            m = torch.from_numpy(fg.astype(np.float32))[None, None].to(latents.device)
            m = torch.nn.functional.interpolate(m, size=latents.shape[-2:], mode="nearest")
            kwargs["latents"] = (1.0 - m) * z_white.to(latents.dtype) + m * latents
            return kwargs

        return callback
