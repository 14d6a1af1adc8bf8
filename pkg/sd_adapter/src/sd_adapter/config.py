"""Service configuration."""

from __future__ import annotations

from dataclasses import dataclass

ENGINES = ("toy", "diffusion")


@dataclass
class AdapterConfig:
    """Model identifiers, device placement, and endpoint settings.

    The defaults name the publicly hosted checkpoints; swap in local paths
    for air-gapped deployments. `engine="toy"` serves the deterministic CPU
    stand-ins so the wire protocol can be exercised without any weights.
    """

    sd_model: str = "runwayml/stable-diffusion-v1-5"
    controlnet_depth: str = "lllyasviel/control_v11f1p_sd15_depth"
    controlnet_lineart: str = "lllyasviel/control_v11p_sd15_lineart"
    clip_model: str = "openai/clip-vit-large-patch14"
    llm_endpoint: str | None = None
    device: str = "cuda"
    guidance_scale: float = 7.5  # free parameter; default is the SD staple
    host: str = "127.0.0.1"
    port: int = 8593
    engine: str = "diffusion"

    def validate(self) -> None:
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.guidance_scale <= 0:
            raise ValueError("guidance_scale must be positive")
        if not 0 < self.port < 65536:
            raise ValueError(f"port out of range: {self.port}")
