"""Reference HTTP service for the texturing pipeline's pluggable backends:
image generation, image embedding, and part categorization behind one wire
protocol."""

from .config import AdapterConfig
from .service import create_app, serve

__all__ = ["AdapterConfig", "create_app", "serve"]
