"""Text-prompted texturing and material assignment for segmented meshes."""

from .atlas import TextureAtlas, bake_texel_geometry
from .genproto import GenerationRequest, call_backend, mock_generate
from .geometry import Mesh, load_mesh, normalize_to_unit_sphere, write_mesh
from .inpaint import patchmatch_inpaint
from .matindex import MaterialIndex, ingest_database, load_index, search
from .pipeline import PipelineConfig, run_assign, run_full, run_texture
from .views import Camera, fibonacci_sphere

__version__ = "0.1.0"

__all__ = [
    "Camera",
    "GenerationRequest",
    "MaterialIndex",
    "Mesh",
    "PipelineConfig",
    "TextureAtlas",
    "bake_texel_geometry",
    "call_backend",
    "fibonacci_sphere",
    "ingest_database",
    "load_index",
    "load_mesh",
    "mock_generate",
    "normalize_to_unit_sphere",
    "patchmatch_inpaint",
    "run_assign",
    "run_full",
    "run_texture",
    "search",
    "write_mesh",
]
