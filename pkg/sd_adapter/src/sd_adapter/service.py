"""HTTP service speaking the texturing pipeline's backend protocol.

Three POST routes, no extensions: /generate (full/refine/inpaint image
generation), /embed (unit-norm image embedding), /categories (material
category per part, proxied to an LLM when one is configured). Schema
violations answer 4xx, engine failures 5xx. A process-wide lock keeps one
generation in flight per device; concurrent requests queue on it.
"""

from __future__ import annotations

import argparse
import threading

import numpy as np
from fastapi import Body, FastAPI, HTTPException

from . import wire
from .config import AdapterConfig
from .engines import (
    ClipEmbedder,
    DiffusionEngine,
    EngineError,
    KeywordCategorizer,
    LlmProxy,
    ToyEmbedder,
    ToyEngine,
)


def create_app(generator=None, embedder=None, categorizer=None) -> FastAPI:
    """Assemble the service around the given engines (toy tier when None).

    Endpoints are sync functions on purpose: the ASGI server runs them on a
    worker pool, so the generation lock below serializes real work instead
    of blocking the event loop.
    """
    generator = generator if generator is not None else ToyEngine()
    embedder = embedder if embedder is not None else ToyEmbedder()
    categorizer = categorizer if categorizer is not None else KeywordCategorizer()
    app = FastAPI(title="sd-adapter")
    busy = threading.Lock()  # one request in flight per device

    @app.post("/generate")
    def generate(payload: dict = Body(...)):
        try:
            request = wire.parse_request(payload)
        except wire.WireError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        try:
            with busy:
                image = generator.generate(request)
        except EngineError as exc:
            raise HTTPException(status_code=500, detail=str(exc))
        return wire.encode_response(image, request.seed)

    @app.post("/embed")
    def embed(payload: dict = Body(...)):
        try:
            image = wire.parse_embed(payload)
        except wire.WireError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        try:
            vector = embedder.embed(image)
        except EngineError as exc:
            raise HTTPException(status_code=500, detail=str(exc))
        return {"vector": [float(v) for v in np.asarray(vector).reshape(-1)]}

    @app.post("/categories")
    def categories(payload: dict = Body(...)):
        try:
            obj, parts, cats, want_size = wire.parse_categories(payload)
        except wire.WireError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        try:
            return categorizer.categorize(obj, parts, cats, want_size)
        except EngineError as exc:
            raise HTTPException(status_code=500, detail=str(exc))

    return app


def build_engines(config: AdapterConfig) -> tuple:
    if config.engine == "diffusion":
        generator, embedder = DiffusionEngine(config), ClipEmbedder(config)
    else:
        generator, embedder = ToyEngine(), ToyEmbedder()
    categorizer = LlmProxy(config.llm_endpoint) if config.llm_endpoint else KeywordCategorizer()
    return generator, embedder, categorizer


def serve(config: AdapterConfig | None = None) -> None:
    """Load engines and run the service until interrupted."""
    import uvicorn

    config = config or AdapterConfig()
    config.validate()
    generator, embedder, categorizer = build_engines(config)
    # fail at startup, not on the first request
    for engine in (generator, embedder):
        warmup = getattr(engine, "warmup", None)
        if warmup:
            warmup()
    uvicorn.run(create_app(generator, embedder, categorizer), host=config.host, port=config.port)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sd-adapter",
        description="generation/embedding/categorization service for the texturing pipeline",
    )
    defaults = AdapterConfig()
    parser.add_argument("--host", default=defaults.host)
    parser.add_argument("--port", type=int, default=defaults.port)
    parser.add_argument("--engine", choices=("toy", "diffusion"), default=defaults.engine)
    parser.add_argument("--device", default=defaults.device)
    parser.add_argument("--guidance-scale", type=float, default=defaults.guidance_scale)
    parser.add_argument("--sd-model", default=defaults.sd_model)
    parser.add_argument("--clip-model", default=defaults.clip_model)
    parser.add_argument("--llm", default=None, help="LLM endpoint to proxy for /categories")
    args = parser.parse_args(argv)
    config = AdapterConfig(
        sd_model=args.sd_model,
        clip_model=args.clip_model,
        llm_endpoint=args.llm,
        device=args.device,
        guidance_scale=args.guidance_scale,
        host=args.host,
        port=args.port,
        engine=args.engine,
    )
    serve(config)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
