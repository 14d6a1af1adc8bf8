"""Record the golden wire corpus from the pipeline's own client codec.

Run this in an environment with the meshtex package installed; the output
JSON is committed under tests/golden/ and replayed by the adapter test
suite, which never imports meshtex. Regenerate whenever the protocol
changes on the pipeline side.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from meshtex import genproto, matindex
from meshtex.imageops import png_b64
from meshtex.procedural import CATEGORIES_16


def _world_disc(size: int) -> np.ndarray:
    """Paraboloid patch with a NaN ring: finite pixels form a centered disc."""
    t = np.linspace(-1.0, 1.0, size)
    xx, yy = np.meshgrid(t, t)
    aux = np.stack([xx, yy, 0.2 * np.sin(2 * xx) * np.cos(2 * yy)], axis=2).astype(np.float32)
    aux[xx**2 + yy**2 > 0.81] = np.nan
    return aux


def _conditioning(size: int, rng) -> dict:
    t = np.linspace(0.0, 1.0, size)
    depth = (np.outer(t, np.ones(size)) * 255).astype(np.uint8)
    lineart = (rng.random((size, size)) > 0.92).astype(np.uint8) * 255
    return {"depth": depth, "lineart": lineart}


def _record(req: genproto.GenerationRequest) -> dict | None:
    try:
        image = genproto.mock_generate(req, req.seed)
    except ValueError:
        return None
    return genproto.response_to_wire(image, req.seed)


def build_generate_cases() -> list[dict]:
    rng = np.random.default_rng(11)
    cases = []

    size = 64
    aux = _world_disc(size)
    finite = np.isfinite(aux).all(axis=2)
    cond = _conditioning(size, rng)
    full = genproto.GenerationRequest(
        mode="full",
        prompt="weathered bronze statue",
        negative_prompt="blurry",
        image_size=size,
        mask=finite.astype(np.uint8) * 255,
        denoise_steps=50,
        total_steps=50,
        control_weight_depth=0.5,
        control_weight_lineart=0.5,
        seed=3,
        aux_world_pos=aux,
        **cond,
    )
    cases.append({"name": "full_grid", "request": genproto.request_to_wire(full), "response": _record(full)})

    ramp = np.linspace(0.0, 255.0, size)
    init = np.stack(
        [np.tile(ramp, (size, 1)), np.tile(ramp[:, None], (1, size)), np.full((size, size), 96.0)],
        axis=2,
    ).astype(np.uint8)
    refine = genproto.GenerationRequest(
        mode="refine",
        prompt="weathered bronze statue",
        image_size=size,
        init_image=init,
        denoise_steps=20,
        total_steps=50,
        control_weight_depth=0.4,
        control_weight_lineart=0.6,
        seed=7,
        aux_world_pos=aux,
        **cond,
    )
    cases.append({"name": "refine_partial", "request": genproto.request_to_wire(refine), "response": _record(refine)})

    identity = genproto.GenerationRequest(
        mode="refine",
        prompt="weathered bronze statue",
        image_size=size,
        init_image=init,
        denoise_steps=0,
        total_steps=50,
        seed=7,
        aux_world_pos=aux,
    )
    cases.append(
        {
            "name": "refine_identity",
            "expect_identity": True,
            "request": genproto.request_to_wire(identity),
            "response": _record(identity),
        }
    )

    size = 96
    aux = _world_disc(size)
    region = np.zeros((size, size), np.uint8)
    region[30:66, 24:60] = 255
    inpaint = genproto.GenerationRequest(
        mode="inpaint",
        prompt="mossy sandstone",
        image_size=size,
        init_image=(np.tile(np.linspace(40, 210, size), (size, 1))[..., None].repeat(3, axis=2)).astype(np.uint8),
        inpaint_region=region,
        denoise_steps=50,
        total_steps=50,
        seed=12,
        aux_world_pos=aux,
        **_conditioning(size, rng),
    )
    cases.append({"name": "inpaint_block", "request": genproto.request_to_wire(inpaint), "response": _record(inpaint)})

    # the real contract does not require world positions; the pipeline's mock
    # cannot answer this one, so only the request side is recorded
    size = 64
    no_aux = genproto.GenerationRequest(
        mode="full",
        prompt="brushed steel",
        image_size=size,
        mask=(np.isfinite(_world_disc(size)).all(axis=2).astype(np.uint8) * 255),
        seed=5,
    )
    cases.append({"name": "full_no_aux", "request": genproto.request_to_wire(no_aux), "response": None})
    return cases


def build_embed_case() -> dict:
    rng = np.random.default_rng(23)
    image = (rng.random((48, 48, 3)) * 255).astype(np.uint8)
    vec = matindex.mock_embed(image)
    return {"request": {"image": png_b64(image)}, "response": {"vector": [float(v) for v in vec]}}


def build_categories_case() -> dict:
    # reply shape as the pipeline client consumes it
    return {
        "request": {
            "object": "armchair",
            "parts": ["seat cushion", "wood frame"],
            "categories": list(CATEGORIES_16),
            "want_size": True,
        },
        "response": {
            "parts": {"seat cushion": "fabric", "wood frame": "wood"},
            "physical_size_m": 0.9,
        },
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    default_out = Path(__file__).resolve().parents[1] / "tests" / "golden" / "corpus.json"
    parser.add_argument("--out", type=Path, default=default_out)
    args = parser.parse_args()

    corpus = {
        "generate": build_generate_cases(),
        "embed": build_embed_case(),
        "categories": build_categories_case(),
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(corpus, indent=1) + "\n")
    n = len(corpus["generate"])
    print(f"recorded {n} generate cases plus embed/categories exemplars to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
