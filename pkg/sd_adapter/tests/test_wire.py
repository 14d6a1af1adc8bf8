import numpy as np
import pytest

from sd_adapter import wire


def _rgb(size=32, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.random((size, size, 3)) * 255).astype(np.uint8)


def _payload(size=32, **over):
    base = {
        "mode": "full",
        "prompt": "hammered copper",
        "negative_prompt": "",
        "image_size": size,
        "denoise_steps": 50,
        "total_steps": 50,
        "control_weight_depth": 0.5,
        "control_weight_lineart": 0.5,
        "seed": 4,
        "depth": None,
        "lineart": None,
        "mask": None,
        "init_image": None,
        "inpaint_region": None,
        "aux_world_pos": None,
    }
    base.update(over)
    return base


def test_png_b64_round_trip_is_exact_for_u8():
    img = _rgb()
    assert np.array_equal(wire.image_from_b64(wire.image_to_b64(img)), img)
    gray = img[..., 0]
    assert np.array_equal(wire.image_from_b64(wire.image_to_b64(gray)), gray)


def test_float_images_quantize_by_rounding():
    img = np.full((4, 4, 3), 0.5)
    out = wire.image_from_b64(wire.image_to_b64(img))
    assert out.dtype == np.uint8
    assert np.array_equal(out, np.full((4, 4, 3), 128, np.uint8))


def test_aux_round_trip_preserves_values_and_nans():
    aux = np.arange(27, dtype=np.float32).reshape(3, 3, 3)
    aux[0, 1] = np.nan
    back = wire.aux_from_b64(wire.aux_to_b64(aux), 3)
    assert back.dtype == np.float32
    assert np.isnan(back[0, 1]).all()
    finite = np.isfinite(aux)
    assert np.array_equal(back[finite], aux[finite])


def test_parse_request_decodes_all_fields():
    size = 16
    depth = _rgb(size)[..., 0]
    init = _rgb(size, seed=1)
    aux = np.zeros((size, size, 3), np.float32)
    aux[:4] = np.nan
    payload = _payload(
        size,
        mode="refine",
        denoise_steps=20,
        depth=wire.image_to_b64(depth),
        init_image=wire.image_to_b64(init),
        aux_world_pos=wire.aux_to_b64(aux),
    )
    req = wire.parse_request(payload)
    assert (req.mode, req.prompt, req.seed) == ("refine", "hammered copper", 4)
    assert (req.denoise_steps, req.total_steps) == (20, 50)
    assert np.array_equal(req.depth, depth)
    assert np.array_equal(req.init_image, init)
    assert req.aux_world_pos.shape == (size, size, 3)
    assert np.isnan(req.aux_world_pos[:4]).all()
    assert req.lineart is None and req.mask is None and req.inpaint_region is None


def test_parse_request_fills_optional_defaults():
    req = wire.parse_request(
        {"mode": "full", "prompt": "p", "image_size": 8, "denoise_steps": 1, "total_steps": 2}
    )
    assert req.negative_prompt == ""
    assert req.control_weight_depth == wire.DEFAULT_CONTROL_WEIGHT
    assert req.control_weight_lineart == wire.DEFAULT_CONTROL_WEIGHT
    assert req.seed == 0


@pytest.mark.parametrize(
    "mutate",
    [
        lambda p: p.pop("prompt"),
        lambda p: p.pop("image_size"),
        lambda p: p.update(mode="sketch"),
        lambda p: p.update(mode="refine"),  # refine without init_image
        lambda p: p.update(mode="inpaint", init_image=wire.image_to_b64(_rgb())),
        lambda p: p.update(denoise_steps=60),
        lambda p: p.update(denoise_steps=-1),
        lambda p: p.update(control_weight_depth=1.5),
        lambda p: p.update(control_weight_lineart=-0.1),
        lambda p: p.update(image_size=-4),
        lambda p: p.update(image_size="wide"),
        lambda p: p.update(prompt=123),
        lambda p: p.update(depth="not base64 at all!!"),
        lambda p: p.update(depth=wire.image_to_b64(_rgb(16)[..., 0])),  # wrong size
        lambda p: p.update(aux_world_pos="AAAA"),  # wrong element count
    ],
)
def test_parse_request_rejects_schema_violations(mutate):
    payload = _payload()
    mutate(payload)
    with pytest.raises(wire.WireError):
        wire.parse_request(payload)


def test_parse_request_rejects_non_object_payload():
    with pytest.raises(wire.WireError):
        wire.parse_request(["not", "a", "dict"])


def test_response_round_trip_and_gray_expansion():
    img = _rgb(8)
    out, seed = wire.decode_response(wire.encode_response(img, 9))
    assert seed == 9
    assert np.array_equal(out, img)
    gray, _ = wire.decode_response(wire.encode_response(img[..., 0], 0))
    assert gray.shape == (8, 8, 3)
    assert np.array_equal(gray[..., 0], gray[..., 1])


def test_decode_response_rejects_garbage():
    with pytest.raises(wire.WireError):
        wire.decode_response({"seed": 1})
    with pytest.raises(wire.WireError):
        wire.decode_response({"image": "zzz", "seed": 1})


def test_parse_embed():
    img = _rgb(12)
    assert np.array_equal(wire.parse_embed({"image": wire.image_to_b64(img)}), img)
    with pytest.raises(wire.WireError):
        wire.parse_embed({})
    with pytest.raises(wire.WireError):
        wire.parse_embed({"image": "@@@"})


def test_parse_categories():
    obj, parts, cats, want = wire.parse_categories(
        {"object": "chair", "parts": ["leg"], "categories": ["wood"], "want_size": False}
    )
    assert (obj, parts, cats, want) == ("chair", ["leg"], ["wood"], False)
    assert wire.parse_categories({"object": "c", "parts": [], "categories": []})[3] is True
    for bad in (
        {"parts": ["leg"], "categories": ["wood"]},
        {"object": "c", "parts": "leg", "categories": ["wood"]},
        {"object": "c", "parts": ["leg"], "categories": [1]},
        {"object": 3, "parts": [], "categories": []},
    ):
        with pytest.raises(wire.WireError):
            wire.parse_categories(bad)
