import json

import numpy as np
import pytest

from pgir.errors import DimensionError, MissingFileError, ParameterError, RangeError, SchemaError
from pgir.field import GridSpec, MoistureField, integrate
from pgir.synth import (
    ColormapSpec,
    NoiseSpec,
    SynthConfig,
    add_field_noise,
    draw_circles,
    generate_dataset,
    invert_colormap,
    load_dataset,
    make_label,
    render_colormap,
    stamp_circles,
)

G = GridSpec(64, 64)
CM = ColormapSpec()


def field_of(value, grid=G):
    return MoistureField.constant(grid, value)


def test_colormap_coefficients():
    np.testing.assert_array_equal(CM.slopes, [-255, -155, 0])
    np.testing.assert_array_equal(CM.intercepts, [255, 255, 0])


@pytest.mark.parametrize(
    "x, rgb",
    [(0.0, (255, 255, 0)), (1.0, (0, 100, 0)), (0.5, (128, 178, 0))],
)
def test_render_anchor_values(x, rgb):
    img = render_colormap(field_of(x, GridSpec(8, 8)))
    assert img.dtype == np.uint8
    assert tuple(img[3, 3]) == rgb


def test_render_rejects_out_of_range():
    with pytest.raises(RangeError):
        render_colormap(np.array([[1.2]]))


def test_roundtrip_single_value():
    x = invert_colormap(render_colormap(np.array([[0.37]])))
    assert abs(x[0, 0] - 0.37) <= 0.5 / 255


def test_all_yellow_inverts_to_zero():
    img = np.zeros((8, 8, 3), np.uint8)
    img[..., 0] = 255
    img[..., 1] = 255
    f = invert_colormap(img, grid=GridSpec(8, 8))
    assert np.all(f.values == 0)


def test_roundtrip_exhaustive():
    x = np.random.default_rng(0).uniform(0, 1, 1000)
    back = invert_colormap(render_colormap(x[None, :]))[0]
    assert np.abs(back - x).max() <= 0.5 / 255 + 1e-9


def test_colormap_linearity():
    x = np.linspace(0, 1, 256)
    rgb = (x[:, None] * CM.slopes + CM.intercepts)
    rg = rgb[:, 0] + rgb[:, 1]
    np.testing.assert_allclose(np.diff(rg, 2), 0, atol=1e-9)
    img = render_colormap(x[None, :])[0].astype(int)
    assert np.all(np.diff(img[:, 0]) <= 0)
    assert np.all(np.diff(rgb[:, 0]) < 0)


def test_circles_zero_count_unchanged():
    spec = NoiseSpec(circle_count=(0, 0))
    f = field_of(0.5)
    assert np.array_equal(stamp_circles(f, spec, np.random.default_rng(0)).values, f.values)


def test_single_circle_disc_membership():
    spec = NoiseSpec(circle_count=(1, 1), circle_radius=(2, 2))
    (ci, cj, r, fill), = draw_circles(spec, G.shape, np.random.default_rng(42))
    f = field_of(-1.0)  # sentinel outside every fill value
    out = stamp_circles(f, spec, np.random.default_rng(42)).values
    expected = np.zeros(G.shape, bool)
    for i in range(G.height):
        for j in range(G.width):
            if (i - ci) ** 2 + (j - cj) ** 2 <= 4:
                expected[i, j] = True
    assert r == 2
    assert np.array_equal(out != -1.0, expected)
    assert np.all(out[expected] == fill)


def test_circles_deterministic():
    spec = NoiseSpec()
    f = field_of(0.5)
    a = stamp_circles(f, spec, np.random.default_rng(3)).values
    b = stamp_circles(f, spec, np.random.default_rng(3)).values
    assert np.array_equal(a, b)


def test_field_noise():
    f = field_of(0.5)
    assert np.array_equal(add_field_noise(f, 0.0, np.random.default_rng(0)).values, f.values)
    noisy = add_field_noise(f, 0.02, np.random.default_rng(1)).values
    d = (noisy - f.values)[1:-1, 1:-1]
    assert 0.015 <= d.std() <= 0.025
    near_one = add_field_noise(field_of(0.999), 0.02, np.random.default_rng(2)).values
    assert near_one.max() <= 1.0
    with pytest.raises(ParameterError):
        add_field_noise(f, -0.1, np.random.default_rng(0))


def test_make_label():
    f = field_of(0.8)
    yc, yn = make_label(f, 0.0, np.random.default_rng(0))
    assert yc == pytest.approx(0.8) and yn == yc
    rng = np.random.default_rng(5)
    ys = np.array([make_label(f, 0.01, rng)[1] for _ in range(10_000)])
    assert 0.009 <= ys.std() <= 0.011


def test_generate_empty(tmp_path):
    m = generate_dataset(SynthConfig(), 1, tmp_path / "d", 0)
    assert m["n_samples"] == 0
    assert (tmp_path / "d" / "labels.csv").read_text() == "sample_id,y_clean,y_noisy\n"
    assert not (tmp_path / "d" / ".partial").exists()
    assert load_dataset(tmp_path / "d") == []


def test_generate_deterministic(tmp_path):
    cfg = SynthConfig(grid=GridSpec(32, 32))
    generate_dataset(cfg, 9, tmp_path / "a", 4)
    generate_dataset(cfg, 9, tmp_path / "b", 4)
    for name in ("labels.csv", "manifest.json", "images/sample_00000.png", "images/sample_00003.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_generation_order_independent():
    from pgir.synth import synthesize, synthesize_sample

    cfg = SynthConfig(grid=GridSpec(16, 16), noise=NoiseSpec(circle_radius=(1, 3)))
    batch = synthesize(cfg, 4, 5)
    alone = synthesize_sample(cfg, 4, 3)
    assert np.array_equal(batch[3].image, alone.image) and batch[3].y_noisy == alone.y_noisy


def test_label_spread(tmp_path):
    from pgir.synth import synthesize

    recs = synthesize(SynthConfig(), 123, 400)
    yc = np.array([r.y_clean for r in recs])
    assert yc.min() >= 0 and yc.max() <= 1
    assert yc.max() - yc.min() >= 0.1


def test_label_precedes_corruption(tmp_path):
    generate_dataset(SynthConfig(grid=GridSpec(24, 24), noise=NoiseSpec(circle_radius=(1, 4))), 2, tmp_path, 6, save_fields=True)
    for rec in load_dataset(tmp_path):
        assert rec.true_field is not None
        # stored fields are float32, labels carry 9 significant digits
        assert rec.y_clean == pytest.approx(integrate(rec.true_field), abs=1e-7)


def test_load_roundtrip_and_errors(tmp_path):
    cfg = SynthConfig(grid=GridSpec(16, 20), noise=NoiseSpec(circle_radius=(1, 3)))
    generate_dataset(cfg, 3, tmp_path, 5)
    recs = load_dataset(tmp_path)
    assert len(recs) == 5 and all(r.image.shape == (16, 20, 3) for r in recs)
    assert [r.sample_id for r in recs] == list(range(5))

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    manifest["height"] = 17
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DimensionError):
        load_dataset(tmp_path)

    manifest["height"] = 16
    manifest["schema_version"] = 7
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(SchemaError):
        load_dataset(tmp_path)

    manifest["schema_version"] = 1
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    (tmp_path / "images" / "sample_00002.png").unlink()
    with pytest.raises(MissingFileError, match="sample 2"):
        load_dataset(tmp_path)


def test_failed_generation_cleans_up(tmp_path, monkeypatch):
    import pgir.synth as synth

    calls = {"n": 0}
    real = synth.png_bytes

    def flaky(img):
        calls["n"] += 1
        if calls["n"] == 3:
            raise OSError("disk full")
        return real(img)

    monkeypatch.setattr(synth, "png_bytes", flaky)
    with pytest.raises(OSError):
        generate_dataset(SynthConfig(grid=GridSpec(16, 16), noise=NoiseSpec(circle_radius=(1, 3))), 0, tmp_path, 5)
    assert not (tmp_path / ".partial").exists()
    assert not (tmp_path / "manifest.json").exists()
    assert not list(tmp_path.rglob("*.png"))


def test_label_csv_format(tmp_path):
    generate_dataset(SynthConfig(grid=GridSpec(16, 16), noise=NoiseSpec(circle_radius=(1, 3))), 0, tmp_path, 3)
    raw = (tmp_path / "labels.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "sample_id,y_clean,y_noisy"
    for line in lines[1:]:
        _, a, b = line.split(",")
        assert len(a.replace(".", "").replace("-", "").lstrip("0")) <= 9
