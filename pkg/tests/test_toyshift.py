import numpy as np
import pytest

from rotadapt.errors import ConfigError
from rotadapt.toyshift import (DEPTH_BASE, SHAPE_NAMES, DomainAppearance,
                               ToyShiftSpec, default_source_appearance,
                               default_target_appearance, generate_toy_shift,
                               render_arrays, render_sample, spec_from_toml)


def _spec(**kw):
    base = dict(num_classes=4, samples_per_domain=24, image_size=32, seed=7)
    base.update(kw)
    return ToyShiftSpec(**base)


def test_render_is_deterministic_and_order_independent():
    spec = _spec()
    a = render_arrays(spec, "source", 5)
    b = render_arrays(spec, "source", 5)
    for x, y in zip(a, b):
        assert np.array_equal(x, y) if isinstance(x, np.ndarray) else x == y
    source, _ = generate_toy_shift(spec)
    lone = render_sample(spec, "source", 5)
    assert np.array_equal(source[5].color, lone.color)
    assert np.array_equal(source[5].depth, lone.depth)


def test_domains_differ_but_share_geometry_stream():
    spec = _spec()
    src = render_arrays(spec, "source", 3)
    tgt = render_arrays(spec, "target", 3)
    assert not np.array_equal(src[0], tgt[0])
    assert src[4] == tgt[4]  # same label by construction


def test_labels_cycle_and_are_balanced():
    spec = _spec(samples_per_domain=40)
    source, target = generate_toy_shift(spec)
    for i, s in enumerate(source):
        assert s.label == i % 4
        assert s.meta["shape"] == SHAPE_NAMES[i % 4]
    counts = np.bincount([s.label for s in target], minlength=4)
    assert (counts == 10).all()


def test_sample_fields_and_ids():
    spec = _spec(samples_per_domain=6)
    source, target = generate_toy_shift(spec)
    ids = {s.id for s in source} | {s.id for s in target}
    assert len(ids) == 12
    for s in source:
        assert s.domain == "source"
        assert s.color.shape == (32, 32, 3) and s.color.dtype == np.float32
        assert s.depth.shape == (32, 32, 3)
        assert s.meta["mask"].shape == (32, 32)
    assert all(s.domain == "target" for s in target)


def test_mask_fraction_reasonable():
    spec = _spec(samples_per_domain=24)
    source, _ = generate_toy_shift(spec)
    for s in source:
        frac = s.meta["mask"].mean()
        assert 0.02 < frac < 0.6, f"mask fraction {frac} for {s.id}"


def test_pose_uniform_and_recorded():
    spec = _spec(samples_per_domain=400)
    source, _ = generate_toy_shift(spec)
    poses = np.array([s.meta["pose"] for s in source])
    assert set(poses) == {0, 1, 2, 3}
    freq = np.bincount(poses, minlength=4) / len(poses)
    assert (np.abs(freq - 0.25) < 0.07).all()


def test_pose_randomization_off_gives_canonical_pose():
    spec = _spec(pose_randomization=False, samples_per_domain=8)
    source, _ = generate_toy_shift(spec)
    assert all(s.meta["pose"] == 0 for s in source)


def test_depth_drops_inside_shape():
    app = DomainAppearance(palette=[(1.0, 0.0, 0.0)], background=(0.0, 0.0, 0.0),
                           texture_noise=0.0, blur_radius=0.0, depth_noise=0.0)
    spec = _spec(source=app, pose_randomization=False)
    _, raw_depth, mask, _, _ = render_arrays(spec, "source", 0)
    assert raw_depth[mask].mean() < DEPTH_BASE - 1.0
    assert raw_depth[~mask].mean() > raw_depth[mask].mean()


def test_palette_cycles_over_labels():
    app = DomainAppearance(palette=[(0.9, 0.1, 0.1), (0.1, 0.1, 0.9)],
                           background=(0.0, 0.0, 0.0),
                           texture_noise=0.0, blur_radius=0.0, depth_noise=0.0)
    spec = _spec(source=app, pose_randomization=False)
    for index, expected in ((0, (0.9, 0.1, 0.1)), (1, (0.1, 0.1, 0.9)),
                            (2, (0.9, 0.1, 0.1)), (3, (0.1, 0.1, 0.9))):
        color, _, mask, _, label = render_arrays(spec, "source", index)
        assert label == index
        inside = color[mask]
        assert np.allclose(inside, expected, atol=1e-6)


def test_shapes_differ_between_classes():
    spec = _spec(pose_randomization=False)
    masks = [render_arrays(spec, "source", i)[2] for i in range(4)]
    for i in range(4):
        for j in range(i + 1, 4):
            inter = (masks[i] & masks[j]).sum()
            union = (masks[i] | masks[j]).sum()
            assert inter / union < 0.9, f"classes {i},{j} nearly identical"


def test_class_count_bounds():
    with pytest.raises(ConfigError, match="at least 2"):
        generate_toy_shift(_spec(num_classes=1))
    with pytest.raises(ConfigError, match="at most"):
        generate_toy_shift(_spec(num_classes=7))


def test_default_appearances_are_distinct():
    src = default_source_appearance()
    tgt = default_target_appearance()
    assert src.palette != tgt.palette
    assert tgt.blur_radius > src.blur_radius
    assert tgt.depth_noise > src.depth_noise


def test_spec_from_toml_roundtrip(tmp_path):
    p = tmp_path / "gen.toml"
    p.write_text(
        "num_classes = 3\n"
        "samples_per_domain = 10\n"
        "image_size = 24\n"
        "seed = 9\n"
        "[source]\n"
        "palette = [[0.5, 0.5, 0.5]]\n"
        "texture_noise = 0.0\n"
        "[target]\n"
        "blur_radius = 0.4\n")
    spec = spec_from_toml(str(p))
    assert spec.num_classes == 3
    assert spec.samples_per_domain == 10
    assert spec.image_size == 24
    assert spec.seed == 9
    assert spec.source.palette == [(0.5, 0.5, 0.5)]
    assert spec.source.texture_noise == 0.0
    assert spec.source.depth_noise == default_source_appearance().depth_noise
    assert spec.target.blur_radius == 0.4
    assert spec.pose_randomization is True


def test_spec_from_toml_errors(tmp_path):
    missing = tmp_path / "nope.toml"
    with pytest.raises(ConfigError, match="not found"):
        spec_from_toml(str(missing))
    bad = tmp_path / "bad.toml"
    bad.write_text("num_classes = = 3\n")
    with pytest.raises(ConfigError, match="not valid TOML"):
        spec_from_toml(str(bad))
    unknown = tmp_path / "unknown.toml"
    unknown.write_text("classes = 4\n")
    with pytest.raises(ConfigError, match="unknown generator spec keys"):
        spec_from_toml(str(unknown))
    badkey = tmp_path / "badkey.toml"
    badkey.write_text("[source]\nshine = 1.0\n")
    with pytest.raises(ConfigError, match="unknown keys"):
        spec_from_toml(str(badkey))
    badcolor = tmp_path / "badcolor.toml"
    badcolor.write_text("[target]\nbackground = [0.1, 0.2]\n")
    with pytest.raises(ConfigError, match="triples"):
        spec_from_toml(str(badcolor))


def test_seed_changes_output():
    a = render_arrays(_spec(seed=1), "source", 0)[0]
    b = render_arrays(_spec(seed=2), "source", 0)[0]
    assert not np.array_equal(a, b)
