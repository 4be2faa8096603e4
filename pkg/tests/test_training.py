import numpy as np
import pytest
import torch

from rotadapt.errors import ConfigError, DataError, NumericalError
from rotadapt.models import BackboneSpec, build_bundle
from rotadapt.training import (METRICS_COLUMNS, METRICS_VERSION, RunMetrics,
                               TrainConfig, _Cycler, checkpoint_load,
                               checkpoint_save, evaluate, evaluate_pretext,
                               feature_norms, train)


def _params(bundle):
    return {k: v.detach().clone() for k, v in bundle.state_dict().items()}


def _same_params(a, b):
    return a.keys() == b.keys() and all(torch.equal(a[k], b[k]) for k in a)


# ---------------------------------------------------------------- config


def test_config_toml_roundtrip(tmp_path):
    cfg = TrainConfig(method="mmd", epochs=3, lr=1e-3, lambda_adapt=0.5,
                      backbone=BackboneSpec(feature_channels=32))
    p = tmp_path / "run.toml"
    p.write_text(cfg.to_toml())
    back = TrainConfig.from_toml(str(p))
    assert back == cfg


def test_config_validation_errors():
    with pytest.raises(ConfigError, match="unknown method"):
        TrainConfig(method="dann")
    with pytest.raises(ConfigError, match="epochs"):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError, match="batch_size"):
        TrainConfig(batch_size=1)
    with pytest.raises(ConfigError, match="lr"):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError, match="momentum"):
        TrainConfig(momentum=1.0)
    with pytest.raises(ConfigError, match="dropout"):
        TrainConfig(dropout=1.0)
    with pytest.raises(ConfigError, match="lambda_p"):
        TrainConfig(lambda_p=-0.1)
    with pytest.raises(ConfigError, match="delta_r"):
        TrainConfig(delta_r=0.0)
    with pytest.raises(ConfigError, match="pretext_domains"):
        TrainConfig(pretext_domains="source-only")
    with pytest.raises(ConfigError, match="pretext_head"):
        TrainConfig(pretext_head="mlp")


def test_config_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys"):
        TrainConfig.from_dict({"method": "source-only", "learning_rate": 0.1})


def test_config_from_toml_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        TrainConfig.from_toml(str(tmp_path / "missing.toml"))
    bad = tmp_path / "bad.toml"
    bad.write_text("epochs = : 3\n")
    with pytest.raises(ConfigError, match="not valid TOML"):
        TrainConfig.from_toml(str(bad))


# ---------------------------------------------------------------- cycler


def test_cycler_covers_all_before_repeat():
    rng = np.random.default_rng(3)
    items = list(range(10))
    cyc = _Cycler(items, rng)
    first = cyc.take(10)
    assert sorted(first) == items
    second = cyc.take(10)
    assert sorted(second) == items
    assert first != second  # reshuffled pass, overwhelmingly likely to differ


def test_cycler_take_spans_passes():
    rng = np.random.default_rng(4)
    cyc = _Cycler(list(range(4)), rng)
    chunk = cyc.take(6)
    assert len(chunk) == 6
    assert sorted(chunk[:4]) == [0, 1, 2, 3]


# ---------------------------------------------------------------- metrics


def test_metrics_csv_format(trained_small):
    _, metrics, cfg = trained_small
    text = metrics.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == f"# {METRICS_VERSION}"
    assert lines[1].startswith("# config: {")
    assert lines[2] == ",".join(METRICS_COLUMNS)
    assert len(lines) == 3 + cfg.epochs
    for line in lines[3:]:
        assert len(line.split(",")) == len(METRICS_COLUMNS)
    assert "wall" not in text
    assert metrics.wall_clock_s > 0


def test_metrics_blank_cells_before_first_eval(toy_small_split):
    src_train, tgt_train, src_test, tgt_test = toy_small_split
    cfg = TrainConfig(method="source-only", epochs=2, batch_size=16,
                      eval_every=2, seed=1)
    _, metrics = train(cfg, src_train, source_eval=src_test, target_eval=tgt_test)
    first, last = metrics.rows[0], metrics.rows[-1]
    assert first["acc_source"] is None
    assert last["acc_source"] is not None
    line = metrics.to_csv().strip().split("\n")[3]
    assert ",," in line


# ---------------------------------------------------------------- evaluate


def test_evaluate_matches_manual_argmax(trained_small, toy_small_split):
    bundle, _, _ = trained_small
    _, _, src_test, _ = toy_small_split
    res = evaluate(bundle, src_test, batch_size=4)
    assert res.count == len(src_test)
    bundle.eval()
    hits = 0
    with torch.no_grad():
        for s in src_test:
            color = torch.from_numpy(s.color.transpose(2, 0, 1)[None])
            depth = torch.from_numpy(s.depth.transpose(2, 0, 1)[None])
            pred = bundle.classify(color, depth).argmax(dim=1).item()
            hits += int(pred == s.label)
    assert res.accuracy == pytest.approx(hits / len(src_test))
    assert len(res.per_class) == 4


def test_evaluate_rejects_unlabeled(toy_small_split):
    import dataclasses
    bundle = build_bundle(4)
    _, _, src_test, _ = toy_small_split
    stripped = [dataclasses.replace(s, label=None) for s in src_test]
    with pytest.raises(DataError, match="label"):
        evaluate(bundle, stripped)
    with pytest.raises(DataError, match="empty"):
        evaluate(bundle, [])


def test_evaluate_restores_train_mode(trained_small, toy_small_split):
    bundle, _, _ = trained_small
    _, _, src_test, _ = toy_small_split
    bundle.train()
    evaluate(bundle, src_test)
    assert bundle.training
    bundle.eval()
    evaluate(bundle, src_test)
    assert not bundle.training


def test_evaluate_pretext_chance_for_untrained(toy_small_split):
    torch.manual_seed(0)
    bundle = build_bundle(4)
    _, _, _, tgt_test = toy_small_split
    rng = np.random.default_rng(9)
    acc = evaluate_pretext(bundle, tgt_test, rng, episodes=8)
    assert 0.05 < acc < 0.55  # tiny sample, loose chance band


def test_evaluate_pretext_deterministic_given_rng(trained_small, toy_small_split):
    bundle, _, _ = trained_small
    _, _, _, tgt_test = toy_small_split
    a = evaluate_pretext(bundle, tgt_test, np.random.default_rng(7), episodes=2)
    b = evaluate_pretext(bundle, tgt_test, np.random.default_rng(7), episodes=2)
    assert a == b


def test_feature_norms_positive(trained_small, toy_small_split):
    bundle, _, _ = trained_small
    _, _, src_test, _ = toy_small_split
    assert feature_norms(bundle, src_test) > 0


# ---------------------------------------------------------------- training


def test_train_all_methods_run(toy_small_split):
    src_train, tgt_train, src_test, tgt_test = toy_small_split
    for method in ("source-only", "relative-rotation", "absolute-rotation",
                   "grl", "mmd", "afn"):
        cfg = TrainConfig(method=method, epochs=1, batch_size=16, seed=2)
        bundle, metrics = train(cfg, src_train, tgt_train,
                                source_eval=src_test, target_eval=tgt_test)
        row = metrics.rows[-1]
        assert row["loss_main"] > 0
        assert np.isfinite(row["loss_total"])
        if method in ("relative-rotation", "absolute-rotation"):
            assert row["loss_pretext"] > 0
        if method in ("grl", "mmd", "afn"):
            assert row["loss_adapt"] != 0 or method == "mmd"


def test_train_source_only_needs_no_target(toy_small_split):
    src_train, _, src_test, _ = toy_small_split
    cfg = TrainConfig(method="source-only", epochs=1, batch_size=16, seed=0)
    bundle, metrics = train(cfg, src_train, source_eval=src_test)
    assert metrics.rows[-1]["acc_target"] is None


def test_train_adaptive_methods_require_target(toy_small_split):
    src_train, _, _, _ = toy_small_split
    cfg = TrainConfig(method="relative-rotation", epochs=1, batch_size=16)
    with pytest.raises(ConfigError, match="needs a target"):
        train(cfg, src_train)
    with pytest.raises(DataError, match="empty target"):
        train(cfg, src_train, [])
    with pytest.raises(DataError, match="empty source"):
        train(cfg, [], src_train)


def test_train_rejects_mismatched_image_sizes(toy_small_split):
    from rotadapt.toyshift import ToyShiftSpec, generate_toy_shift
    src_train, _, _, _ = toy_small_split
    small_spec = ToyShiftSpec(num_classes=4, samples_per_domain=8, image_size=32, seed=1)
    _, tgt32 = generate_toy_shift(small_spec)
    cfg = TrainConfig(method="relative-rotation", epochs=1, batch_size=4)
    with pytest.raises(DataError, match="px"):
        train(cfg, src_train, tgt32)


def test_fixed_seed_runs_identical(toy_small_split):
    src_train, tgt_train, src_test, tgt_test = toy_small_split
    cfg = TrainConfig(method="relative-rotation", epochs=2, batch_size=16, seed=4)
    b1, m1 = train(cfg, src_train, tgt_train, source_eval=src_test, target_eval=tgt_test)
    b2, m2 = train(cfg, src_train, tgt_train, source_eval=src_test, target_eval=tgt_test)
    assert _same_params(_params(b1), _params(b2))
    assert m1.to_csv() == m2.to_csv()


def test_different_seed_differs(toy_small_split):
    src_train, tgt_train, _, _ = toy_small_split
    base = dict(method="source-only", epochs=1, batch_size=16)
    b1, _ = train(TrainConfig(seed=0, **base), src_train)
    b2, _ = train(TrainConfig(seed=1, **base), src_train)
    assert not _same_params(_params(b1), _params(b2))


def test_target_labels_never_influence_weights(toy_small_split):
    import dataclasses
    src_train, tgt_train, src_test, tgt_test = toy_small_split
    stripped = [dataclasses.replace(s, label=None) for s in tgt_train]
    cfg = TrainConfig(method="relative-rotation", epochs=2, batch_size=16, seed=6)
    b1, m1 = train(cfg, src_train, tgt_train, source_eval=src_test, target_eval=tgt_test)
    b2, m2 = train(cfg, src_train, stripped, source_eval=src_test, target_eval=tgt_test)
    assert _same_params(_params(b1), _params(b2))
    assert m1.rows[-1]["acc_target"] is not None


def test_zero_weight_rotation_retraces_source_only(toy_small_split):
    src_train, tgt_train, _, _ = toy_small_split
    so = TrainConfig(method="source-only", epochs=2, batch_size=16, seed=8)
    rr0 = TrainConfig(method="relative-rotation", lambda_p=0.0, lambda_ent=0.0,
                      epochs=2, batch_size=16, seed=8)
    b1, _ = train(so, src_train)
    b2, _ = train(rr0, src_train, tgt_train)
    assert _same_params(_params(b1), _params(b2))


def test_nan_in_input_aborts_with_ids(toy_small_split):
    import dataclasses
    src_train, _, _, _ = toy_small_split
    poisoned = list(src_train)
    bad = src_train[3]
    color = bad.color.copy()
    color[0, 0, 0] = np.nan
    poisoned[3] = dataclasses.replace(bad, color=color)
    cfg = TrainConfig(method="source-only", epochs=1, batch_size=16, seed=0)
    with pytest.raises(NumericalError, match=bad.id):
        train(cfg, poisoned)


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip(trained_small, tmp_path):
    bundle, _, cfg = trained_small
    path = tmp_path / "ckpt.pt"
    checkpoint_save(str(path), bundle, cfg, epoch=2)
    loaded, loaded_cfg, epoch = checkpoint_load(str(path))
    assert epoch == 2
    assert loaded_cfg == cfg
    assert _same_params(_params(loaded), _params(bundle))


def test_checkpoint_missing_and_corrupt(tmp_path):
    with pytest.raises(DataError, match="not found"):
        checkpoint_load(str(tmp_path / "none.pt"))
    junk = tmp_path / "junk.pt"
    junk.write_bytes(b"not a checkpoint at all")
    with pytest.raises(DataError, match="corrupt or unreadable"):
        checkpoint_load(str(junk))
    wrong = tmp_path / "wrong.pt"
    torch.save({"format": "other-format-v9"}, str(wrong))
    with pytest.raises(DataError, match="not a"):
        checkpoint_load(str(wrong))


def test_checkpoint_structural_mismatch(trained_small, tmp_path):
    bundle, _, cfg = trained_small
    path = tmp_path / "ckpt.pt"
    checkpoint_save(str(path), bundle, cfg, epoch=2)
    import dataclasses
    other = dataclasses.replace(cfg, pretext_head="fc")
    with pytest.raises(ConfigError, match="pretext_head"):
        checkpoint_load(str(path), expected_config=other)
    bigger = dataclasses.replace(cfg, backbone=BackboneSpec(feature_channels=32))
    with pytest.raises(ConfigError, match="backbone"):
        checkpoint_load(str(path), expected_config=bigger)


def test_resume_continues_epoch_numbering(toy_small_split, tmp_path):
    src_train, tgt_train, src_test, tgt_test = toy_small_split
    cfg2 = TrainConfig(method="relative-rotation", epochs=2, batch_size=16, seed=3)
    bundle, metrics = train(cfg2, src_train, tgt_train,
                            source_eval=src_test, target_eval=tgt_test)
    path = tmp_path / "resume.pt"
    checkpoint_save(str(path), bundle, cfg2, epoch=2)
    import dataclasses
    cfg4 = dataclasses.replace(cfg2, epochs=4)
    _, more = train(cfg4, src_train, tgt_train, source_eval=src_test,
                    target_eval=tgt_test, resume_from=str(path))
    assert [r["epoch"] for r in more.rows] == [3, 4]
    with pytest.raises(ConfigError, match="already at epoch"):
        train(cfg2, src_train, tgt_train, resume_from=str(path))


def test_bn_scales_excluded_from_decay_when_configured():
    from torch import nn

    from rotadapt.training import _optimizer
    torch.manual_seed(0)
    bundle = build_bundle(4)
    cfg = TrainConfig(method="source-only", decay_bn_scales=False)
    opt = _optimizer(cfg, bundle, None)
    decays = {g["weight_decay"] for g in opt.param_groups}
    assert decays == {0.0, cfg.weight_decay}
    n_free = sum(len(g["params"]) for g in opt.param_groups
                 if g["weight_decay"] == 0.0)
    n_bn = sum(sum(1 for _ in m.parameters(recurse=False))
               for m in bundle.modules()
               if isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d)))
    n_total = sum(len(g["params"]) for g in opt.param_groups)
    assert n_free == n_bn
    assert n_total == sum(1 for _ in bundle.parameters())
    default = _optimizer(TrainConfig(method="source-only"), bundle, None)
    assert all(g["weight_decay"] == 0.05 for g in default.param_groups)
