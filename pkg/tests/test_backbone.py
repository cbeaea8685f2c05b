import numpy as np
import pytest

from ftrl import numerics as nx
from ftrl.backbone import Backbone, BackboneConfig, CheckpointError, pretrain, read_checkpoint
from ftrl.data import SeriesFrame, make_windows, split
from ftrl.numerics import ContractError
from ftrl.numerics.gradcheck import check_gradients

SMALL = BackboneConfig(context_length=6, num_features=3, horizon=2, model_dim=8, num_heads=2, num_layers=2, ff_dim=16)


def states(rng, n, cfg=SMALL):
    return rng.normal(size=(n, cfg.context_length, cfg.num_features))


def linear_task(L=400, T=6, n=3, seed=0):
    """Target at t+1 is 0.8 * feature 1 at t, so it is a linear function of
    the last observed row."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(L, n))
    y = np.zeros(L)
    y[1:] = 0.8 * x[:-1, 1]
    x[:, 0] = y
    ts = np.datetime64("2020-01-01", "D") + np.arange(L)
    frame = SeriesFrame(ts, {"target": x[:, 0], **{f"x{i}": x[:, i] for i in range(1, n)}})
    return split(make_windows(frame, T, 1))


def test_config_validation():
    with pytest.raises(ContractError, match="divisible"):
        BackboneConfig(model_dim=10, num_heads=4)
    with pytest.raises(ContractError):
        BackboneConfig(horizon=0)


def test_forward_shapes_and_determinism():
    m = Backbone(SMALL, seed=3)
    s = states(np.random.default_rng(0), 1)[0]
    a, b = m.forward_latent(s).data, m.forward_latent(s).data
    assert a.shape == (8,)
    np.testing.assert_array_equal(a, b)
    assert m.forward_predict(s).shape == (2,)
    assert Backbone(SMALL, seed=3).forward_latent(s).data.tobytes() == a.tobytes()


def test_predict_is_head_of_latent():
    m = Backbone(SMALL, seed=1)
    s = states(np.random.default_rng(1), 5)
    np.testing.assert_array_equal(m.forward_predict(s).data, m.projection_head(m.forward_latent(s)).data)


def test_single_step_horizon():
    cfg = BackboneConfig(context_length=4, num_features=2, horizon=1, model_dim=8, num_heads=2, num_layers=1, ff_dim=8)
    out = Backbone(cfg).forward_predict(np.zeros((4, 2)))
    assert out.shape == (1,)


def test_shape_mismatch_names_expected():
    m = Backbone(SMALL)
    with pytest.raises(ContractError, match=r"\(6, 3\)"):
        m.forward_latent(np.zeros((5, 3)))


def test_zero_input_projection_gives_input_independent_latent():
    m = Backbone(SMALL, seed=2)
    m.input_proj.weight.data[:] = 0.0
    m.input_proj.bias.data[:] = 0.0
    rng = np.random.default_rng(0)
    a = m.forward_latent(states(rng, 1)[0]).data
    b = m.forward_latent(np.zeros((6, 3))).data
    np.testing.assert_array_equal(a, b)


def test_local_lipschitz_probe():
    m = Backbone(SMALL, seed=4)
    rng = np.random.default_rng(5)
    s = states(rng, 1)[0]
    base = m.forward_latent(s).data
    # empirical bound from unit-direction finite differences at a coarser step
    L = 0.0
    for i in range(6):
        for j in range(3):
            d = s.copy()
            d[i, j] += 1e-3
            L = max(L, np.abs(m.forward_latent(d).data - base).max() / 1e-3)
    for i in range(6):
        for j in range(3):
            d = s.copy()
            d[i, j] += 1e-6
            assert np.abs(m.forward_latent(d).data - base).max() <= 2 * L * 1e-6


def test_batch_rows_match_single_windows():
    m = Backbone(SMALL, seed=6)
    s = states(np.random.default_rng(6), 7)
    batch = m.predict(s)
    for i in range(7):
        assert batch[i].tobytes() == m.forward_predict(s[i]).data.tobytes()


def test_backbone_loss_gradient():
    cfg = BackboneConfig(context_length=4, num_features=2, horizon=2, model_dim=4, num_heads=2, num_layers=2, ff_dim=6)
    m = Backbone(cfg, seed=0)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(3, 4, 2)), rng.normal(size=(3, 2))

    def loss():
        return nx.mean(nx.square(m.forward_predict(x) - y))

    assert check_gradients(loss, m.parameters(), max_probes=6, rng=rng) <= 1e-4


# ------------------------------------------------------------------ freezing

@pytest.mark.parametrize("f,count", [(0.0, 0), (0.25, 1), (0.5, 2), (0.75, 3), (1.0, 4)])
def test_frozen_fraction_counts(f, count):
    m = Backbone(BackboneConfig(context_length=4, num_features=2, horizon=1, model_dim=8, num_heads=2, ff_dim=8))
    assert m.set_frozen_fraction(f) == count
    for i, layer in enumerate(m.layers):
        assert all(p.requires_grad == (i >= count) for p in layer.parameters())
    assert all(p.requires_grad for p in m.head.parameters())
    assert m.pos.requires_grad == (f == 0.0)


def test_frozen_fraction_out_of_range():
    with pytest.raises(ContractError):
        Backbone(SMALL).set_frozen_fraction(1.5)


def test_frozen_layers_unchanged_by_updates():
    m = Backbone(BackboneConfig(context_length=4, num_features=2, horizon=1, model_dim=8, num_heads=2, ff_dim=8))
    m.set_frozen_fraction(0.5)
    before = {k: v.copy() for k, v in ((n, p.data) for n, p in m.named_parameters())}
    rng = np.random.default_rng(0)
    opt = nx.Adam(1e-2)
    for _ in range(3):
        loss = nx.mean(nx.square(m.forward_predict(rng.normal(size=(5, 4, 2))) - 1.0))
        params = m.trainable_parameters()
        grads = nx.grad(loss, params)
        assert any(np.abs(g).max() > 0 for g in grads[:-2])
        opt.step(params, grads)
    for name, p in m.named_parameters():
        frozen = name.startswith(("input_proj", "pos", "layer0", "layer1"))
        assert np.array_equal(p.data, before[name]) == frozen, name


# ------------------------------------------------------------------ checkpoints

def test_checkpoint_round_trip(tmp_path):
    m = Backbone(SMALL, seed=9)
    path = tmp_path / "m.ftrl"
    m.save(path, {"note": "unit"})
    r = Backbone.load(path)
    s = states(np.random.default_rng(9), 100)
    assert r.predict(s).tobytes() == m.predict(s).tobytes()
    assert r.provenance == {"note": "unit"}
    meta, arrays = read_checkpoint(path)
    assert meta["config"] == SMALL.to_dict()
    assert path.read_bytes()[:5] == b"FTRL1"


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "m.ftrl"
    Backbone(SMALL).save(path)
    raw = bytearray(path.read_bytes())
    raw[0] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="bad magic"):
        Backbone.load(path)


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "m.ftrl"
    Backbone(SMALL).save(path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        Backbone.load(path)


def test_checkpoint_config_mismatch(tmp_path):
    path = tmp_path / "m.ftrl"
    Backbone(SMALL).save(path)
    other = BackboneConfig(**{**SMALL.to_dict(), "model_dim": 12, "num_heads": 2})
    with pytest.raises(CheckpointError, match="model_dim"):
        Backbone.load(path, other)
    with pytest.raises(CheckpointError, match="mismatch"):
        Backbone(other).load_from(path)


# ------------------------------------------------------------------ pre-training

def test_pretrain_constant_target():
    rng = np.random.default_rng(0)
    L, c = 200, 1.7
    x = rng.normal(size=(L, 3))
    x[:, 0] = c
    ts = np.datetime64("2020-01-01", "D") + np.arange(L)
    ds = split(make_windows(SeriesFrame(ts, {"target": x[:, 0], "a": x[:, 1], "b": x[:, 2]}), 6, 2))
    m = Backbone(SMALL, seed=0)
    pretrain(m, ds, epochs=40, lr=3e-3, batch_size=16, seed=0)
    pred = m.predict(ds.subset("test").states)
    assert abs(pred.mean() - c) <= abs(c) * 0.05


def test_pretrain_linear_task_converges():
    ds = linear_task()
    m = Backbone(BackboneConfig(context_length=6, num_features=3, horizon=1, model_dim=8, num_heads=2,
                                num_layers=2, ff_dim=16), seed=0)
    h = pretrain(m, ds, epochs=200, lr=3e-3, batch_size=32, seed=0)
    assert min(h.val_mse) < 1e-3
    assert h.status == "ok"


def test_pretrain_zero_lr_keeps_parameters():
    ds = linear_task(L=80)
    m = Backbone(BackboneConfig(context_length=6, num_features=3, horizon=1, model_dim=8, num_heads=2,
                                num_layers=1, ff_dim=8))
    before = m.state_arrays()
    h = pretrain(m, ds, epochs=3, lr=0.0)
    for a, b in zip(before, m.state_arrays()):
        np.testing.assert_array_equal(a, b)
    assert len(set(h.train_mse)) == 1 and len(set(h.val_mse)) == 1


def test_pretrain_is_deterministic():
    ds = linear_task(L=120)
    cfg = BackboneConfig(context_length=6, num_features=3, horizon=1, model_dim=8, num_heads=2, num_layers=1, ff_dim=8)
    runs = []
    for _ in range(2):
        m = Backbone(cfg, seed=4)
        runs.append(pretrain(m, ds, epochs=3, lr=1e-3, seed=4))
    assert runs[0].train_mse == runs[1].train_mse
    assert runs[0].val_mse == runs[1].val_mse


def test_encoder_layers_beat_projection_only():
    ds = linear_task(L=300)
    results = {}
    for layers in (0, 2):
        cfg = BackboneConfig(context_length=6, num_features=3, horizon=1, model_dim=8, num_heads=2,
                             num_layers=layers, ff_dim=16)
        m = Backbone(cfg, seed=0)
        results[layers] = pretrain(m, ds, epochs=60, lr=3e-3, batch_size=32, seed=0).val_mse[-1]
    assert results[2] < results[0]
