import math

import numpy as np
import pytest
from oracles import max_grad_error, random_cloud, tiny_problem

from echodenoise.csr import CsrConfig
from echodenoise.denoiser import (
    PAPER_SCALE,
    CKPT_MAGIC,
    NetworkConfig,
    ParameterStore,
    TrainConfig,
    apply_blind_spots,
    ceil_meters,
    forward_coordinate,
    forward_correlation,
    learning_rate,
    load_checkpoint,
    loss,
    loss_and_grad,
    network_shapes,
    parameter_count,
    prepare_scan,
    read_loss_log,
    sample_mask,
    save_checkpoint,
    train,
    write_loss_log,
)
from echodenoise.errors import ConfigError, DivergenceError, EmptySubset, FormatError, ShapeError
from echodenoise.neighbors import EncoderConfig, encode_features, gather_neighbors, self_slots
from echodenoise.noise_sim import SnowSpec, synthetic_scans


def one_point_cloud(r=9.2):
    from echodenoise.cloud import MultiEchoOrderedCloud

    xyz = np.array([[[[r, 0, 0]]]], np.float32)
    return MultiEchoOrderedCloud(xyz, np.full((1, 1, 1), 0.5), np.ones((1, 1, 1), bool), np.zeros((1, 1)), np.zeros((1, 1)))


# ------------------------------------------------------------------- loss


def test_loss_zero_for_exact_prediction():
    c = one_point_cloud()
    r = c.ranges()
    assert loss(r, np.zeros_like(r), c, c.valid, np.zeros_like(r), 5.0) == 0.0


def test_loss_arithmetic():
    c = one_point_cloud(9.2)
    r = c.ranges()
    assert ceil_meters(9.2) == 10.0 and ceil_meters(0.3) == 1.0
    assert loss(r + 1.0, np.zeros_like(r), c, c.valid, np.zeros_like(r), 5.0) == pytest.approx(0.5)


def test_loss_optimum_over_score():
    lam, err, r = 5.0, 2.5, 7.3
    a = lam * err / ceil_meters(r)
    xs = np.linspace(-5, 5, 200001)
    best = xs[np.argmin(a / np.exp(xs) + xs)]
    assert best == pytest.approx(math.log(a), abs=1e-4)


def test_loss_empty_subset():
    c = one_point_cloud()
    z = np.zeros(c.shape)
    with pytest.raises(EmptySubset):
        loss(z, z, c, np.zeros(c.shape, bool), z, 5.0)


def test_loss_decomposition():
    params, scan, mask, _ = tiny_problem(0)
    cfg = params.cfg
    # force the correlation head to output exactly 0
    params.tensors["cor.head.w"][:] = 0
    params.tensors["cor.head.b"][:] = 0
    value, _ = loss_and_grad(params, scan, mask, 5.0, None, need_grad=False)
    o_coo = forward_coordinate(scan.features, mask, params)
    sel = mask & scan.cloud.valid
    r = scan.ranges[sel]
    want = np.mean(5.0 * np.abs(o_coo[sel] - r) / ceil_meters(r))
    assert value == pytest.approx(want, rel=1e-12)
    assert cfg.num_echoes == 2


def test_loss_and_grad_matches_loss_function():
    params, scan, mask, csr = tiny_problem(1)
    value, _ = loss_and_grad(params, scan, mask, 5.0, csr, need_grad=False)
    from echodenoise.csr import csr_penalty, characteristics_map
    from echodenoise.neighbors import nearest_distance

    o_coo = forward_coordinate(scan.features, mask, params)
    o_cor = forward_correlation(scan.features, params)
    nd = nearest_distance(gather_neighbors(scan.cloud, EncoderConfig(k=3, cutoff=3.0, window=(3, 5))))
    xi = csr_penalty(characteristics_map(scan.cloud, nd), o_cor, csr)
    assert value == pytest.approx(loss(o_coo, o_cor, scan.cloud, mask, xi, 5.0), rel=1e-12)


@pytest.mark.parametrize("seed", [0, 1])
def test_gradient_matches_finite_differences(seed):
    params, scan, mask, csr = tiny_problem(seed)
    assert params.count() <= 2000
    assert max_grad_error(params, scan, mask, 5.0, csr) <= 1e-3


# ------------------------------------------------------------ forward passes


def small_setup(seed=0):
    c = random_cloud(np.random.default_rng(seed), 6, 16, 2)
    enc = EncoderConfig(k=4, cutoff=2.0, window=(3, 5))
    net = NetworkConfig(num_echoes=2, slots=4, features=6, seed=seed)
    return c, enc, ParameterStore.initialize(net)


def test_blind_spot_zeroes_self_slot():
    c, enc, _ = small_setup()
    ns = gather_neighbors(c, enc)
    f = encode_features(c, ns)
    mask = np.zeros(c.shape, bool)
    h, w = np.argwhere(self_slots(ns)[:, :, 0].any(-1))[0]
    mask[h, w, 0] = True
    g = apply_blind_spots(f, mask)
    assert not np.array_equal(g.values[h, w, 0], f.values[h, w, 0])
    assert not (g.present & (g.ref == h * c.width + w)).any()


def test_forward_shapes_and_determinism():
    c, enc, params = small_setup(1)
    f = encode_features(c, gather_neighbors(c, enc))
    a = forward_correlation(f, params)
    b = forward_correlation(f, params.copy())
    np.testing.assert_array_equal(a, b)
    assert a.shape == c.shape and np.isfinite(a).all()
    o = forward_coordinate(f, sample_mask(c.valid, 0.5, np.random.default_rng(0)), params)
    assert np.all(o >= 0) and np.isfinite(o).all()


def test_forward_shape_mismatch():
    c, enc, params = small_setup()
    f = encode_features(c, gather_neighbors(c, EncoderConfig(k=3)))
    with pytest.raises(ShapeError):
        forward_correlation(f, params)


# ------------------------------------------------------------------ params


def test_encoder_parameter_count():
    shapes = network_shapes(NetworkConfig(num_echoes=2, slots=5, features=8))
    assert math.prod(shapes["enc.w"]) + math.prod(shapes["enc.b"]) == 248


def hand_count(ne, slots, f, widths):
    n = ne * slots * 3 * f + f
    c_in = f
    for c in widths:
        n += 9 * c_in * c + c + 9 * c * c + c + (c_in * c if c != c_in else 0)
        c_in = c
    return 2 * (n + c_in * ne + ne)


@pytest.mark.parametrize("widths", [(16, 16, 16), (8, 12, 20), (32,)])
def test_parameter_count_formula(widths):
    cfg = NetworkConfig(num_echoes=2, slots=5, features=16, residual_blocks=len(widths), widths=widths)
    doubled = NetworkConfig(num_echoes=2, slots=5, features=32, residual_blocks=len(widths),
                            widths=tuple(2 * w for w in widths))
    assert parameter_count(cfg) == hand_count(2, 5, 16, widths)
    assert parameter_count(doubled) == hand_count(2, 5, 32, tuple(2 * w for w in widths))
    assert ParameterStore.initialize(cfg).count() == parameter_count(cfg)


def test_full_scale_count():
    assert abs(parameter_count(PAPER_SCALE) - 1.13e6) <= 0.05 * 1.13e6


def test_config_validation():
    with pytest.raises(ConfigError):
        NetworkConfig(residual_blocks=0)
    with pytest.raises(ConfigError):
        NetworkConfig(activation="relu6")
    with pytest.raises(ConfigError):
        TrainConfig(blind_fraction=0.0)


# ----------------------------------------------------------------- training


def test_learning_rate_schedule():
    assert learning_rate(TrainConfig(), 3) == pytest.approx(0.01 * 0.99**3)


def test_zero_learning_rate_keeps_parameters():
    c, enc, params = small_setup(2)
    res = train([c], params.cfg, TrainConfig(learning_rate=0.0, epochs=1), enc, init=params)
    assert res.params.equals(params)
    assert len(res.log) == 1


def test_training_is_deterministic():
    c, enc, params = small_setup(3)
    a = train([c, c], params.cfg, TrainConfig(epochs=2), enc)
    b = train([c, c], params.cfg, TrainConfig(epochs=2), enc)
    assert a.params.equals(b.params)
    assert [e.mean_loss for e in a.log] == [e.mean_loss for e in b.log]


def test_empty_dataset_rejected():
    _, enc, params = small_setup()
    with pytest.raises(ValueError):
        train([], params.cfg, TrainConfig(), enc)


def test_divergence_detected():
    c, enc, params = small_setup(4)
    with pytest.raises(DivergenceError):
        train([c] * 4, params.cfg, TrainConfig(learning_rate=1e12, epochs=3), enc)


def test_loss_decreases_on_toy_set():
    scans = [c for c, _ in synthetic_scans(10, SnowSpec("medium"), True, seed=5)]
    enc = EncoderConfig(cutoff=1.0)
    res = train(scans, NetworkConfig(num_echoes=2, slots=5, features=16), TrainConfig(epochs=3), enc)
    assert res.log[-1].mean_loss < res.log[0].mean_loss


def test_sample_mask_never_empty():
    valid = np.zeros((2, 2, 1), bool)
    valid[1, 1, 0] = True
    for seed in range(20):
        m = sample_mask(valid, 0.01, np.random.default_rng(seed))
        assert m.sum() == 1 and m[1, 1, 0]


# --------------------------------------------------------------------- I/O


def test_checkpoint_roundtrip(tmp_path):
    _, enc, params = small_setup(5)
    save_checkpoint(params, enc, tmp_path / "m.smed")
    back, enc2 = load_checkpoint(tmp_path / "m.smed")
    assert enc2 == enc
    assert back.cfg == params.cfg
    for k in params.names():
        np.testing.assert_array_equal(back[k], params[k].astype(np.float32))
    assert (tmp_path / "m.smed").read_bytes()[:4] == CKPT_MAGIC


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x.smed").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "x.smed")


def test_loss_log_roundtrip(tmp_path):
    c, enc, params = small_setup(6)
    res = train([c], params.cfg, TrainConfig(epochs=3), enc)
    write_loss_log(res.log, tmp_path / "log.csv")
    assert read_loss_log(tmp_path / "log.csv") == res.log
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "epoch,mean_loss,lr"


def test_csr_term_changes_loss():
    params, scan, mask, csr = tiny_problem(2)
    with_csr, _ = loss_and_grad(params, scan, mask, 5.0, csr, need_grad=False)
    without, _ = loss_and_grad(params, scan, mask, 5.0, None, need_grad=False)
    assert with_csr >= without
    assert CsrConfig().k == 9
