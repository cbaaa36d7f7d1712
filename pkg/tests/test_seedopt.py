import numpy as np
import pytest

from slatpaint import seedopt
from slatpaint.core import FeatureGrid, Rng, gaussian_grid, irfft3, rfft3
from slatpaint.errors import (
    DegenerateConstraintError,
    DimensionError,
    ParameterError,
)
from slatpaint.flownet import STAGE_SLAT, STAGE_SPARSE, adam_step, init_adam, init_net, zero_net
from slatpaint.sampler import denoise_once
from slatpaint.seedopt import (
    ConfigSeedOpt,
    ObservationTarget,
    SeedState,
    linearized_estimate,
    moment_loss,
    optimize_slat_seed,
    optimize_sparse_seed,
    recon_loss,
    recon_loss_and_grad,
    seed_gradient,
    spectral_decode,
    spectral_encode,
    spectral_pullback,
    total_loss,
    write_step_logs,
)
from slatpaint.shapes import (
    RegionMask,
    ShapeFamily,
    SparseLatent,
    encode_slat_target,
    encode_sparse_target,
    generate_asset,
    make_half_mask,
)

SIDE = 8


def _grid(seed, channels=2, side=SIDE):
    return gaussian_grid(Rng(seed), (side,) * 3, channels)


def _mask(seed=0, side=SIDE):
    return make_half_mask(Rng(seed), (side,) * 3)


def _net(seed=0, channels=2):
    return init_net(STAGE_SPARSE, channels, 3, Rng(seed))


# -------------------------------------------------------- linearized estimate

def test_linearized_estimate_endpoints():
    net = _net(1)
    x = _grid(2)
    est_t1 = linearized_estimate(net, x, 0, t=1.0)
    assert np.array_equal(est_t1.data, x.data)
    est_t0 = linearized_estimate(net, x, 0, t=0.0)
    assert np.allclose(est_t0.data, denoise_once(net, x, 0).data, atol=1e-14)


def test_linearized_estimate_zero_field_is_identity():
    net = zero_net(STAGE_SPARSE, 2, 3)
    x = _grid(3)
    for t in (0.0, 0.25, 0.5, 1.0):
        est = linearized_estimate(net, x, 0, t)
        assert np.array_equal(est.data, x.data)


# ----------------------------------------------------------------- recon loss

def test_recon_loss_zero_on_target():
    y = _grid(4)
    target = ObservationTarget(y, _mask(1))
    assert recon_loss(y, target) == 0.0


def test_recon_loss_constant_residual():
    y = _grid(5)
    target = ObservationTarget(y, _mask(2))
    est = FeatureGrid(y.data + 1.0)
    assert recon_loss(est, target) == pytest.approx(1.0, abs=1e-12)


def test_recon_loss_matches_brute_force_sum():
    y = _grid(6)
    mask = _mask(3)
    target = ObservationTarget(y, mask)
    est = _grid(7)
    total, count = 0.0, 0
    for i in range(SIDE):
        for j in range(SIDE):
            for k in range(SIDE):
                if mask.preserved[i, j, k]:
                    for c in range(y.channels):
                        total += (est.data[i, j, k, c] - y.data[i, j, k, c]) ** 2
                        count += 1
    assert recon_loss(est, target) == pytest.approx(total / count, rel=1e-12)


def test_recon_loss_empty_mask_rejected():
    y = _grid(8)
    empty = RegionMask(np.zeros((SIDE,) * 3, dtype=bool))
    with pytest.raises(DegenerateConstraintError):
        recon_loss(y, ObservationTarget(y, empty))


# ---------------------------------------------------------------- moment loss

def test_moment_loss_zero_on_exactly_standardized_values():
    # {sqrt(3), -sqrt(3), 0, 0, 0, 0} has mu=0, sigma=1, gamma=0, kappa=3
    values = np.array([np.sqrt(3.0), -np.sqrt(3.0), 0.0, 0.0, 0.0, 0.0])
    loss, grad = moment_loss(values, (31.6, 10.0, 3.16, 1.0))
    assert loss < 1e-12


def test_moment_loss_pm_one_paper_lambdas():
    values = np.array([-1.0, 1.0, -1.0, 1.0])
    loss, _ = moment_loss(values, (31.6, 10.0, 3.16, 1.0))
    assert loss == pytest.approx(4.0, abs=1e-12)


def test_moment_loss_gradient_matches_finite_differences():
    rng = Rng(11)
    x = rng.standard_normal(40) * 1.4 + 0.3
    x = x + 0.2 * x**2   # induce skew so all four terms are active
    lambdas = (31.6, 10.0, 3.16, 1.0)
    _, grad = moment_loss(x, lambdas)
    h = 1e-6
    for idx in Rng(12).integers(0, x.size, 25):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (moment_loss(xp, lambdas)[0] - moment_loss(xm, lambdas)[0]) / (2 * h)
        scale = max(abs(fd), abs(grad[idx]), 1e-8)
        assert abs(fd - grad[idx]) / scale < 1e-5


def test_moment_loss_per_channel_scope():
    x = Rng(13).standard_normal((30, 2))
    x[:, 1] = x[:, 1] * 2.0   # second channel off-target
    lambdas = (0.0, 10.0, 0.0, 0.0)
    global_loss, _ = moment_loss(x, lambdas, scope="global")
    per_loss, grad = moment_loss(x, lambdas, scope="per_channel")
    assert per_loss != pytest.approx(global_loss)
    assert grad.shape == x.shape
    with pytest.raises(ParameterError):
        moment_loss(x, lambdas, scope="weird")


def test_moment_loss_degenerate_group():
    with pytest.raises(DegenerateConstraintError):
        moment_loss(np.ones(10), (1, 1, 1, 1))


# -------------------------------------------------- spectral parameterization

def test_spectral_encode_decode_roundtrip():
    g = _grid(20).data
    c = spectral_encode(g)
    back = spectral_decode(c[..., 0] + 1j * c[..., 1], SIDE)
    assert np.abs(back - g).max() < 1e-12


def test_spectral_pullback_matches_orthonormal_transform():
    # documented scale relation: pullback = weight * rfft3(u) / D^(3/2)
    u = _grid(21, channels=1)
    pulled = spectral_pullback(u.data)
    pulled_c = pulled[..., 0] + 1j * pulled[..., 1]
    ortho = rfft3(u).data / SIDE**1.5
    kz = np.arange(SIDE // 2 + 1)
    w = np.where((kz == 0) | (kz == SIDE // 2), 1.0, 2.0)[None, None, :, None]
    expected = w * ortho
    half = SIDE // 2
    for kx in (0, half):
        for ky in (0, half):
            for kzi in (0, half):
                expected[kx, ky, kzi] = expected[kx, ky, kzi].real
    assert np.abs(pulled_c - expected).max() < 1e-9


def _surrogate_loss_direct(net, x_vals, target, class_id):
    """Displacement-frozen surrogate: recon(x + c) with c fixed."""
    x0 = FeatureGrid(x_vals)
    d = denoise_once(net, x0, class_id)
    c = d.data - x_vals

    def f(x_new):
        return recon_loss(FeatureGrid(x_new + c), target)

    return f


def test_seed_gradient_zero_when_estimate_matches_target():
    net = _net(22)
    g0 = _grid(23)
    est = linearized_estimate(net, g0, 0, t=0.0)
    target = ObservationTarget(est, _mask(4))
    state = SeedState(
        stage="sparse_structure", param_space="direct", variable=g0.data.copy(),
        side=SIDE, positions=None, adam=init_adam({"seed": g0.data}),
    )
    grad = seed_gradient(net, state, target, class_id=0)
    assert np.abs(grad).max() < 1e-14


def test_seed_gradient_direct_matches_finite_differences():
    net = _net(24)
    g0 = _grid(25)
    target = ObservationTarget(_grid(26), _mask(5))
    state = SeedState(
        stage="sparse_structure", param_space="direct", variable=g0.data.copy(),
        side=SIDE, positions=None, adam=init_adam({"seed": g0.data}),
    )
    grad = seed_gradient(net, state, target, class_id=1)
    f = _surrogate_loss_direct(net, g0.data, target, class_id=1)
    h = 1e-6
    shape = g0.data.shape
    for flat in Rng(27).integers(0, g0.data.size, 25):
        idx = np.unravel_index(flat, shape)
        xp, xm = g0.data.copy(), g0.data.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (f(xp) - f(xm)) / (2 * h)
        scale = max(abs(fd), abs(grad[idx]), 1e-8)
        assert abs(fd - grad[idx]) / scale < 1e-5


def test_seed_gradient_spectral_matches_finite_differences():
    net = _net(28)
    g0 = _grid(29)
    target = ObservationTarget(_grid(30), _mask(6))
    variable = spectral_encode(g0.data)
    state = SeedState(
        stage="sparse_structure", param_space="spectral", variable=variable,
        side=SIDE, positions=None, adam=init_adam({"seed": variable}),
    )
    grad = seed_gradient(net, state, target, class_id=0)
    x_now = state.grid.data
    f_grid = _surrogate_loss_direct(net, x_now, target, class_id=0)

    def f_coeff(var):
        c = var[..., 0] + 1j * var[..., 1]
        return f_grid(spectral_decode(c, SIDE))

    # probe untied DOFs: bins with 0 < kz < D/2 (both parts) and the real
    # parts of self-conjugate bins; tied mirror pairs in the kz=0 / kz=D/2
    # planes are redundant storage and not independent coordinates
    h = 1e-4
    rng = Rng(31)
    checked = 0
    half = SIDE // 2
    while checked < 20:
        kx = int(rng.integers(0, SIDE))
        ky = int(rng.integers(0, SIDE))
        kz = int(rng.integers(1, half))
        ch = int(rng.integers(0, variable.shape[3]))
        part = int(rng.integers(0, 2))
        idx = (kx, ky, kz, ch, part)
        vp, vm = variable.copy(), variable.copy()
        vp[idx] += h
        vm[idx] -= h
        fd = (f_coeff(vp) - f_coeff(vm)) / (2 * h)
        scale = max(abs(fd), abs(grad[idx]), 1e-8)
        assert abs(fd - grad[idx]) / scale < 1e-5
        checked += 1
    # self-conjugate bin, real part (weight 1)
    idx = (0, 0, 0, 0, 0)
    vp, vm = variable.copy(), variable.copy()
    vp[idx] += h
    vm[idx] -= h
    fd = (f_coeff(vp) - f_coeff(vm)) / (2 * h)
    assert abs(fd - grad[idx]) / max(abs(fd), 1e-8) < 1e-5


def test_seed_gradient_slat_matches_finite_differences():
    net = init_net(STAGE_SLAT, 3, 3, Rng(32))
    asset = generate_asset(Rng(33), ShapeFamily("sphere"), side=SIDE)
    pos = asset.positions
    z0 = Rng(34).standard_normal((pos.shape[0], 3))
    y = SparseLatent(pos, Rng(35).standard_normal((pos.shape[0], 3)), SIDE)
    target = ObservationTarget(y, _mask(7))
    state = SeedState(
        stage="structured_latent", param_space="direct", variable=z0.copy(),
        side=SIDE, positions=pos, adam=init_adam({"seed": z0}),
    )
    grad = seed_gradient(net, state, target, class_id=0)

    def f(values):
        lat = SparseLatent(pos, values, SIDE)
        d = denoise_once(net, SparseLatent(pos, z0, SIDE), 0)
        c = d.values - z0
        return recon_loss(SparseLatent(pos, values + c, SIDE), target)

    h = 1e-6
    for flat in Rng(36).integers(0, z0.size, 20):
        idx = np.unravel_index(flat, z0.shape)
        zp, zm = z0.copy(), z0.copy()
        zp[idx] += h
        zm[idx] -= h
        fd = (f(zp) - f(zm)) / (2 * h)
        scale = max(abs(fd), abs(grad[idx]), 1e-8)
        assert abs(fd - grad[idx]) / scale < 1e-5


# ----------------------------------------------------------------- total loss

def test_total_loss_additivity_and_recomputation():
    net = _net(40)
    lambdas = (31.6, 10.0, 3.16, 1.0)
    for seed in range(10):
        g0 = _grid(100 + seed)
        target = ObservationTarget(_grid(200 + seed), _mask(seed))
        variable = spectral_encode(g0.data)
        state = SeedState(
            stage="sparse_structure", param_space="spectral", variable=variable,
            side=SIDE, positions=None, adam=init_adam({"seed": variable}),
        )
        total, rec, dist, grad = total_loss(net, state, target, 0, lambdas)
        est = linearized_estimate(net, state.grid, 0, t=0.0)
        rec2, grad_rec = recon_loss_and_grad(est, target)
        dist2, grad_dist = moment_loss(state.grid.data, lambdas)
        assert total == pytest.approx(rec2 + dist2, rel=1e-12)
        assert rec == pytest.approx(rec2, rel=1e-12)
        assert dist == pytest.approx(dist2, rel=1e-12)
        combined = spectral_pullback(grad_rec + grad_dist)
        split = spectral_pullback(grad_rec) + spectral_pullback(grad_dist)
        assert np.abs(combined - split).max() < 1e-12
        assert np.abs(grad - combined).max() < 1e-12


# --------------------------------------------------------------- optimization

def test_optimize_sparse_seed_topt_zero_is_gaussian_init():
    net = _net(41)
    target = ObservationTarget(_grid(42), _mask(8))
    cfg = ConfigSeedOpt(t_opt=0, seed=99)
    state = optimize_sparse_seed(net, target, cfg, class_id=0)
    g0 = gaussian_grid(Rng(99).child("sparse_seed"), (SIDE,) * 3, 2)
    assert np.abs(state.grid.data - g0.data).max() < 1e-12
    assert state.loss_history == []
    assert len(state.logs) == 1

    cfg_d = ConfigSeedOpt(t_opt=0, seed=99, param_space="direct")
    state_d = optimize_sparse_seed(net, target, cfg_d, class_id=0)
    assert np.array_equal(state_d.grid.data, g0.data)


def test_optimize_sparse_seed_history_and_grid_view_consistency():
    net = _net(43)
    target = ObservationTarget(_grid(44), _mask(9))
    cfg = ConfigSeedOpt(t_opt=5, seed=7)
    state = optimize_sparse_seed(net, target, cfg, class_id=1)
    assert len(state.loss_history) == 5
    assert len(state.logs) == 6
    # grid view is a pure function of the coefficients (single source of truth)
    c = state.variable[..., 0] + 1j * state.variable[..., 1]
    view1 = spectral_decode(c, SIDE)
    view2 = spectral_decode(c, SIDE)
    assert np.array_equal(view1, view2)
    assert np.array_equal(state.grid.data, view1)
    # exposed coefficients follow core's orthonormal convention
    assert np.abs(irfft3(state.coeffs).data - state.grid.data).max() < 1e-12
    # self-conjugate bins stay real through optimization
    half = SIDE // 2
    for kx in (0, half):
        for ky in (0, half):
            for kz in (0, half):
                assert state.variable[kx, ky, kz, :, 1].max() == 0.0


def test_optimize_sparse_seed_deterministic():
    net = _net(45)
    target = ObservationTarget(_grid(46), _mask(10))
    cfg = ConfigSeedOpt(t_opt=4, seed=13)
    a = optimize_sparse_seed(net, target, cfg, class_id=0)
    b = optimize_sparse_seed(net, target, cfg, class_id=0)
    assert np.array_equal(a.variable, b.variable)
    assert a.loss_history == b.loss_history


def test_optimize_slat_seed_degenerate_intersection():
    net = init_net(STAGE_SLAT, 3, 3, Rng(50))
    asset = generate_asset(Rng(51), ShapeFamily("sphere"), side=SIDE)
    y = encode_slat_target(asset)
    # active set disjoint from the target support
    empty_actives = np.argwhere(~asset.occupancy)[:20]
    target = ObservationTarget(
        SparseLatent(y.positions, Rng(0).standard_normal((len(y), 8)), SIDE),
        make_half_mask(Rng(1), (SIDE,) * 3),
    )
    with pytest.raises(DegenerateConstraintError):
        optimize_slat_seed(net, empty_actives, target,
                           ConfigSeedOpt(t_opt=2, seed=1), 0, SIDE)


def test_optimize_slat_seed_runs_and_reports_dropped():
    net = init_net(STAGE_SLAT, 8, 3, Rng(52))
    asset = generate_asset(Rng(53), ShapeFamily("sphere"), side=SIDE)
    y = encode_slat_target(asset)
    mask = make_half_mask(Rng(2), (SIDE,) * 3)
    # drop half the true actives from the sampled active set
    actives = asset.positions[::2]
    target = ObservationTarget(y, mask)
    state = optimize_slat_seed(net, actives, target, ConfigSeedOpt(t_opt=3, seed=4), 0, SIDE)
    assert len(state.loss_history) == 3
    expected_dropped = sum(
        1 for p in asset.positions[1::2] if mask.preserved[tuple(p)]
    )
    assert state.diagnostics["dropped_preserved"] == expected_dropped


def test_config_validation():
    with pytest.raises(ParameterError):
        ConfigSeedOpt(t_opt=-1)
    with pytest.raises(ParameterError):
        ConfigSeedOpt(lr_sparse=0.0)
    with pytest.raises(ParameterError):
        ConfigSeedOpt(lambdas=(1.0, 2.0))
    with pytest.raises(ParameterError):
        ConfigSeedOpt(moment_scope="channelwise")
    with pytest.raises(ParameterError):
        ConfigSeedOpt(param_space="fourier")


def test_pure_regularizer_descent():
    # with the reconstruction term absent, t_opt Adam steps strictly shrink
    # the moment loss from clearly non-Gaussian starts
    lambdas = (31.6, 10.0, 3.16, 1.0)
    for seed in range(6):
        rng = Rng(700 + seed)
        scale = 1.5 + float(rng.uniform()) * 1.5
        shift = 0.3 + float(rng.uniform()) * 0.7
        x = rng.standard_normal(512) * scale + shift
        initial, _ = moment_loss(x, lambdas)
        adam = init_adam({"x": x})
        for _ in range(15):
            _, grad = moment_loss(x, lambdas)
            x = adam_step({"x": x}, {"x": grad}, adam, lr=0.01)["x"]
        final, _ = moment_loss(x, lambdas)
        assert final < initial


def test_write_step_logs(tmp_path):
    logs = [{"step": 0, "recon_loss": 1.0, "dist_loss": 0.5,
             "mu": 0.0, "sigma": 1.0, "gamma": 0.0, "kappa": 3.0}]
    path = tmp_path / "steps.jsonl"
    write_step_logs(logs, path)
    import json

    loaded = [json.loads(line) for line in path.read_text().splitlines()]
    assert loaded == logs
