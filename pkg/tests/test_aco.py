import dataclasses

import numpy as np
import pytest

from core.models import AcoConfig, EmaBuffer, EnergyFunctional, GaussianJoint, LinearMap
from core.measures import uniform_measure
from core.rng import RngStream
from core.diffusion import cosine_schedule, gaussian_denoiser
from core.ot import adaptive_epsilon
from core.wgf import jko_step
from core.aco import lr_schedule, inverse_alignment, ema_update, aco_run, lyapunov_trace


def test_lr_schedule_warmup_rule():
    assert lr_schedule(0, 0.05, 100) == 0.05
    assert lr_schedule(100, 0.05, 100) == 0.05
    assert lr_schedule(400, 0.05, 100) == pytest.approx(0.025)
    with pytest.raises(ValueError):
        lr_schedule(-1, 0.05, 100)


def test_inverse_alignment_value_and_gradient():
    t_inv = LinearMap(matrix=[[2.0]], offset=[1.0])
    phi, grad = inverse_alignment([4.0], [1.0], t_inv, alpha=0.5)
    assert phi == pytest.approx(1.0 + 0.5 * 4.0)
    assert np.allclose(grad, [2.0])


def test_ema_buffer_mixing_and_capacity():
    buf = EmaBuffer(capacity=3, nu=0.5)
    buf = ema_update(buf, [[0.0], [1.0]])
    assert np.allclose(buf.target.weights, 0.5)
    buf = ema_update(buf, [[2.0], [3.0]])
    assert len(buf.latents) == 3
    w = dict(zip(buf.target.points[:, 0].tolist(), buf.target.weights.tolist()))
    # old target halves, new uniform over the 3 kept latents gets 1/6 each
    assert w[0.0] == pytest.approx(0.25)
    assert w[1.0] == pytest.approx(0.25 + 1.0 / 6.0)
    assert w[3.0] == pytest.approx(1.0 / 6.0)
    assert sum(w.values()) == pytest.approx(1.0)


def test_config_problems_collected():
    with pytest.raises(ValueError) as e:
        AcoConfig(K=-1, eps_min=0.0)
    assert "K" in str(e.value) and "eps_min" in str(e.value)


def _toy(n=40, seed=41):
    rng = RngStream(seed)
    c0 = uniform_measure(5.0 + rng.normal(n))
    target = uniform_measure(rng.normal(n))
    return c0, target


def test_aco_converges_on_gaussian_toy():
    j = GaussianJoint(mu_x=0.0, mu_c=0.0, sigma_xx=1.0, sigma_cc=1.0, sigma_xc=0.9)
    cfg = AcoConfig(K=40, T=10, lambda_reg=0.1)
    c0, target = _toy()
    state = aco_run(cfg, c0, gaussian_denoiser(cosine_schedule(cfg.T), j), LinearMap.identity(1),
                    target, RngStream(42))
    assert state.iterations == 40
    assert abs(state.conditions.mean()[0] - target.mean()[0]) < 0.5
    w2 = [d.w2_to_target for d in state.diagnostics[:15]]
    assert all(b < a for a, b in zip(w2, w2[1:]))
    assert all(d.grad_norm_postclip <= cfg.clip_tau * (1 + 1e-12) for d in state.diagnostics)
    assert [d.epsilon for d in state.diagnostics] == [adaptive_epsilon(k, 40, cfg.eps_min, cfg.eps_max)
                                                     for k in range(40)]
    rep = lyapunov_trace(state, cfg.lambda_reg, slack=cfg.eps_min)
    assert rep.non_increasing_fraction >= 0.9


def test_zero_iterations_return_input():
    c0, target = _toy()
    state = aco_run(AcoConfig(K=0), c0, lambda z, c, t: z, LinearMap.identity(1), target, RngStream(1))
    assert state.conditions is c0
    assert state.iterations == 0


def test_clipping_bounds_displacement():
    c0, target = _toy()
    cfg = AcoConfig(K=1, T=4, clip_tau=1e-6)
    state = aco_run(cfg, c0, lambda z, c, t: z, LinearMap.identity(1), target, RngStream(2))
    rounding = 8.0 * np.finfo(np.float64).eps * np.abs(c0.points).max()
    assert np.max(np.abs(state.conditions.points - c0.points)) <= cfg.eta0 * 1e-6 + rounding
    d = state.diagnostics[0]
    assert d.eta * d.grad_norm_postclip <= cfg.eta0 * 1e-6 * (1 + 1e-12)


def test_single_step_matches_entropic_jko():
    c0, target = _toy()
    cfg = AcoConfig(K=1, T=4, lambda_cost=1.0, lambda_reg=0.0, alpha=0.0, clip_tau=1e12,
                    K_sink=20_000, sinkhorn_tol=1e-12)
    zeros = lambda z, c, t: np.zeros_like(np.asarray(z, dtype=np.float64))
    state = aco_run(cfg, c0, zeros, LinearMap.identity(1), target, RngStream(3))
    ref = jko_step(EnergyFunctional(target=target), c0, cfg.eta0, cfg.eps_max, max_iters=20_000, tol=1e-12)
    assert np.max(np.abs(state.conditions.points - ref.points)) < 1e-9


def test_ema_buffer_target_source_runs():
    j = GaussianJoint(mu_x=0.0, mu_c=0.0, sigma_xx=1.0, sigma_cc=1.0, sigma_xc=0.5)
    c0, target = _toy(n=20)
    cfg = dataclasses.replace(AcoConfig(K=3, T=4), buffer_B=30)
    buf = EmaBuffer(capacity=cfg.buffer_B, nu=cfg.nu, target=target)
    state = aco_run(cfg, c0, gaussian_denoiser(cosine_schedule(cfg.T), j), LinearMap.identity(1),
                    buf, RngStream(4))
    assert state.buffer is not None
    assert len(state.buffer.latents) == 30
    assert state.buffer.target.weights.sum() == pytest.approx(1.0)


def test_mismatched_map_rejected():
    c0, target = _toy()
    with pytest.raises(ValueError):
        aco_run(AcoConfig(K=1), c0, lambda z, c, t: z, LinearMap.identity(2), target, RngStream(5))


def test_ema_converges_geometrically_to_buffer():
    start = ema_update(EmaBuffer(capacity=4, nu=1.0), [[1.0], [2.0]])
    assert np.allclose(start.target.weights, 0.5)
    buf = EmaBuffer(capacity=4, nu=0.1, latents=start.latents, target=uniform_measure([[-3.0]]))
    for k in range(1, 21):
        buf = ema_update(buf, [])
        w = dict(zip(buf.target.points[:, 0].tolist(), buf.target.weights.tolist()))
        assert w[-3.0] == pytest.approx(0.9 ** k, rel=1e-9)
        assert w[1.0] == pytest.approx(w[2.0])
        if k == 1:
            assert w[1.0] + w[2.0] == pytest.approx(0.1)
