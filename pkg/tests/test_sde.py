import numpy as np
import pytest

from l96deg.model import L96Config, drift, project_transverse
from l96deg.rng import NoiseStream
from l96deg.sde import (
    coupled_pair,
    eta_star,
    ou_ensemble,
    simulate,
    simulate_ou,
    step_em,
    super_lyapunov_probe,
    write_trajectory_csv,
    write_trajectory_summary,
)


def cfg_deg(eps, n=9, sigma=1.0, dt=1e-3, seed=0, tamed=True):
    return L96Config.degenerate(n, eps, sigma_forced=sigma, dt=dt, seed=seed,
                                tamed=tamed)


def cfg_silent(eps, n=9, dt=1e-3, seed=0, tamed=True):
    """No noise anywhere (custom mode)."""
    return L96Config(n=n, epsilon=eps, sigma=(0.0,) * n, dt=dt, seed=seed,
                     mode="custom", tamed=tamed)


def invariant_point(rng, n=9, scale=1.0):
    y = np.zeros(n)
    y[::3] = scale * rng.standard_normal(n // 3)
    return y


def rk4_reference(u, eps, dt, substeps=100):
    h = dt / substeps
    u = u.copy()
    for _ in range(substeps):
        k1 = drift(u, eps)
        k2 = drift(u + 0.5 * h * k1, eps)
        k3 = drift(u + 0.5 * h * k2, eps)
        k4 = drift(u + h * k3, eps)
        u = u + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


class TestStepEM:
    def test_invariant_fixed_point_at_zero_damping(self):
        cfg = cfg_deg(0.0)
        y = invariant_point(np.random.default_rng(0))
        out = step_em(y, cfg, NoiseStream(0, 0))
        assert np.array_equal(out, y)

    def test_matches_rk4_oracle_without_noise(self):
        cfg = cfg_silent(0.3, dt=1e-3)
        rng = np.random.default_rng(1)
        for _ in range(25):
            u = rng.standard_normal(9)
            em = step_em(u, cfg, NoiseStream(0, 0))
            ref = rk4_reference(u, 0.3, cfg.dt)
            # one Euler step has a second-order local error
            assert np.abs(em - ref).max() <= 50 * cfg.dt ** 2

    def test_step_order_via_halving(self):
        u = np.random.default_rng(2).standard_normal(9)
        errs = []
        for dt in (1e-3, 5e-4):
            cfg = cfg_silent(0.3, dt=dt)
            em = step_em(u, cfg, NoiseStream(0, 0))
            errs.append(np.abs(em - rk4_reference(u, 0.3, dt)).max())
        assert errs[0] / errs[1] > 3.0

    def test_invariant_subspace_preserved_exactly(self):
        cfg = cfg_deg(0.8, seed=5)
        noise = NoiseStream(cfg.seed, 0)
        u = invariant_point(np.random.default_rng(3))
        for _ in range(200):
            u = step_em(u, cfg, noise)
        assert np.all(project_transverse(u) == 0)

    def test_taming_consistency_for_small_drift(self):
        cfg = cfg_silent(0.3, dt=1e-4)
        u = 1e-2 * np.random.default_rng(4).standard_normal(9)
        assert cfg.dt * np.linalg.norm(drift(u, cfg.epsilon)) < 1e-6
        tamed = step_em(u, cfg, NoiseStream(0, 0), tamed=True)
        plain = step_em(u, cfg, NoiseStream(0, 0), tamed=False)
        assert np.abs(tamed - plain).max() <= 1e-8 * np.abs(plain).max()


class TestSimulate:
    def test_reproducible_bitwise(self):
        cfg = cfg_deg(1.0, seed=77)
        u0 = np.random.default_rng(10).standard_normal(9)
        a = simulate(u0, cfg, 2.0, thin=10, stream_id=4)
        b = simulate(u0, cfg, 2.0, thin=10, stream_id=4)
        assert np.array_equal(a.states, b.states)
        assert not np.array_equal(
            a.states, simulate(u0, cfg, 2.0, thin=10, stream_id=5).states)

    def test_matches_single_steps(self):
        cfg = cfg_deg(1.0, seed=9)
        u0 = np.random.default_rng(11).standard_normal(9)
        traj = simulate(u0, cfg, 0.05, thin=1, stream_id=2)
        noise = NoiseStream(cfg.seed, 2)
        u = u0.copy()
        for k in range(1, traj.states.shape[0]):
            u = step_em(u, cfg, noise)
            assert np.allclose(u, traj.states[k], atol=1e-13, rtol=0)

    def test_invariance_along_path(self):
        cfg = cfg_deg(1.0, seed=13)
        y0 = invariant_point(np.random.default_rng(12))
        traj = simulate(y0, cfg, 5.0, thin=50)
        assert traj.blow_up is None
        for row in traj.states:
            assert np.all(project_transverse(row) == 0)

    def test_forced_mode_second_moment_matches_stationary_law(self):
        # started on the invariant subspace the forced modes are exactly OU
        cfg = cfg_deg(1.0, seed=21)
        traj = simulate(np.zeros(9), cfg, 400.0, thin=10)
        samples = traj.states[200:, ::3] ** 2
        batch_means = samples.reshape(20, -1).mean(axis=1)
        se = batch_means.std(ddof=1) / np.sqrt(len(batch_means))
        assert abs(samples.mean() - 0.5) <= 3 * se

    def test_blow_up_recorded(self):
        cfg = L96Config(n=9, epsilon=0.0, sigma=(0.0,) * 9, dt=0.5,
                        mode="custom", tamed=False)
        traj = simulate(np.full(9, 1e160), cfg, 5.0, thin=1)
        assert traj.blow_up is not None
        assert np.all(np.isfinite(traj.states))

    def test_rejects_bad_args(self):
        cfg = cfg_deg(1.0)
        with pytest.raises(ValueError):
            simulate(np.zeros(9), cfg, -1.0)
        with pytest.raises(ValueError):
            simulate(np.zeros(12), cfg, 1.0)


class TestOU:
    def test_frozen_without_noise(self):
        cfg = cfg_silent(0.0)
        traj = simulate_ou(np.zeros(9), cfg, 1.0, thin=10)
        assert np.all(traj.states == 0)

    def test_requires_invariant_start(self):
        cfg = cfg_deg(1.0)
        with pytest.raises(ValueError):
            simulate_ou(np.ones(9), cfg, 1.0)

    def test_stationary_variance(self):
        cfg = cfg_deg(1.0, seed=31)
        traj = simulate_ou(np.zeros(9), cfg, 400.0, mode="exact", thin=10)
        post = traj.states[100:, ::3]
        var = post.var()
        assert abs(var - 0.5) < 0.1

    def test_em_matches_exact_distribution(self):
        cfg = cfg_deg(1.0, seed=32)
        exact = ou_ensemble(cfg, 5.0, 10_000, mode="exact", stream_id=1)
        em = ou_ensemble(cfg, 5.0, 10_000, mode="em", stream_id=1)
        for stat in (np.mean, np.var):
            se = np.sqrt(2.0 / 10_000) * 0.5 + 1e-3
            assert abs(stat(exact) - stat(em)) <= 3 * se

    def test_em_weak_error_shrinks_linearly(self):
        biases = []
        for dt in (1e-2, 5e-3, 2.5e-3):
            cfg = cfg_deg(1.0, seed=33, dt=dt)
            exact = ou_ensemble(cfg, 2.0, 4000, mode="exact", stream_id=0)
            em = ou_ensemble(cfg, 2.0, 4000, mode="em", stream_id=0)
            biases.append(abs(em.var() - exact.var()))
        assert biases[0] > biases[1] > biases[2]
        assert biases[0] / biases[2] > 2.0


class TestCoupledPair:
    def test_identical_initials_stay_identical(self):
        cfg = cfg_deg(1.0, seed=41)
        u0 = np.random.default_rng(40).standard_normal(9)
        pair = coupled_pair(u0, u0.copy(), cfg, 5.0)
        assert pair.synchronized and pair.sync_time == 0.0
        assert np.all(pair.distances == 0)

    def test_strong_damping_synchronizes(self):
        cfg = cfg_deg(5.0, seed=42)
        rng = np.random.default_rng(43)
        pair = coupled_pair(rng.standard_normal(9), rng.standard_normal(9),
                            cfg, 20.0, thin=10)
        assert pair.synchronized
        assert pair.sync_time < 20.0
        assert pair.distances[-1] < 1e-6

    def test_weak_damping_does_not(self):
        cfg = cfg_deg(0.05, seed=44)
        rng = np.random.default_rng(45)
        pair = coupled_pair(rng.standard_normal(9), rng.standard_normal(9),
                            cfg, 20.0, thin=10)
        assert not pair.synchronized
        assert pair.distances[-1] > 1e-2


class TestSuperLyap:
    def test_eta_star_value(self):
        assert eta_star(cfg_deg(1.0, sigma=1.0)) == 0.125
        assert eta_star(cfg_deg(1.0, sigma=2.0)) == 1.0 / 32.0

    def test_eta_bounds_enforced(self):
        cfg = cfg_deg(1.0)
        with pytest.raises(ValueError):
            super_lyapunov_probe(cfg, 0.2, [0.0], 0.1, 4)

    def test_ratio_at_origin_at_least_one(self):
        cfg = cfg_deg(1.0, seed=51)
        rep = super_lyapunov_probe(cfg, eta_star(cfg) / 4, [0.0], 0.5, 32)
        assert rep.points[0].ratio >= 1.0

    def test_stronger_damping_lowers_the_final_level(self):
        levels = {}
        for eps in (0.1, 1.0):
            cfg = cfg_deg(eps, seed=52)
            rep = super_lyapunov_probe(cfg, 0.03125, [5.0], 1.0, 128)
            levels[eps] = rep.points[0].log_mean_final
        assert levels[1.0] < levels[0.1]


class TestExports:
    def test_csv_and_summary(self, tmp_path):
        cfg = cfg_deg(1.0, seed=61)
        traj = simulate(np.zeros(9), cfg, 0.1, thin=10)
        csv = tmp_path / "traj.csv"
        write_trajectory_csv(traj, csv)
        lines = csv.read_text().splitlines()
        assert lines[0] == "t," + ",".join(f"u_{j}" for j in range(9))
        assert len(lines) == traj.states.shape[0] + 1
        js = tmp_path / "summary.json"
        write_trajectory_summary(traj, cfg, js)
        import json
        payload = json.loads(js.read_text())
        assert payload["blow_up_count"] == 0
        assert payload["config"]["n"] == 9
