import itertools
import json
import math

import numpy as np
import pytest

from fairflow.policy import (ActorCritic, CheckpointVersionError, MalformedCheckpointError, Mlp,
                             ObsDimMismatchError, PolicyCheckpoint, gaussian_log_prob, load_checkpoint,
                             save_checkpoint)
from fairflow.ppo import (PPOOptimizer, RolloutBatch, TrainConfig, gae_advantages, ppo_loss_and_grads,
                          ppo_update, read_curve_csv, train)


def zero_model(obs_dim=30):
    model = ActorCritic.init(obs_dim, np.random.default_rng(0))
    for net in (model.pi, model.vf):
        for p in net.params():
            p[...] = 0.0
    return model


class TestForward:
    def test_zero_weights(self):
        assert zero_model().forward(np.ones(30)) == (0.0, 0.0)

    def test_toy_composition(self):
        pi = Mlp([[[1.0]], [[1.0]]], [[0.0], [0.0]], out_tanh=True)
        vf = Mlp([[[1.0]], [[1.0]]], [[0.0], [0.0]], out_tanh=False)
        mean, value = ActorCritic(pi, vf, np.array([-0.5])).forward(np.array([0.5]))
        assert mean == pytest.approx(math.tanh(math.tanh(0.5)), abs=1e-15)
        assert value == pytest.approx(math.tanh(0.5), abs=1e-15)

    def test_mean_in_range(self):
        model = ActorCritic.init(30, np.random.default_rng(1))
        for net in (model.pi,):
            for w in net.weights:
                w *= 50.0
        mean, _ = model.forward(np.random.default_rng(2).normal(0, 10, (200, 30)))
        assert np.all(np.abs(mean) <= 1.0)

    def test_layer_sizes(self):
        model = ActorCritic.init(32, np.random.default_rng(0))
        assert model.pi.sizes == [32, 32, 16, 1]
        assert model.vf.sizes == [32, 32, 16, 1]

    def test_dim_mismatch(self):
        with pytest.raises(ObsDimMismatchError):
            ActorCritic.init(30, np.random.default_rng(0)).forward(np.zeros(32))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        model = ActorCritic.init(32, np.random.default_rng(3))
        ckpt = PolicyCheckpoint(model, strategy="b", train_seed=42, steps_trained=99)
        save_checkpoint(ckpt, tmp_path / "c.json")
        loaded = load_checkpoint(tmp_path / "c.json")
        obs = np.random.default_rng(4).normal(size=(100, 32))
        a = model.forward(obs)
        b = loaded.model.forward(obs)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        assert (loaded.strategy, loaded.train_seed, loaded.steps_trained) == ("b", 42, 99)

    def test_metadata(self, tmp_path):
        ckpt = PolicyCheckpoint(ActorCritic.init(30, np.random.default_rng(0)), strategy="a", lam=2.0)
        save_checkpoint(ckpt, tmp_path / "c.json")
        d = json.loads((tmp_path / "c.json").read_text())
        assert d["strategy"] == {"strategy": "a", "lambda": 2.0, "loss_coef": 2000.0}
        assert d["layer_sizes"] == [30, 32, 16, 1]

    def test_truncated(self, tmp_path):
        save_checkpoint(PolicyCheckpoint(ActorCritic.init(30, np.random.default_rng(0))), tmp_path / "c.json")
        text = (tmp_path / "c.json").read_text()
        (tmp_path / "c.json").write_text(text[: len(text) // 2])
        with pytest.raises(MalformedCheckpointError):
            load_checkpoint(tmp_path / "c.json")

    def test_missing_fields(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"format_version": 1}))
        with pytest.raises(MalformedCheckpointError):
            load_checkpoint(tmp_path / "c.json")

    def test_version(self, tmp_path):
        d = PolicyCheckpoint(ActorCritic.init(30, np.random.default_rng(0))).to_dict()
        d["format_version"] = 7
        (tmp_path / "c.json").write_text(json.dumps(d))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(tmp_path / "c.json")

    def test_dimension_error_names_both(self, tmp_path):
        save_checkpoint(PolicyCheckpoint(ActorCritic.init(32, np.random.default_rng(0))), tmp_path / "c.json")
        with pytest.raises(ObsDimMismatchError) as err:
            load_checkpoint(tmp_path / "c.json", expected_obs_dim=30)
        assert "30" in str(err.value) and "32" in str(err.value)

    def test_round_trip_with_normalizer_and_wide_critic(self, tmp_path):
        rng = np.random.default_rng(5)
        model = ActorCritic.init(30, rng, critic_extra=6)
        model.obs_mean, model.obs_var = rng.normal(size=30), rng.uniform(0.1, 2, 30)
        save_checkpoint(PolicyCheckpoint(model), tmp_path / "c.json")
        loaded = load_checkpoint(tmp_path / "c.json", expected_obs_dim=30).model
        obs = rng.normal(size=(100, 30))
        assert np.array_equal(model.forward(obs)[0], loaded.forward(obs)[0])
        assert loaded.critic_extra == 6

    def test_normalizer_is_applied(self):
        model = ActorCritic.init(30, np.random.default_rng(0))
        obs = np.random.default_rng(1).normal(size=(4, 30))
        plain = model.forward(obs)[0]
        model.obs_mean, model.obs_var = np.zeros(30), np.ones(30) * (1.0 - 1e-8)
        np.testing.assert_allclose(model.forward(obs)[0], plain, atol=1e-12)
        model.obs_mean = np.ones(30)
        assert not np.allclose(model.forward(obs)[0], plain)

    def test_bad_normalizer(self, tmp_path):
        d = PolicyCheckpoint(ActorCritic.init(30, np.random.default_rng(0))).to_dict()
        d["obs_norm"] = {"mean": [0.0] * 29, "var": [1.0] * 29}
        (tmp_path / "c.json").write_text(json.dumps(d))
        with pytest.raises(MalformedCheckpointError):
            load_checkpoint(tmp_path / "c.json")

    def test_inconsistent_sizes(self, tmp_path):
        d = PolicyCheckpoint(ActorCritic.init(30, np.random.default_rng(0))).to_dict()
        d["layer_sizes"] = [30, 64, 16, 1]
        (tmp_path / "c.json").write_text(json.dumps(d))
        with pytest.raises(MalformedCheckpointError):
            load_checkpoint(tmp_path / "c.json")


def brute_gae(rewards, values, bootstrap, gamma, lam):
    """A_t = sum_l (gamma*lam)^l delta_{t+l}, summed explicitly."""
    n = len(rewards)
    v = list(values) + [bootstrap]
    deltas = [rewards[t] + gamma * v[t + 1] - v[t] for t in range(n)]
    adv = [sum((gamma * lam) ** (l - t) * deltas[l] for l in range(t, n)) for t in range(n)]
    return np.array(adv), np.array(adv) + np.array(values)


class TestGae:
    def test_one_step(self):
        adv, ret = gae_advantages([1.0], [0.0], 0.0, 0.99, 0.95)
        assert adv[0] == 1.0 and ret[0] == 1.0

    def test_myopic(self):
        r, v = np.array([1.0, -2.0, 3.0]), np.array([0.5, 0.1, -1.0])
        adv, _ = gae_advantages(r, v, 7.0, 0.0, 0.95)
        np.testing.assert_allclose(adv, r - v)

    def test_exhaustive_small_cases(self):
        rng = np.random.default_rng(0)
        for n in range(1, 9):
            for gamma, lam in itertools.product([0.0, 0.5, 0.99, 1.0], [0.0, 0.95, 1.0]):
                r, v = rng.normal(size=n), rng.normal(size=n)
                boot = float(rng.normal())
                adv, ret = gae_advantages(r, v, boot, gamma, lam)
                badv, bret = brute_gae(r, v, boot, gamma, lam)
                assert np.max(np.abs(adv - badv)) <= 1e-9
                assert np.max(np.abs(ret - bret)) <= 1e-9

    def test_episode_boundary(self):
        r, v = np.array([1.0, 2.0, 3.0, 4.0]), np.array([0.3, 0.2, 0.1, 0.4])
        dones = [False, True, False, False]
        adv, _ = gae_advantages(r, v, 5.0, 0.9, 0.8, dones)
        a1, _ = brute_gae(r[:2], v[:2], 0.0, 0.9, 0.8)
        a2, _ = brute_gae(r[2:], v[2:], 5.0, 0.9, 0.8)
        np.testing.assert_allclose(adv, np.concatenate([a1, a2]), atol=1e-12)


def tiny_model(seed, critic_extra=0):
    rng = np.random.default_rng(seed)
    model = ActorCritic.init(2, rng, hidden=(3,), critic_extra=critic_extra)
    for net in (model.pi, model.vf):
        for p in net.params():
            p[...] = rng.normal(0, 0.8, p.shape)
    model.log_std[0] = rng.uniform(-1, 0)
    return model


def tiny_batch(model, rng, n=16):
    obs = rng.normal(size=(n, 2))
    mean, _ = model.forward(obs)
    actions = mean + rng.normal(0, 0.5, n)
    # old policy differs slightly so ratios spread around 1
    old_logp = gaussian_log_prob(actions, mean + rng.normal(0, 0.05, n), model.log_std[0])
    return obs, actions, old_logp, rng.normal(size=n), rng.normal(size=n)


def all_params(model):
    return model.pi.params() + [model.log_std] + model.vf.params()


class TestPpoGradients:
    @pytest.mark.parametrize("ent_coef,extra", [(0.0, 0), (0.01, 0), (0.0, 2)])
    def test_finite_differences(self, ent_coef, extra):
        rng = np.random.default_rng(123)
        h = 1e-6
        worst = 0.0
        for trial in range(100):
            model = tiny_model(trial, extra)
            obs, act, old, adv, ret = tiny_batch(model, rng)
            ext = rng.normal(size=(len(act), extra)) if extra else None

            def loss():
                return ppo_loss_and_grads(model, obs, act, old, adv, ret, 0.2, 0.5, ent_coef, ext)[0]["loss"]

            _, pi_g, vf_g = ppo_loss_and_grads(model, obs, act, old, adv, ret, 0.2, 0.5, ent_coef, ext)
            for p, g in zip(all_params(model), pi_g + vf_g):
                for idx in np.ndindex(p.shape):
                    orig = p[idx]
                    p[idx] = orig + h
                    up = loss()
                    p[idx] = orig - h
                    down = loss()
                    p[idx] = orig
                    num = (up - down) / (2 * h)
                    scale = max(abs(num), abs(g[idx]), 1e-3)
                    worst = max(worst, abs(num - g[idx]) / scale)
        assert worst <= 1e-4

    def test_ratio_one_is_vanilla_policy_gradient(self):
        model = tiny_model(5)
        rng = np.random.default_rng(6)
        obs = rng.normal(size=(8, 2))
        mean, _ = model.forward(obs)
        act = mean + rng.normal(0, 0.3, 8)
        logp = gaussian_log_prob(act, mean, model.log_std[0])
        adv = rng.normal(size=8)
        _, pi_g, _ = ppo_loss_and_grads(model, obs, act, logp, adv, np.zeros(8))
        # vanilla PG of -mean(A * logp), by finite differences
        h = 1e-6
        for p, g in zip(model.pi.params() + [model.log_std], pi_g):
            for idx in np.ndindex(p.shape):
                orig = p[idx]
                vals = []
                for d in (h, -h):
                    p[idx] = orig + d
                    m, _ = model.forward(obs)
                    vals.append(-np.mean(adv * gaussian_log_prob(act, m, model.log_std[0])))
                p[idx] = orig
                assert g[idx] == pytest.approx((vals[0] - vals[1]) / (2 * h), rel=1e-4, abs=1e-7)

    def test_clip_saturation_zeroes_gradient(self):
        model = tiny_model(7)
        obs = np.array([[0.3, -0.2]])
        mean, _ = model.forward(obs)
        act = mean + 0.1
        logp = gaussian_log_prob(act, mean, model.log_std[0])
        old = logp - math.log(1.5)  # ratio 1.5 > 1 + eps
        _, pi_g, _ = ppo_loss_and_grads(model, obs, act, old, np.array([1.0]), np.zeros(1))
        assert all(np.all(g == 0.0) for g in pi_g)

    def test_non_finite_loss_reports_minibatch(self):
        model = tiny_model(8)
        rng = np.random.default_rng(0)
        obs, act, old, adv, ret = tiny_batch(model, rng, 8)
        ret[5] = np.nan
        batch = RolloutBatch(obs, act, np.zeros(8), np.zeros(8), old, np.zeros(8, bool), adv, ret)
        with pytest.raises(FloatingPointError, match="minibatch 0"):
            ppo_update(model, batch, PPOOptimizer(model, 3e-4), rng, minibatch_size=8)

    def test_update_moves_toward_advantage(self):
        model = tiny_model(9)
        rng = np.random.default_rng(1)
        obs = rng.normal(size=(64, 2))
        mean, val = model.forward(obs)
        act = mean + 0.3  # every action above the mean is good
        logp = gaussian_log_prob(act, mean, model.log_std[0])
        adv = np.ones(64) + rng.normal(0, 0.01, 64)
        adv[:32] = -adv[:32]
        act[:32] = mean[:32] - 0.3
        batch = RolloutBatch(obs, act, np.zeros(64), val, logp, np.zeros(64, bool), adv, val)
        ppo_update(model, batch, PPOOptimizer(model, 1e-2), rng, epochs=4, minibatch_size=64)
        new_logp = gaussian_log_prob(act, model.forward(obs)[0], model.log_std[0])
        assert np.mean(new_logp[32:] - logp[32:]) > 0
        assert np.mean(new_logp[:32] - logp[:32]) < 0


class TestTrain:
    def test_deterministic_bytes(self, tmp_path):
        cfg = TrainConfig(total_steps=4096, seed=3)
        for name in ("a", "b"):
            ckpt, _ = train(cfg, curve_path=tmp_path / f"{name}.csv")
            save_checkpoint(ckpt, tmp_path / f"{name}.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert (tmp_path / "a.csv").read_text().startswith("step,mean_episode_reward\n")
        assert read_curve_csv(tmp_path / "a.csv")[-1][0] == 4096

    def test_missing_background(self, tmp_path):
        with pytest.raises(ValueError):
            train(TrainConfig(strategy="a", lam=1.0, total_steps=64))
        with pytest.raises(FileNotFoundError):
            train(TrainConfig(strategy="b", total_steps=64, background=str(tmp_path / "nope.json")))

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(strategy="d")
        with pytest.raises(ValueError):
            TrainConfig(gamma=0.0)
        with pytest.raises(ValueError):
            TrainConfig(total_steps=0)

    def test_strategy_b_trains_against_frozen_base(self, tmp_path):
        base = PolicyCheckpoint(ActorCritic.init(30, np.random.default_rng(0)))
        save_checkpoint(base, tmp_path / "base.json")
        ckpt, _ = train(TrainConfig(strategy="B", total_steps=512, n_envs=2, background=str(tmp_path / "base.json")))
        assert ckpt.obs_dim == 32 and ckpt.strategy == "b"
