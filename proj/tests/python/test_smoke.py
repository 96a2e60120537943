import json
import math

import numpy as np
import pytest

import mcac


def test_targets():
    assert mcac.td1_target(-100.0, True, 0.99, 123.0) == -100.0
    assert mcac.td1_target(-1.0, False, 0.99, -50.0) == pytest.approx(-50.5)
    assert mcac.mcac_combine(-150.0, -100.0) == -100.0
    assert mcac.lambda_mix_target(-50.0, -100.0, 0.5) == -75.0
    # n = 1 reduces to the one-step target
    assert mcac.gqe_target([-1.0], [False], 0.99, 0.9, 1, [-40.0]) == mcac.td1_target(-1.0, False, 0.99, -40.0)
    assert mcac.critic_tail_mc_target([0.0] * 7, 0.95, 3.0) == pytest.approx(0.95**7 * 3.0)


def test_mc_inf_returns():
    assert mcac.mc_inf_returns([-1.0] * 10, 0.99) == [-1.0 / (1 - 0.99)] * 10
    v = mcac.mc_inf_returns([-1.0, -1.0, 0.0], 0.9)
    assert v == pytest.approx([-1.9, -1.0, 0.0])


def test_errors_map_to_python():
    with pytest.raises(mcac.ConfigError):
        mcac.mc_inf_returns([-1.0], 1.0)
    with pytest.raises(mcac.NumericError):
        mcac.mcac_combine(math.nan, 0.0)


def test_env_episode():
    env = mcac.NavEnv(seed=3)
    obs = env.reset()
    assert obs.shape == (2,)
    done, steps = False, 0
    while not done:
        obs, reward, done, reason = env.step(np.zeros(2))
        assert reward in (-1.0, 0.0, -100.0)
        steps += 1
    assert steps == env.horizon
    assert reason == "horizon"
    with pytest.raises(mcac.UsageError):
        env.step(np.zeros(2))


def test_demos():
    demos = mcac.generate_demos(5, 0.0, seed=1)
    assert len(demos) == 5
    for d in demos:
        assert d["obs"].shape[0] == d["act"].shape[0] + 1 == len(d["rew"]) + 1
    assert sum(d["reached_goal"] for d in demos) >= 4
    again = mcac.generate_demos(5, 0.0, seed=1)
    assert np.array_equal(demos[0]["obs"], again[0]["obs"])


def test_tiny_training_run(tmp_path):
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(
        "[agent]\nhidden = [8, 8]\nbatch_size = 16\npretrain_steps = 10\n"
        "[run]\ntotal_episodes = 2\neval_every = 0\ndemo_count = 2\n"
    )
    summary = mcac.train(str(cfg), 0, str(tmp_path / "run"))
    assert summary["episodes"] == 2
    assert summary["dominance_violations"] == 0
    metrics = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
    assert metrics[0] == mcac.METRICS_HEADER
    assert len(metrics) == 3
    csv = mcac.dump_qs(str(tmp_path / "run" / "checkpoint"))
    header = csv.splitlines()[0].split(",")
    assert header[-4:] == ["mc_inf_return", "q_bellman", "q_gqe", "q_mcac"]
    json.dumps(summary)
