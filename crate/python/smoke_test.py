"""Smoke test for the scaffold_py extension.

Build and install it first, e.g.

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml   # in a virtualenv

then run ``python python/smoke_test.py``.
"""

import json
import math

import scaffold_py as sp


def check_bandit():
    z = sp.Zooming([0.0], [1.0], h=0.1, horizon=500, seed=3)
    for _ in range(500):
        _, action, _ = z.select()
        z.update(action, 1.0 if 0.6 <= action[0] < 0.7 else 0.0)
    assert z.t == 500
    assert all(z.is_covered([i / 40]) for i in range(41))
    best = max(z.balls(), key=lambda b: (b[2], b[3]))
    print(f"bandit: {len(z.balls())} balls, most-sampled ball at {best[1][0]:.3f}")


def check_cem():
    best, value = sp.cem_argmax(lambda x: -(x[0] - 0.3) ** 2 - (x[1] + 0.2) ** 2, [-1, -1], [1, 1], seed=1)
    assert abs(best[0] - 0.3) < 0.02 and abs(best[1] + 0.2) < 0.02, best
    try:
        sp.cem_argmax(lambda x: 1 / 0, [0], [1])
    except ZeroDivisionError:
        pass
    else:
        raise AssertionError("callback errors must propagate")
    print(f"cem: argmax {best}, value {value:.2e}")


def check_qmodel():
    poses = [[i / 10, j / 10, 0.0] for i in range(11) for j in range(11)]
    rewards = [math.exp(-((x - 0.7) ** 2 + (y - 0.4) ** 2) / 0.05) for x, y, _ in poses]
    m = sp.QModel.fit([[] for _ in poses], poses, rewards, [0, 0, -1], [1, 1, 1], bandwidth=0.2, ridge=1e-6)
    (x, y, _), _ = m.best_pose([], seed=0)
    assert abs(x - 0.7) < 0.05 and abs(y - 0.4) < 0.05, (x, y)
    again = sp.QModel.from_json(m.to_json())
    assert again.predict([], [0.5, 0.5, 0.0]) == m.predict([], [0.5, 0.5, 0.0])
    grid = m.qmap([], 0.0, 21)
    assert len(grid) == 21 and len(grid[0]) == 21
    print(f"qmodel: argmax ({x:.3f}, {y:.3f}), train rmse {m.train_rmse:.2e}")


def check_env_and_training():
    env = sp.Env("insertion", fixture="optimal", seed=0)
    obs = env.reset()
    assert len(obs) == env.obs_dim
    done, steps = False, 0
    while not done:
        obs, reward, done, success = env.step([0.0] * env.action_dim)
        steps += 1
        assert reward in (0.0, 5.0, -1.0)
    out = sp.train("insertion", fixture="optimal", total_steps=3000, seed=0, eval_interval=1000, eval_episodes=10)
    assert [row[0] for row in out["curve"]] == [0, 1000, 2000, 3000]
    assert isinstance(json.loads(out["policy_json"]), dict)
    print(f"env: idle episode lasted {steps} steps; short training final success {out['final_success']:.2f}")


def check_outer_and_schedule():
    out = sp.outer_loop("insertion", rounds=3, inner_episodes=4, seed=0)
    assert len(out["records"]) == 3
    pose, _ = out["model"].best_pose([])
    assert len(pose) == 3
    assert sp.fixture_offset(0) == [0.0, 0.0, 0.0]
    assert abs(sp.fixture_offset(4000)[0] - 0.02) < 1e-15
    assert sp.fixture_offset(1999) == [0.0, 0.0, 0.0]
    print(f"outer: 3 rounds, test-time pose {[round(p, 4) for p in pose]}")


if __name__ == "__main__":
    check_bandit()
    check_cem()
    check_qmodel()
    check_env_and_training()
    check_outer_and_schedule()
    print("smoke test passed")
