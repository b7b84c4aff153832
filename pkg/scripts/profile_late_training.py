"""Measure how per-iteration training cost drifts as the policy sharpens.

Trains the acceptance scene for a while, then times a window of iterations
and reports (a) ms/iter early vs late, (b) the policy's logit spread and how
much of the softmax table sits at the sampler's shift floor, (c) the
fraction of subnormal float32 values among the exp weights, which is the
usual culprit when late-training iterations slow down (subnormal arithmetic
takes microcode assists; the floor exists to prevent exactly that).
"""

import time

import numpy as np

from relight import agent as agent_mod
from relight import nn
from relight.images import gamma_darken, synthetic_scene
from relight.training import TrainConfig, a3c_gradients, discounted_returns, rollout

SUBNORMAL_MAX = float(np.finfo(np.float32).tiny)


def subnormal_fraction(x: np.ndarray) -> float:
    ax = np.abs(x.astype(np.float32, copy=False))
    return float(((ax > 0.0) & (ax < SUBNORMAL_MAX)).mean())


def main() -> None:
    scene = synthetic_scene(128, 128, seed=0)
    low = gamma_darken(scene, 2.5)
    config = TrainConfig(seed=0).resolved(1000, 8)
    params = agent_mod.init_params(agent_mod.AgentConfig(layers=4, seed=0))
    rng = np.random.default_rng(config.seed)
    state = nn.init_adam(params.flat(), lr=config.lr)
    nn.configure_allocator()
    ws = nn.Workspace()

    def one_iter():
        nonlocal params
        traj = rollout(params, low, config, rng, keep_caches=True, ws=ws)
        returns = discounted_returns(traj, config.gamma)
        grads = a3c_gradients(params, traj, returns, config.entropy_weight, ws=ws)
        params = params.replace_flat(nn.adam_step(params.flat(), grads, state))
        del traj
        ws.recycle()

    def probe(tag: str) -> None:
        # one un-timed iteration's worth of tensors, inspected before release
        traj = rollout(params, low, config, rng, keep_caches=True, ws=ws)
        step = traj.steps[-1]
        stats = step.stats
        spread = float(stats.shifted.min())
        floored = float((stats.shifted <= agent_mod.SHIFT_FLOOR).mean())
        sub_expw = subnormal_fraction(stats.expw)
        logits, _ = agent_mod.forward(step.state, params, ws=ws)
        gmax = float(logits.max() - logits.min())
        print(
            f"[{tag}] logit spread {gmax:.1f}, shifted.min {spread:.1f}, "
            f"at clamp {floored:.3f}, subnormal expw {sub_expw:.4f}"
        )
        del traj
        ws.recycle()

    def timed(n: int) -> float:
        t0 = time.perf_counter()
        for _ in range(n):
            one_iter()
        return (time.perf_counter() - t0) / n * 1000.0

    for _ in range(3):
        one_iter()
    probe("iter ~3")
    print(f"early: {timed(20):.1f} ms/iter")
    done = 23
    for stop in (150, 300, 500):
        while done < stop:
            one_iter()
            done += 1
        probe(f"iter {done}")
        print(f"at {done}: {timed(20):.1f} ms/iter")
        done += 20


if __name__ == "__main__":
    main()
