"""Per-phase timing of one training iteration, early vs late in a run.

Breaks an iteration into rollout sub-phases (forward, sample, enhance,
reward) and whole-iteration phases (rollout, returns, gradients, adam), and
reports each at two training depths so any phase whose cost drifts with the
sharpening policy stands out. Also reports the denormal-float fraction of
the gradient tensors and Adam moments, the usual cause of such drift.
"""

import time

import numpy as np

from relight import agent as agent_mod
from relight import nn
from relight.curves import enhance_step
from relight.images import gamma_darken, synthetic_scene
from relight.losses import LossWeights, evaluate_state, reference_cache
from relight.training import TrainConfig, a3c_gradients, discounted_returns, rollout

SUB = float(np.finfo(np.float32).tiny)


def subfrac(x) -> float:
    ax = np.abs(np.asarray(x, dtype=np.float32))
    return float(((ax > 0.0) & (ax < SUB)).mean())


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

    def timed_split(reps: int = 6) -> None:
        t_roll = t_grad = t_adam = 0.0
        grads = None
        for _ in range(reps):
            t0 = time.perf_counter()
            traj = rollout(params, low, config, rng, keep_caches=True, ws=ws)
            t1 = time.perf_counter()
            returns = discounted_returns(traj, config.gamma)
            grads = a3c_gradients(params, traj, returns, config.entropy_weight, ws=ws)
            t2 = time.perf_counter()
            nn.adam_step(params.flat(), grads, state)
            t3 = time.perf_counter()
            t_roll += t1 - t0
            t_grad += t2 - t1
            t_adam += t3 - t2
            del traj
            ws.recycle()
        print(
            f"  rollout {t_roll/reps*1000:7.1f}  grads {t_grad/reps*1000:7.1f}  "
            f"adam {t_adam/reps*1000:5.1f} ms"
        )
        g = np.concatenate([a.ravel() for a in grads])
        m = np.concatenate([a.ravel() for a in state.m])
        v = np.concatenate([a.ravel() for a in state.v])
        print(
            f"  subnormal: grads {subfrac(g):.4f}  adam.m {subfrac(m):.4f}  "
            f"adam.v {subfrac(v):.4f}"
        )

    def probe_rollout() -> None:
        t = {"forward": 0.0, "sample": 0.0, "enhance": 0.0, "reward": 0.0}
        st = low
        ref_cache = reference_cache(low)
        w = LossWeights()
        sub_expw = 0.0
        for _ in range(config.steps):
            t0 = time.perf_counter()
            logits, values, cache = agent_mod.forward(st, params, want_cache=True, ws=ws)
            t1 = time.perf_counter()
            actions, logprob, stats = agent_mod.sample_with_stats(logits, rng, ws=ws)
            t2 = time.perf_counter()
            nxt, amap = enhance_step(st, low, actions, config.curve)
            t3 = time.perf_counter()
            breakdown, rmap = evaluate_state(nxt, low, amap, w, ref_cache=ref_cache)
            t4 = time.perf_counter()
            t["forward"] += t1 - t0
            t["sample"] += t2 - t1
            t["enhance"] += t3 - t2
            t["reward"] += t4 - t3
            sub_expw = subfrac(stats.expw)
            st = nxt
        ws.recycle()
        print(
            "  "
            + "  ".join(f"{k} {v*1000:6.1f}" for k, v in t.items())
            + f" ms/rollout; subnormal expw {sub_expw:.4f}"
        )

    for _ in range(3):
        one_iter()
    print("early (iter ~3):")
    probe_rollout()
    timed_split()
    done = 12
    while done < 320:
        one_iter()
        done += 1
    print("late (iter ~320):")
    probe_rollout()
    timed_split()


if __name__ == "__main__":
    main()
