"""Dry run of the single-image acceptance workload with drift telemetry.

Trains the gamma-darkened synthetic scene for the full 1000 iterations on
one thread, printing wall time and the current CPU clock every 100
iterations (to separate code-cost drift from machine frequency drift), then
evaluates the three quality criteria the acceptance check asserts.
"""

import time
from pathlib import Path

import numpy as np

from relight import agent as agent_mod
from relight import metrics, nn
from relight.images import gamma_darken, synthetic_scene
from relight.losses import LossWeights, evaluate_state
from relight.training import TrainConfig, a3c_gradients, discounted_returns, rollout
from relight.training import enhance_image


def cpu_mhz() -> float:
    for line in Path("/proc/cpuinfo").read_text().splitlines():
        if line.startswith("cpu MHz"):
            return float(line.split(":")[1])
    return 0.0


def main() -> None:
    scene = synthetic_scene(128, 128, seed=0)
    low = gamma_darken(scene, 2.5)
    config = TrainConfig(seed=0).resolved(1000, 8)
    params = agent_mod.init_params(agent_mod.AgentConfig(layers=4, seed=0))
    rng = np.random.default_rng(config.seed)
    state = nn.init_adam(params.flat(), lr=config.lr)
    nn.configure_allocator()
    ws = nn.Workspace()

    t0 = time.perf_counter()
    tprev = t0
    for it in range(1000):
        traj = rollout(params, low, config, rng, keep_caches=True, ws=ws)
        returns = discounted_returns(traj, config.gamma)
        grads = a3c_gradients(params, traj, returns, config.entropy_weight, ws=ws)
        params = params.replace_flat(nn.adam_step(params.flat(), grads, state))
        del traj
        ws.recycle()
        if (it + 1) % 100 == 0:
            now = time.perf_counter()
            print(
                f"iter {it+1:4d}: {now - t0:6.1f}s total, "
                f"{(now - tprev) * 10:5.0f} ms/iter, cpu {cpu_mhz():.0f} MHz"
            )
            tprev = now
    dt = time.perf_counter() - t0

    enhanced = enhance_image(params, low, steps=8)
    w = LossWeights()
    total_enh = evaluate_state(enhanced, low, None, w)[0].total
    total_raw = evaluate_state(low, low, None, w)[0].total
    mean_i = float(enhanced.mean())
    psnr_enh = metrics.psnr(enhanced, scene)
    psnr_raw = metrics.psnr(low, scene)
    print(
        f"total {dt:.1f}s; L {total_enh:.3f} vs raw {total_raw:.3f}; "
        f"mean {mean_i:.3f}; PSNR {psnr_enh:.2f} vs raw {psnr_raw:.2f}"
    )


if __name__ == "__main__":
    main()
