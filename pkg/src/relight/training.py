"""Episode rollout, discounted returns, actor-critic gradients, training loops.

An episode unrolls the frozen-architecture agent for N steps on one image:
forward -> sample -> channel coupling -> curve -> skip blend -> reward. The
reward of a transition is the negative weighted per-pixel loss of the state it
lands in, measured against the episode's raw input. Gradients follow the
advantage actor-critic estimator with stored (pre-update) value baselines and
an optional entropy bonus; updates are Adam on the whole parameter set.

Checkpoints are a small self-describing container: an 8-byte magic, a JSON
manifest (version, agent config, tensor names/shapes, seed), then the raw
little-endian float32 tensors in manifest order.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import agent as agent_mod
from . import nn
from .curves import CurveConfig, enhance_step
from .errors import (
    CheckpointShapeError,
    CheckpointVersionError,
    ContractError,
    CorruptCheckpointError,
)
from .images import list_images, load_image, random_crop, validate_image
from .losses import (
    EXP_REGION,
    EXPOSURE_LEVEL,
    LossBreakdown,
    LossWeights,
    evaluate_state,
    reference_cache,
)

CHECKPOINT_MAGIC = b"RELIGHT1"
CHECKPOINT_VERSION = 1
ZERO_SHOT_MAX_PIXELS = 256 * 256

LOG_FIELDS = ["iteration", "L_spa", "L_exp", "L_tvA", "L_crl", "L_total", "mean_reward"]


@dataclass
class TrainConfig:
    """Knobs shared by both training modes.

    iterations and steps left as None are resolved by the mode entry points:
    20000 iterations x 6 steps when fitting a corpus, 1000 x 8 when overfitting
    a single image.
    """

    gamma: float = 0.95
    lr: float = 0.001
    iterations: int | None = None
    steps: int | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    curve: CurveConfig = field(default_factory=CurveConfig)
    entropy_weight: float = 0.01
    exposure_level: float = EXPOSURE_LEVEL
    seed: int = 0
    workers: int = 1
    patch: int = 128
    checkpoint_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ContractError(f"gamma must be in [0,1], got {self.gamma}")
        if self.steps is not None and self.steps < 1:
            raise ContractError(f"steps must be >= 1, got {self.steps}")
        if self.iterations is not None and self.iterations < 0:
            raise ContractError(f"iterations must be >= 0, got {self.iterations}")
        if self.workers < 1:
            raise ContractError(f"workers must be >= 1, got {self.workers}")

    def resolved(self, iterations: int, steps: int) -> "TrainConfig":
        """Fill unset episode knobs with a mode's defaults."""
        return replace(
            self,
            iterations=self.iterations if self.iterations is not None else iterations,
            steps=self.steps if self.steps is not None else steps,
        )


@dataclass
class TrajectoryStep:
    state: np.ndarray  # s_t, (H,W,3) float32
    actions: np.ndarray  # (H,W,3) int
    applied: np.ndarray  # post-coupling coefficient map fed to the curve
    logprob: np.ndarray  # (H,W) log P of the sampled actions, channels summed
    values: np.ndarray  # (H,W) V(s_t)
    reward: np.ndarray  # (H,W) reward of the transition into s_{t+1}
    breakdown: LossBreakdown | None  # losses of s_{t+1}
    stats: agent_mod.PolicyStats | None = None  # softmax table, kept with caches
    cache: agent_mod.ForwardCache | None = None


@dataclass
class Trajectory:
    raw_input: np.ndarray
    steps: list[TrajectoryStep]
    terminal_state: np.ndarray
    terminal_value: np.ndarray  # V(s_N), the bootstrap


def rollout(
    params: agent_mod.AgentParams,
    image: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
    keep_caches: bool = False,
    reward_fn=None,
    ws: nn.Workspace | None = None,
) -> Trajectory:
    """Sample an N-step trajectory from the current policy on one image.

    reward_fn(next_state, applied_map, raw_input) -> (reward map, breakdown or
    None) replaces the default non-reference scoring; the default requires the
    image to cover at least one exposure region.
    """
    validate_image(image)
    if config.steps is None:
        raise ContractError("rollout needs config.steps resolved (see TrainConfig.resolved)")
    if reward_fn is None:
        h, w = image.shape[:2]
        if h < EXP_REGION or w < EXP_REGION:
            raise ContractError(
                f"training image {h}x{w} smaller than one {EXP_REGION}x{EXP_REGION} exposure region"
            )
        ref_cache = reference_cache(image)

        def reward_fn(next_state, applied, raw):
            breakdown, reward = evaluate_state(
                next_state, raw, applied, config.weights, config.exposure_level, ref_cache
            )
            return reward, breakdown

    raw = np.ascontiguousarray(image, dtype=np.float32)
    state = raw
    steps: list[TrajectoryStep] = []
    for _ in range(config.steps):
        if keep_caches:
            logits, values, cache = agent_mod.forward(state, params, want_cache=True, ws=ws)
        else:
            logits, values = agent_mod.forward(state, params, ws=ws)
            cache = None
        actions, logprob, stats = agent_mod.sample_with_stats(logits, rng, ws=ws)
        if ws is not None:
            ws.release(logits)
            if not keep_caches:
                ws.release(stats.shifted)
                ws.release(stats.expw)
        next_state, applied = enhance_step(state, raw, actions, config.curve)
        reward, breakdown = reward_fn(next_state, applied, raw)
        steps.append(
            TrajectoryStep(
                state=state,
                actions=actions,
                applied=applied,
                logprob=logprob,
                values=values,
                reward=np.asarray(reward, dtype=np.float64),
                breakdown=breakdown,
                stats=stats if keep_caches else None,
                cache=cache,
            )
        )
        state = next_state
    terminal_value = agent_mod.value_forward(state, params, ws=ws)
    return Trajectory(raw_input=raw, steps=steps, terminal_state=state, terminal_value=terminal_value)


def discounted_returns(traj: Trajectory, gamma: float) -> np.ndarray:
    """Per-step, per-pixel discounted returns, bootstrapped with V(s_N)."""
    n = len(traj.steps)
    h, w = traj.terminal_value.shape
    returns = np.empty((n, h, w), dtype=np.float64)
    future = traj.terminal_value.astype(np.float64)
    for t in range(n - 1, -1, -1):
        future = traj.steps[t].reward + gamma * future
        returns[t] = future
    return returns


def a3c_gradients(
    params: agent_mod.AgentParams,
    traj: Trajectory,
    returns: np.ndarray,
    entropy_weight: float = 0.0,
    ws: nn.Workspace | None = None,
) -> list[np.ndarray]:
    """Combined policy/value gradients over the whole parameter set.

    Per step and pixel the objective is (return - V)^2 for the value head and
    -logP(actions) * advantage - beta * entropy for the policy head, with the
    advantage treated as a constant; both terms are averaged over pixels and
    steps, and every step must carry forward caches. The stored softmax
    tables are consumed in place; with a workspace the trajectory's scratch
    is released as it is used.
    """
    n = len(traj.steps)
    if returns.shape[0] != n:
        raise ContractError(f"returns cover {returns.shape[0]} steps, trajectory has {n}")
    total: list[np.ndarray] | None = None
    rows: np.ndarray | None = None  # flat (pixel, channel) base indices, same every step
    for t, step in enumerate(traj.steps):
        if step.cache is None or step.stats is None:
            raise ContractError("a3c_gradients needs a rollout with keep_caches=True")
        h, w = step.values.shape
        scale = 1.0 / (n * h * w)
        advantage = returns[t] - step.values.astype(np.float64)
        d_values = (-2.0 * scale) * advantage

        stats = step.stats
        expw = stats.expw
        sums = stats.sums
        sadv = (scale * advantage).astype(expw.dtype)
        # -scale*adv*(onehot - probs) - beta*scale*dH folds into
        # probs * (sadv + beta*scale*(logp + H)) minus sadv at the sampled
        # action; with probs = expw/sums and logp = shifted - ln(sums) this
        # regroups as expw * (beta*scale/sums * shifted + F) for a per-row
        # field F, so the big tensors take three passes instead of six and
        # neither probabilities nor log-probabilities are materialized
        if entropy_weight != 0.0:
            beta_s = entropy_weight * scale
            logsums = np.log(sums)
            # sum_a probs*logp = (sum_a expw*shifted)/sums - ln(sums)
            plogp = np.einsum("hwca,hwca->hwc", expw, stats.shifted)
            plogp /= sums
            plogp -= logsums
            coef = beta_s / sums
            field = (sadv[:, :, None] - beta_s * (logsums + plogp)) / sums
            work = stats.shifted
            work *= coef[..., None]
            work += field[..., None]
            d_logits = np.multiply(expw, work, out=expw)
        else:
            d_logits = np.multiply(expw, (sadv[:, :, None] / sums)[..., None], out=expw)
        # subtract sadv at each sampled action via one flat fancy index
        n_act = d_logits.shape[-1]
        if rows is None:
            rows = np.arange(h * w * 3, dtype=np.intp) * n_act
        flat_idx = rows + step.actions.reshape(-1)
        d_logits.reshape(-1)[flat_idx] -= np.repeat(sadv.reshape(-1), 3)

        grads = agent_mod.backward(params, step.cache, d_logits, d_values, ws=ws)
        if ws is not None:
            ws.release(stats.expw)
            ws.release(stats.shifted)
        if total is None:
            total = grads
        else:
            for acc, g in zip(total, grads):
                acc += g
    assert total is not None
    return total


@dataclass
class TrainResult:
    params: agent_mod.AgentParams
    log: list[dict]


def _log_row(iteration: int, breakdown: LossBreakdown, mean_reward: float) -> dict:
    return {
        "iteration": iteration,
        "L_spa": breakdown.spa,
        "L_exp": breakdown.exp,
        "L_tvA": breakdown.tva,
        "L_crl": breakdown.crl,
        "L_total": breakdown.total,
        "mean_reward": mean_reward,
    }


def _write_log(log: list[dict], path: Path | str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=LOG_FIELDS)
        writer.writeheader()
        writer.writerows(log)


def _train_loop(
    params: agent_mod.AgentParams,
    pick_image,
    config: TrainConfig,
    out_path: Path | None,
) -> TrainResult:
    if config.iterations is None or config.steps is None:
        raise ContractError("training needs iterations and steps resolved")
    rng = np.random.default_rng(config.seed)
    state = nn.init_adam(params.flat(), lr=config.lr)
    nn.configure_allocator()
    ws = nn.Workspace()
    log: list[dict] = []
    for it in range(config.iterations):
        image = pick_image(rng)
        traj = rollout(params, image, config, rng, keep_caches=True, ws=ws)
        returns = discounted_returns(traj, config.gamma)
        grads = a3c_gradients(params, traj, returns, config.entropy_weight, ws=ws)
        params = params.replace_flat(nn.adam_step(params.flat(), grads, state))
        mean_reward = float(np.mean([s.reward.mean() for s in traj.steps]))
        final = traj.steps[-1].breakdown
        assert final is not None
        log.append(_log_row(it, final, mean_reward))
        del traj
        ws.recycle()
        if (
            out_path is not None
            and config.checkpoint_every > 0
            and (it + 1) % config.checkpoint_every == 0
            and (it + 1) < config.iterations
        ):
            periodic = out_path.with_name(f"{out_path.stem}-{it + 1:06d}{out_path.suffix}")
            save_checkpoint(params, periodic)
    if out_path is not None:
        save_checkpoint(params, out_path)
    return TrainResult(params=params, log=log)


def train_unsupervised(
    data_dir: str | Path,
    config: TrainConfig,
    agent_config: agent_mod.AgentConfig | None = None,
    out_path: str | Path | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Train on random crops from a directory of low-light images."""
    config = config.resolved(iterations=20000, steps=6)
    paths = list_images(data_dir)
    if not paths:
        raise ContractError(f"no training images found in {data_dir}")
    images = [load_image(p) for p in paths]
    if agent_config is None:
        agent_config = agent_mod.AgentConfig(layers=7, seed=config.seed)
    params = agent_mod.init_params(agent_config)

    def pick_image(rng: np.random.Generator) -> np.ndarray:
        img = images[int(rng.integers(len(images)))]
        if img.shape[0] > config.patch and img.shape[1] > config.patch:
            img = random_crop(img, config.patch, rng)
        return img

    result = _train_loop(params, pick_image, config, Path(out_path) if out_path else None)
    if log_path is not None:
        _write_log(result.log, log_path)
    return result


def train_zero_shot(
    image: np.ndarray | str | Path,
    config: TrainConfig,
    agent_config: agent_mod.AgentConfig | None = None,
    out_path: str | Path | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Overfit the light agent to a single image (nothing else is observed)."""
    config = config.resolved(iterations=1000, steps=8)
    if isinstance(image, (str, Path)):
        image = load_image(image)
    validate_image(image)
    if agent_config is None:
        agent_config = agent_mod.AgentConfig(layers=4, seed=config.seed)
    params = agent_mod.init_params(agent_config)
    oversized = image.shape[0] * image.shape[1] > ZERO_SHOT_MAX_PIXELS

    def pick_image(rng: np.random.Generator) -> np.ndarray:
        if oversized:
            return random_crop(image, config.patch, rng)
        return image

    result = _train_loop(params, pick_image, config, Path(out_path) if out_path else None)
    if log_path is not None:
        _write_log(result.log, log_path)
    return result


def policy_step(
    params: agent_mod.AgentParams,
    state: np.ndarray,
    raw_input: np.ndarray,
    curve: CurveConfig,
    mode: str = "greedy",
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One inference step; returns (next state, applied map, actions)."""
    logits, _ = agent_mod.forward(state, params)
    if mode == "greedy":
        actions = agent_mod.greedy_actions(logits)
    elif mode == "sampled":
        if rng is None:
            raise ContractError("sampled mode needs an explicit rng")
        actions, _ = agent_mod.sample_actions(logits, rng)
    else:
        raise ContractError(f"unknown mode {mode!r} (expected 'greedy' or 'sampled')")
    next_state, applied = enhance_step(state, raw_input, actions, curve)
    return next_state, applied, actions


def enhance_image(
    params: agent_mod.AgentParams,
    image: np.ndarray,
    steps: int,
    curve: CurveConfig | None = None,
    mode: str = "greedy",
    seed: int | None = None,
    post_step=None,
) -> np.ndarray:
    """Run the frozen policy for a number of steps (greedy unless seeded).

    post_step(state, step_index) -> state may transform each new state, which
    is how optional refinement hooks in.
    """
    validate_image(image)
    curve = curve or CurveConfig()
    raw = np.ascontiguousarray(image, dtype=np.float32)
    state = raw
    for t in range(steps):
        rng = np.random.default_rng([seed, t]) if mode == "sampled" else None
        state, _, _ = policy_step(params, state, raw, curve, mode=mode, rng=rng)
        if post_step is not None:
            state = np.ascontiguousarray(post_step(state, t + 1), dtype=np.float32)
    return state


def save_checkpoint(params: agent_mod.AgentParams, path: str | Path) -> None:
    tensors = params.flat()
    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": params.config.as_dict(),
        "seed": params.config.seed,
        "tensors": [
            {"name": name, "shape": list(t.shape)}
            for name, t in zip(params.tensor_names(), tensors)
        ],
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for t in tensors:
            f.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> agent_mod.AgentParams:
    data = Path(path).read_bytes()
    if len(data) < len(CHECKPOINT_MAGIC) + 4 or not data.startswith(CHECKPOINT_MAGIC):
        raise CorruptCheckpointError(f"{path}: not a checkpoint (bad magic)")
    offset = len(CHECKPOINT_MAGIC)
    (manifest_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if len(data) < offset + manifest_len:
        raise CorruptCheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[offset : offset + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpointError(f"{path}: unreadable manifest: {e}") from e
    offset += manifest_len

    version = manifest.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {version!r}, expected {CHECKPOINT_VERSION}"
        )
    try:
        config = agent_mod.AgentConfig(**manifest["config"])
        entries = manifest["tensors"]
    except (KeyError, TypeError, ContractError) as e:
        raise CorruptCheckpointError(f"{path}: malformed manifest: {e}") from e

    template = agent_mod.init_params(config)
    expected = {name: t.shape for name, t in zip(template.tensor_names(), template.flat())}
    if [e.get("name") for e in entries] != list(expected):
        raise CheckpointShapeError(f"{path}: tensor list does not match config {config}")
    arrays: list[np.ndarray] = []
    for entry in entries:
        shape = tuple(entry["shape"])
        if shape != expected[entry["name"]]:
            raise CheckpointShapeError(
                f"{path}: {entry['name']} has shape {shape}, expected {expected[entry['name']]}"
            )
        nbytes = int(np.prod(shape)) * 4
        if len(data) < offset + nbytes:
            raise CorruptCheckpointError(f"{path}: truncated tensor data at {entry['name']}")
        arr = np.frombuffer(data[offset : offset + nbytes], dtype="<f4").reshape(shape)
        arrays.append(arr.copy())
        offset += nbytes
    if offset != len(data):
        raise CorruptCheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return template.replace_flat(arrays)
