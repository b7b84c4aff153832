"""HTTP session service for interactive stepping with a frozen policy.

A session pins one raw upload, one checkpoint and the curve/loss settings;
its history is the state sequence s_0..s_t, where s_0 is the raw input.
States already in the history are immutable: stepping appends, rewinding
truncates, and reweighting only changes how future states are scored (the
policy never sees the weights, so greedy pixels are unaffected). Frames
travel as base64 PNG so clients never do image arithmetic.

Per-session operations are serialized behind a lock; distinct sessions are
independent. Sessions idle past the timeout are dropped on the next access.
"""

from __future__ import annotations

import base64
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Form, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import agent as agent_mod
from .curves import CurveConfig
from .errors import CheckpointError, ContractError, DenoiserError, ImageError
from .images import decode_png, encode_png
from .losses import LossBreakdown, LossWeights, evaluate_state
from .refine import DenoiserSpec, noise_level_map, refine
from .training import load_checkpoint, policy_step

IDLE_TIMEOUT = 30 * 60.0  # seconds a session may sit untouched
CHECKPOINT_SUFFIX = ".ckpt"


class ServiceError(Exception):
    """Becomes the wire error shape {code, message} with the given status."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class StepRecord:
    """One state in a session history, with the report frozen at creation."""

    image: np.ndarray  # (H,W,3) float32
    step: int
    rf_applied: bool
    breakdown: LossBreakdown
    mean_reward: float
    weights: LossWeights  # weights the report was scored with


@dataclass
class Session:
    id: str
    raw: np.ndarray
    checkpoint: str
    params: agent_mod.AgentParams
    mode: str  # greedy | sampled
    seed: int | None
    curve: CurveConfig
    weights: LossWeights
    history: list[StepRecord]
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_used: float = field(default_factory=time.monotonic)


class CheckpointStore:
    """Lazy-loading registry over a directory of checkpoint files."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._cache: dict[str, agent_mod.AgentParams] = {}
        self._lock = threading.Lock()

    def ids(self) -> list[str]:
        if not self.directory.is_dir():
            return []
        return sorted(p.stem for p in self.directory.glob(f"*{CHECKPOINT_SUFFIX}"))

    def load(self, ckpt_id: str) -> agent_mod.AgentParams:
        with self._lock:
            if ckpt_id not in self._cache:
                path = self.directory / f"{ckpt_id}{CHECKPOINT_SUFFIX}"
                if "/" in ckpt_id or not path.is_file():
                    raise ServiceError(404, "unknown_checkpoint", f"no checkpoint {ckpt_id!r}")
                self._cache[ckpt_id] = load_checkpoint(path)
            return self._cache[ckpt_id]

    def describe(self) -> list[dict]:
        out = []
        for cid in self.ids():
            cfg = self.load(cid).config
            out.append({"id": cid, "layers": cfg.layers, "hidden": cfg.hidden, "actions": cfg.actions})
        return out


class SessionManager:
    def __init__(
        self,
        store: CheckpointStore,
        idle_timeout: float = IDLE_TIMEOUT,
        denoiser: DenoiserSpec | None = None,
    ):
        self.store = store
        self.idle_timeout = idle_timeout
        self.denoiser = denoiser or DenoiserSpec()
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def _sweep(self, now: float) -> None:
        dead = [sid for sid, s in self._sessions.items() if now - s.last_used > self.idle_timeout]
        for sid in dead:
            del self._sessions[sid]

    def create(
        self,
        image: np.ndarray,
        checkpoint: str,
        mode: str = "greedy",
        seed: int | None = None,
    ) -> Session:
        if mode not in ("greedy", "sampled"):
            raise ServiceError(400, "bad_mode", f"mode must be greedy or sampled, got {mode!r}")
        if mode == "sampled" and seed is None:
            raise ServiceError(400, "bad_mode", "sampled mode needs an explicit seed")
        params = self.store.load(checkpoint)
        weights = LossWeights()
        raw = np.ascontiguousarray(image, dtype=np.float32)
        breakdown, reward = evaluate_state(raw, raw, None, weights)
        record = StepRecord(raw, 0, False, breakdown, float(reward.mean()), weights)
        session = Session(
            id=uuid.uuid4().hex,
            raw=raw,
            checkpoint=checkpoint,
            params=params,
            mode=mode,
            seed=seed,
            curve=CurveConfig(),
            weights=weights,
            history=[record],
        )
        with self._lock:
            self._sweep(time.monotonic())
            self._sessions[session.id] = session
        return session

    def get(self, sid: str) -> Session:
        with self._lock:
            now = time.monotonic()
            self._sweep(now)
            session = self._sessions.get(sid)
            if session is None:
                raise ServiceError(404, "unknown_session", f"no session {sid!r}")
            session.last_used = now
            return session

    def step(self, sid: str, apply_rf: bool = False) -> StepRecord:
        session = self.get(sid)
        with session.lock:
            latest = session.history[-1]
            k = latest.step + 1
            # step t = k-1 reseeds from (seed, t), so a rewound step replays
            # identically and matches the one-shot enhancement path
            rng = (
                np.random.default_rng([session.seed, k - 1])
                if session.mode == "sampled"
                else None
            )
            state, applied, _ = policy_step(
                session.params, latest.image, session.raw, session.curve,
                mode=session.mode, rng=rng,
            )
            if apply_rf:
                level = noise_level_map(state, session.raw)
                state = np.ascontiguousarray(refine(state, level, self.denoiser), dtype=np.float32)
            breakdown, reward = evaluate_state(state, session.raw, applied, session.weights)
            record = StepRecord(
                state, k, bool(apply_rf), breakdown, float(reward.mean()), session.weights
            )
            session.history.append(record)
            return record

    def rewind(self, sid: str, to_step: int) -> StepRecord:
        session = self.get(sid)
        with session.lock:
            current = session.history[-1].step
            if to_step < 0 or to_step > current:
                raise ServiceError(400, "bad_step", f"to_step must be in [0, {current}], got {to_step}")
            del session.history[to_step + 1 :]
            return session.history[-1]

    def reweight(self, sid: str, weights: LossWeights) -> LossWeights:
        session = self.get(sid)
        with session.lock:
            session.weights = weights
            return weights

    def state(self, sid: str, k: int) -> StepRecord:
        session = self.get(sid)
        with session.lock:
            current = session.history[-1].step
            if k < 0 or k > current:
                raise ServiceError(404, "unknown_state", f"no state {k} (history tops out at {current})")
            return session.history[k]


def state_view(record: StepRecord) -> dict:
    return {
        "step": record.step,
        "png_b64": base64.b64encode(encode_png(record.image)).decode("ascii"),
        "breakdown": record.breakdown.as_dict(),
        "mean_reward": record.mean_reward,
        "metadata": {
            "step": record.step,
            "rf_applied": record.rf_applied,
            "weights": record.weights.as_dict(),
        },
    }


class StepBody(BaseModel):
    apply_rf: bool = False


class RewindBody(BaseModel):
    to_step: int


class WeightsBody(BaseModel):
    spa: float
    exp: float
    tva: float
    crl: float


def create_app(
    checkpoint_dir: str | Path,
    idle_timeout: float = IDLE_TIMEOUT,
    denoiser: DenoiserSpec | None = None,
) -> FastAPI:
    manager = SessionManager(CheckpointStore(checkpoint_dir), idle_timeout, denoiser)
    app = FastAPI(title="relight", docs_url=None, redoc_url=None)
    app.state.manager = manager

    @app.exception_handler(ServiceError)
    def _service_error(request: Request, exc: ServiceError):
        return JSONResponse({"code": exc.code, "message": exc.message}, status_code=exc.status)

    @app.exception_handler(RequestValidationError)
    def _validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse({"code": "bad_request", "message": str(exc)}, status_code=400)

    @app.exception_handler(ContractError)
    def _contract_error(request: Request, exc: ContractError):
        return JSONResponse({"code": "bad_request", "message": str(exc)}, status_code=400)

    @app.exception_handler(CheckpointError)
    def _checkpoint_error(request: Request, exc: CheckpointError):
        return JSONResponse({"code": "bad_checkpoint", "message": str(exc)}, status_code=400)

    @app.exception_handler(DenoiserError)
    def _denoiser_error(request: Request, exc: DenoiserError):
        return JSONResponse({"code": "denoiser_failed", "message": str(exc)}, status_code=502)

    @app.post("/sessions", status_code=201)
    def create_session(
        image: UploadFile = File(...),
        checkpoint: str = Form(...),
        mode: str = Form("greedy"),
        seed: int | None = Form(None),
    ):
        data = image.file.read()
        try:
            pixels = decode_png(data)
        except ImageError as exc:
            raise ServiceError(400, "bad_image", str(exc)) from exc
        session = manager.create(pixels, checkpoint, mode=mode, seed=seed)
        return {"id": session.id, "state": state_view(session.history[0])}

    @app.post("/sessions/{sid}/step")
    def step_session(sid: str, body: StepBody | None = None):
        record = manager.step(sid, apply_rf=body.apply_rf if body else False)
        return state_view(record)

    @app.post("/sessions/{sid}/rewind")
    def rewind_session(sid: str, body: RewindBody):
        record = manager.rewind(sid, body.to_step)
        return state_view(record)

    @app.put("/sessions/{sid}/weights")
    def reweight_session(sid: str, body: WeightsBody):
        try:
            weights = LossWeights(spa=body.spa, exp=body.exp, tva=body.tva, crl=body.crl)
        except ContractError as exc:
            raise ServiceError(400, "bad_weights", str(exc)) from exc
        return {"weights": manager.reweight(sid, weights).as_dict()}

    @app.get("/sessions/{sid}/state/{k}")
    def get_state(sid: str, k: int):
        return state_view(manager.state(sid, k))

    @app.get("/checkpoints")
    def list_checkpoints():
        return manager.store.describe()

    return app
