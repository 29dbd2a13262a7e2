"""Browser bridge: live snapshots out, teleop commands in, episodes to disk.

A fixed-rate loop thread owns the world.  Each tick it applies the most
recent steering state (queued commands are folded in at tick boundaries,
never mid-tick), steps the world, and publishes one Snapshot frame to every
subscriber queue.  Slow or absent subscribers drop frames; they can never
block the loop, and the loop's measured cadence is exported for the
attached-vs-detached check.

Wire format: the same binary framing as the policy protocol, carried over
WebSocket binary messages (Snapshot 0x04 server to client, TeleopCmd 0x05
client to server).  Saved recordings use the dataset episode format and are
indexed into a manifest so the standard validator runs on them unchanged.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import queue
import threading
import time
from collections import deque
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .config import SceneConfig
from .core import (
    Action,
    Instruction,
    JointCommand,
    ObjectKind,
    joints_from_synergy,
    parse_instruction,
)
from .data.episodes import EpisodeStep, RawEpisode
from .orchestrator import MachineMode, PhaseMachine, PolicyTable, TaskPhase
from .policies import make_policy_set
from .sim import Camera, render, spawn_world, step_world
from .transport import FrameType, _q, _uq, encode_frame, decode_frame

__all__ = ["TeleopLoop", "create_bridge_app", "IncompleteMarkersError"]

MARKER_SEQUENCE = ("grasp", "transport", "release")


class IncompleteMarkersError(RuntimeError):
    pass


def _kv(lines: List[str]) -> bytes:
    return "\n".join(lines).encode("utf-8")


def parse_teleop_payload(payload: bytes) -> Dict[str, str]:
    out = {}
    for line in payload.decode("utf-8").splitlines():
        key, sep, value = line.partition("=")
        if sep:
            out[key] = _uq(value)
    return out


class TeleopLoop:
    """Fixed-rate world loop with teleoperation, live policy playback,
    recording, and snapshot publication."""

    def __init__(self, scene: Optional[SceneConfig] = None, tick_hz: float = 5.0,
                 out_dir: str = "teleop_episodes", seed: int = 0):
        self.scene = scene or SceneConfig()
        self.tick_hz = tick_hz
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.mode = "teleop"                 # "teleop" | "watch"
        self.world = spawn_world(self.scene, seed)
        self.tick = 0
        self.sigma_operator = 0
        self.steer = np.zeros(4)             # ax, ay, az, agrip in [-1, 1]
        self.grip_target = 0.0
        self.recording = False
        self.record_steps: List[dict] = []
        self.record_images: Dict[str, object] = {}
        self.marker_presses: List[int] = []
        self.instruction_text = "pick the tape and place it on the yellow plate"
        self.saved: List[RawEpisode] = []
        # watch-mode playback state
        self._machine: Optional[PhaseMachine] = None
        self._policies = None
        self._watch_instruction: Optional[Instruction] = None
        self._last_sigma = (0.0, 0.0)

        self._commands: "queue.Queue[Dict[str, str]]" = queue.Queue()
        self._subscribers: List["queue.Queue[bytes]"] = []
        self._subscribers_lock = threading.Lock()
        self._periods: deque = deque(maxlen=200)
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "TeleopLoop":
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def subscribe(self) -> "queue.Queue[bytes]":
        q: "queue.Queue[bytes]" = queue.Queue(maxsize=4)
        with self._subscribers_lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q) -> None:
        with self._subscribers_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def enqueue(self, command: Dict[str, str]) -> None:
        self._commands.put(command)

    def cadence(self, reset: bool = False) -> dict:
        periods = list(self._periods)
        if reset:
            self._periods.clear()
        return {
            "tick_hz": self.tick_hz,
            "ticks": self.tick,
            "mean_period_s": float(np.mean(periods)) if periods else None,
            "subscribers": len(self._subscribers),
        }

    # -- loop ----------------------------------------------------------------

    def _run(self) -> None:
        period = 1.0 / self.tick_hz
        next_tick = time.monotonic() + period
        last_start = None
        while not self._stop.is_set():
            start = time.monotonic()
            if last_start is not None:
                self._periods.append(start - last_start)
            last_start = start
            self._apply_commands()
            self._step_once()
            self._publish()
            sleep_for = next_tick - time.monotonic()
            next_tick += period
            if sleep_for > 0:
                self._stop.wait(sleep_for)
            else:
                next_tick = time.monotonic() + period

    def _apply_commands(self) -> None:
        while True:
            try:
                cmd = self._commands.get_nowait()
            except queue.Empty:
                return
            kind = cmd.get("kind")
            if kind == "steer":
                self.steer = np.clip([float(cmd.get(k, "0") or 0)
                                      for k in ("ax", "ay", "az", "agrip")], -1, 1)
            elif kind == "event":
                self.sigma_operator ^= 1
            elif kind == "marker":
                if self.recording and len(self.marker_presses) < len(MARKER_SEQUENCE):
                    self.marker_presses.append(len(self.record_steps))
            elif kind == "record":
                if cmd.get("value") == "start":
                    self.recording = True
                    self.record_steps = []
                    self.record_images = {}
                    self.marker_presses = []
                    self.sigma_operator = 0
                else:
                    self.recording = False
            elif kind == "mode":
                self.mode = cmd.get("value", "teleop")
            elif kind == "instruct":
                self._start_watch(cmd.get("text", self.instruction_text))
            elif kind == "reset":
                self._reset(int(cmd.get("seed", str(self.seed)) or self.seed))

    def _reset(self, seed: int) -> None:
        self.seed = seed
        self.world = spawn_world(self.scene, seed)
        self.tick = 0
        self.sigma_operator = 0
        self.grip_target = 0.0
        self.recording = False
        self.record_steps = []
        self.record_images = {}
        self.marker_presses = []
        self._machine = None
        self._policies = None
        self._last_sigma = (0.0, 0.0)

    def _start_watch(self, text: str) -> None:
        instruction = parse_instruction(text)
        self.instruction_text = text
        self.mode = "watch"
        self._watch_instruction = instruction
        self._reset(self.seed + 1)
        self.mode = "watch"
        self._machine = PhaseMachine(mode=MachineMode.HYBRID)
        self._policies = make_policy_set(instruction, self.scene, self.seed)

    def _step_once(self) -> None:
        dt = self.scene.dt
        if self.mode == "watch" and self._machine is not None and \
                self._machine.phase not in (TaskPhase.DONE, TaskPhase.FAILURE):
            self._step_watch(dt)
        else:
            self._step_teleop(dt)
        if self.recording:
            self._record_step()
        self.tick += 1

    def _step_teleop(self, dt: float) -> None:
        speed = self.scene.max_linear_speed
        delta = np.zeros(6)
        delta[0] = self.steer[0] * speed * dt
        delta[1] = self.steer[1] * speed * dt
        delta[2] = self.steer[2] * speed * dt
        self.grip_target = float(np.clip(self.grip_target + self.steer[3] * 1.5 * dt,
                                         0.0, 1.0))
        # Joint-space command: a teleoperated close is a shaped grasp, not
        # the generic 1-DoF power close.
        action = Action(delta, JointCommand(joints_from_synergy(self.grip_target)),
                        float(self.sigma_operator))
        step_world(self.world, action, dt)

    def _step_watch(self, dt: float) -> None:
        machine, policies = self._machine, self._policies
        instruction = self._watch_instruction
        from .sim.env import PickPlaceEnv
        # Build the observation in place (the loop owns the world directly).
        from .core import HandState, Observation
        obs = Observation(arm=self.world.hand,
                          hand=HandState(np.array(self.world.joints, copy=True)),
                          instruction=instruction, tick=self.tick)
        truth = _truth_of(self.world, self.seed)
        policy = policies[machine.active_policy()]
        action = policy.act(obs, truth, machine.phase)
        result = machine.tick(PolicyTable.default(), obs, action)
        step_world(self.world, result.command, dt)
        self._last_sigma = (machine.sigma_vla, machine.sigma_grasp)

    def _record_step(self) -> None:
        t = len(self.record_steps)
        cam1 = f"frames/t{t:04d}_cam1.ppm"
        cam2 = f"frames/t{t:04d}_cam2.ppm"
        self.record_images[cam1] = render(self.world, Camera.CAM1_STATIC)
        self.record_images[cam2] = render(self.world, Camera.CAM2_WRIST)
        self.record_steps.append({
            "tick": t,
            "arm": tuple(float(v) for v in self.world.hand.as_array()),
            "joints": tuple(float(v) for v in self.world.joints),
            "synergy": float(self.world.synergy),
            "sigma_operator": self.sigma_operator,
            "cam1": cam1,
            "cam2": cam2,
        })

    # -- snapshots -----------------------------------------------------------

    def snapshot_payload(self) -> bytes:
        w = self.world
        lines = [
            f"tick={self.tick}",
            f"mode={self.mode}",
            f"phase={self._machine.phase.value if self._machine else '-'}",
            f"recording={int(self.recording)}",
            f"sigma_operator={self.sigma_operator}",
            f"sigma_vla={repr(self._last_sigma[0])}",
            f"sigma_grasp={repr(self._last_sigma[1])}",
            f"arm={' '.join(repr(float(v)) for v in w.hand.as_array())}",
            f"synergy={repr(w.synergy)}",
            f"grip_target={repr(self.grip_target)}",
            f"attached={w.attached or '-'}",
            f"instruction={_q(self.instruction_text)}",
            f"markers={' '.join(str(m) for m in self.marker_presses)}",
            f"steps_recorded={len(self.record_steps)}",
            f"table={repr(self.scene.table_x[0])} {repr(self.scene.table_x[1])} "
            f"{repr(self.scene.table_y_back)}",
            f"plate_radius={repr(self.scene.plate_radius)}",
        ]
        for color, (px, py) in sorted(self.scene.plate_centers.items(),
                                      key=lambda kv: kv[0].value):
            lines.append(f"plate.{color.value}={repr(px)} {repr(py)}")
        for obj in sorted(w.objects, key=lambda o: o.name):
            lines.append(
                f"obj.{obj.name}={obj.kind.value} {repr(obj.x)} {repr(obj.y)} "
                f"{repr(obj.z)} {int(obj.fallen)}")
        return _kv(lines)

    def _publish(self) -> None:
        frame = encode_frame(FrameType.SNAPSHOT, self.tick, self.snapshot_payload())
        with self._subscribers_lock:
            subscribers = list(self._subscribers)
        for q in subscribers:
            try:
                q.put_nowait(frame)
            except queue.Full:
                try:
                    q.get_nowait()
                except queue.Empty:
                    pass
                try:
                    q.put_nowait(frame)
                except queue.Full:
                    pass

    # -- saving ---------------------------------------------------------------

    def save_episode(self, set_name: str = "vla",
                     episode_id: Optional[str] = None) -> Path:
        if self.recording:
            raise IncompleteMarkersError("stop the recording before saving")
        if not self.record_steps:
            raise IncompleteMarkersError("nothing recorded")
        n = len(self.record_steps)
        if set_name == "vla":
            if len(self.marker_presses) != len(MARKER_SEQUENCE):
                raise IncompleteMarkersError(
                    f"need {len(MARKER_SEQUENCE)} marker presses "
                    f"(grasp/transport/release starts), got {len(self.marker_presses)}")
            bounds = [0] + list(self.marker_presses) + [n]
            names = ("approach",) + MARKER_SEQUENCE
            markers = [(name, bounds[i], bounds[i + 1]) for i, name in enumerate(names)]
            instruction = parse_instruction(self.instruction_text)
            object_kind, plate = instruction.object.value, instruction.plate.value
        else:
            markers = [("grasp", 0, n)]
            instruction = parse_instruction(self.instruction_text)
            object_kind, plate = instruction.object.value, None

        count = len(self.saved)
        episode_id = episode_id or f"teleop-{set_name}-{object_kind}-{count:03d}"
        episode = RawEpisode(
            episode_id=episode_id,
            set_name=set_name,
            object_kind=object_kind,
            plate=plate,
            instruction=self.instruction_text,
            seed=self.seed,
            operator="teleop",
            tick_hz=self.tick_hz,
            camera=(self.scene.camera_width, self.scene.camera_height),
            markers=markers,
            steps=[EpisodeStep(**s) for s in self.record_steps],
            images=dict(self.record_images),
        )
        episodes_dir = self.out_dir / "episodes"
        episode.save(episodes_dir)
        self.saved.append(episode)
        self._write_manifest()
        return episodes_dir / episode_id

    def _write_manifest(self) -> None:
        entries = [{
            "id": ep.episode_id,
            "set": ep.set_name,
            "object": ep.object_kind,
            "plate": ep.plate,
            "steps": len(ep.steps),
            "forced_recovery": ep.forced_recovery,
            "strategy": ep.strategy,
            "sha256": ep.content_hash(),
        } for ep in self.saved]
        entries.sort(key=lambda e: e["id"])
        manifest = {
            "plan": {},
            "seed": self.seed,
            "scene": {"camera": [self.scene.camera_width, self.scene.camera_height],
                      "tick_hz": self.tick_hz},
            "counts": {},
            "episodes": entries,
            "content_hash": hashlib.sha256(
                "".join(e["sha256"] for e in entries).encode()).hexdigest(),
        }
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True))


def _truth_of(world, seed):
    from .sim.env import TruthObject, TruthSnapshot
    return TruthSnapshot(
        objects={o.name: TruthObject(o.kind, o.x, o.y, o.top, o.fallen)
                 for o in world.objects},
        attached=world.attached,
        plate_centers={c.value: xy for c, xy in world.scene.plate_centers.items()},
        episode_seed=seed,
        hand_synergy=world.synergy,
    )


def create_bridge_app(scene: Optional[SceneConfig] = None,
                      out_dir: str = "teleop_episodes",
                      tick_hz: float = 5.0,
                      frontend_dir: Optional[str] = None) -> FastAPI:
    loop = TeleopLoop(scene=scene, tick_hz=tick_hz, out_dir=out_dir)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        loop.start()
        yield
        loop.stop()

    app = FastAPI(lifespan=lifespan)
    app.state.loop = loop

    @app.websocket("/ws")
    async def ws_session(websocket: WebSocket):
        await websocket.accept()
        q = loop.subscribe()

        async def sender():
            while True:
                try:
                    frame = q.get_nowait()
                except queue.Empty:
                    await asyncio.sleep(0.01)
                    continue
                await websocket.send_bytes(frame)

        async def receiver():
            while True:
                data = await websocket.receive_bytes()
                try:
                    frame = decode_frame(data)
                except Exception:
                    continue
                if frame.type is FrameType.TELEOP_CMD:
                    loop.enqueue(parse_teleop_payload(frame.payload))

        tasks = [asyncio.create_task(sender()), asyncio.create_task(receiver())]
        try:
            done, pending = await asyncio.wait(tasks, return_when=asyncio.FIRST_EXCEPTION)
            for task in pending:
                task.cancel()
            for task in done:
                task.exception()
        finally:
            loop.unsubscribe(q)

    @app.post("/episodes/save")
    async def save(body: dict):
        try:
            path = loop.save_episode(set_name=body.get("set", "vla"),
                                     episode_id=body.get("id"))
        except IncompleteMarkersError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return {"path": str(path)}

    @app.get("/stats")
    async def stats(reset: bool = False):
        return JSONResponse(loop.cadence(reset=reset))

    front = Path(frontend_dir) if frontend_dir else \
        Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if front.exists():
        app.mount("/app", StaticFiles(directory=str(front), html=True), name="app")

        @app.get("/")
        async def index():
            return FileResponse(str(front / "index.html"))

    return app
