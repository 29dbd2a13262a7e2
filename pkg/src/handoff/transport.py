"""Wire protocol and client/server pair for out-of-process policies.

Framing (big-endian, 14-byte header):

    magic "HPS1" | type u8 | flags u8 (reserved, 0) | seq u32 | payload_len u32

Payload bodies are canonical UTF-8 key=value lines in a fixed field order;
floats are serialized with repr() so they survive the wire bit-exactly.
Images travel inline (base64 of raw RGB) or by path when both ends share a
filesystem.  The observation payload carries an extras section used to
mirror the simulator's ground-truth snapshot to reference policies running
remotely; real model servers ignore it.
"""

from __future__ import annotations

import base64
import socket
import struct
import threading
import time
import urllib.parse
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .core import (
    Action,
    ArmPose,
    GripCommand,
    HandState,
    Image,
    Instruction,
    JointCommand,
    Observation,
    ObjectKind,
    parse_instruction,
)
from .orchestrator import SafetyStopError, TaskPhase
from .sim.env import TruthObject, TruthSnapshot

__all__ = [
    "MAGIC",
    "FRAME_HEADER_SIZE",
    "FrameType",
    "Frame",
    "FrameError",
    "BadMagicError",
    "TruncatedError",
    "OversizeError",
    "UnknownTypeError",
    "encode_frame",
    "decode_frame",
    "FrameReader",
    "ImageRef",
    "ObsPayload",
    "ActPayload",
    "encode_obs_payload",
    "decode_obs_payload",
    "encode_act_payload",
    "decode_act_payload",
    "truth_to_extras",
    "truth_from_extras",
    "PolicyClient",
    "RemotePolicy",
    "PolicyServer",
    "serve_policy",
    "policy_set_handler",
]

MAGIC = b"HPS1"
_HEADER = struct.Struct(">4sBBII")
FRAME_HEADER_SIZE = _HEADER.size  # 14
MAX_PAYLOAD = 8 * 1024 * 1024


class FrameType(IntEnum):
    OBS_REQUEST = 0x01
    ACT_REPLY = 0x02
    ERROR = 0x03
    SNAPSHOT = 0x04
    TELEOP_CMD = 0x05


class FrameError(ValueError):
    pass


class BadMagicError(FrameError):
    pass


class TruncatedError(FrameError):
    pass


class OversizeError(FrameError):
    pass


class UnknownTypeError(FrameError):
    pass


@dataclass(frozen=True)
class Frame:
    type: FrameType
    seq: int
    payload: bytes
    flags: int = 0


def encode_frame(ftype: FrameType, seq: int, payload: bytes, flags: int = 0,
                 max_payload: int = MAX_PAYLOAD) -> bytes:
    if len(payload) > max_payload:
        raise OversizeError(f"payload {len(payload)} exceeds {max_payload}")
    return _HEADER.pack(MAGIC, int(ftype), flags, seq, len(payload)) + payload


def decode_frame(data: bytes, max_payload: int = MAX_PAYLOAD) -> Frame:
    """Decode one complete frame; the buffer must contain exactly one frame."""
    if len(data) < FRAME_HEADER_SIZE:
        raise TruncatedError(f"{len(data)} bytes is shorter than a frame header")
    magic, ftype, flags, seq, plen = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if plen > max_payload:
        raise OversizeError(f"declared payload {plen} exceeds {max_payload}")
    try:
        frame_type = FrameType(ftype)
    except ValueError:
        raise UnknownTypeError(f"unknown frame type 0x{ftype:02x}") from None
    if len(data) != FRAME_HEADER_SIZE + plen:
        raise TruncatedError(
            f"frame declares {plen} payload bytes, buffer carries {len(data) - FRAME_HEADER_SIZE}")
    return Frame(type=frame_type, seq=seq, payload=data[FRAME_HEADER_SIZE:], flags=flags)


class FrameReader:
    """Incremental frame extraction over a byte stream."""

    def __init__(self, max_payload: int = MAX_PAYLOAD):
        self._buf = bytearray()
        self.max_payload = max_payload

    def feed(self, data: bytes) -> None:
        self._buf.extend(data)

    def next_frame(self) -> Optional[Frame]:
        if len(self._buf) < FRAME_HEADER_SIZE:
            return None
        magic, ftype, flags, seq, plen = _HEADER.unpack_from(bytes(self._buf[:FRAME_HEADER_SIZE]))
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}")
        if plen > self.max_payload:
            raise OversizeError(f"declared payload {plen} exceeds {self.max_payload}")
        total = FRAME_HEADER_SIZE + plen
        if len(self._buf) < total:
            return None
        data = bytes(self._buf[:total])
        del self._buf[:total]
        return decode_frame(data, self.max_payload)


# ---------------------------------------------------------------------------
# Payloads
# ---------------------------------------------------------------------------

_SAFE = " /._:-"


def _q(value: str) -> str:
    return urllib.parse.quote(value, safe=_SAFE)


def _uq(value: str) -> str:
    return urllib.parse.unquote(value)


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _parse_floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split()) if text else ()


@dataclass(frozen=True)
class ImageRef:
    """Inline pixels, a shared-filesystem path, or absent."""

    mode: str = "none"              # "none" | "inline" | "path"
    image: Optional[Image] = None
    path: Optional[str] = None

    def encode(self) -> str:
        if self.mode == "none":
            return "none"
        if self.mode == "path":
            return f"path {_q(self.path or '')}"
        assert self.image is not None
        b64 = base64.b64encode(self.image.pixels).decode("ascii")
        return f"inline {self.image.width} {self.image.height} {b64}"

    @classmethod
    def decode(cls, text: str) -> "ImageRef":
        kind, _, rest = text.partition(" ")
        if kind == "none":
            return cls()
        if kind == "path":
            return cls(mode="path", path=_uq(rest))
        if kind == "inline":
            w, h, b64 = rest.split(" ", 2)
            pixels = base64.b64decode(b64.encode("ascii"))
            return cls(mode="inline", image=Image(int(w), int(h), pixels))
        raise FrameError(f"bad image ref {text[:30]!r}")

    @classmethod
    def of(cls, image: Optional[Image]) -> "ImageRef":
        return cls(mode="inline", image=image) if image is not None else cls()


@dataclass(frozen=True)
class ObsPayload:
    session: str
    tick: int
    policy: str
    instruction: str
    phase: str
    arm: Tuple[float, ...]
    joints: Tuple[float, ...]
    cam1: ImageRef = field(default_factory=ImageRef)
    cam2: ImageRef = field(default_factory=ImageRef)
    extras: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ActPayload:
    arm_delta: Tuple[float, ...]
    hand_kind: str                  # "grip" | "joints"
    hand_values: Tuple[float, ...]
    sigma: float
    compute_ms: float = 0.0


def encode_obs_payload(p: ObsPayload) -> bytes:
    lines = [
        f"session={_q(p.session)}",
        f"tick={p.tick}",
        f"policy={_q(p.policy)}",
        f"instruction={_q(p.instruction)}",
        f"phase={p.phase}",
        f"arm={_floats(p.arm)}",
        f"joints={_floats(p.joints)}",
        f"cam1={p.cam1.encode()}",
        f"cam2={p.cam2.encode()}",
    ]
    for key in sorted(p.extras):
        lines.append(f"extra.{_q(key)}={_q(p.extras[key])}")
    return "\n".join(lines).encode("utf-8")


def _parse_lines(data: bytes) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for line in data.decode("utf-8").splitlines():
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FrameError(f"bad payload line {line[:40]!r}")
        out[key] = value
    return out


def decode_obs_payload(data: bytes) -> ObsPayload:
    kv = _parse_lines(data)
    try:
        extras = {_uq(k[len("extra."):]): _uq(v)
                  for k, v in kv.items() if k.startswith("extra.")}
        return ObsPayload(
            session=_uq(kv["session"]),
            tick=int(kv["tick"]),
            policy=_uq(kv["policy"]),
            instruction=_uq(kv["instruction"]),
            phase=kv["phase"],
            arm=_parse_floats(kv["arm"]),
            joints=_parse_floats(kv["joints"]),
            cam1=ImageRef.decode(kv["cam1"]),
            cam2=ImageRef.decode(kv["cam2"]),
            extras=extras,
        )
    except KeyError as exc:
        raise FrameError(f"missing observation field {exc}") from None


def encode_act_payload(p: ActPayload) -> bytes:
    lines = [
        f"arm_delta={_floats(p.arm_delta)}",
        f"hand_kind={p.hand_kind}",
        f"hand_values={_floats(p.hand_values)}",
        f"sigma={repr(float(p.sigma))}",
        f"compute_ms={repr(float(p.compute_ms))}",
    ]
    return "\n".join(lines).encode("utf-8")


def decode_act_payload(data: bytes) -> ActPayload:
    kv = _parse_lines(data)
    try:
        p = ActPayload(
            arm_delta=_parse_floats(kv["arm_delta"]),
            hand_kind=kv["hand_kind"],
            hand_values=_parse_floats(kv["hand_values"]),
            sigma=float(kv["sigma"]),
            compute_ms=float(kv["compute_ms"]),
        )
    except KeyError as exc:
        raise FrameError(f"missing action field {exc}") from None
    if len(p.arm_delta) != 6 or not all(np.isfinite(p.arm_delta)):
        raise FrameError("arm_delta must be 6 finite numbers")
    if p.hand_kind not in ("grip", "joints"):
        raise FrameError(f"bad hand kind {p.hand_kind!r}")
    return p


def action_to_payload(action: Action, compute_ms: float = 0.0) -> ActPayload:
    if isinstance(action.hand, GripCommand):
        kind, values = "grip", (action.hand.value,)
    else:
        kind, values = "joints", tuple(float(v) for v in action.hand.targets)
    return ActPayload(
        arm_delta=tuple(float(v) for v in action.arm_delta),
        hand_kind=kind,
        hand_values=values,
        sigma=action.sigma,
        compute_ms=compute_ms,
    )


def action_from_payload(p: ActPayload) -> Action:
    hand = GripCommand(p.hand_values[0]) if p.hand_kind == "grip" \
        else JointCommand(np.array(p.hand_values))
    return Action(np.array(p.arm_delta), hand, p.sigma)


# ---------------------------------------------------------------------------
# Ground-truth mirroring for remote reference policies
# ---------------------------------------------------------------------------

def truth_to_extras(truth: TruthSnapshot) -> Dict[str, str]:
    extras = {
        "seed": str(truth.episode_seed),
        "attached": truth.attached or "-",
        "synergy": repr(truth.hand_synergy),
    }
    for name, obj in sorted(truth.objects.items()):
        extras[f"obj.{name}"] = (
            f"{obj.kind.value} {repr(obj.x)} {repr(obj.y)} {repr(obj.top)} "
            f"{int(obj.fallen)}")
    for plate, (px, py) in sorted(truth.plate_centers.items()):
        extras[f"plate.{plate}"] = f"{repr(px)} {repr(py)}"
    return extras


def truth_from_extras(extras: Dict[str, str]) -> TruthSnapshot:
    objects = {}
    plates = {}
    for key, value in extras.items():
        if key.startswith("obj."):
            kind, x, y, top, fallen = value.split()
            objects[key[4:]] = TruthObject(
                ObjectKind(kind), float(x), float(y), float(top), bool(int(fallen)))
        elif key.startswith("plate."):
            px, py = value.split()
            plates[key[6:]] = (float(px), float(py))
    attached = extras.get("attached", "-")
    return TruthSnapshot(
        objects=objects,
        attached=None if attached == "-" else attached,
        plate_centers=plates,
        episode_seed=int(extras.get("seed", "0")),
        hand_synergy=float(extras.get("synergy", "0.0")),
    )


def observation_from_payload(p: ObsPayload) -> Observation:
    cam1 = p.cam1.image if p.cam1.mode == "inline" else None
    cam2 = p.cam2.image if p.cam2.mode == "inline" else None
    return Observation(
        arm=ArmPose.from_array(p.arm),
        hand=HandState(np.array(p.joints)),
        instruction=parse_instruction(p.instruction),
        tick=p.tick,
        cam1=cam1,
        cam2=cam2,
    )


# ---------------------------------------------------------------------------
# Client
# ---------------------------------------------------------------------------

class PolicyClient:
    """Synchronous deadline-bounded request/reply over one TCP session.

    Late replies from missed deadlines are discarded by sequence number on
    subsequent calls, so one slow response cannot desynchronize the session.
    """

    def __init__(self, host: str, port: int, deadline_ms: float = 180.0,
                 max_payload: int = MAX_PAYLOAD):
        self.host = host
        self.port = port
        self.deadline_s = deadline_ms / 1000.0
        self.max_payload = max_payload
        self._sock: Optional[socket.socket] = None
        self._reader = FrameReader(max_payload)
        self._seq = 0

    def connect(self) -> None:
        self._sock = socket.create_connection((self.host, self.port), timeout=5.0)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._reader = FrameReader(self.max_payload)
        self._seq = 0

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def _read_frame(self, deadline: float) -> Optional[Frame]:
        assert self._sock is not None
        while True:
            frame = self._reader.next_frame()
            if frame is not None:
                return frame
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            self._sock.settimeout(remaining)
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout:
                return None
            if not chunk:
                raise ConnectionError("policy server disconnected")
            self._reader.feed(chunk)

    def call(self, obs: ObsPayload) -> Optional[ActPayload]:
        """One request; None means the deadline passed or the reply was bad."""
        if self._sock is None:
            self.connect()
        assert self._sock is not None
        self._seq += 1
        seq = self._seq
        frame = encode_frame(FrameType.OBS_REQUEST, seq, encode_obs_payload(obs),
                             max_payload=self.max_payload)
        self._sock.sendall(frame)
        deadline = time.monotonic() + self.deadline_s
        while True:
            reply = self._read_frame(deadline)
            if reply is None:
                return None
            if reply.seq < seq:
                continue  # stale reply from a missed deadline
            if reply.type is not FrameType.ACT_REPLY or reply.seq != seq:
                return None
            try:
                return decode_act_payload(reply.payload)
            except FrameError:
                return None


class RemotePolicy:
    """Policy adapter that forwards observations to a policy server.

    On a deadline miss the fallback is zero arm motion with the hand held in
    place and the last sigma; after max_misses consecutive misses the
    adapter raises SafetyStopError, which the episode loop converts into a
    Failure termination.
    """

    def __init__(self, client: PolicyClient, policy_id: str, session: str = "s0",
                 wants_images: bool = False, send_truth: bool = True,
                 max_misses: int = 5):
        self.client = client
        self.policy_id = policy_id
        self.session = session
        self.wants_images = wants_images
        self.send_truth = send_truth
        self.max_misses = max_misses
        self.consecutive_misses = 0
        self._last_sigma = 0.0

    def act(self, obs: Observation, truth: TruthSnapshot, phase: TaskPhase) -> Action:
        payload = ObsPayload(
            session=self.session,
            tick=obs.tick,
            policy=self.policy_id,
            instruction=obs.instruction.raw_text,
            phase=phase.value,
            arm=tuple(float(v) for v in obs.arm.as_array()),
            joints=tuple(float(v) for v in obs.hand.joints),
            cam1=ImageRef.of(obs.cam1) if self.wants_images else ImageRef(),
            cam2=ImageRef.of(obs.cam2) if self.wants_images else ImageRef(),
            extras=truth_to_extras(truth) if self.send_truth else {},
        )
        try:
            reply = self.client.call(payload)
        except (ConnectionError, OSError):
            reply = None
        if reply is None:
            self.consecutive_misses += 1
            if self.consecutive_misses >= self.max_misses:
                raise SafetyStopError(
                    f"{self.consecutive_misses} consecutive policy deadline misses")
            return Action(np.zeros(6),
                          JointCommand(np.array(obs.hand.joints, copy=True)),
                          self._last_sigma)
        self.consecutive_misses = 0
        action = action_from_payload(reply)
        self._last_sigma = action.sigma
        return action


# ---------------------------------------------------------------------------
# Server
# ---------------------------------------------------------------------------

class PolicyServer:
    """Accepts one session at a time and answers observation requests in
    sequence order; protocol violations close the session with an Error
    frame.  The handler maps ObsPayload to ActPayload."""

    def __init__(self, handler: Callable[[ObsPayload], ActPayload],
                 host: str = "127.0.0.1", port: int = 0,
                 max_payload: int = MAX_PAYLOAD):
        self.handler = handler
        self.max_payload = max_payload
        self._lsock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._lsock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._lsock.bind((host, port))
        self._lsock.listen(1)
        self.host, self.port = self._lsock.getsockname()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "PolicyServer":
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        try:
            self._lsock.close()
        except OSError:
            pass
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._lsock.accept()
            except OSError:
                return
            with conn:
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self._serve_session(conn)

    def _serve_session(self, conn: socket.socket) -> None:
        reader = FrameReader(self.max_payload)
        expected_seq = 1
        conn.settimeout(0.2)
        while not self._stop.is_set():
            frame = None
            try:
                frame = reader.next_frame()
                if frame is None:
                    chunk = conn.recv(65536)
                    if not chunk:
                        return
                    reader.feed(chunk)
                    continue
            except socket.timeout:
                continue
            except FrameError as exc:
                self._send_error(conn, 0, str(exc))
                return
            except OSError:
                return
            if frame.type is not FrameType.OBS_REQUEST:
                self._send_error(conn, frame.seq, f"unexpected frame type {frame.type}")
                return
            if frame.seq != expected_seq:
                self._send_error(
                    conn, frame.seq,
                    f"out-of-order seq {frame.seq}, expected {expected_seq}")
                return
            try:
                obs = decode_obs_payload(frame.payload)
                act = self.handler(obs)
            except Exception as exc:  # handler or payload failure ends the session
                self._send_error(conn, frame.seq, str(exc))
                return
            reply = encode_frame(FrameType.ACT_REPLY, frame.seq,
                                 encode_act_payload(act), max_payload=self.max_payload)
            try:
                conn.sendall(reply)
            except OSError:
                return
            expected_seq += 1

    def _send_error(self, conn: socket.socket, seq: int, message: str) -> None:
        payload = f"error={_q(message)}".encode("utf-8")
        try:
            conn.sendall(encode_frame(FrameType.ERROR, seq, payload))
        except OSError:
            pass


def serve_policy(handler: Callable[[ObsPayload], ActPayload],
                 endpoint: Tuple[str, int] = ("127.0.0.1", 0)) -> PolicyServer:
    return PolicyServer(handler, host=endpoint[0], port=endpoint[1]).start()


def policy_set_handler(scene, vla_cfg=None, grasp_cfg=None, baseline: bool = False,
                       delay_s: float = 0.0) -> Callable[[ObsPayload], ActPayload]:
    """Handler hosting the reference policy set.

    Policies are rebuilt whenever the episode seed in the observation extras
    changes, reproducing exactly the behavior of in-process execution with
    the same seed.  delay_s injects artificial compute latency for fault
    tests.
    """
    from .policies import make_policy_set

    state: Dict[str, object] = {"seed": None, "policies": None}

    def handler(payload: ObsPayload) -> ActPayload:
        if delay_s > 0:
            time.sleep(delay_s)
        truth = truth_from_extras(payload.extras)
        obs = observation_from_payload(payload)
        if state["seed"] != truth.episode_seed:
            state["seed"] = truth.episode_seed
            state["policies"] = make_policy_set(
                obs.instruction, scene, truth.episode_seed,
                vla_cfg=vla_cfg, grasp_cfg=grasp_cfg, baseline=baseline)
        policies = state["policies"]
        action = policies[payload.policy].act(obs, truth, TaskPhase(payload.phase))
        return action_to_payload(action)

    return handler
