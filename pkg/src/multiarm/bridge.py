"""Real-time bidirectional channel between a running simulation and the
operator console.

Wire protocol: WebSocket text messages, one JSON object per message,
newline-terminated. The server sends a hello frame on connect, then state
frames at the stream rate on the simulation clock; clients send velocity
commands. Commands land in a latest-value mailbox read once per control
tick; a dead-man timeout zeroes the command when the client goes quiet, and
commands always address the current leader. Outgoing frames go through a
bounded drop-oldest queue per client so a slow consumer never stalls the
control loop.
"""

from __future__ import annotations

import errno
import json
import logging
import queue
import socket
import threading
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import _ws
from .config import ScenarioConfig
from .sim import World

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
STREAM_HZ = 30.0
DEADMAN_S = 0.2
FRAME_QUEUE_DEPTH = 8


class PortInUseError(OSError):
    pass


class CommandMailbox:
    """Latest-value mailbox: one producer (client reader), one consumer (sim)."""

    def __init__(self, v_max: float):
        self.v_max = v_max
        self._lock = threading.Lock()
        self._v = np.zeros(3)
        self._stamp = -np.inf

    def put(self, v) -> None:
        v = np.asarray(v, dtype=float).reshape(3)
        norm = float(np.linalg.norm(v))
        if norm > self.v_max:
            v = v * (self.v_max / norm)
        with self._lock:
            self._v = v
            self._stamp = time.monotonic()

    def clear(self) -> None:
        with self._lock:
            self._v = np.zeros(3)
            self._stamp = -np.inf

    def current(self) -> np.ndarray:
        with self._lock:
            if time.monotonic() - self._stamp > DEADMAN_S:
                return np.zeros(3)
            return self._v.copy()


class _Client:
    def __init__(self, conn: socket.socket, addr):
        self.conn = conn
        self.addr = addr
        self.frames: queue.Queue = queue.Queue(maxsize=FRAME_QUEUE_DEPTH)
        self.alive = True

    def enqueue(self, text: str) -> None:
        while True:
            try:
                self.frames.put_nowait(text)
                return
            except queue.Full:
                try:
                    self.frames.get_nowait()  # drop oldest
                except queue.Empty:
                    pass

    def close(self) -> None:
        self.alive = False
        try:
            _ws.send_close(self.conn, mask=False)
            self.conn.close()
        except OSError:
            pass


class BridgeServer:
    """Accepts operator connections and pumps frames/commands."""

    def __init__(self, config: ScenarioConfig, port: int, host: str = "127.0.0.1"):
        self.config = config
        self.mailbox = CommandMailbox(v_max=config.teleop_v_max)
        self._clients: list[_Client] = []
        self._clients_lock = threading.Lock()
        self._stop = threading.Event()
        try:
            self._listener = socket.create_server((host, port))
        except OSError as exc:
            if exc.errno in (errno.EADDRINUSE, errno.EACCES):
                raise PortInUseError(f"port {port} unavailable: {exc}") from exc
            raise
        self.port = self._listener.getsockname()[1]
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def hello_frame(self) -> dict:
        cfg = self.config
        return {
            "type": "hello",
            "protocol": PROTOCOL_VERSION,
            "v_max": cfg.teleop_v_max,
            "dt": cfg.dt,
            "stream_hz": STREAM_HZ,
            "n_agents": cfg.n_agents,
            "d_margin_env": cfg.margins.env.margin,
            "d_alert_env": cfg.margins.env.alert,
            "edges": [list(e) for e in cfg.graph.edges],
        }

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, addr = self._listener.accept()
            except OSError:
                return
            try:
                _ws.handshake_server(conn)
            except (ValueError, ConnectionError, OSError) as exc:
                log.warning("handshake failed from %s: %s", addr, exc)
                conn.close()
                continue
            client = _Client(conn, addr)
            with self._clients_lock:
                self._clients.append(client)
            client.enqueue(json.dumps(self.hello_frame()) + "\n")
            threading.Thread(target=self._reader_loop, args=(client,), daemon=True).start()
            threading.Thread(target=self._writer_loop, args=(client,), daemon=True).start()
            log.info("client connected from %s", addr)

    def _reader_loop(self, client: _Client) -> None:
        try:
            while client.alive and not self._stop.is_set():
                text = _ws.recv_text(client.conn, respond_mask=False)
                try:
                    msg = json.loads(text)
                except json.JSONDecodeError:
                    log.warning("ignoring malformed message from %s", client.addr)
                    continue
                if msg.get("type") == "cmd" and "v" in msg:
                    self.mailbox.put(msg["v"])
        except (_ws.WsClosed, OSError):
            pass
        finally:
            client.alive = False
            self.mailbox.clear()  # disconnect resets the command
            with self._clients_lock:
                if client in self._clients:
                    self._clients.remove(client)
            log.info("client %s disconnected", client.addr)

    def _writer_loop(self, client: _Client) -> None:
        try:
            while client.alive and not self._stop.is_set():
                try:
                    text = client.frames.get(timeout=0.25)
                except queue.Empty:
                    continue
                _ws.send_text(client.conn, text, mask=False)
        except OSError:
            client.alive = False

    def broadcast(self, frame: dict) -> None:
        text = json.dumps(frame) + "\n"
        with self._clients_lock:
            clients = list(self._clients)
        for c in clients:
            c.enqueue(text)

    def close(self) -> None:
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        with self._clients_lock:
            clients = list(self._clients)
        for c in clients:
            c.close()


def serve(config: ScenarioConfig, mode: str = "event", port: int = 8765,
          realtime: bool = True, duration: Optional[float] = None,
          out_dir: Optional[Path] = None, manifest: Optional[dict] = None,
          ready: Optional[threading.Event] = None,
          stop: Optional[threading.Event] = None) -> dict:
    """Run the scenario with the bridge attached; returns the run summary.

    Streams state frames on the simulation clock at STREAM_HZ; applies the
    freshest command each tick. With realtime pacing the wall clock tracks
    simulation time (falling behind gracefully when compute is slower).
    """
    server = BridgeServer(config, port=port)
    log.info("teleop bridge listening on port %d", server.port)
    if ready is not None:
        ready.server = server  # type: ignore[attr-defined]
        ready.set()
    world = World(config, mode=mode)
    frame_interval = 1.0 / STREAM_HZ
    next_frame = 0.0
    wall_start = time.monotonic()
    try:
        total = duration if duration is not None else config.duration
        ticks = int(round(total / config.dt))
        from .sim import Trace
        trace = Trace.allocate(ticks, config.n_agents,
                               world.models[0].n_joints, config.dt,
                               config.graph.edges)
        for _ in range(ticks):
            if stop is not None and stop.is_set():
                trace = trace.truncate(world.tick)
                break
            cmd = server.mailbox.current()
            world.step(trace=trace, teleop_cmd=cmd)
            if world.t + 1e-12 >= next_frame:
                server.broadcast(world.snapshot())
                next_frame += frame_interval
            if realtime:
                lag = world.t - (time.monotonic() - wall_start)
                if lag > 0:
                    time.sleep(lag)
        trace.leader_history = world.record.history if world.record else ()
        summary = trace.summary()
        if out_dir is not None:
            from .cli import write_run_outputs
            summary = write_run_outputs(Path(out_dir), manifest or {}, trace, config)
        return summary
    finally:
        server.close()


class BridgeClient:
    """Headless operator client used by tests and scripted drivers."""

    def __init__(self, host: str = "127.0.0.1", port: int = 8765, timeout: float = 10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        _ws.handshake_client(self.sock, host, port)
        self.hello = self.recv()
        if self.hello.get("type") != "hello":
            raise ConnectionError(f"expected hello frame, got {self.hello.get('type')!r}")

    def recv(self, timeout: Optional[float] = None) -> dict:
        if timeout is not None:
            self.sock.settimeout(timeout)
        text = _ws.recv_text(self.sock, respond_mask=True)
        return json.loads(text)

    def send_velocity(self, v) -> None:
        msg = {"type": "cmd", "v": [float(x) for x in v], "stamp": time.time()}
        _ws.send_text(self.sock, json.dumps(msg) + "\n", mask=True)

    def close(self) -> None:
        try:
            _ws.send_close(self.sock, mask=True)
            self.sock.close()
        except OSError:
            pass
