"""Wire protocol: newline-delimited JSON records over TCP plus a WebSocket
bridge for browser clients.

Message types: telemetry, diagnostic, race_event, command, command_ack,
error. Inbound commands are validated against the flag-request schema and
queued for the race loop; malformed input produces an error record and never
disturbs the simulation.
"""

from __future__ import annotations

import base64
import hashlib
import json
import queue
import socket
import struct
import threading

MESSAGE_TYPES = ("telemetry", "diagnostic", "race_event", "command",
                 "command_ack", "error")
VALID_ACTIONS = ("flag", "clear_emergency", "inject_fault")
_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class WireError(ValueError):
    pass


def validate_command(obj) -> dict:
    """Validate an inbound command message; returns the normalized dict."""
    if not isinstance(obj, dict):
        raise WireError("command must be a JSON object")
    if obj.get("type") != "command":
        raise WireError(f"unexpected message type '{obj.get('type')}'")
    action = obj.get("action", "flag")
    if action not in VALID_ACTIONS:
        raise WireError(f"unknown action '{action}'")
    out = {"type": "command", "action": action}
    if action == "flag":
        source = obj.get("source")
        if source not in ("race_control", "basestation"):
            raise WireError(f"invalid source '{source}'")
        flag = obj.get("flag")
        if flag not in ("green", "yellow", "red", "checkered", "custom"):
            raise WireError(f"invalid flag '{flag}'")
        if flag == "yellow":
            speed = obj.get("speed")
            if not isinstance(speed, (int, float)) or speed < 0:
                raise WireError("yellow flag needs a nonnegative numeric speed")
            out["speed"] = float(speed)
        if flag == "custom":
            fields = obj.get("fields", {})
            if not isinstance(fields, dict):
                raise WireError("custom flag fields must be an object")
            out["fields"] = fields
        out["source"] = source
        out["flag"] = flag
    elif action == "clear_emergency":
        out["source"] = obj.get("source", "basestation")
    elif action == "inject_fault":
        for key in ("agent", "module"):
            if not isinstance(obj.get(key), str):
                raise WireError(f"inject_fault needs string '{key}'")
        out["agent"] = obj["agent"]
        out["module"] = obj["module"]
        out["kind"] = obj.get("kind", "silent")
        out["duration"] = float(obj.get("duration", 1e9))
    if "seq" in obj:
        out["seq"] = int(obj["seq"])
    return out


class Hub:
    """Fan-out of outbound records and fan-in of validated commands."""

    def __init__(self, max_client_queue: int = 1000):
        self._clients: list[queue.Queue] = []
        self._lock = threading.Lock()
        self.commands: queue.Queue = queue.Queue()
        self.max_client_queue = max_client_queue

    def attach(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=self.max_client_queue)
        with self._lock:
            self._clients.append(q)
        return q

    def detach(self, q: queue.Queue):
        with self._lock:
            if q in self._clients:
                self._clients.remove(q)

    def broadcast(self, record: dict):
        line = json.dumps(record, separators=(",", ":"), sort_keys=True)
        with self._lock:
            clients = list(self._clients)
        for q in clients:
            try:
                q.put_nowait(line)
            except queue.Full:
                try:
                    q.get_nowait()   # drop oldest, never block the sim
                    q.put_nowait(line)
                except queue.Empty:
                    pass

    def submit_raw(self, raw: str, reply):
        """Parse and validate one inbound line; enqueue or reply with error."""
        try:
            obj = json.loads(raw)
            cmd = validate_command(obj)
        except (json.JSONDecodeError, WireError) as exc:
            reply(json.dumps({"type": "error", "reason": str(exc),
                              "raw": raw[:200]}, sort_keys=True))
            return
        self.commands.put(cmd)
        ack = {"type": "command_ack", "action": cmd["action"]}
        if "seq" in cmd:
            ack["seq"] = cmd["seq"]
        reply(json.dumps(ack, sort_keys=True))


class TcpServer:
    """Bidirectional ndjson endpoint; one thread per client."""

    def __init__(self, hub: Hub, port: int = 0, host: str = "127.0.0.1"):
        self.hub = hub
        self._srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._srv.bind((host, port))
        self._srv.listen(8)
        self.port = self._srv.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._srv.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    def _serve(self, conn: socket.socket):
        q = self.hub.attach()
        conn.settimeout(0.05)
        send_lock = threading.Lock()

        def reply(line: str):
            with send_lock:
                try:
                    conn.sendall(line.encode() + b"\n")
                except OSError:
                    pass

        buf = b""
        try:
            while not self._stop.is_set():
                try:
                    while True:
                        line = q.get_nowait()
                        reply(line)
                except queue.Empty:
                    pass
                try:
                    data = conn.recv(4096)
                    if not data:
                        break
                    buf += data
                    while b"\n" in buf:
                        raw, buf = buf.split(b"\n", 1)
                        if raw.strip():
                            self.hub.submit_raw(raw.decode(errors="replace"), reply)
                except socket.timeout:
                    continue
                except OSError:
                    break
        finally:
            self.hub.detach(q)
            conn.close()

    def stop(self):
        self._stop.set()
        try:
            self._srv.close()
        except OSError:
            pass


class WebSocketServer:
    """Minimal RFC6455 text-frame server bridging the hub to browsers."""

    def __init__(self, hub: Hub, port: int = 0, host: str = "127.0.0.1"):
        self.hub = hub
        self._srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._srv.bind((host, port))
        self._srv.listen(8)
        self.port = self._srv.getsockname()[1]
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._thread.start()

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._srv.accept()
            except OSError:
                return
            threading.Thread(target=self._serve, args=(conn,), daemon=True).start()

    @staticmethod
    def _handshake(conn: socket.socket) -> bool:
        conn.settimeout(2.0)
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = conn.recv(4096)
            if not chunk:
                return False
            data += chunk
            if len(data) > 65536:
                return False
        key = None
        for line in data.split(b"\r\n"):
            if line.lower().startswith(b"sec-websocket-key:"):
                key = line.split(b":", 1)[1].strip().decode()
        if key is None:
            return False
        accept = base64.b64encode(
            hashlib.sha1((key + _WS_GUID).encode()).digest()).decode()
        conn.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + accept.encode() + b"\r\n\r\n")
        return True

    @staticmethod
    def _encode_frame(payload: bytes, opcode: int = 0x1) -> bytes:
        header = bytes([0x80 | opcode])
        n = len(payload)
        if n < 126:
            header += bytes([n])
        elif n < 65536:
            header += bytes([126]) + struct.pack(">H", n)
        else:
            header += bytes([127]) + struct.pack(">Q", n)
        return header + payload

    def _read_frame(self, conn: socket.socket, buf: bytearray):
        """Return (opcode, payload) or None if more data is needed."""
        if len(buf) < 2:
            return None
        opcode = buf[0] & 0x0F
        masked = buf[1] & 0x80
        ln = buf[1] & 0x7F
        idx = 2
        if ln == 126:
            if len(buf) < 4:
                return None
            ln = struct.unpack(">H", bytes(buf[2:4]))[0]
            idx = 4
        elif ln == 127:
            if len(buf) < 10:
                return None
            ln = struct.unpack(">Q", bytes(buf[2:10]))[0]
            idx = 10
        mask = b""
        if masked:
            if len(buf) < idx + 4:
                return None
            mask = bytes(buf[idx:idx + 4])
            idx += 4
        if len(buf) < idx + ln:
            return None
        payload = bytes(buf[idx:idx + ln])
        del buf[:idx + ln]
        if masked:
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        return opcode, payload

    def _serve(self, conn: socket.socket):
        try:
            if not self._handshake(conn):
                conn.close()
                return
        except OSError:
            conn.close()
            return
        q = self.hub.attach()
        conn.settimeout(0.05)
        send_lock = threading.Lock()

        def reply(line: str):
            with send_lock:
                try:
                    conn.sendall(self._encode_frame(line.encode()))
                except OSError:
                    pass

        buf = bytearray()
        try:
            while not self._stop.is_set():
                try:
                    while True:
                        reply(q.get_nowait())
                except queue.Empty:
                    pass
                try:
                    data = conn.recv(4096)
                    if not data:
                        break
                    buf.extend(data)
                    while True:
                        frame = self._read_frame(conn, buf)
                        if frame is None:
                            break
                        opcode, payload = frame
                        if opcode == 0x8:      # close
                            return
                        if opcode == 0x9:      # ping -> pong
                            with send_lock:
                                conn.sendall(self._encode_frame(payload, 0xA))
                            continue
                        if opcode == 0x1 and payload.strip():
                            self.hub.submit_raw(payload.decode(errors="replace"), reply)
                except socket.timeout:
                    continue
                except OSError:
                    break
        finally:
            self.hub.detach(q)
            conn.close()

    def stop(self):
        self._stop.set()
        try:
            self._srv.close()
        except OSError:
            pass


class CommandLog:
    """Commands applied at planner ticks, recorded for deterministic replay."""

    def __init__(self):
        self.entries: list[dict] = []

    def record(self, tick: int, command: dict):
        self.entries.append({"tick": tick, "command": command})

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.entries, f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "CommandLog":
        log = cls()
        with open(path) as f:
            log.entries = json.load(f)
        return log

    def at_tick(self, tick: int) -> list[dict]:
        return [e["command"] for e in self.entries if e["tick"] == tick]
