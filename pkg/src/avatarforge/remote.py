"""Remote epsilon-prediction oracle over a local stream socket.

Wire protocol: length-prefixed text messages.  Each message is a 4-byte
little-endian unsigned length followed by that many bytes of UTF-8 JSON.
Request fields: {"shape": [...], "dtype": "f32", "data_b64": <base64 of
row-major little-endian float32>, "timestep": int, "condition_id": str}.
Response: {"data_b64": ...} (same encoding and shape) or {"error": msg}.

Transport failures, timeouts, and protocol violations raise GuidanceError,
which the training loop treats as a skipped iteration.
"""

from __future__ import annotations

import base64
import json
import socket
import struct
import threading

import numpy as np

from .errors import GuidanceError
from .guidance import GuidanceCondition, GuidanceOracle

_LEN = struct.Struct("<I")
_MAX_MESSAGE = 1 << 30


def encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def decode_array(data_b64: str, shape) -> np.ndarray:
    raw = base64.b64decode(data_b64)
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise GuidanceError(f"payload is {len(raw)} bytes, expected {expected} for shape {tuple(shape)}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def send_message(sock: socket.socket, payload: dict) -> None:
    body = json.dumps(payload).encode("utf-8")
    sock.sendall(_LEN.pack(len(body)) + body)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise GuidanceError("connection closed mid-message")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def recv_message(sock: socket.socket) -> dict:
    length = _LEN.unpack(_recv_exact(sock, _LEN.size))[0]
    if length > _MAX_MESSAGE:
        raise GuidanceError(f"message length {length} exceeds limit")
    try:
        return json.loads(_recv_exact(sock, length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise GuidanceError(f"malformed message: {exc}") from exc


def parse_endpoint(endpoint) -> tuple[str, int]:
    if isinstance(endpoint, tuple):
        return endpoint[0], int(endpoint[1])
    host, sep, port = str(endpoint).rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint must be 'host:port', got {endpoint!r}")
    return host, int(port)


class RemoteOracle(GuidanceOracle):
    """Client for an epsilon-prediction server speaking the wire protocol.

    One request in flight per instance; each predict opens a fresh
    connection so a crashed server never wedges the loop.
    """

    def __init__(self, endpoint, timeout: float = 10.0):
        self.host, self.port = parse_endpoint(endpoint)
        self.timeout = float(timeout)
        self._lock = threading.Lock()

    def predict(self, z_t: np.ndarray, t: int, condition: GuidanceCondition) -> np.ndarray:
        z_t = np.asarray(z_t, dtype=np.float64)
        request = {
            "shape": list(z_t.shape),
            "dtype": "f32",
            "data_b64": encode_array(z_t),
            "timestep": int(t),
            "condition_id": condition.condition_id,
        }
        with self._lock:
            try:
                with socket.create_connection((self.host, self.port), timeout=self.timeout) as sock:
                    sock.settimeout(self.timeout)
                    send_message(sock, request)
                    response = recv_message(sock)
            except GuidanceError:
                raise
            except (OSError, socket.timeout) as exc:
                raise GuidanceError(f"oracle endpoint {self.host}:{self.port} failed: {exc}") from exc
        if "error" in response:
            raise GuidanceError(f"oracle server error: {response['error']}")
        if "data_b64" not in response:
            raise GuidanceError(f"malformed oracle response keys: {sorted(response)}")
        return decode_array(response["data_b64"], z_t.shape)


def remote_oracle(endpoint, timeout: float = 10.0) -> RemoteOracle:
    return RemoteOracle(endpoint, timeout=timeout)


class OracleServer:
    """Serves any in-process oracle over the wire protocol (testing/bridging).

    Connections are handled sequentially on one background thread; each
    connection may carry any number of requests.
    """

    def __init__(self, oracle: GuidanceOracle, host: str = "127.0.0.1", port: int = 0):
        self.oracle = oracle
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.2)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._serve, daemon=True)

    @property
    def address(self) -> str:
        host, port = self._listener.getsockname()[:2]
        return f"{host}:{port}"

    def start(self) -> "OracleServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5.0)
        self._listener.close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            with conn:
                conn.settimeout(5.0)
                while not self._stop.is_set():
                    try:
                        request = recv_message(conn)
                    except (GuidanceError, OSError):
                        break
                    try:
                        send_message(conn, self._handle(request))
                    except OSError:
                        break

    def _handle(self, request: dict) -> dict:
        try:
            for key in ("shape", "dtype", "data_b64", "timestep", "condition_id"):
                if key not in request:
                    return {"error": f"missing field {key!r}"}
            if request["dtype"] != "f32":
                return {"error": f"unsupported dtype {request['dtype']!r}"}
            z_t = decode_array(request["data_b64"], request["shape"])
            condition = GuidanceCondition(condition_id=str(request["condition_id"]))
            pred = self.oracle.predict(z_t, int(request["timestep"]), condition)
            return {"data_b64": encode_array(np.asarray(pred))}
        except Exception as exc:
            return {"error": str(exc)}
