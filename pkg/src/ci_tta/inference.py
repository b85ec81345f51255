"""Classifier backends: map an (H, W, C) image to a K-vector of logits.

Two kinds are supported behind one interface, so any real model can sit at
the end of the pipeline:

* Builtin — a CITM weight file: magic ``CITM``, u32 LE layer count L, then per
  layer u32 in_dim, u32 out_dim, out_dim*in_dim float32 LE row-major weights,
  out_dim float32 LE biases. ReLU between layers, none after the last. The
  model runs on the flattened normalized image.

* External — a separate process or TCP peer speaking newline-delimited JSON:
  request ``{"id": <u64>, "shape": [H, W, C], "data": "<base64 float32 LE>"}``,
  response ``{"id": <u64>, "logits": [...]}`` or ``{"id": <u64>, "error": "..."}``.
  One JSON object per line; responses may arrive out of order and are matched
  by id. Addresses are ``tcp:host:port`` or ``exec:command``.

Per-channel normalization ``(v - mean) / std`` is applied inside predict,
after any warping, so deformations always operate in raw pixel space.
"""

from __future__ import annotations

import base64
import itertools
import json
import os
import selectors
import shlex
import socket
import struct
import subprocess
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BackendFailure, CorruptModelError, InvalidArgumentError
from .imgcore import validate_image

CITM_MAGIC = b"CITM"
DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class Normalization:
    """Per-channel affine normalization (v - mean) / std."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)
        if mean.shape != std.shape or mean.ndim != 1:
            raise InvalidArgumentError(f"mean/std must be matching 1-D arrays, got {mean.shape}, {std.shape}")
        if not (std > 0).all():
            raise InvalidArgumentError("std entries must be > 0")

    @classmethod
    def identity(cls, channels: int) -> "Normalization":
        return cls(np.zeros(channels), np.ones(channels))

    def apply(self, img: np.ndarray) -> np.ndarray:
        if img.shape[-1] != self.mean.size:
            raise InvalidArgumentError(
                f"normalization has {self.mean.size} channels, image has {img.shape[-1]}"
            )
        return (img - self.mean) / self.std


class Backend:
    """Common classifier interface; see BuiltinBackend and ExternalBackend."""

    num_classes: int | None = None

    def predict(self, img: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict_batch(self, imgs: list[np.ndarray]) -> list[np.ndarray]:
        """Element i equals predict(imgs[i]) exactly; order preserved."""
        return [self.predict(img) for img in imgs]

    def close(self) -> None:
        pass


class BuiltinBackend(Backend):
    """Affine-plus-ReLU stack over the flattened normalized image."""

    def __init__(
        self,
        layers: list[tuple[np.ndarray, np.ndarray]],
        normalization: Normalization | None = None,
    ) -> None:
        if not layers:
            raise CorruptModelError("model must have at least one layer")
        self.layers = [
            (np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)) for w, b in layers
        ]
        for i, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.size:
                raise CorruptModelError(f"layer {i} has inconsistent shapes {w.shape}, {b.shape}")
            if i > 0 and w.shape[1] != self.layers[i - 1][0].shape[0]:
                raise CorruptModelError(
                    f"layer {i} expects {w.shape[1]} inputs, previous layer emits "
                    f"{self.layers[i - 1][0].shape[0]}"
                )
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise CorruptModelError(f"layer {i} contains non-finite parameters")
        self.in_dim = self.layers[0][0].shape[1]
        self.num_classes = self.layers[-1][0].shape[0]
        if self.num_classes < 2:
            raise CorruptModelError(f"model must emit >= 2 classes, got {self.num_classes}")
        self.normalization = normalization

    def predict(self, img: np.ndarray) -> np.ndarray:
        arr = validate_image(img)
        if arr.size != self.in_dim:
            raise InvalidArgumentError(
                f"image has {arr.size} values ({arr.shape}), model expects {self.in_dim}"
            )
        if self.normalization is not None:
            arr = self.normalization.apply(arr)
        x = arr.ravel()
        for w, b in self.layers[:-1]:
            x = np.maximum(w @ x + b, 0.0)
        w, b = self.layers[-1]
        return w @ x + b


def save_builtin_model(path: str | Path, layers: list[tuple[np.ndarray, np.ndarray]]) -> None:
    """Write layers as a CITM file (float32 payload)."""
    chunks = [CITM_MAGIC, struct.pack("<I", len(layers))]
    for w, b in layers:
        w = np.asarray(w, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        out_dim, in_dim = w.shape
        chunks.append(struct.pack("<II", in_dim, out_dim))
        chunks.append(w.astype("<f4").tobytes())
        chunks.append(b.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_builtin_model(path: str | Path, normalization: Normalization | None = None) -> BuiltinBackend:
    """Parse a CITM file into a BuiltinBackend."""
    data = Path(path).read_bytes()
    if data[:4] != CITM_MAGIC:
        raise CorruptModelError(f"{path}: bad magic {data[:4]!r}")
    if len(data) < 8:
        raise CorruptModelError(f"{path}: truncated header")
    (layer_count,) = struct.unpack_from("<I", data, 4)
    if layer_count < 1:
        raise CorruptModelError(f"{path}: layer count must be >= 1")
    offset = 8
    layers: list[tuple[np.ndarray, np.ndarray]] = []
    for i in range(layer_count):
        if offset + 8 > len(data):
            raise CorruptModelError(f"{path}: truncated at layer {i} header")
        in_dim, out_dim = struct.unpack_from("<II", data, offset)
        offset += 8
        if in_dim < 1 or out_dim < 1:
            raise CorruptModelError(f"{path}: layer {i} has zero dimension")
        need = 4 * (in_dim * out_dim + out_dim)
        if offset + need > len(data):
            raise CorruptModelError(f"{path}: truncated at layer {i} payload")
        w = np.frombuffer(data, dtype="<f4", count=in_dim * out_dim, offset=offset)
        offset += 4 * in_dim * out_dim
        b = np.frombuffer(data, dtype="<f4", count=out_dim, offset=offset)
        offset += 4 * out_dim
        layers.append((w.astype(np.float64).reshape(out_dim, in_dim), b.astype(np.float64)))
    if offset != len(data):
        raise CorruptModelError(f"{path}: {len(data) - offset} trailing bytes")
    return BuiltinBackend(layers, normalization=normalization)


def encode_image_payload(img: np.ndarray) -> str:
    """Base64 of the row-major float32 LE pixel array (the wire precision)."""
    return base64.b64encode(np.asarray(img, dtype="<f4").tobytes()).decode("ascii")


def decode_image_payload(data: str, shape: tuple[int, int, int]) -> np.ndarray:
    h, w, c = shape
    try:
        raw = base64.b64decode(data, validate=True)
    except (ValueError, TypeError) as exc:
        raise InvalidArgumentError(f"bad base64 image payload: {exc}") from exc
    if len(raw) != 4 * h * w * c:
        raise InvalidArgumentError(
            f"payload is {len(raw)} bytes, shape {h}x{w}x{c} needs {4 * h * w * c}"
        )
    return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(h, w, c)


class _TcpChannel:
    def __init__(self, host: str, port: int, timeout: float) -> None:
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._buf = b""

    def send_line(self, line: bytes) -> None:
        self._sock.sendall(line + b"\n")

    def recv_line(self, deadline: float) -> bytes:
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line, self._buf = self._buf[:nl], self._buf[nl + 1 :]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("timed out waiting for response")
            self._sock.settimeout(remaining)
            try:
                chunk = self._sock.recv(65536)
            except socket.timeout as exc:
                raise TimeoutError("timed out waiting for response") from exc
            if not chunk:
                raise ConnectionError("backend closed the connection")
            self._buf += chunk

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class _ExecChannel:
    def __init__(self, command: str, timeout: float) -> None:
        argv = shlex.split(command)
        if not argv:
            raise InvalidArgumentError("empty exec backend command")
        self._proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0)
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._proc.stdout, selectors.EVENT_READ)
        self._buf = b""

    def send_line(self, line: bytes) -> None:
        try:
            self._proc.stdin.write(line + b"\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ConnectionError(f"backend process is gone: {exc}") from exc

    def recv_line(self, deadline: float) -> bytes:
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line, self._buf = self._buf[:nl], self._buf[nl + 1 :]
                return line
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("timed out waiting for response")
            if not self._sel.select(timeout=remaining):
                raise TimeoutError("timed out waiting for response")
            chunk = os.read(self._proc.stdout.fileno(), 65536)
            if not chunk:
                raise ConnectionError("backend process closed stdout")
            self._buf += chunk

    def close(self) -> None:
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        self._sel.close()


class ExternalBackend(Backend):
    """Client for the newline-delimited JSON backend protocol.

    Connections are pooled: each in-flight request batch owns one channel (a
    TCP connection or a spawned worker process). Within a batch all requests
    are pipelined before any response is read, and responses are matched by
    id, so out-of-order replies are fine. Any protocol violation, remote
    error, or timeout poisons the channel and fails the batch.
    """

    def __init__(
        self,
        address: str,
        num_classes: int | None = None,
        normalization: Normalization | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        max_idle: int = 4,
    ) -> None:
        if address.startswith("tcp:"):
            rest = address[4:]
            host, sep, port = rest.rpartition(":")
            if not sep or not port.isdigit() or not host:
                raise InvalidArgumentError(f"bad tcp address {address!r}, want tcp:host:port")
            self._open = lambda: _TcpChannel(host, int(port), timeout)
        elif address.startswith("exec:"):
            command = address[5:]
            if not shlex.split(command):
                raise InvalidArgumentError("empty exec backend command")
            self._open = lambda: _ExecChannel(command, timeout)
        else:
            raise InvalidArgumentError(f"bad backend address {address!r}, want tcp:... or exec:...")
        self.address = address
        self.num_classes = num_classes
        self.normalization = normalization
        self.timeout = timeout
        self._max_idle = max_idle
        self._idle: list[object] = []
        self._lock = threading.Lock()
        self._ids = itertools.count(1)

    def _acquire(self):
        with self._lock:
            if self._idle:
                return self._idle.pop()
        try:
            return self._open()
        except OSError as exc:
            raise BackendFailure(f"cannot reach backend {self.address}: {exc}") from exc

    def _release(self, channel) -> None:
        with self._lock:
            if len(self._idle) < self._max_idle:
                self._idle.append(channel)
                return
        channel.close()

    def _next_id(self) -> int:
        with self._lock:
            return next(self._ids)

    def _check_logits(self, obj: dict, rid: int) -> np.ndarray:
        logits = obj.get("logits")
        if not isinstance(logits, list) or not logits or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in logits
        ):
            raise BackendFailure(f"response {rid} has no usable logits")
        arr = np.asarray(logits, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise BackendFailure(f"response {rid} has non-finite logits")
        with self._lock:
            if self.num_classes is None:
                if arr.size < 2:
                    raise BackendFailure(f"backend emits {arr.size} classes, need >= 2")
                self.num_classes = arr.size
            elif arr.size != self.num_classes:
                raise BackendFailure(
                    f"response {rid} has {arr.size} logits, expected {self.num_classes}"
                )
        return arr

    def predict(self, img: np.ndarray) -> np.ndarray:
        return self.predict_batch([img])[0]

    def predict_batch(self, imgs: list[np.ndarray]) -> list[np.ndarray]:
        if not imgs:
            return []
        arrays = [validate_image(img) for img in imgs]
        shape = arrays[0].shape
        if any(a.shape != shape for a in arrays):
            raise InvalidArgumentError("batch images must share one shape")
        if self.normalization is not None:
            arrays = [self.normalization.apply(a) for a in arrays]
        channel = self._acquire()
        try:
            pending: dict[int, int] = {}
            for i, arr in enumerate(arrays):
                rid = self._next_id()
                pending[rid] = i
                request = {
                    "id": rid,
                    "shape": [int(shape[0]), int(shape[1]), int(shape[2])],
                    "data": encode_image_payload(arr),
                }
                channel.send_line(json.dumps(request).encode("utf-8"))
            out: list[np.ndarray | None] = [None] * len(arrays)
            while pending:
                line = channel.recv_line(time.monotonic() + self.timeout)
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise BackendFailure(f"malformed response line: {exc}") from exc
                if not isinstance(obj, dict) or not isinstance(obj.get("id"), int):
                    raise BackendFailure("response is not an object with an integer id")
                rid = obj["id"]
                if rid not in pending:
                    raise BackendFailure(f"response id {rid} does not match any pending request")
                if "error" in obj:
                    raise BackendFailure(f"backend error for request {rid}: {obj['error']}")
                out[pending.pop(rid)] = self._check_logits(obj, rid)
        except BackendFailure:
            channel.close()
            raise
        except (TimeoutError, ConnectionError, OSError) as exc:
            channel.close()
            raise BackendFailure(str(exc)) from exc
        except Exception:
            channel.close()
            raise
        self._release(channel)
        return out  # type: ignore[return-value]

    def close(self) -> None:
        with self._lock:
            idle, self._idle = self._idle, []
        for channel in idle:
            channel.close()


@dataclass(frozen=True)
class BackendSpec:
    """Where a classifier lives and how to talk to it."""

    kind: str  # "builtin" | "external"
    address: str
    normalization: Normalization | None = None
    num_classes: int | None = None

    @classmethod
    def parse(cls, address: str, **kwargs) -> "BackendSpec":
        kind = "external" if address.startswith(("tcp:", "exec:")) else "builtin"
        return cls(kind=kind, address=address, **kwargs)

    def load(self, timeout: float = DEFAULT_TIMEOUT) -> Backend:
        if self.kind == "builtin":
            return load_builtin_model(self.address, normalization=self.normalization)
        return ExternalBackend(
            self.address,
            num_classes=self.num_classes,
            normalization=self.normalization,
            timeout=timeout,
        )


def load_backend(
    address: str,
    normalization: Normalization | None = None,
    num_classes: int | None = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> Backend:
    """Load a backend from an address: CITM path, tcp:host:port, or exec:cmd."""
    spec = BackendSpec.parse(address, normalization=normalization, num_classes=num_classes)
    return spec.load(timeout=timeout)
