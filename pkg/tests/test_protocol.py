"""External backend wire protocol: loopback doubles over stdio and TCP."""

from __future__ import annotations

import base64
import json
import socket
import socketserver
import struct
import threading

import numpy as np
import pytest

from ci_tta.errors import BackendFailure, InvalidArgumentError
from ci_tta.inference import ExternalBackend
from conftest import echo_address


def first_k_pixels(img: np.ndarray, k: int) -> np.ndarray:
    """What the echo double replies: the first k pixels at float32 precision."""
    return img.ravel()[:k].astype(np.float32).astype(np.float64)


@pytest.fixture
def exec_backend():
    backend = ExternalBackend(echo_address("--classes 3"), timeout=10.0)
    yield backend
    backend.close()


class TestExecLoopback:
    def test_single_roundtrip(self, exec_backend, rng):
        img = rng.random((4, 4, 1))
        logits = exec_backend.predict(img)
        assert np.abs(logits - first_k_pixels(img, 3)).max() <= 1e-6

    def test_batch_roundtrip_preserves_order(self, exec_backend, rng):
        imgs = [rng.random((3, 3, 1)) for _ in range(8)]
        outs = exec_backend.predict_batch(imgs)
        for img, out in zip(imgs, outs):
            assert np.abs(out - first_k_pixels(img, 3)).max() <= 1e-6

    def test_out_of_order_responses_are_correlated_by_id(self, rng):
        backend = ExternalBackend(echo_address("--classes 3", "--shuffle 5"), timeout=10.0)
        try:
            imgs = [rng.random((3, 3, 1)) for _ in range(17)]
            outs = backend.predict_batch(imgs)
            for img, out in zip(imgs, outs):
                assert np.abs(out - first_k_pixels(img, 3)).max() <= 1e-6
        finally:
            backend.close()

    def test_repeat_predict_is_stable(self, exec_backend, rng):
        img = rng.random((4, 4, 1))
        assert np.array_equal(exec_backend.predict(img), exec_backend.predict(img))

    def test_malformed_response_fails(self, rng):
        backend = ExternalBackend(echo_address("--classes 3", "--malformed"), timeout=10.0)
        try:
            with pytest.raises(BackendFailure):
                backend.predict(rng.random((3, 3, 1)))
        finally:
            backend.close()

    def test_error_response_fails_batch(self, rng):
        backend = ExternalBackend(echo_address("--classes 3", "--error-every 3"), timeout=10.0)
        try:
            with pytest.raises(BackendFailure, match="injected failure"):
                backend.predict_batch([rng.random((2, 2, 1)) for _ in range(4)])
        finally:
            backend.close()

    def test_timeout_fails(self, rng):
        backend = ExternalBackend(echo_address("--classes 3", "--sleep 5"), timeout=0.4)
        try:
            with pytest.raises(BackendFailure):
                backend.predict(rng.random((2, 2, 1)))
        finally:
            backend.close()

    def test_declared_class_count_enforced(self, rng):
        backend = ExternalBackend(echo_address("--classes 3"), num_classes=5, timeout=10.0)
        try:
            with pytest.raises(BackendFailure, match="expected 5"):
                backend.predict(rng.random((3, 3, 1)))
        finally:
            backend.close()

    def test_class_count_inferred_then_pinned(self, exec_backend, rng):
        assert exec_backend.num_classes is None
        exec_backend.predict(rng.random((3, 3, 1)))
        assert exec_backend.num_classes == 3


class _EchoTCPHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            request = json.loads(raw)
            data = base64.b64decode(request["data"])
            k = self.server.classes  # type: ignore[attr-defined]
            logits = list(struct.unpack(f"<{k}f", data[: 4 * k]))
            rid = request["id"] + self.server.id_offset  # type: ignore[attr-defined]
            self.wfile.write(json.dumps({"id": rid, "logits": logits}).encode() + b"\n")


class _EchoTCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, classes: int = 3, id_offset: int = 0):
        super().__init__(("127.0.0.1", 0), _EchoTCPHandler)
        self.classes = classes
        self.id_offset = id_offset


@pytest.fixture
def tcp_server():
    server = _EchoTCPServer()
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


class TestTcpLoopback:
    def test_roundtrip(self, tcp_server, rng):
        port = tcp_server.server_address[1]
        backend = ExternalBackend(f"tcp:127.0.0.1:{port}", timeout=10.0)
        try:
            imgs = [rng.random((3, 3, 1)) for _ in range(5)]
            outs = backend.predict_batch(imgs)
            for img, out in zip(imgs, outs):
                assert np.abs(out - first_k_pixels(img, 3)).max() <= 1e-6
        finally:
            backend.close()

    def test_connection_reuse_across_batches(self, tcp_server, rng):
        port = tcp_server.server_address[1]
        backend = ExternalBackend(f"tcp:127.0.0.1:{port}", timeout=10.0)
        try:
            for _ in range(3):
                img = rng.random((2, 2, 1))
                assert np.abs(backend.predict(img) - first_k_pixels(img, 3)).max() <= 1e-6
        finally:
            backend.close()

    def test_unknown_response_id_is_protocol_violation(self, rng):
        server = _EchoTCPServer(id_offset=1000)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            backend = ExternalBackend(f"tcp:127.0.0.1:{server.server_address[1]}", timeout=5.0)
            with pytest.raises(BackendFailure, match="does not match"):
                backend.predict(rng.random((2, 2, 1)))
            backend.close()
        finally:
            server.shutdown()
            server.server_close()

    def test_unreachable_host_fails(self, rng):
        sock = socket.socket()
        sock.bind(("127.0.0.1", 0))
        free_port = sock.getsockname()[1]
        sock.close()
        backend = ExternalBackend(f"tcp:127.0.0.1:{free_port}", timeout=1.0)
        with pytest.raises(BackendFailure):
            backend.predict(rng.random((2, 2, 1)))


class TestAddressParsing:
    def test_bad_addresses_rejected(self):
        for address in ["tcp:nohost", "tcp::123", "tcp:host:", "exec:", "ftp:host:1"]:
            with pytest.raises(InvalidArgumentError):
                ExternalBackend(address)

    def test_mixed_shapes_rejected(self, rng):
        backend = ExternalBackend(echo_address("--classes 3"), timeout=5.0)
        try:
            with pytest.raises(InvalidArgumentError):
                backend.predict_batch([rng.random((2, 2, 1)), rng.random((3, 3, 1))])
        finally:
            backend.close()
