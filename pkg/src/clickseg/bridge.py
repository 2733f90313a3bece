"""Wire bridge to external predictor processes.

Protocol v1, over subprocess pipes or TCP:

  1. On connect the bridge sends one handshake line:
         ITIS-BRIDGE 1 <uses_mask:0|1> <concurrent:0|1>\n
  2. Per request the client writes one GSTK1 tensor block.
  3. The bridge answers with a u32 little-endian byte length followed by a
     16-bit grayscale PNG; pixel/65535 is the foreground posterior.

Transport, protocol, and dimension failures raise distinct exceptions.
"""

from __future__ import annotations

import io
import os
import selectors
import shlex
import socket
import struct
import subprocess
import time

import numpy as np
from PIL import Image

from .guidance import GuidanceStack
from .predictor import PredictorDescriptor

PROTOCOL_BANNER = "ITIS-BRIDGE"
PROTOCOL_VERSION = 1
MAX_RESPONSE_BYTES = 1 << 30


class BridgeError(RuntimeError):
    """Base class for bridge failures."""


class BridgeTimeoutError(BridgeError):
    """The bridge did not answer within the deadline."""


class BridgeProtocolError(BridgeError):
    """The bridge sent bytes that do not follow protocol v1."""


class BridgeDimensionError(BridgeError):
    """The bridge answered with a map of the wrong size."""


class SubprocessTransport:
    """Talks protocol v1 over the stdin/stdout pipes of a child process."""

    def __init__(self, command: str | list[str]) -> None:
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.endpoint = " ".join(argv)
        self._proc = subprocess.Popen(
            argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
        )
        self._fd = self._proc.stdout.fileno()
        os.set_blocking(self._fd, False)
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._fd, selectors.EVENT_READ)

    def send(self, data: bytes) -> None:
        try:
            self._proc.stdin.write(data)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise BridgeProtocolError(f"bridge process closed its input: {e}") from e

    def recv_some(self, deadline: float) -> bytes:
        remaining = deadline - time.monotonic()
        if remaining <= 0 or not self._sel.select(remaining):
            raise BridgeTimeoutError("timed out waiting for bridge response")
        chunk = os.read(self._fd, 65536)
        if not chunk:
            raise BridgeProtocolError("bridge process closed its output")
        return chunk

    def close(self) -> None:
        self._sel.close()
        for pipe in (self._proc.stdin, self._proc.stdout):
            try:
                pipe.close()
            except OSError:
                pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


class TcpTransport:
    """Talks protocol v1 over a TCP connection."""

    def __init__(self, host: str, port: int, connect_timeout: float = 10.0) -> None:
        self.endpoint = f"{host}:{port}"
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as e:
            raise BridgeError(f"cannot connect to bridge at {self.endpoint}: {e}") from e
        self._sock.setblocking(False)
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._sock, selectors.EVENT_READ)

    def send(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as e:
            raise BridgeProtocolError(f"bridge connection broken: {e}") from e

    def recv_some(self, deadline: float) -> bytes:
        remaining = deadline - time.monotonic()
        if remaining <= 0 or not self._sel.select(remaining):
            raise BridgeTimeoutError("timed out waiting for bridge response")
        chunk = self._sock.recv(65536)
        if not chunk:
            raise BridgeProtocolError("bridge closed the connection")
        return chunk

    def close(self) -> None:
        self._sel.close()
        try:
            self._sock.close()
        except OSError:
            pass


class BridgePredictor:
    """Predictor backed by an external process speaking bridge protocol v1.

    Calls are serialized: one in-flight request per connection, enforced
    with an internal lock.
    """

    def __init__(self, transport, timeout: float = 30.0) -> None:
        import threading

        self._transport = transport
        self.timeout = timeout
        self._buf = b""
        self._lock = threading.Lock()
        uses_mask, concurrent = self._handshake()
        self.descriptor = PredictorDescriptor(
            kind="external-bridge",
            uses_mask_channel=uses_mask,
            concurrency_safe=concurrent,
            endpoint=transport.endpoint,
        )

    def _read_exact(self, n: int, deadline: float) -> bytes:
        while len(self._buf) < n:
            self._buf += self._transport.recv_some(deadline)
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def _read_line(self, deadline: float) -> bytes:
        while b"\n" not in self._buf:
            if len(self._buf) > 4096:
                raise BridgeProtocolError("handshake line too long")
            self._buf += self._transport.recv_some(deadline)
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def _handshake(self) -> tuple[bool, bool]:
        deadline = time.monotonic() + self.timeout
        line = self._read_line(deadline).decode("ascii", "replace").strip()
        parts = line.split()
        if (
            len(parts) != 4
            or parts[0] != PROTOCOL_BANNER
            or parts[1] != str(PROTOCOL_VERSION)
            or parts[2] not in ("0", "1")
            or parts[3] not in ("0", "1")
        ):
            raise BridgeProtocolError(f"bad handshake line: {line!r}")
        return parts[2] == "1", parts[3] == "1"

    def predict(self, stack: GuidanceStack) -> np.ndarray:
        with self._lock:
            deadline = time.monotonic() + self.timeout
            self._transport.send(stack.to_bytes())
            (length,) = struct.unpack("<I", self._read_exact(4, deadline))
            if length == 0 or length > MAX_RESPONSE_BYTES:
                raise BridgeProtocolError(f"unreasonable response length {length}")
            payload = self._read_exact(length, deadline)
        try:
            img = Image.open(io.BytesIO(payload))
            img.load()
        except Exception as e:
            raise BridgeProtocolError(f"response is not a decodable PNG: {e}") from e
        if img.format != "PNG" or img.mode not in ("I", "I;16"):
            raise BridgeProtocolError(
                f"response must be a 16-bit grayscale PNG, got {img.format}/{img.mode}"
            )
        arr = np.asarray(img, dtype=np.int64)
        if img.size != (stack.width, stack.height):
            raise BridgeDimensionError(
                f"bridge returned {img.size[0]}x{img.size[1]}, "
                f"expected {stack.width}x{stack.height}"
            )
        if arr.min() < 0 or arr.max() > 65535:
            raise BridgeProtocolError("response pixel values outside the u16 range")
        return (arr / 65535.0).astype(np.float32)

    def close(self) -> None:
        self._transport.close()
