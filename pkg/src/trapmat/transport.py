"""Wire format, loopback channel and TCP transport.

Frame layout (little-endian)::

    magic  4 bytes  b"TMX1"
    kind   1 byte   1=ChainUpload 2=ChainProductsReply 3=AEncUpload
                    4=AEncPartialsReply 5=OnlineRequest 6=OnlineReply 7=Abort
    session 16 bytes
    body_len u64
    body   u32 matrix count, then each matrix as u32 rows, u32 cols,
           rows*cols u32 words row-major
"""

from __future__ import annotations

import socket
import socketserver
import struct
import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, ProtocolError, TransportError
from .protocol import Kind, Message, validate_payload

MAGIC = b"TMX1"
HEADER = struct.Struct("<4sB16sQ")
HEADER_SIZE = HEADER.size  # 29
MAX_FRAME = 1 << 40
_DIMS = struct.Struct("<II")
_COUNT = struct.Struct("<I")


def encode_dense(M) -> bytes:
    rows, cols = M.shape
    return _DIMS.pack(rows, cols) + np.ascontiguousarray(M, dtype="<u4").tobytes()


def _decode_dense_at(buf, offset, base=0):
    if len(buf) - offset < _DIMS.size:
        raise DecodeError("truncated matrix header", base + offset)
    rows, cols = _DIMS.unpack_from(buf, offset)
    start = offset + _DIMS.size
    nbytes = 4 * rows * cols
    if len(buf) - start < nbytes:
        raise DecodeError(f"matrix {rows}x{cols} needs {nbytes} bytes, {len(buf) - start} left", base + start)
    data = np.frombuffer(buf, dtype="<u4", count=rows * cols, offset=start)
    return data.astype(np.uint32).reshape(rows, cols), start + nbytes


def decode_dense(buf) -> np.ndarray:
    M, end = _decode_dense_at(buf, 0)
    if end != len(buf):
        raise DecodeError(f"{len(buf) - end} trailing bytes after matrix", end)
    return M


def encode_body(payload) -> bytes:
    return _COUNT.pack(len(payload)) + b"".join(encode_dense(M) for M in payload)


def decode_body(buf, base=0):
    if len(buf) < _COUNT.size:
        raise DecodeError("truncated matrix count", base)
    (count,) = _COUNT.unpack_from(buf, 0)
    # every matrix needs at least its 8-byte header
    if count > (len(buf) - _COUNT.size) // _DIMS.size:
        raise DecodeError(f"body claims {count} matrices but holds {len(buf)} bytes", base)
    offset = _COUNT.size
    out = []
    for _ in range(count):
        M, offset = _decode_dense_at(buf, offset, base)
        out.append(M)
    if offset != len(buf):
        raise DecodeError(f"{len(buf) - offset} trailing bytes in body", base + offset)
    return tuple(out)


@dataclass(frozen=True)
class Frame:
    kind: int
    session: bytes
    body: bytes
    magic: bytes = MAGIC

    @property
    def body_len(self):
        return len(self.body)

    def pack(self) -> bytes:
        return HEADER.pack(self.magic, self.kind, self.session, len(self.body)) + self.body

    @classmethod
    def parse_header(cls, header):
        if len(header) < HEADER_SIZE:
            raise DecodeError(f"frame header needs {HEADER_SIZE} bytes, got {len(header)}", 0)
        magic, kind, session, body_len = HEADER.unpack_from(header, 0)
        if magic != MAGIC:
            raise DecodeError(f"bad magic {magic!r}", 0)
        if kind not in Kind._value2member_map_:
            raise DecodeError(f"unknown message kind {kind}", 4)
        if body_len > MAX_FRAME - HEADER_SIZE:
            raise DecodeError(f"frame body of {body_len} bytes exceeds the 2^40 limit", 21)
        return kind, session, body_len

    @classmethod
    def unpack(cls, buf) -> "Frame":
        kind, session, body_len = cls.parse_header(buf)
        if len(buf) != HEADER_SIZE + body_len:
            raise DecodeError(
                f"frame declares {body_len} body bytes, has {len(buf) - HEADER_SIZE}", HEADER_SIZE
            )
        return cls(kind, session, bytes(buf[HEADER_SIZE:]))


def encode_message(msg: Message) -> Frame:
    return Frame(int(msg.kind), msg.session, encode_body(msg.payload))


def decode_message(frame) -> Message:
    if isinstance(frame, (bytes, bytearray, memoryview)):
        frame = Frame.unpack(bytes(frame))
    if frame.magic != MAGIC:
        raise DecodeError(f"bad magic {frame.magic!r}", 0)
    if frame.kind not in Kind._value2member_map_:
        raise DecodeError(f"unknown message kind {frame.kind}", 4)
    payload = decode_body(frame.body, HEADER_SIZE)
    try:
        validate_payload(frame.kind, payload)
    except ProtocolError as exc:
        raise DecodeError(f"inconsistent {Kind(frame.kind).name} payload: {exc}", HEADER_SIZE) from None
    return Message(Kind(frame.kind), frame.session, payload)


def message_bytes(msg: Message) -> bytes:
    return encode_message(msg).pack()


# -- size prediction ---------------------------------------------------------------

def matrix_bytes(rows, cols):
    return _DIMS.size + 4 * rows * cols


def frame_bytes(shapes):
    return HEADER_SIZE + _COUNT.size + sum(matrix_bytes(r, c) for r, c in shapes)


def predict_session_bytes(m, dims, widths, init=True):
    """Closed-form wire bytes for an improved-protocol session.

    ``dims`` is the schedule ladder (n_0..n_d) and ``widths`` the column
    counts of the online right operands.
    """
    n, d = dims[0], len(dims) - 1
    sub = dims[1:]
    total = 0
    if init:
        total += frame_bytes([(dims[i - 1], dims[i]) for i in range(1, d + 1)])
        total += frame_bytes([(n, a) for a in sub] + [(b, a) for b in sub for a in sub])
        total += frame_bytes([(m, n)])
        total += frame_bytes([(m, a) for a in sub])
    for l in widths:
        total += frame_bytes([(n, l)])
        total += frame_bytes([(m, l)] + [(a, l) for a in sub])
    return total


def input_bytes(m, n, widths):
    """Size of the raw problem: A, every B_k and every product."""
    return 4 * (m * n + sum(n * l for l in widths) + m * sum(widths))


# -- endpoints ---------------------------------------------------------------------

class ByteTap:
    """Records every frame crossing a channel as (direction, size)."""

    def __init__(self):
        self.events = []

    def record(self, direction, size):
        self.events.append((direction, size))

    @property
    def bytes_up(self):
        return sum(s for d, s in self.events if d == "up")

    @property
    def bytes_down(self):
        return sum(s for d, s in self.events if d == "down")

    @property
    def total(self):
        return self.bytes_up + self.bytes_down

    @property
    def rounds(self):
        """Client bursts that were answered by a server burst."""
        count, prev = 0, None
        for direction, _ in self.events:
            if direction == "down" and prev == "up":
                count += 1
            prev = direction
        return count

    def reset(self):
        self.events.clear()


class Endpoint:
    """Send and receive protocol messages as frames."""

    def send(self, msg: Message):
        self.send_frame(message_bytes(msg))

    def recv(self) -> Message:
        return decode_message(self.recv_frame())

    def send_frame(self, data: bytes):
        raise NotImplementedError

    def recv_frame(self) -> bytes:
        raise NotImplementedError

    def close(self):
        pass


class LoopbackEndpoint(Endpoint):
    def __init__(self, inbox, outbox, tap, direction, pump=None):
        self._inbox = inbox
        self._outbox = outbox
        self.tap = tap
        self._direction = direction
        self._pump = pump
        self.closed = False

    def send_frame(self, data):
        if self.closed:
            raise TransportError("endpoint closed")
        self.tap.record(self._direction, len(data))
        self._outbox.append(bytes(data))

    def recv_frame(self):
        if not self._inbox and self._pump is not None:
            self._pump()
        if not self._inbox:
            raise TransportError("no frame available on loopback channel")
        return self._inbox.popleft()

    def pending(self):
        return len(self._inbox)

    def close(self):
        self.closed = True


def loopback_pair(handler=None):
    """In-memory client/server endpoints sharing one :class:`ByteTap`.

    With ``handler`` (a :class:`DelegationServer`-like object with
    ``handle(msg)``), the server side is served inline: a client ``recv`` on
    an empty queue first processes every pending request.
    """
    up, down = deque(), deque()
    tap = ByteTap()
    server = LoopbackEndpoint(up, down, tap, "down")
    pump = (lambda: serve_pending(server, handler)) if handler is not None else None
    client = LoopbackEndpoint(down, up, tap, "up", pump=pump)
    return client, server


def serve_pending(endpoint, handler):
    while endpoint.pending():
        reply = handler.handle(endpoint.recv())
        if reply is not None:
            endpoint.send(reply)


def _recv_exact(sock, n):
    chunks = []
    while n:
        try:
            chunk = sock.recv(min(n, 1 << 20))
        except OSError as exc:
            raise TransportError(f"connection error: {exc}") from exc
        if not chunk:
            raise TransportError("connection closed mid-frame")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


class SocketEndpoint(Endpoint):
    def __init__(self, sock):
        self.sock = sock
        self.tap = ByteTap()

    def send_frame(self, data):
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc
        self.tap.record("up", len(data))

    def recv_frame(self):
        header = _recv_exact(self.sock, HEADER_SIZE)
        _, _, body_len = Frame.parse_header(header)
        data = header + _recv_exact(self.sock, body_len)
        self.tap.record("down", len(data))
        return data

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_WR)
        except OSError:
            pass
        self.sock.close()


def tcp_connect(addr, timeout=None) -> SocketEndpoint:
    host, port = addr
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return SocketEndpoint(sock)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        endpoint = SocketEndpoint(self.request)
        handler = self.server.handler_factory()
        while True:
            try:
                header = self.request.recv(1, socket.MSG_PEEK)
            except OSError:
                return
            if not header:  # client half-closed
                return
            try:
                msg = decode_message(endpoint.recv_frame())
            except TransportError:
                return
            reply = handler.handle(msg)
            if reply is not None:
                try:
                    endpoint.send_frame(message_bytes(reply))
                except TransportError:
                    return
            if self.server.on_message is not None:
                self.server.on_message(msg, reply, endpoint.tap)


class TcpServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, handler_factory, on_message=None):
        self.handler_factory = handler_factory
        self.on_message = on_message
        super().__init__(addr, _Handler)

    def start(self):
        """Serve from a background thread; returns the thread."""
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t


def tcp_serve(addr, handler_factory, on_message=None) -> TcpServer:
    """Bind a threaded server; each connection gets ``handler_factory()``."""
    return TcpServer(addr, handler_factory, on_message)
