import socket
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import desk_schedule, rand
from trapmat.client import DelegationClient
from trapmat.errors import DecodeError, TransportError
from trapmat.protocol import DelegationServer, Kind, Message, Phase
from trapmat.ring import mat_mul
from trapmat.rng import SeededRng
from trapmat.transport import (
    HEADER_SIZE,
    MAX_FRAME,
    Frame,
    decode_dense,
    decode_message,
    encode_dense,
    encode_message,
    loopback_pair,
    message_bytes,
    predict_session_bytes,
    tcp_connect,
    tcp_serve,
)

SID = bytes(range(16))


def test_empty_matrix_is_eight_bytes():
    M = np.zeros((0, 0), np.uint32)
    assert encode_dense(M) == bytes(8)
    assert decode_dense(bytes(8)).shape == (0, 0)


def test_dense_layout_and_round_trip():
    M = np.array([[1, 2, 3], [4, 5, 2**32 - 1]], np.uint32)
    buf = encode_dense(M)
    assert buf[:8] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert buf[8:12] == (1).to_bytes(4, "little")
    assert np.array_equal(decode_dense(buf), M)


def test_dense_truncated_and_overlong_report_offset():
    buf = encode_dense(np.ones((2, 2), np.uint32))
    with pytest.raises(DecodeError) as e:
        decode_dense(buf[:-1])
    assert e.value.offset == 8
    with pytest.raises(DecodeError) as e:
        decode_dense(buf + b"\0")
    assert e.value.offset == len(buf)


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=200))
def test_fuzz_dense_never_crashes(buf):
    try:
        M = decode_dense(buf)
    except DecodeError:
        return
    assert encode_dense(M) == buf


def sample_messages(r):
    L1, L2 = rand(r, 6, 3), rand(r, 3, 2)
    grams = [rand(r, a, b) for a in (3, 2) for b in (3, 2)]
    return [
        Message(Kind.CHAIN_UPLOAD, SID, (L1, L2)),
        Message(Kind.CHAIN_PRODUCTS_REPLY, SID, (rand(r, 6, 3), rand(r, 6, 2), *grams)),
        Message(Kind.AENC_UPLOAD, SID, (rand(r, 4, 6),)),
        Message(Kind.AENC_PARTIALS_REPLY, SID, (rand(r, 4, 3), rand(r, 4, 2))),
        Message(Kind.ONLINE_REQUEST, SID, (rand(r, 6, 5),)),
        Message(Kind.ONLINE_REPLY, SID, (rand(r, 4, 5), rand(r, 3, 5), rand(r, 2, 5))),
        Message(Kind.ABORT, SID, ()),
    ]


@pytest.mark.parametrize("index", range(7))
def test_message_round_trip_per_kind(index):
    msg = sample_messages(SeededRng(index))[index]
    raw = message_bytes(msg)
    assert raw[:4] == b"TMX1" and raw[4] == int(msg.kind) and raw[5:21] == SID
    back = decode_message(raw)
    assert back.kind == msg.kind and back.session == msg.session
    assert all(np.array_equal(a, b) for a, b in zip(back.payload, msg.payload))
    assert message_bytes(back) == raw


def test_cross_kind_decode_rejected():
    reply = sample_messages(SeededRng(1))[1]
    frame = encode_message(reply)
    with pytest.raises(DecodeError, match="inconsistent"):
        decode_message(Frame(int(Kind.AENC_UPLOAD), frame.session, frame.body))


def test_header_errors():
    raw = bytearray(message_bytes(Message(Kind.ABORT, SID, ())))
    with pytest.raises(DecodeError, match="magic"):
        decode_message(b"XXXX" + bytes(raw[4:]))
    bad_kind = bytearray(raw)
    bad_kind[4] = 9
    with pytest.raises(DecodeError, match="kind"):
        decode_message(bytes(bad_kind))
    with pytest.raises(DecodeError, match="declares"):
        decode_message(bytes(raw) + b"\0")
    huge = Frame.parse_header
    header = bytes(raw[:21]) + (MAX_FRAME).to_bytes(8, "little")
    with pytest.raises(DecodeError, match="2\\^40"):
        huge(header)


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=300))
def test_fuzz_frames_never_crash(tail):
    for buf in (tail, message_bytes(Message(Kind.ABORT, SID, ()))[:HEADER_SIZE - 8]
                + (len(tail)).to_bytes(8, "little") + tail):
        try:
            decode_message(buf)
        except DecodeError:
            pass


def test_loopback_tap_counts_bytes_and_rounds():
    r = SeededRng(2)
    ep, _ = loopback_pair(DelegationServer())
    client = DelegationClient(ep, desk_schedule(30), r.fork())
    client.initialize(rand(r, 4, 30))
    client.multiply(rand(r, 30, 2))
    assert ep.tap.rounds == 3
    assert ep.tap.total == predict_session_bytes(4, desk_schedule(30).dims, [2])


@pytest.fixture
def tcp_server():
    server = tcp_serve(("127.0.0.1", 0), DelegationServer)
    server.start()
    yield server
    server.shutdown()
    server.server_close()


def test_tcp_round_trip(tcp_server):
    r = SeededRng(3)
    ep = tcp_connect(tcp_server.server_address)
    client = DelegationClient(ep, desk_schedule(40), r.fork())
    A, B = rand(r, 5, 40), rand(r, 40, 3)
    assert np.array_equal(client.multiply_once(A, B), mat_mul(A, B))
    assert ep.tap.rounds == 2
    ep.close()


def test_concurrent_sessions_are_isolated(tcp_server):
    errors = []
    barrier = threading.Barrier(4)

    def worker(seed):
        try:
            r = SeededRng(seed)
            ep = tcp_connect(tcp_server.server_address)
            client = DelegationClient(ep, desk_schedule(32), r.fork())
            A = rand(r, 6, 32)
            client.initialize(A)
            barrier.wait(timeout=10)
            for _ in range(5):
                B = rand(r, 32, 2)
                assert np.array_equal(client.multiply(B), mat_mul(A, B))
            ep.close()
        except Exception as exc:  # surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(s,)) for s in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(30)
    assert not errors


def test_half_close_ends_server_handler(tcp_server):
    ep = tcp_connect(tcp_server.server_address)
    ep.sock.shutdown(socket.SHUT_WR)
    assert ep.sock.recv(1) == b""  # server closes its side after our half-close
    ep.sock.close()


def test_connection_loss_mid_round_aborts_session():
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)

    def drop():
        conn, _ = listener.accept()
        conn.recv(HEADER_SIZE)
        conn.close()

    t = threading.Thread(target=drop)
    t.start()
    r = SeededRng(4)
    ep = tcp_connect(listener.getsockname())
    client = DelegationClient(ep, desk_schedule(20), r.fork())
    with pytest.raises(TransportError):
        client.initialize(rand(r, 3, 20))
    assert client.state.phase == Phase.ABORTED
    t.join()
    listener.close()


def test_connect_refused_is_transport_error():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    addr = s.getsockname()
    s.close()
    with pytest.raises(TransportError):
        tcp_connect(addr, timeout=2)
