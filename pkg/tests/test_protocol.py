from fractions import Fraction

import numpy as np
import pytest

from conftest import bump, desk_schedule, object_mul, rand
from trapmat.errors import DishonestServerError, ProtocolError, ShapeError
from trapmat.protocol import (
    DelegationServer,
    Kind,
    Message,
    Phase,
    ServerSession,
    check_lambda_prime,
    init_check_count,
    client_init_phase1,
    client_init_phase2,
    client_init_phase3,
    client_online,
    simple_init,
    simple_mul,
)
from trapmat.ring import identity, mat_mul, transpose, zeros
from trapmat.rng import SeededRng
from trapmat.trapdoor import chain_products_local


def run_init(A, schedule, seed, server=None):
    """Drive the three client phases against an in-process server."""
    server = server or DelegationServer()
    state, msg = client_init_phase1(A, schedule, SeededRng(seed))
    _, msg = client_init_phase2(state, server.handle(msg))
    client_init_phase3(state, server.handle(msg))
    return state, server


def online(state, server, B):
    step = client_online(state, B)
    return step.complete(server.handle(step.request))


@pytest.mark.parametrize("m,n,l", [(7, 9, 4), (1, 5, 1), (20, 64, 5)])
def test_protocol_exact(m, n, l):
    r = SeededRng(m * n * l)
    A, B = rand(r, m, n), rand(r, n, l)
    state, server = run_init(A, desk_schedule(n), 1)
    assert state.phase == Phase.READY
    assert np.array_equal(online(state, server, B), object_mul(A, B))


def test_online_zero_and_identity():
    r = SeededRng(2)
    A = rand(r, 6, 12)
    state, server = run_init(A, desk_schedule(12), 3)
    assert not online(state, server, zeros(12, 3)).any()
    assert np.array_equal(online(state, server, identity(12)), A)


def test_zero_A_partials_are_zero():
    state, _ = run_init(zeros(4, 20), desk_schedule(20), 4)
    assert all(not p.any() for p in state.left_partials[1:])


def test_many_seeds_small():
    for seed in range(50):
        r = SeededRng(seed)
        A, B = rand(r, 7, 9), rand(r, 9, 4)
        state, server = run_init(A, desk_schedule(9), seed)
        assert np.array_equal(online(state, server, B), mat_mul(A, B))


def test_phase_errors():
    r = SeededRng(5)
    A = rand(r, 3, 10)
    state, msg = client_init_phase1(A, desk_schedule(10), r)
    with pytest.raises(ProtocolError):
        client_online(state, rand(r, 10, 1))
    with pytest.raises(ProtocolError):
        client_init_phase3(state, Message(Kind.AENC_PARTIALS_REPLY, state.session, ()))
    with pytest.raises(ShapeError):
        client_init_phase1(rand(r, 3, 11), desk_schedule(10), r)


def test_reply_from_other_session_rejected():
    r = SeededRng(6)
    A = rand(r, 3, 10)
    server = DelegationServer()
    state, msg = client_init_phase1(A, desk_schedule(10), r)
    reply = server.handle(msg)
    forged = Message(reply.kind, bytes(16), reply.payload)
    with pytest.raises(ProtocolError, match="different session"):
        client_init_phase2(state, forged)


def _tamper(msg, index, delta=1):
    payload = [p.copy() for p in msg.payload]
    bump(payload[index], 0, 0, delta)
    return Message(msg.kind, msg.session, payload)


def test_tampered_gram_aborts_and_zeroizes():
    r = SeededRng(7)
    A = rand(r, 4, 30)
    s = desk_schedule(30)
    server = DelegationServer()
    state, msg = client_init_phase1(A, s, r)
    reply = server.handle(msg)
    with pytest.raises(DishonestServerError):
        client_init_phase2(state, _tamper(reply, s.d))  # gram[1][1]
    assert state.phase == Phase.ABORTED
    with pytest.raises(ProtocolError, match="aborted"):
        client_init_phase2(state, reply)


def test_tampered_aenc_partial_aborts():
    r = SeededRng(8)
    A = rand(r, 4, 30)
    server = DelegationServer()
    state, msg = client_init_phase1(A, desk_schedule(30), r)
    _, msg = client_init_phase2(state, server.handle(msg))
    with pytest.raises(DishonestServerError):
        client_init_phase3(state, _tamper(server.handle(msg), 0))
    assert state.phase == Phase.ABORTED and state.left_secret is None


def test_server_chain_reply_matches_local():
    r = SeededRng(9)
    s = desk_schedule(40)
    state, msg = client_init_phase1(rand(r, 2, 40), s, r)
    reply = DelegationServer().handle(msg)
    cp = chain_products_local(state.chain)
    d = s.d
    assert len(reply.payload) == d + d * d
    for i in range(1, d + 1):
        assert np.array_equal(reply.payload[i - 1], cp.fwd[i])


def test_server_depth_one_reply():
    r = SeededRng(10)
    L = rand(r, 6, 4)
    reply = DelegationServer().handle(Message(Kind.CHAIN_UPLOAD, bytes(16), (L,)))
    assert np.array_equal(reply.payload[0], L)
    assert np.array_equal(reply.payload[1], mat_mul(transpose(L), L))


def test_server_rejects_empty_chain_and_unready_online():
    server = DelegationServer()
    assert server.handle(Message(Kind.CHAIN_UPLOAD, bytes(16), ())).kind == Kind.ABORT
    r = SeededRng(11)
    assert server.handle(Message(Kind.ONLINE_REQUEST, b"x" * 16, (rand(r, 3, 1),))).kind == Kind.ABORT


def test_server_online_zero_and_vector():
    r = SeededRng(12)
    sess = ServerSession(bytes(16))
    L1, L2 = rand(r, 10, 4), rand(r, 4, 2)
    sess.on_chain(Message(Kind.CHAIN_UPLOAD, bytes(16), (L1, L2)))
    A_enc = rand(r, 3, 10)
    sess.on_aenc(Message(Kind.AENC_UPLOAD, bytes(16), (A_enc,)))
    rep = sess.on_online(Message(Kind.ONLINE_REQUEST, bytes(16), (zeros(10, 2),)))
    assert all(not p.any() for p in rep.payload)
    v = rand(r, 10, 1)
    rep = sess.on_online(Message(Kind.ONLINE_REQUEST, bytes(16), (v,)))
    assert np.array_equal(rep.payload[0], mat_mul(A_enc, v))
    assert np.array_equal(rep.payload[2], mat_mul(transpose(mat_mul(L1, L2)), v))


def test_client_sends_only_public_values():
    """Every matrix the client emits is a chain link, A_enc, or some B_enc."""
    r = SeededRng(13)
    A, B = rand(r, 5, 20), rand(r, 20, 3)
    server = DelegationServer()
    sent = []

    def send(msg):
        sent.append(msg)
        return server.handle(msg)

    state, msg = client_init_phase1(A, desk_schedule(20), r)
    _, msg2 = client_init_phase2(state, send(msg))
    client_init_phase3(state, send(msg2))
    step = client_online(state, B)
    step.complete(send(step.request))
    public = {Kind.CHAIN_UPLOAD: state.chain.L, Kind.AENC_UPLOAD: [state.A_enc],
              Kind.ONLINE_REQUEST: [step.B_enc]}
    for msg in sent:
        assert msg.kind in public
        for M in msg.payload:
            assert any(M is P for P in public[msg.kind])
            assert not np.array_equal(M, A) and not np.array_equal(M, B)


def test_simple_protocol_examples():
    r = SeededRng(14)
    A, B = rand(r, 6, 16), rand(r, 16, 3)
    server = DelegationServer()
    state, msg = simple_init(A, 4, Fraction(1, 4), r)
    assert server.handle(msg).payload == ()
    out = simple_mul(state, B, server.handle)
    assert np.array_equal(out, mat_mul(A, B))
    assert not simple_mul(state, zeros(16, 2), server.handle).any()


def test_simple_init_rejects_bad_subspace():
    with pytest.raises(ShapeError):
        simple_init(zeros(2, 5), 5, Fraction(1, 4), SeededRng(1))


def test_init_check_width_uses_union_bound():
    from trapmat.lpn import build_schedule

    s = build_schedule(4096, Fraction(1, 4), Fraction(1, 2), 128, nu_value=64)
    assert init_check_count(s.d) == 2 + 9 + 3
    assert check_lambda_prime(s) == 5  # ceil((128 + 4) / 32)
    assert s.lambda_prime == 4
