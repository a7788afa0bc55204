"""Client state machines and server handlers, independent of transport.

Improved protocol, message flow::

    client                                   server
    ChainUpload(L_1..L_d)               ->
                                        <-   ChainProductsReply(fwd, gram)
    AEncUpload(A + A')                  ->
                                        <-   AEncPartialsReply(A_enc fwd[i])
    OnlineRequest(B + B')               ->                       (per product)
                                        <-   OnlineReply(A_enc B_enc, fwd[i]^T B_enc)

The simple protocol skips the chain: the client sends AEncUpload on a fresh
session and the server answers with an empty partials reply.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DishonestServerError, ProtocolError, ShapeError
from .lpn import LpnSchedule, lambda_prime_union, sample_noise, sample_uniform
from .ring import (
    OpCounter,
    add_sparse_into,
    dense_sparse_mul,
    mat_add,
    mat_mul,
    mat_sub,
    sparse_dense_mul,
    transpose,
)
from .trapdoor import (
    ChainProducts,
    LeftMaskSecret,
    SubspaceChain,
    chain_products_local,
    expand_left_mask,
    expand_right_mask,
    fast_AB_prime,
    fast_Aprime_Benc,
    gen_chain,
    left_partials_from_secret,
    sample_left_secret,
    sample_right_secret,
)
from .verify import CheckConfig, check_partial_products, freivalds_check

SESSION_BYTES = 16


class Kind(enum.IntEnum):
    CHAIN_UPLOAD = 1
    CHAIN_PRODUCTS_REPLY = 2
    AENC_UPLOAD = 3
    AENC_PARTIALS_REPLY = 4
    ONLINE_REQUEST = 5
    ONLINE_REPLY = 6
    ABORT = 7


@dataclass(frozen=True)
class Message:
    kind: Kind
    session: bytes
    payload: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if len(self.session) != SESSION_BYTES:
            raise ProtocolError(f"session id must be {SESSION_BYTES} bytes")
        object.__setattr__(self, "payload", tuple(self.payload))


def _chain_reply_depth(count):
    d = 0
    while d * d + d < count:
        d += 1
    if d * d + d != count:
        raise ProtocolError(f"chain products reply carries {count} matrices, not d + d^2")
    return d


def validate_payload(kind, payload):
    """Session-independent structural checks on a message payload."""
    kind = Kind(kind)
    k = len(payload)
    if kind == Kind.CHAIN_UPLOAD:
        if k == 0:
            raise ProtocolError("chain upload needs at least one subspace matrix")
        for i in range(1, k):
            if payload[i - 1].shape[1] != payload[i].shape[0]:
                raise ProtocolError(f"chain links {i} and {i + 1} do not compose")
    elif kind == Kind.CHAIN_PRODUCTS_REPLY:
        d = _chain_reply_depth(k)
        fwd, grams = payload[:d], payload[d:]
        for i in range(1, d):
            if fwd[i].shape[0] != fwd[0].shape[0]:
                raise ProtocolError("forward products disagree on row count")
        widths = [f.shape[1] for f in fwd]
        for j in range(d):
            for i in range(d):
                if grams[j * d + i].shape != (widths[j], widths[i]):
                    raise ProtocolError(f"gram[{j + 1}][{i + 1}] has shape {grams[j * d + i].shape}")
    elif kind in (Kind.AENC_UPLOAD, Kind.ONLINE_REQUEST):
        if k != 1:
            raise ProtocolError(f"{kind.name} carries exactly one matrix, got {k}")
    elif kind == Kind.AENC_PARTIALS_REPLY:
        if len({p.shape[0] for p in payload}) > 1:
            raise ProtocolError("A_enc partials disagree on row count")
    elif kind == Kind.ONLINE_REPLY:
        if k < 1:
            raise ProtocolError("online reply carries the product plus probes")
        if len({p.shape[1] for p in payload}) > 1:
            raise ProtocolError("online reply matrices disagree on column count")
    elif kind == Kind.ABORT:
        if k:
            raise ProtocolError("abort carries no matrices")


class Phase(enum.Enum):
    INIT_SENT_CHAIN = "init-sent-chain"
    INIT_SENT_AENC = "init-sent-aenc"
    READY = "ready"
    ABORTED = "aborted"


@dataclass
class ClientState:
    schedule: LpnSchedule
    A: np.ndarray
    rng: object
    session: bytes
    counter: OpCounter = field(default_factory=OpCounter)
    chain: SubspaceChain = None
    chain_products: ChainProducts = None
    left_secret: LeftMaskSecret = None
    A_enc: np.ndarray = None
    left_partials: list = None   # [A, A L_1, ..., A L_1...L_d] once READY
    phase: Phase = Phase.INIT_SENT_CHAIN

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]

    def check_cfg(self):
        return CheckConfig(check_lambda_prime(self.schedule), self.rng, self.counter)

    def abort(self):
        self.phase = Phase.ABORTED
        if self.left_secret is not None:
            self.left_secret.zeroize()
        self.left_secret = None
        self.left_partials = None


def _expect(state, msg, kind):
    if state.phase == Phase.ABORTED:
        raise ProtocolError("session aborted")
    if msg.session != state.session:
        raise ProtocolError("reply belongs to a different session")
    if msg.kind != kind:
        raise ProtocolError(f"expected {kind.name}, got {msg.kind.name}")


def _require(state, *phases):
    if state.phase == Phase.ABORTED:
        raise ProtocolError("session aborted")
    if state.phase not in phases:
        raise ProtocolError(f"operation not allowed in phase {state.phase.value}")


def _dishonest(state, what):
    state.abort()
    raise DishonestServerError(f"server reply failed verification: {what}")


def init_check_count(d):
    """Freivalds levels run during initialization: chain, gram rows, A_enc partials."""
    return (d - 1) + d * d + d


def check_lambda_prime(schedule: LpnSchedule) -> int:
    """Probe width with a union bound over every initialization check."""
    return lambda_prime_union(schedule.lam, init_check_count(schedule.d))


def new_session_id(rng):
    return rng.bytes(SESSION_BYTES)


# -- improved protocol, client side ------------------------------------------------

def client_init_phase1(A, schedule: LpnSchedule, rng, counter=None, session=None):
    if A.ndim != 2 or A.shape[1] != schedule.n:
        raise ShapeError(f"A is {A.shape} but the schedule is for n={schedule.n}")
    if schedule.d < 1:
        raise ProtocolError("the improved protocol needs a schedule with at least one layer")
    session = session if session is not None else new_session_id(rng)
    state = ClientState(schedule=schedule, A=A, rng=rng, session=session,
                        counter=counter if counter is not None else OpCounter())
    state.chain = gen_chain(schedule, rng)
    return state, Message(Kind.CHAIN_UPLOAD, session, tuple(state.chain.L))


def _parse_chain_reply(state, reply):
    d = state.schedule.d
    dims = state.schedule.dims
    payload = reply.payload
    if len(payload) != d + d * d:
        raise ProtocolError(f"chain products reply has {len(payload)} matrices, expected {d + d * d}")
    fwd = [None] + list(payload[:d])
    gram = [[None] * (d + 1) for _ in range(d + 1)]
    for i in range(1, d + 1):
        if fwd[i].shape != (dims[0], dims[i]):
            raise ProtocolError(f"fwd[{i}] has shape {fwd[i].shape}")
        gram[0][i] = fwd[i]
        gram[i][0] = transpose(fwd[i])
    for j in range(1, d + 1):
        for i in range(1, d + 1):
            g = payload[d + (j - 1) * d + (i - 1)]
            if g.shape != (dims[j], dims[i]):
                raise ProtocolError(f"gram[{j}][{i}] has shape {g.shape}")
            gram[j][i] = g
    return ChainProducts(fwd=fwd, gram=gram)


def verify_chain_products(chain, products, cfg) -> bool:
    """Check every claimed fwd and gram entry against the chain."""
    L = chain.L
    d = len(L)
    if not np.array_equal(products.fwd[1], L[0]):
        return False
    if not check_partial_products(L, products.fwd[2:], cfg):
        return False
    for j in range(1, d + 1):
        # gram[j][i] = fwd[j]^T L_1 ... L_i, a prefix-product chain
        row = [products.gram[j][i] for i in range(1, d + 1)]
        if not check_partial_products([products.gram[j][0]] + L, row, cfg):
            return False
    return True


def client_init_phase2(state: ClientState, reply: Message):
    _require(state, Phase.INIT_SENT_CHAIN)
    _expect(state, reply, Kind.CHAIN_PRODUCTS_REPLY)
    products = _parse_chain_reply(state, reply)
    if not verify_chain_products(state.chain, products, state.check_cfg()):
        _dishonest(state, "subspace chain products")
    state.chain_products = products
    state.left_secret = sample_left_secret(state.schedule, state.m, state.rng)
    A_prime = expand_left_mask(products.fwd, state.left_secret, state.counter)
    state.A_enc = mat_add(state.A, A_prime)
    state.phase = Phase.INIT_SENT_AENC
    return state, Message(Kind.AENC_UPLOAD, state.session, (state.A_enc,))


def client_init_phase3(state: ClientState, reply: Message):
    _require(state, Phase.INIT_SENT_AENC)
    _expect(state, reply, Kind.AENC_PARTIALS_REPLY)
    d, dims, m = state.schedule.d, state.schedule.dims, state.m
    partials = list(reply.payload)
    if len(partials) != d:
        raise ProtocolError(f"expected {d} A_enc partial products, got {len(partials)}")
    for i, p in enumerate(partials, 1):
        if p.shape != (m, dims[i]):
            raise ProtocolError(f"A_enc partial {i} has shape {p.shape}")
    if not check_partial_products([state.A_enc] + state.chain.L, partials, state.check_cfg()):
        _dishonest(state, "A_enc partial products")
    masked = left_partials_from_secret(state.chain_products.gram, state.left_secret, state.counter)
    state.left_partials = [state.A] + [mat_sub(partials[i - 1], masked[i]) for i in range(1, d + 1)]
    state.phase = Phase.READY
    return state


class OnlineStep:
    """One pending online multiplication: send ``request``, feed the reply to ``complete``."""

    def __init__(self, state, B, B_enc, secret=None, AB_prime=None, verify_output=False):
        self.state = state
        self.B = B
        self.B_enc = B_enc
        self.request = Message(Kind.ONLINE_REQUEST, state.session, (B_enc,))
        self._secret = secret
        self._AB_prime = AB_prime
        self._verify = verify_output
        self.done = False

    def complete(self, reply: Message) -> np.ndarray:
        state = self.state
        if self.done:
            raise ProtocolError("online step already completed")
        _require(state, Phase.READY)
        _expect(state, reply, Kind.ONLINE_REPLY)
        d, dims = state.schedule.d, state.schedule.dims
        m, l = state.m, self.B_enc.shape[1]
        if len(reply.payload) != d + 1:
            raise ProtocolError(f"online reply has {len(reply.payload)} matrices, expected {d + 1}")
        product, probes = reply.payload[0], list(reply.payload[1:])
        if product.shape != (m, l):
            raise ProtocolError(f"product has shape {product.shape}, expected {(m, l)}")
        for i, q in enumerate(probes, 1):
            if q.shape != (dims[i], l):
                raise ProtocolError(f"probe {i} has shape {q.shape}")
        if self._AB_prime is None:
            self._AB_prime = fast_AB_prime(state.left_partials, self._secret, state.counter)
            self._secret.zeroize()
        Ap_Benc = fast_Aprime_Benc(state.left_secret, [self.B_enc] + probes, state.counter)
        result = mat_sub(mat_sub(product, self._AB_prime), Ap_Benc)
        self.done = True
        if self._verify and not freivalds_check(state.A, self.B, result, state.check_cfg()):
            _dishonest(state, "online product")
        return result


def client_online(state: ClientState, B, rng=None, masks=None, verify_output=False) -> OnlineStep:
    """Mask ``B`` and return the pending step.

    Allowed once the chain products are verified, so a once-off product can
    ride along with the A_enc upload; ``complete`` still requires READY.
    ``masks`` may supply a precomputed ``(B', A B')`` pair.
    """
    _require(state, Phase.READY, Phase.INIT_SENT_AENC)
    if B.ndim != 2 or B.shape[0] != state.n:
        raise ShapeError(f"B is {B.shape}, expected {state.n} rows")
    rng = rng if rng is not None else state.rng
    if masks is not None:
        B_prime, AB_prime = masks
        if B_prime.shape != B.shape or AB_prime.shape != (state.m, B.shape[1]):
            raise ShapeError("supplied masks do not match B")
        return OnlineStep(state, B, mat_add(B, B_prime), AB_prime=AB_prime, verify_output=verify_output)
    secret = sample_right_secret(state.schedule, B.shape[1], rng)
    B_prime = expand_right_mask(state.chain_products.fwd, secret, state.counter)
    return OnlineStep(state, B, mat_add(B, B_prime), secret=secret, verify_output=verify_output)


# -- simple protocol, client side --------------------------------------------------

@dataclass
class SimpleClientState:
    A: np.ndarray
    L: np.ndarray
    H: np.ndarray
    S: object
    mu: object
    AL: np.ndarray
    A_enc: np.ndarray
    A_encL: np.ndarray
    rng: object
    session: bytes
    counter: OpCounter


def simple_init(A, n1, mu, rng, counter=None, session=None):
    """Mask A with A' = H L^T + S and precompute A L, A_enc L."""
    m, n = A.shape
    if not 0 < n1 < n:
        raise ShapeError(f"subspace dimension must satisfy 0 < n1 < n, got n1={n1}, n={n}")
    counter = counter if counter is not None else OpCounter()
    session = session if session is not None else new_session_id(rng)
    L = sample_uniform(n, n1, rng)
    H = sample_uniform(m, n1, rng)
    S = sample_noise(m, n, mu, rng)
    A_prime = add_sparse_into(mat_mul(H, transpose(L), counter), S)
    A_enc = mat_add(A, A_prime)
    state = SimpleClientState(
        A=A, L=L, H=H, S=S, mu=mu,
        AL=mat_mul(A, L, counter), A_enc=A_enc, A_encL=mat_mul(A_enc, L, counter),
        rng=rng, session=session, counter=counter,
    )
    return state, Message(Kind.AENC_UPLOAD, session, (A_enc,))


@dataclass
class SimplePending:
    B_enc: np.ndarray
    AB_prime: np.ndarray
    request: Message


def simple_request(state: SimpleClientState, B, rng=None) -> SimplePending:
    if B.ndim != 2 or B.shape[0] != state.A.shape[1]:
        raise ShapeError(f"B is {B.shape}, expected {state.A.shape[1]} rows")
    rng = rng if rng is not None else state.rng
    l = B.shape[1]
    G = sample_uniform(state.L.shape[1], l, rng)
    T = sample_noise(B.shape[0], l, state.mu, rng)
    B_enc = mat_add(B, add_sparse_into(mat_mul(state.L, G, state.counter), T))
    AB_prime = mat_add(mat_mul(state.AL, G, state.counter), dense_sparse_mul(state.A, T, state.counter))
    return SimplePending(B_enc, AB_prime, Message(Kind.ONLINE_REQUEST, state.session, (B_enc,)))


def simple_finish(state: SimpleClientState, pending: SimplePending, server_product) -> np.ndarray:
    if isinstance(server_product, Message):
        if server_product.session != state.session or server_product.kind != Kind.ONLINE_REPLY:
            raise ProtocolError("unexpected reply for simple-protocol product")
        server_product = server_product.payload[0]
    m, l = state.A.shape[0], pending.B_enc.shape[1]
    if server_product.shape != (m, l):
        raise ShapeError(f"server product is {server_product.shape}, expected {(m, l)}")
    LtB = mat_mul(transpose(state.L), pending.B_enc, state.counter)
    Ap_Benc = mat_add(mat_mul(state.H, LtB, state.counter), sparse_dense_mul(state.S, pending.B_enc, state.counter))
    return mat_sub(mat_sub(server_product, pending.AB_prime), Ap_Benc)


def simple_mul(state: SimpleClientState, B, exchange) -> np.ndarray:
    """Full simple-protocol product; ``exchange`` maps a request Message to its reply."""
    pending = simple_request(state, B)
    return simple_finish(state, pending, exchange(pending.request))


# -- server side --------------------------------------------------------------------

class ServerSession:
    """The server's view of one session: public values only."""

    def __init__(self, session_id, counter=None):
        self.session = session_id
        self.counter = counter if counter is not None else OpCounter()
        self.chain = None
        self.chain_products = None
        self.A_enc = None
        self.ready = False
        self._Lt = []

    def _reply(self, kind, payload):
        return Message(kind, self.session, tuple(payload))

    def on_chain(self, msg: Message) -> Message:
        if self.chain is not None or self.A_enc is not None:
            raise ProtocolError("chain already uploaded for this session")
        if not msg.payload:
            raise ProtocolError("empty chain: the improved protocol needs d >= 1")
        validate_payload(Kind.CHAIN_UPLOAD, msg.payload)
        self.chain = SubspaceChain(list(msg.payload))
        self._Lt = [transpose(L) for L in self.chain.L]
        self.chain_products = chain_products_local(self.chain, self.counter)
        cp = self.chain_products
        d = self.chain.d
        payload = cp.fwd[1:] + [cp.gram[j][i] for j in range(1, d + 1) for i in range(1, d + 1)]
        return self._reply(Kind.CHAIN_PRODUCTS_REPLY, payload)

    def on_aenc(self, msg: Message) -> Message:
        if self.A_enc is not None:
            raise ProtocolError("A_enc already uploaded for this session")
        (A_enc,) = msg.payload
        partials = []
        if self.chain is not None:
            if A_enc.shape[1] != self.chain.dims[0]:
                raise ShapeError(f"A_enc has {A_enc.shape[1]} columns, chain expects {self.chain.dims[0]}")
            acc = A_enc
            for L in self.chain.L:
                acc = mat_mul(acc, L, self.counter)
                partials.append(acc)
        self.A_enc = A_enc
        self.ready = True
        return self._reply(Kind.AENC_PARTIALS_REPLY, partials)

    def on_online(self, msg: Message) -> Message:
        if not self.ready:
            raise ProtocolError("session not ready for online requests")
        (B_enc,) = msg.payload
        if B_enc.shape[0] != self.A_enc.shape[1]:
            raise ShapeError(f"B_enc has {B_enc.shape[0]} rows, A_enc has {self.A_enc.shape[1]} columns")
        payload = [self.online_product(B_enc)]
        acc = B_enc
        for Lt in self._Lt:
            acc = mat_mul(Lt, acc, self.counter)
            payload.append(acc)
        return self._reply(Kind.ONLINE_REPLY, payload)

    def online_product(self, B_enc):
        """The one naive-size product; subclasses may override to misbehave."""
        return mat_mul(self.A_enc, B_enc, self.counter)


class DelegationServer:
    """Dispatches messages to independent per-session state."""

    session_factory = ServerSession

    def __init__(self, session_factory=None):
        if session_factory is not None:
            self.session_factory = session_factory
        self.sessions = {}

    def session(self, sid):
        if sid not in self.sessions:
            self.sessions[sid] = self.session_factory(sid)
        return self.sessions[sid]

    def handle(self, msg: Message):
        """Reply to ``msg``; returns None for an abort notice."""
        if msg.kind == Kind.ABORT:
            self.sessions.pop(msg.session, None)
            return None
        sess = self.session(msg.session)
        try:
            if msg.kind == Kind.CHAIN_UPLOAD:
                return sess.on_chain(msg)
            if msg.kind == Kind.AENC_UPLOAD:
                return sess.on_aenc(msg)
            if msg.kind == Kind.ONLINE_REQUEST:
                return sess.on_online(msg)
            raise ProtocolError(f"server cannot handle {msg.kind.name}")
        except (ProtocolError, ShapeError, ValueError):
            self.sessions.pop(msg.session, None)
            return Message(Kind.ABORT, msg.session, ())
