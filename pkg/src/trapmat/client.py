"""Drive the client state machine over an endpoint."""

from __future__ import annotations

import time

from .errors import DishonestServerError, ProtocolError, TransportError
from .protocol import (
    Kind,
    Message,
    Phase,
    client_init_phase1,
    client_init_phase2,
    client_init_phase3,
    client_online,
    simple_init,
    simple_finish,
    simple_request,
)
from .ring import OpCounter


class DelegationClient:
    """One improved-protocol session: ``initialize(A)`` then ``multiply(B)`` per product."""

    def __init__(self, endpoint, schedule, rng, counter=None, verify_output=False):
        self.endpoint = endpoint
        self.schedule = schedule
        self.rng = rng
        self.counter = counter if counter is not None else OpCounter()
        self.verify_output = verify_output
        self.state = None
        self.timings = {"init": 0.0, "online": 0.0}

    def _exchange(self, *msgs):
        try:
            for msg in msgs:
                self.endpoint.send(msg)
            replies = [self.endpoint.recv() for _ in msgs]
        except TransportError:
            if self.state is not None:
                self.state.abort()
            raise
        for r in replies:
            if r.kind == Kind.ABORT:
                self.state.abort()
                raise ProtocolError("server aborted the session")
        return replies

    def _guard(self, fn, *args):
        try:
            return fn(*args)
        except DishonestServerError:
            self._notify_abort()
            raise

    def _notify_abort(self):
        try:
            self.endpoint.send(Message(Kind.ABORT, self.state.session, ()))
        except TransportError:
            pass

    def initialize(self, A):
        t0 = time.perf_counter()
        self.state, msg = client_init_phase1(A, self.schedule, self.rng, self.counter)
        (reply,) = self._exchange(msg)
        _, msg = self._guard(client_init_phase2, self.state, reply)
        (reply,) = self._exchange(msg)
        self._guard(client_init_phase3, self.state, reply)
        self.timings["init"] += time.perf_counter() - t0
        return self

    def multiply(self, B, masks=None):
        t0 = time.perf_counter()
        step = client_online(self.state, B, masks=masks, verify_output=self.verify_output)
        (reply,) = self._exchange(step.request)
        out = self._guard(step.complete, reply)
        self.timings["online"] += time.perf_counter() - t0
        return out

    def multiply_once(self, A, B):
        """Once-off A @ B in two rounds: the online request rides with A_enc."""
        t0 = time.perf_counter()
        self.state, msg = client_init_phase1(A, self.schedule, self.rng, self.counter)
        (reply,) = self._exchange(msg)
        _, aenc = self._guard(client_init_phase2, self.state, reply)
        step = client_online(self.state, B, verify_output=self.verify_output)
        partials, product = self._exchange(aenc, step.request)
        self._guard(client_init_phase3, self.state, partials)
        out = self._guard(step.complete, product)
        self.timings["online"] += time.perf_counter() - t0
        return out

    @property
    def ready(self):
        return self.state is not None and self.state.phase == Phase.READY


class SimpleClient:
    """Simple-protocol session over an endpoint."""

    def __init__(self, endpoint, n1, mu, rng, counter=None):
        self.endpoint = endpoint
        self.n1, self.mu, self.rng = n1, mu, rng
        self.counter = counter if counter is not None else OpCounter()
        self.state = None

    def _exchange(self, msg):
        self.endpoint.send(msg)
        reply = self.endpoint.recv()
        if reply.kind == Kind.ABORT:
            raise ProtocolError("server aborted the session")
        return reply

    def initialize(self, A):
        self.state, msg = simple_init(A, self.n1, self.mu, self.rng, self.counter)
        self._exchange(msg)
        return self

    def multiply(self, B):
        pending = simple_request(self.state, B)
        return simple_finish(self.state, pending, self._exchange(pending.request))
