"""Confidential delegation of matrix multiplication over Z/2^32Z using LPN-masked trapdoored matrices."""

from .client import DelegationClient, SimpleClient
from .errors import (
    ConfigError,
    DecodeError,
    DishonestServerError,
    FallbackError,
    ProtocolError,
    ShapeError,
    TransportError,
    TrapmatError,
)
from .lpn import LpnSchedule, SecurityTable, build_schedule
from .protocol import DelegationServer, ServerSession
from .ring import OpCounter, SparseMatrix, mat_mul
from .rng import SeededRng
from .transport import loopback_pair, tcp_connect, tcp_serve

__all__ = [
    "ConfigError", "DecodeError", "DelegationClient", "DelegationServer", "DishonestServerError",
    "FallbackError", "LpnSchedule", "OpCounter", "ProtocolError", "SecurityTable", "SeededRng",
    "ServerSession", "ShapeError", "SimpleClient", "SparseMatrix", "TransportError", "TrapmatError",
    "build_schedule", "loopback_pair", "mat_mul", "tcp_connect", "tcp_serve",
]
