"""Exception hierarchy shared by every layer."""


class TrapmatError(Exception):
    pass


class ShapeError(TrapmatError, ValueError):
    pass


class ConfigError(TrapmatError, ValueError):
    """Bad parameters or a security-table lookup that cannot be satisfied."""


class FallbackError(ConfigError):
    """Delegation cannot beat local computation for these parameters."""


class ProtocolError(TrapmatError):
    """Message out of phase, wrong session, or malformed payload."""


class DishonestServerError(ProtocolError):
    """A server reply failed verification; the session has been aborted."""


class TransportError(TrapmatError):
    pass


class DecodeError(TransportError, ValueError):
    def __init__(self, msg, offset=None):
        if offset is not None:
            msg = f"{msg} (at byte offset {offset})"
        super().__init__(msg)
        self.offset = offset


class GeneratorExhausted(TrapmatError):
    """Targeted generator has handed out all precomputed blocks; refill required."""
