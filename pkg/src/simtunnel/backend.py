"""SimBackend: what the provider terminates SIM traffic against.

Implementations: the virtual card (vsim), and the SAP client for sessions
terminating on a remote phone-hosted (e)SIM.
"""

from __future__ import annotations


class BackendError(Exception):
    pass


class BackendUnavailable(BackendError):
    """Card gone (removed, disconnected); maps to tunnel ERROR 0x01."""


class BackendTimeout(BackendError):
    """Backend exceeded the response deadline; maps to tunnel ERROR 0x02."""


class MalformedApdu(BackendError):
    """Command bytes were not a well-formed short APDU; tunnel ERROR 0x03."""


class SimBackend:
    def atr(self) -> bytes:
        raise NotImplementedError

    def exchange(self, command: bytes) -> bytes:
        """One raw command APDU in, one raw response APDU out."""
        raise NotImplementedError

    def reset(self) -> None:
        raise NotImplementedError
