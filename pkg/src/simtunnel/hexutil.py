"""Hex string helpers shared by profiles, rule files, and the CLI."""


def h2b(s: str) -> bytes:
    """Hex string (whitespace tolerated) to bytes."""
    return bytes.fromhex("".join(s.split()))


def b2h(b: bytes) -> str:
    """Bytes to lowercase hex string."""
    return bytes(b).hex()


def swap_nibbles(b: bytes) -> bytes:
    """Swap the two nibbles of every octet (BCD telecom byte order)."""
    return bytes(((x & 0x0F) << 4) | (x >> 4) for x in b)
