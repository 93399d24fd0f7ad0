"""simtunnel: inspect, rewrite, and relay SIM-card APDU traffic in software.

The two tunnel endpoints (the modem-facing card emulator and the
SIM-terminating backend) negotiate their card parameters independently;
only APDUs cross the tunnel.
"""

__version__ = "0.1.0"
