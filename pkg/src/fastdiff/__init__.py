"""Fast diffusion ``u_t = Lap(u^m)`` on domains with holes."""
__version__ = "0.1.0"
