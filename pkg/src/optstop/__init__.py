"""Finite-horizon optimal stopping for diffusions."""
