"""Euler-type solver for Volterra integro-differential equations with Richardson error control."""

__version__ = "0.1.0"
