"""Graduation-error asymptotics and arbitrary-functions limits by simulation."""

__version__ = "0.1.0"
