"""Day-ahead market auction models with N-1 security: build, solve, price and stress-test."""

__version__ = "0.1.0"
