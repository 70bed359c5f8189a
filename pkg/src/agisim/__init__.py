"""Gimbal-mounted airborne IMU signal simulator with strapdown self-verification."""

__version__ = "0.1.0"
