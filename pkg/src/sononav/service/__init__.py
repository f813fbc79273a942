"""HTTP/WebSocket service exposing calibration, quantification and live sessions."""

from .app import create_app

__all__ = ["create_app"]
