"""HTTP service wrapping the simulator; the CLI is a thin client of it."""

from fedledger.service.app import create_app

__all__ = ["create_app"]
