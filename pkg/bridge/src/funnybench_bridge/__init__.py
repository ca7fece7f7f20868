"""Adapter exposing arbitrary models as funnybench external models.

The bridge speaks the newline-delimited JSON wire protocol over stdio or TCP:
hello on connect, then one predict/gradient request in flight at a time, each
answered under the request's id.
"""

__version__ = "0.1.0"

from .server import BridgeConfig, serve
from .loaders import load_model

__all__ = ["BridgeConfig", "serve", "load_model", "__version__"]
