"""FastAPI applications wrapping the core linkage primitives.

Three services make up a deployment: one :mod:`encoder <pprl.services.encoder>`
and one :mod:`resolver <pprl.services.resolver>` per station, plus a single
central :mod:`broker <pprl.services.broker>`.
"""

from pprl.services.broker import BrokerConfig, create_broker_app
from pprl.services.encoder import create_encoder_app
from pprl.services.resolver import ResolverConfig, create_resolver_app

__all__ = [
    "BrokerConfig",
    "ResolverConfig",
    "create_broker_app",
    "create_encoder_app",
    "create_resolver_app",
]
