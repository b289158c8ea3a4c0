"""Client library for the batch scoring service.

Exposes a synchronous, thread-safe client that scores rollout batches and
fetches group-normalized advantages over the service's JSON protocol. See
:mod:`trainer_client.client` for the retry and validation rules.
"""

from .client import (
    BASE_URL_ENV_VAR,
    DEFAULT_BASE_URL,
    ClientConfig,
    ScoredRollout,
    ScoringClient,
)
from .errors import (
    BatchTooLargeError,
    ClientError,
    ProtocolError,
    ServiceError,
    TransportError,
)

__all__ = [
    "BASE_URL_ENV_VAR",
    "DEFAULT_BASE_URL",
    "BatchTooLargeError",
    "ClientConfig",
    "ClientError",
    "ProtocolError",
    "ScoredRollout",
    "ScoringClient",
    "ServiceError",
    "TransportError",
]

__version__ = "0.1.0"
