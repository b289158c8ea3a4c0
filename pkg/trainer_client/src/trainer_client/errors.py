"""Error types raised by the scoring client.

The taxonomy mirrors how a training loop wants to react:

* ``BatchTooLargeError``: the caller built a batch over the configured cap.
  Raised before any network traffic so the loop can re-chunk and resubmit.
* ``ServiceError``: the service rejected the request with a 4xx status.
  Retrying an identical request cannot succeed, so it is surfaced
  immediately with the service's own message and, when present, the id of
  the offending item.
* ``TransportError``: the request never produced a usable 2xx/4xx outcome
  after retries were exhausted (connection failures, timeouts, or 5xx
  responses). Carries the last HTTP status seen, if any.
* ``ProtocolError``: the service answered but the body did not match the
  wire schema. Indicates a version mismatch or a misconfigured endpoint,
  never retried.
"""

from __future__ import annotations


class ClientError(Exception):
    """Base class for every error raised by this package."""


class BatchTooLargeError(ClientError):
    """A request batch exceeds the configured cap; nothing was sent."""

    def __init__(self, size: int, cap: int):
        super().__init__(f"batch of {size} items exceeds the cap of {cap}")
        self.size = size
        self.cap = cap


class ServiceError(ClientError):
    """The service returned a 4xx error envelope.

    ``service_message`` holds the service's message verbatim and
    ``offending_id`` the item or group id it named, when it named one.
    """

    def __init__(self, status: int, code: str, message: str, offending_id: str | None = None):
        super().__init__(f"{status} {code}: {message}")
        self.status = status
        self.code = code
        self.service_message = message
        self.offending_id = offending_id


class TransportError(ClientError):
    """Transport failures or 5xx responses persisted through every retry."""

    def __init__(self, message: str, status: int | None, attempts: int):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


class ProtocolError(ClientError):
    """A response body did not match the wire schema."""
