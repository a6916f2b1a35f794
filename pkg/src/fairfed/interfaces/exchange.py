# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.

"""Messages exchanged during a federated round.

A round is broadcast -> local training -> aggregation. The server broadcasts a
`GlobalModelMessage`; each client answers with a `ClientUpdateMessage`. Both carry the
model as a flat array ``[w_1, ..., w_d, b]`` plus metadata, and never any data rows.

Wire form (one JSON value per key):

    kind          "client-update" | "global-model"
    client_id     int            (client updates only)
    round_index   int
    n_samples     int >= 1       (client updates only)
    dim           int d >= 1
    params        [float] * (d + 1)
"""

import logging
import math
from typing import List, Literal, TypeVar

from pydantic import Field, model_validator

from fairfed.interfaces.utils import RawMessage, WireModel

log = logging.getLogger(__name__)

_Message = TypeVar("_Message", bound=WireModel)


class _ModelPayload(WireModel):
    round_index: int = Field(ge=0)
    dim: int = Field(ge=1)
    params: List[float]

    @model_validator(mode="after")
    def _check_params(self):
        if len(self.params) != self.dim + 1:
            raise ValueError(f"expected {self.dim + 1} params, got {len(self.params)}")
        if not all(math.isfinite(p) for p in self.params):
            raise ValueError("params must be finite")
        return self


class ClientUpdateMessage(_ModelPayload):
    """A client's locally trained parameters for one round."""

    kind: Literal["client-update"] = "client-update"
    client_id: int = Field(ge=0)
    n_samples: int = Field(ge=1)


class GlobalModelMessage(_ModelPayload):
    """The server's aggregated parameters after a round."""

    kind: Literal["global-model"] = "global-model"


class LoopbackChannel:
    """In-process transport that still round-trips every message through its wire form.

    Floats are JSON-encoded with their shortest round-trip representation, so
    transmission is exact.
    """

    def __init__(self):
        self.messages_sent = 0

    def encode(self, message: WireModel) -> RawMessage:
        """Serialize ``message`` for sending."""
        self.messages_sent += 1
        return message.dump()

    def transmit(self, message: _Message) -> _Message:
        """Send ``message`` and return what the receiving side decodes."""
        raw = self.encode(message)
        log.debug("transmitting %s (%d keys)", type(message).__name__, len(raw))
        return type(message).load(raw)
