# Copyright 2026 The fairfed Authors.
# See LICENSE file for licensing details.

"""Shared utilities for fairfed message models."""

import json
import logging
from typing import (
    MutableMapping,
    Optional,
)

import pydantic
from pydantic import ConfigDict

log = logging.getLogger(__name__)

# ===========
# | Message |
# ===========

#: Flat wire form: every field name maps to its JSON-encoded value.
RawMessage = MutableMapping[str, str]


class MessageValidationError(Exception):
    """Raised when a message cannot be decoded or fails validation."""


class WireModel(pydantic.BaseModel):
    """Base message model with a flat ``str -> str`` serialized form."""

    model_config = ConfigDict(
        # a decoded message is a value; nobody edits it in flight
        frozen=True,
        # tolerate additional keys, so newer senders can add metadata
        extra="ignore",
        # Allow instantiating this class by field name (instead of forcing alias).
        populate_by_name=True,
    )
    """Pydantic config."""

    @classmethod
    def load(cls, raw: RawMessage):
        """Decode and validate a message from its wire form."""
        try:
            data = {
                k: json.loads(v)
                for k, v in raw.items()
                # Don't attempt to parse model-external values
                if k in {(f.alias or n) for n, f in cls.model_fields.items()}
            }
        except json.JSONDecodeError as e:
            msg = f"invalid message contents: expecting json. {dict(raw)}"
            log.error(msg)
            raise MessageValidationError(msg) from e

        try:
            return cls.model_validate(data)
        except pydantic.ValidationError as e:
            msg = f"failed to validate {cls.__name__}: {dict(raw)}"
            log.debug(msg, exc_info=True)
            raise MessageValidationError(msg) from e

    def dump(self, raw: Optional[RawMessage] = None, clear: bool = True) -> RawMessage:
        """Encode this message into its wire form.

        :param raw: the mapping to write the message to.
        :param clear: ensure the mapping is cleared before writing it.
        """
        _raw: RawMessage = {} if raw is None else raw

        if clear:
            _raw.clear()

        dct = self.model_dump(mode="json", by_alias=True)
        _raw.update({k: json.dumps(v) for k, v in dct.items()})
        return _raw
