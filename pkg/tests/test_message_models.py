import json

import numpy as np
import pytest

from fairfed.interfaces.exchange import (
    ClientUpdateMessage,
    GlobalModelMessage,
    LoopbackChannel,
)
from fairfed.interfaces.utils import MessageValidationError

UPDATE = ClientUpdateMessage(client_id=2, round_index=1, n_samples=10, dim=1, params=[0.5, -1.0])
WIRE = {
    "kind": json.dumps("client-update"),
    "client_id": json.dumps(2),
    "round_index": json.dumps(1),
    "n_samples": json.dumps(10),
    "dim": json.dumps(1),
    "params": json.dumps([0.5, -1.0]),
}


def test_dump():
    # given a client update
    # when you dump it
    out = UPDATE.dump()
    # then every field is json-encoded under its own key
    assert out == WIRE


def test_dump_to_mapping_append():
    # given a mapping that already holds data
    raw = {"spurious": "data"}
    # when you dump into it without clearing
    out = UPDATE.dump(raw, clear=False)
    # then the message is added and the existing data kept
    assert out is raw
    assert raw == {**WIRE, "spurious": "data"}


def test_dump_clears_by_default():
    raw = {"spurious": "data"}
    assert UPDATE.dump(raw) == WIRE


def test_load():
    message = ClientUpdateMessage.load({**WIRE, "extra": "field"})
    assert message == UPDATE


@pytest.mark.parametrize(
    "change",
    (
        {"params": json.dumps([0.5])},
        {"params": json.dumps([0.5, float("inf")])},
        {"n_samples": json.dumps(0)},
        {"kind": json.dumps("global-model")},
        {"client_id": json.dumps("two")},
        {"dim": "not json"},
    ),
)
def test_load_invalid_raises(change):
    with pytest.raises(MessageValidationError):
        ClientUpdateMessage.load({**WIRE, **change})


def test_global_model_is_not_an_update():
    raw = GlobalModelMessage(round_index=0, dim=1, params=[0.0, 0.0]).dump()
    with pytest.raises(MessageValidationError):
        ClientUpdateMessage.load(raw)


def test_loopback_is_exact():
    rng = np.random.default_rng(0)
    channel = LoopbackChannel()
    for count in range(1, 21):
        params = (rng.normal(size=6) * 10.0 ** rng.integers(-300, 300)).tolist()
        message = GlobalModelMessage(round_index=count, dim=5, params=params)
        assert channel.transmit(message).params == params
        assert channel.messages_sent == count
