import shlex
import socket
import sys
import threading

import numpy as np
import pytest

from conftest import PROJECT_ROOT, SOCCER, USED
from core.errors import InvalidResponseError, ProtocolError, TransportError, UsageError
from models.external import ExternalModelClient, make_tcp_server, open_channel, validate_response
from models.tabular import shopping_example


@pytest.fixture
def shopping_server():
    model, _ = shopping_example()
    server = make_tcp_server(model, "127.0.0.1", 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address[:2]
    yield model, f"{host}:{port}"
    server.shutdown()
    server.server_close()


def test_tcp_client_matches_local_model(shopping_server):
    model, endpoint = shopping_server
    with ExternalModelClient(endpoint, 5, 10, timeout=5) as client:
        for prefix in [(), (USED,), (USED, SOCCER)]:
            remote = client.next_distribution(prefix)
            np.testing.assert_allclose(remote.probs, model.next_distribution(prefix).probs)
        hot = client.next_distribution((), 0.5)
        np.testing.assert_allclose(hot.probs, model.next_distribution((), 0.5).probs)


def test_server_error_is_protocol_error(shopping_server):
    _, endpoint = shopping_server
    with ExternalModelClient(f"tcp://{endpoint}", 5, 10, timeout=5) as client:
        with pytest.raises(ProtocolError):
            client.next_distribution((USED, SOCCER, SOCCER, SOCCER, SOCCER))


def test_wrong_vocab_size_is_protocol_error(shopping_server):
    _, endpoint = shopping_server
    with ExternalModelClient(endpoint, 7, 10, timeout=5) as client:
        with pytest.raises(ProtocolError, match="expected 7"):
            client.next_distribution(())


def test_unreachable_endpoint_retries_then_fails():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        port = sock.getsockname()[1]
    client = ExternalModelClient(f"127.0.0.1:{port}", 5, 4, timeout=1, attempts=2)
    with pytest.raises(TransportError):
        client.next_distribution(())


def test_stdio_endpoint_runs_cli_server():
    command = f"{shlex.quote(sys.executable)} {shlex.quote(str(PROJECT_ROOT / 'main.py'))} serve --model shopping"
    model, _ = shopping_example()
    with ExternalModelClient(f"stdio:{command}", 5, 4, timeout=30) as client:
        remote = client.next_distribution((USED,))
    np.testing.assert_allclose(remote.probs, model.next_distribution((USED,)).probs)


def test_bad_endpoint():
    with pytest.raises(UsageError):
        open_channel("localhost", 1)


def test_validate_response_renormalizes_small_drift():
    dist = validate_response({"probs": [0.5, 0.50005], "eok": 0.0}, 2)
    assert dist.probs.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize(
    "payload, error",
    [
        ({"probs": [0.5, 0.5]}, ProtocolError),
        ({"probs": [1.0], "eok": 0.0}, ProtocolError),
        ({"probs": [0.5, 0.5], "eok": "x"}, ProtocolError),
        ({"probs": [1.2, -0.2], "eok": 0.0}, InvalidResponseError),
        ({"probs": [float("nan"), 1.0], "eok": 0.0}, InvalidResponseError),
        ({"probs": [0.5, 0.4], "eok": 0.0}, InvalidResponseError),
    ],
)
def test_validate_response_rejects(payload, error):
    with pytest.raises(error):
        validate_response(payload, 2)
