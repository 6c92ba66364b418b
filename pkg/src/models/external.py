"""Client and reference server for the line-delimited JSON model protocol.

Request:  {"prefix": [ints], "temperature": float}
Response: {"probs": [floats of length vocab_size], "eok": float}

One request per line and one response per line, in order, over a TCP
connection (``tcp://host:port`` or ``host:port``) or the stdio pipes of a
subprocess (``stdio:<command line>``).
"""

import json
import logging
import math
import select
import shlex
import socket
import socketserver
import subprocess
from typing import IO, Optional, Sequence

import numpy as np
from tenacity import (
    before_sleep_log,
    retry,
    retry_if_exception_type,
    retry_if_not_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from core.distribution import TokenDistribution
from core.errors import (
    InvalidResponseError,
    PrefixTooLongError,
    ProtocolError,
    TransportError,
    UsageError,
)
from core.tokens import TokenSeq, Vocabulary
from models.base import LanguageModel

logger = logging.getLogger(__name__)

MASS_TOLERANCE = 1e-4


class _Channel:
    def send_line(self, line: str):
        raise NotImplementedError

    def recv_line(self, timeout: float) -> str:
        raise NotImplementedError

    def close(self):
        pass


class _TcpChannel(_Channel):
    def __init__(self, host: str, port: int, timeout: float):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as e:
            raise TransportError(f"cannot connect to {host}:{port}: {e}") from e
        self.file = self.sock.makefile("rwb")

    def send_line(self, line: str):
        try:
            self.file.write(line.encode() + b"\n")
            self.file.flush()
        except OSError as e:
            raise TransportError(f"send failed: {e}") from e

    def recv_line(self, timeout: float) -> str:
        self.sock.settimeout(timeout)
        try:
            data = self.file.readline()
        except OSError as e:
            raise TransportError(f"receive failed: {e}") from e
        if not data:
            raise TransportError("connection closed by model server")
        return data.decode()

    def close(self):
        for closer in (self.file.close, self.sock.close):
            try:
                closer()
            except OSError:
                pass


class _StdioChannel(_Channel):
    def __init__(self, command: str):
        try:
            self.proc = subprocess.Popen(
                shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        except OSError as e:
            raise TransportError(f"cannot start model process {command!r}: {e}") from e

    def send_line(self, line: str):
        try:
            self.proc.stdin.write(line.encode() + b"\n")
            self.proc.stdin.flush()
        except (OSError, ValueError) as e:
            raise TransportError(f"send failed: {e}") from e

    def recv_line(self, timeout: float) -> str:
        ready, _, _ = select.select([self.proc.stdout], [], [], timeout)
        if not ready:
            raise TransportError(f"no response within {timeout}s")
        data = self.proc.stdout.readline()
        if not data:
            raise TransportError(f"model process exited with {self.proc.poll()}")
        return data.decode()

    def close(self):
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()


def open_channel(endpoint: str, timeout: float) -> _Channel:
    if endpoint.startswith("stdio:"):
        return _StdioChannel(endpoint[len("stdio:"):])
    address = endpoint[len("tcp://"):] if endpoint.startswith("tcp://") else endpoint
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise UsageError(f"bad model endpoint {endpoint!r}; use host:port or stdio:<command>")
    return _TcpChannel(host or "localhost", int(port), timeout)


def validate_response(payload: dict, vocab_size: int) -> TokenDistribution:
    """Check a decoded response and renormalize small mass deviations.

    Raises:
        ProtocolError: Missing fields or wrong vector length.
        InvalidResponseError: Negative or non-finite values, or mass off
            by more than 1e-4.
    """
    try:
        probs = np.asarray(payload["probs"], dtype=np.float64)
        eok = float(payload["eok"])
    except (KeyError, TypeError, ValueError) as e:
        raise ProtocolError(f"malformed response: {e}") from None
    if probs.ndim != 1 or probs.size != vocab_size:
        raise ProtocolError(f"expected {vocab_size} probabilities, got shape {probs.shape}")
    if not np.all(np.isfinite(probs)) or not math.isfinite(eok):
        raise InvalidResponseError("response has non-finite probabilities")
    if np.any(probs < 0) or eok < 0:
        raise InvalidResponseError("response has negative probabilities")
    mass = float(probs.sum()) + eok
    if abs(mass - 1.0) > MASS_TOLERANCE:
        raise InvalidResponseError(f"response mass {mass!r} deviates from 1")
    return TokenDistribution(probs / mass, eok / mass)


_transient = retry_if_exception_type(TransportError) & retry_if_not_exception_type(ProtocolError)


class ExternalModelClient(LanguageModel):
    """A model served by another process over the line protocol.

    One request is in flight per connection; open one client per worker for
    parallel sampling. Transport failures reconnect and retry a few times.

    Args:
        endpoint: ``host:port``, ``tcp://host:port`` or ``stdio:<command>``.
        vocab_size: Expected length of every ``probs`` vector.
        max_len: Longest prefix plus one the client will query.
        timeout: Seconds to wait for connect and for each response.
        attempts: Total tries per request.
    """

    def __init__(self, endpoint: str, vocab_size: int, max_len: int, timeout: float = 30.0, attempts: int = 3):
        super().__init__(Vocabulary(vocab_size), max_len)
        self.endpoint = endpoint
        self.timeout = timeout
        self._channel: Optional[_Channel] = None
        self._request_with_retry = retry(
            retry=_transient,
            stop=stop_after_attempt(attempts),
            wait=wait_exponential(multiplier=0.1, max=2.0),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=True,
        )(self._request)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def connect(self):
        if self._channel is None:
            self._channel = open_channel(self.endpoint, self.timeout)
            logger.info(f"Connected to model endpoint {self.endpoint}")

    def close(self):
        if self._channel is not None:
            self._channel.close()
            self._channel = None

    def _request(self, prefix: TokenSeq, temperature: float) -> TokenDistribution:
        self.connect()
        request = json.dumps({"prefix": list(prefix), "temperature": temperature})
        try:
            self._channel.send_line(request)
            line = self._channel.recv_line(self.timeout)
        except TransportError:
            self.close()
            raise
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"response is not JSON: {e}") from None
        if not isinstance(payload, dict):
            raise ProtocolError("response is not a JSON object")
        return validate_response(payload, self.vocab_size)

    def next_distribution(self, prefix: Sequence[int], temperature: float = 1.0) -> TokenDistribution:
        prefix = tuple(int(t) for t in prefix)
        if len(prefix) >= self.max_len:
            raise PrefixTooLongError(
                f"prefix of length {len(prefix)} reaches model max_len {self.max_len}"
            )
        if not temperature > 0:
            raise UsageError(f"temperature must be positive, got {temperature}")
        return self._request_with_retry(prefix, float(temperature))

    def base_distribution(self, prefix: TokenSeq) -> TokenDistribution:
        return self.next_distribution(prefix, 1.0)


def serve_lines(model: LanguageModel, rfile: IO[bytes], wfile: IO[bytes]):
    """Answer protocol requests from ``rfile`` until EOF using ``model``.

    Errors are reported in-band as ``{"error": "..."}`` lines, which clients
    treat as protocol errors.
    """
    for raw in rfile:
        if not raw.strip():
            continue
        try:
            request = json.loads(raw)
            dist = model.next_distribution(request["prefix"], float(request.get("temperature", 1.0)))
            response = {"probs": dist.probs.tolist(), "eok": dist.eok_prob}
        except Exception as e:
            logger.warning(f"Rejected request {raw[:80]!r}: {e}")
            response = {"error": str(e)}
        wfile.write(json.dumps(response).encode() + b"\n")
        wfile.flush()


def make_tcp_server(model: LanguageModel, host: str = "127.0.0.1", port: int = 0) -> socketserver.ThreadingTCPServer:
    """A threaded TCP server answering the line protocol; call ``serve_forever``."""

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            serve_lines(model, self.rfile, self.wfile)

    server = socketserver.ThreadingTCPServer((host, port), Handler)
    server.daemon_threads = True
    logger.info(f"Serving model on {server.server_address[0]}:{server.server_address[1]}")
    return server
