"""Newline-delimited JSON wire protocol for external sentence scorers.

Both sides open with a handshake line ``{"protocol": "sent2span-scorer/1"}``.
After that the client sends one request object per line::

    {"id": 7, "pico": "population", "tokens": ["..."], "mask": [2, 5]}

``mask`` is a half-open token interval or ``null``.  The server answers each
request with either a result or an error, in any order it likes::

    {"id": 7, "pos_score": 1.25, "neg_score": -0.3, "effective_length": 12}
    {"id": 8, "error": "mask out of range"}

An error reply ends that request, not the connection.  Endpoints are
``host:port`` for TCP or ``unix:/path`` for a Unix domain socket.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from sent2span.corpus import PicoType, Span
from sent2span.errors import ScorerProtocolError, ScorerTransportError
from sent2span.scorer import ScoreResult

__all__ = [
    "PROTOCOL_VERSION",
    "ExternalScorerClient",
    "ScorerServer",
    "ConformanceCheck",
    "run_conformance",
    "assert_conformance",
]

PROTOCOL_VERSION = "sent2span-scorer/1"

_HANDSHAKE = json.dumps({"protocol": PROTOCOL_VERSION}) + "\n"


def _connect(endpoint: str, timeout: float) -> socket.socket:
    try:
        if endpoint.startswith("unix:"):
            sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            sock.settimeout(timeout)
            sock.connect(endpoint[len("unix:") :])
            return sock
        host, _, port = endpoint.rpartition(":")
        if not host or not port.isdigit():
            raise ScorerTransportError(f"bad scorer endpoint {endpoint!r}")
        sock = socket.create_connection((host, int(port)), timeout=timeout)
        sock.settimeout(timeout)
        # Small request/reply lines suffer badly under Nagle + delayed ACK.
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return sock
    except OSError as exc:
        raise ScorerTransportError(f"cannot reach scorer at {endpoint}: {exc}") from exc


class ExternalScorerClient:
    """Talks to one scorer service for one label type.

    Connects lazily on first use; usable as a context manager.  Implements
    the same ``score`` / ``score_batch`` surface as the local baseline, so
    the span engine cannot tell the difference.
    """

    def __init__(self, endpoint: str, pico: PicoType, timeout: float = 30.0):
        self.endpoint = endpoint
        self.pico = pico
        self.timeout = timeout
        self._sock: socket.socket | None = None
        self._rfile = None
        self._wfile = None
        self._next_id = 0

    # -- connection management ----------------------------------------------

    def connect(self) -> None:
        if self._sock is not None:
            return
        sock = _connect(self.endpoint, self.timeout)
        self._sock = sock
        self._rfile = sock.makefile("r", encoding="utf-8", newline="\n")
        self._wfile = sock.makefile("w", encoding="utf-8", newline="\n")
        try:
            self._wfile.write(_HANDSHAKE)
            self._wfile.flush()
            greeting = self._read_object()
        except ScorerTransportError:
            self.close()
            raise
        if greeting.get("protocol") != PROTOCOL_VERSION:
            self.close()
            raise ScorerProtocolError(
                f"scorer at {self.endpoint} spoke {greeting.get('protocol')!r}, "
                f"expected {PROTOCOL_VERSION!r}"
            )

    def close(self) -> None:
        for closer in (self._rfile, self._wfile, self._sock):
            if closer is not None:
                try:
                    closer.close()
                except OSError:
                    pass
        self._sock = self._rfile = self._wfile = None

    def __enter__(self) -> "ExternalScorerClient":
        self.connect()
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- wire I/O -------------------------------------------------------------

    def _read_object(self) -> dict:
        try:
            line = self._rfile.readline()
        except OSError as exc:
            raise ScorerTransportError(f"scorer connection failed: {exc}") from exc
        if not line:
            raise ScorerTransportError("scorer closed the connection")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScorerProtocolError(f"scorer sent invalid JSON: {line!r}") from exc
        if not isinstance(obj, dict):
            raise ScorerProtocolError(f"scorer sent a non-object line: {line!r}")
        return obj

    def _parse_result(self, obj: dict, n_tokens: int) -> ScoreResult:
        if "error" in obj:
            raise ScorerProtocolError(f"scorer rejected request: {obj['error']}")
        try:
            pos = float(obj["pos_score"])
            neg = float(obj["neg_score"])
            eff = obj["effective_length"]
        except (KeyError, TypeError, ValueError):
            raise ScorerProtocolError(f"malformed scorer response: {obj!r}") from None
        if not isinstance(eff, int) or isinstance(eff, bool) or not 0 <= eff <= n_tokens:
            raise ScorerProtocolError(
                f"scorer reported effective_length {eff!r} for {n_tokens} tokens"
            )
        return ScoreResult.from_scores(pos, neg, eff)

    # -- scoring --------------------------------------------------------------

    def score(self, tokens: Sequence[str], mask: Span | None = None) -> ScoreResult:
        return self.score_batch(tokens, [mask])[0]

    def score_batch(
        self, tokens: Sequence[str], masks: Sequence[Span | None]
    ) -> list[ScoreResult]:
        """Send one request per mask and collect replies by id."""
        if not masks:
            return []
        self.connect()
        tokens = list(tokens)
        pending: dict[int, int] = {}
        try:
            for position, mask in enumerate(masks):
                request_id = self._next_id
                self._next_id += 1
                pending[request_id] = position
                self._wfile.write(
                    json.dumps(
                        {
                            "id": request_id,
                            "pico": self.pico.value,
                            "tokens": tokens,
                            "mask": None if mask is None else [mask.start, mask.end],
                        }
                    )
                )
                self._wfile.write("\n")
            self._wfile.flush()
        except OSError as exc:
            self.close()
            raise ScorerTransportError(f"scorer connection failed: {exc}") from exc
        results: list[ScoreResult | None] = [None] * len(masks)
        while pending:
            obj = self._read_object()
            request_id = obj.get("id")
            if request_id not in pending:
                raise ScorerProtocolError(
                    f"scorer answered unknown request id {request_id!r}"
                )
            results[pending.pop(request_id)] = self._parse_result(obj, len(tokens))
        return results  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# Reference server
# ---------------------------------------------------------------------------


class _ScorerRequestHandler(socketserver.StreamRequestHandler):
    # Replies are tiny; Nagle plus delayed ACKs would stall every batch.
    disable_nagle_algorithm = True

    def handle(self) -> None:  # noqa: D102 - socketserver hook
        self.wfile.write(_HANDSHAKE.encode("utf-8"))
        self.wfile.flush()
        greeting = self.rfile.readline()
        if not greeting:
            return
        try:
            obj = json.loads(greeting)
            ok = isinstance(obj, dict) and obj.get("protocol") == PROTOCOL_VERSION
        except json.JSONDecodeError:
            ok = False
        if not ok:
            self._send({"id": None, "error": "bad handshake"})
            return
        for line in self.rfile:
            if not line.strip():
                continue
            self._send(self._answer(line))

    def _send(self, obj: dict) -> None:
        self.wfile.write((json.dumps(obj) + "\n").encode("utf-8"))
        self.wfile.flush()

    def _answer(self, line: bytes) -> dict:
        request_id = None
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                return {"id": None, "error": "request is not an object"}
            request_id = req.get("id")
            tokens = req["tokens"]
            if not isinstance(tokens, list) or not all(
                isinstance(t, str) for t in tokens
            ):
                return {"id": request_id, "error": "tokens must be a list of strings"}
            raw_mask = req.get("mask")
            mask = None
            if raw_mask is not None:
                if (
                    not isinstance(raw_mask, list)
                    or len(raw_mask) != 2
                    or not all(isinstance(v, int) for v in raw_mask)
                    or not 0 <= raw_mask[0] < raw_mask[1] <= len(tokens)
                ):
                    return {"id": request_id, "error": f"mask out of range: {raw_mask!r}"}
                mask = Span(raw_mask[0], raw_mask[1])
            scorer = self.server.resolve_scorer(req.get("pico"))  # type: ignore[attr-defined]
            if scorer is None:
                return {"id": request_id, "error": f"no model for pico {req.get('pico')!r}"}
            result = scorer.score(tokens, mask)
            return {
                "id": request_id,
                "pos_score": result.positive_score,
                "neg_score": result.negative_score,
                "effective_length": result.effective_length,
            }
        except (KeyError, json.JSONDecodeError) as exc:
            return {"id": request_id, "error": f"malformed request: {exc}"}


class ScorerServer:
    """Serves local scorer objects over the wire protocol, one thread per client.

    Mainly used to put the baseline behind the same transport a remote model
    would use, so the whole network path is exercised by cheap tests.
    """

    def __init__(self, scorers: Mapping[str, object] | Callable[[str], object | None],
                 host: str = "127.0.0.1", port: int = 0):
        self._resolve = (
            scorers if callable(scorers) else lambda pico: scorers.get(pico)  # type: ignore[union-attr]
        )
        class _Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True
            resolve_scorer = staticmethod(self._resolve)
        self._server = _Server((host, port), _ScorerRequestHandler)
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "ScorerServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "ScorerServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


# ---------------------------------------------------------------------------
# Conformance suite
#
# Run against any endpoint claiming to implement the protocol.  The checks
# speak raw lines on purpose: they must catch servers our own client would
# happen to tolerate.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConformanceCheck:
    name: str
    passed: bool
    detail: str = ""


class _RawConnection:
    def __init__(self, endpoint: str, timeout: float = 10.0):
        self.sock = _connect(endpoint, timeout)
        self.rfile = self.sock.makefile("r", encoding="utf-8", newline="\n")
        self.wfile = self.sock.makefile("w", encoding="utf-8", newline="\n")

    def send_line(self, text: str) -> None:
        self.wfile.write(text + "\n")
        self.wfile.flush()

    def read_json(self) -> dict:
        line = self.rfile.readline()
        if not line:
            raise ScorerTransportError("server closed the connection")
        return json.loads(line)

    def close(self) -> None:
        for closer in (self.rfile, self.wfile, self.sock):
            try:
                closer.close()
            except OSError:
                pass


def _request(request_id: int, tokens: list[str], mask: list[int] | None,
             pico: str = "population") -> str:
    return json.dumps({"id": request_id, "pico": pico, "tokens": tokens, "mask": mask})


def _is_result(obj: dict, n_tokens: int) -> bool:
    return (
        isinstance(obj.get("pos_score"), (int, float))
        and isinstance(obj.get("neg_score"), (int, float))
        and isinstance(obj.get("effective_length"), int)
        and not isinstance(obj.get("effective_length"), bool)
        and 0 <= obj["effective_length"] <= n_tokens
    )


def run_conformance(endpoint: str, pico: str = "population") -> list[ConformanceCheck]:
    """Exercise a scorer service and report one result per protocol rule."""
    checks: list[ConformanceCheck] = []
    tokens = ["elderly", "patients", "with", "chronic", "pain"]

    conn = _RawConnection(endpoint)
    try:
        conn.send_line(json.dumps({"protocol": PROTOCOL_VERSION}))
        greeting = conn.read_json()
        checks.append(
            ConformanceCheck(
                "handshake",
                greeting.get("protocol") == PROTOCOL_VERSION,
                f"server sent {greeting!r}",
            )
        )

        conn.send_line(_request(1, tokens, None, pico))
        reply = conn.read_json()
        checks.append(
            ConformanceCheck(
                "basic_response_schema",
                reply.get("id") == 1 and _is_result(reply, len(tokens)),
                f"reply was {reply!r}",
            )
        )

        conn.send_line(_request(2, tokens, [1, 3], pico))
        masked = conn.read_json()
        checks.append(
            ConformanceCheck(
                "masked_request",
                masked.get("id") == 2 and _is_result(masked, len(tokens)),
                f"reply was {reply!r}",
            )
        )

        # Batch of requests answered in any order, correlated by id.
        ids = list(range(100, 132))
        for request_id in ids:
            span_start = request_id % len(tokens)
            conn.send_line(_request(request_id, tokens, [span_start, span_start + 1], pico))
        seen = {}
        ok = True
        for _ in ids:
            reply = conn.read_json()
            if reply.get("id") not in ids or reply["id"] in seen:
                ok = False
                break
            seen[reply["id"]] = reply
            if not _is_result(reply, len(tokens)):
                ok = False
                break
        checks.append(
            ConformanceCheck(
                "id_correlation", ok and len(seen) == len(ids), f"{len(seen)} of {len(ids)} answered"
            )
        )

        # Determinism: identical request, identical scores.
        conn.send_line(_request(200, tokens, [0, 2], pico))
        first = conn.read_json()
        conn.send_line(_request(201, tokens, [0, 2], pico))
        second = conn.read_json()
        checks.append(
            ConformanceCheck(
                "deterministic_scores",
                _is_result(first, len(tokens))
                and _is_result(second, len(tokens))
                and first["pos_score"] == second["pos_score"]
                and first["neg_score"] == second["neg_score"],
                f"{first!r} vs {second!r}",
            )
        )

        # Out-of-range mask: an error reply tied to the id, stream stays up.
        conn.send_line(_request(300, tokens, [3, 99], pico))
        bad_mask = conn.read_json()
        checks.append(
            ConformanceCheck(
                "error_reply_for_bad_mask",
                bad_mask.get("id") == 300 and "error" in bad_mask,
                f"reply was {bad_mask!r}",
            )
        )

        # Malformed JSON: some error reply, and the connection survives.
        conn.send_line("this is not json")
        garbage_reply = conn.read_json()
        conn.send_line(_request(301, tokens, None, pico))
        after = conn.read_json()
        checks.append(
            ConformanceCheck(
                "stream_survives_garbage",
                "error" in garbage_reply
                and after.get("id") == 301
                and _is_result(after, len(tokens)),
                f"garbage reply {garbage_reply!r}, next reply {after!r}",
            )
        )
    except (OSError, ScorerTransportError, json.JSONDecodeError, KeyError) as exc:
        checks.append(ConformanceCheck("no_transport_failures", False, repr(exc)))
    else:
        checks.append(ConformanceCheck("no_transport_failures", True))
    finally:
        conn.close()
    return checks


def assert_conformance(endpoint: str, pico: str = "population") -> None:
    """Raise with a readable report if any conformance check fails."""
    failed = [c for c in run_conformance(endpoint, pico) if not c.passed]
    if failed:
        lines = "\n".join(f"  {c.name}: {c.detail}" for c in failed)
        raise AssertionError(f"scorer at {endpoint} violates the protocol:\n{lines}")
