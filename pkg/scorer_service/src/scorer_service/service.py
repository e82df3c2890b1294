"""Wire protocol server fronting one fine-tuned sentence classifier.

Speaks newline-delimited JSON.  On connect the server sends
``{"protocol": "sent2span-scorer/1"}`` and expects the same line back;
afterwards each request line ``{"id", "pico", "tokens", "mask"}`` is
answered by ``{"id", "pos_score", "neg_score", "effective_length"}`` or by
``{"id", "error": "..."}``.  An error reply ends that request only, never
the connection.  The version string is the contract with engine clients;
change it only together with them.
"""

from __future__ import annotations

import json
import socketserver
import threading
from pathlib import Path

from scorer_service.model import SentenceClassifier

__all__ = ["PROTOCOL_VERSION", "ScorerService", "serve"]

PROTOCOL_VERSION = "sent2span-scorer/1"

_HANDSHAKE = json.dumps({"protocol": PROTOCOL_VERSION}) + "\n"


class _RequestHandler(socketserver.StreamRequestHandler):
    # Replies are tiny; without this, Nagle plus delayed ACKs stall every
    # request batch by tens of milliseconds.
    disable_nagle_algorithm = True

    def handle(self) -> None:  # noqa: D102 - socketserver hook
        self.wfile.write(_HANDSHAKE.encode("utf-8"))
        self.wfile.flush()
        greeting = self.rfile.readline()
        if not greeting:
            return
        try:
            opening = json.loads(greeting)
            ok = isinstance(opening, dict) and opening.get("protocol") == PROTOCOL_VERSION
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
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            return {"id": None, "error": f"invalid JSON: {exc}"}
        if not isinstance(request, dict):
            return {"id": None, "error": "request is not an object"}
        request_id = request.get("id")
        tokens = request.get("tokens")
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            return {"id": request_id, "error": "tokens must be a list of strings"}
        mask = request.get("mask")
        if mask is not None:
            if (
                not isinstance(mask, list)
                or len(mask) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in mask)
                or not 0 <= mask[0] < mask[1] <= len(tokens)
            ):
                return {"id": request_id, "error": f"mask out of range: {mask!r}"}
            mask = (mask[0], mask[1])
        classifier: SentenceClassifier = self.server.classifier  # type: ignore[attr-defined]
        pico = request.get("pico")
        if pico != classifier.pico:
            return {
                "id": request_id,
                "error": f"this service scores {classifier.pico!r}, not {pico!r}",
            }
        try:
            result = classifier.score(tokens, mask)
        except ValueError as exc:
            return {"id": request_id, "error": str(exc)}
        return {
            "id": request_id,
            "pos_score": result.pos_score,
            "neg_score": result.neg_score,
            "effective_length": result.effective_length,
        }


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True
    classifier: SentenceClassifier


class ScorerService:
    """Owns the listening socket; usable as a context manager in tests."""

    def __init__(
        self,
        classifier: SentenceClassifier,
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self._server = _Server((host, port), _RequestHandler)
        self._server.classifier = classifier
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "ScorerService":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def run_forever(self) -> None:
        """Serve on the calling thread until interrupted (CLI entry)."""
        try:
            self._server.serve_forever()
        finally:
            self._server.server_close()

    def __enter__(self) -> "ScorerService":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve(checkpoint_dir: str | Path, host: str = "127.0.0.1", port: int = 0) -> ScorerService:
    """Load a checkpoint and return a started service."""
    classifier = SentenceClassifier.load(checkpoint_dir)
    return ScorerService(classifier, host=host, port=port).start()
