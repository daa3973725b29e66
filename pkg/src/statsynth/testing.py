"""Hermetic chat-completion stub for exercising the HTTP proposer.

ScriptedChatServer binds a real localhost port and replays canned replies
in order, recording every request body and header map it sees. It backs
the robustness tests and the fake-server script without any network
dependency.
"""
from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer


class ScriptedChatServer:
    """Replays canned replies to chat-completion POSTs.

    Each script entry is one reply: a str is wrapped into a chat-completion
    envelope as the assistant message content, a dict is sent verbatim as
    the JSON body, an int becomes an HTTP error status with an empty body.
    Once the script is exhausted the last entry repeats. Usable as a
    context manager; .endpoint gives the URL to point a proposer at.
    """

    def __init__(self, replies: list, port: int = 0) -> None:
        if not replies:
            raise ValueError("need at least one scripted reply")
        self.replies = list(replies)
        self.requests: list[dict] = []
        self.request_headers: list[dict] = []
        self._lock = threading.Lock()
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(length) if length else b"{}"
                try:
                    body = json.loads(raw)
                except json.JSONDecodeError:
                    body = {"_unparsed": raw.decode("utf-8", "replace")}
                with outer._lock:
                    i = len(outer.requests)
                    outer.requests.append(body)
                    outer.request_headers.append(
                        {k.lower(): v for k, v in self.headers.items()})
                    reply = outer.replies[min(i, len(outer.replies) - 1)]
                if isinstance(reply, int):
                    self.send_response(reply)
                    self.send_header("Content-Length", "0")
                    self.end_headers()
                    return
                if isinstance(reply, str):
                    doc: dict = {"choices": [{"message": {
                        "role": "assistant", "content": reply}}]}
                else:
                    doc = reply
                payload = json.dumps(doc).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(payload)))
                self.end_headers()
                self.wfile.write(payload)

            def log_message(self, *args) -> None:
                pass

        self._server = HTTPServer(("127.0.0.1", port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/v1/chat/completions"

    def start(self) -> "ScriptedChatServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self) -> "ScriptedChatServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
