"""A stand-in for a self-hosted completion server.

Serves ``GET /v1/models`` and ``POST /v1/completions`` (whole or SSE). The
"model" upper-cases the source words, staying one word behind the source
until it is given a large token budget, which it takes to mean the source is
complete. Useful for trying the live code path without a GPU:

    python scripts/mock_completion_server.py --port 8011 &
    simt run --manifest data/demo/manifest.jsonl --llm-url http://127.0.0.1:8011 \
        --llm-model copy --out runs/mock
"""

import argparse
import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

WORD_BUDGET = 24

_CONTEXT = re.compile(r"Context: (.*)")
_TARGET = re.compile(r"translation: ([^\n]*)")


def continuation(prompt: str, max_tokens: int) -> list[str]:
    ctx = _CONTEXT.findall(prompt)
    src = ctx[-1].split() if ctx else []
    found = _TARGET.findall(prompt)
    tgt = found[-1].split() if found else []
    upto = len(src) if max_tokens > WORD_BUDGET else len(src) - 1
    words = [w.upper() for w in src[len(tgt):upto]]
    return [(" " if tgt or i else "") + w for i, w in enumerate(words)][:max_tokens]


class Handler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def _json(self, obj, code=200):
        body = json.dumps(obj).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/v1/models":
            self._json({"data": [{"id": "copy"}]})
        else:
            self._json({"error": "not found"}, 404)

    def do_POST(self):
        if self.path != "/v1/completions":
            self._json({"error": "not found"}, 404)
            return
        req = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        frags = continuation(req["prompt"], int(req.get("max_tokens", 16)))
        if not req.get("stream"):
            self._json({"choices": [{"text": "".join(frags), "finish_reason": "stop"}]})
            return
        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.end_headers()
        for f in frags:
            chunk = {"choices": [{"text": f, "finish_reason": None}]}
            self.wfile.write(f"data: {json.dumps(chunk)}\n\n".encode())
        done = {"choices": [{"text": "", "finish_reason": "stop"}]}
        self.wfile.write(f"data: {json.dumps(done)}\n\ndata: [DONE]\n\n".encode())


def start(port: int = 0) -> ThreadingHTTPServer:
    """Serve in a daemon thread; port 0 picks a free one (see ``server_address``)."""
    server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--port", type=int, default=8011)
    ThreadingHTTPServer(("127.0.0.1", ap.parse_args().port), Handler).serve_forever()
