"""JSON-over-HTTP service for the what-if UI.

Stateless between requests apart from the immutable loaded model; each
/generate request draws with its own seed, so concurrent requests return
exactly what serial execution would.
"""

from __future__ import annotations

import json
import secrets
import threading
import traceback
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .classifiers import predict_proba
from .encoding import EncodingError, make_query
from .eval_harness import conditional_histogram
from .synthesizer import generate


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _schema_payload(synth, meta) -> dict:
    attrs = []
    for spec in synth.schema.attributes:
        if spec.kind == "categorical":
            attrs.append({"name": spec.name, "kind": spec.kind,
                          "categories": list(spec.categories)})
        else:
            lo = float(np.min(spec.gmm.means - 4 * spec.gmm.stds))
            hi = float(np.max(spec.gmm.means + 4 * spec.gmm.stds))
            attrs.append({"name": spec.name, "kind": spec.kind,
                          "range": [lo, hi]})
    return {"attributes": attrs,
            "label": meta.get("label"),
            "desired_value": meta.get("desired_value"),
            "default_n": 20}


def _parse_query_values(synth, body: dict) -> dict:
    raw = body.get("query") or {}
    if not isinstance(raw, dict):
        raise ApiError(400, "query must be an object of attribute -> value")
    values = {}
    for name, value in raw.items():
        try:
            spec = synth.schema.attribute(name)
        except EncodingError:
            raise ApiError(422, f"unknown attribute {name!r}") from None
        if value is None:
            continue
        if spec.kind == "continuous":
            try:
                values[name] = float(value)
            except (TypeError, ValueError):
                raise ApiError(422, f"attribute {name!r} needs a number") from None
        else:
            if str(value) not in spec.categories:
                raise ApiError(422,
                               f"unknown category {value!r} for attribute {name!r}")
            values[name] = str(value)
    return values


def build_handler(synth, classifier, meta: dict, edges: list,
                  static_dir: Path | None = None):
    schema_payload = _schema_payload(synth, meta)
    desired = synth.config.desired_label

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):  # keep the test output quiet
            pass

        def _send(self, status: int, payload, content_type="application/json"):
            body = payload if isinstance(payload, bytes) \
                else json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Headers", "Content-Type")
            self.send_header("Access-Control-Allow-Methods",
                             "GET, POST, OPTIONS")
            self.end_headers()
            self.wfile.write(body)

        def _read_json(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            raw = self.rfile.read(length) if length else b""
            if not raw:
                raise ApiError(400, "empty request body")
            try:
                body = json.loads(raw)
            except json.JSONDecodeError:
                raise ApiError(400, "request body is not valid JSON") from None
            if not isinstance(body, dict):
                raise ApiError(400, "request body must be a JSON object")
            return body

        def _static(self, path: str):
            if static_dir is None:
                raise ApiError(404, "no UI bundle is installed")
            name = "index.html" if path in ("/", "") else path.lstrip("/")
            target = (static_dir / name).resolve()
            if not str(target).startswith(str(static_dir.resolve())) \
                    or not target.is_file():
                raise ApiError(404, f"no such path {path}")
            types = {".html": "text/html", ".js": "text/javascript",
                     ".css": "text/css", ".map": "application/json"}
            self._send(200, target.read_bytes(),
                       content_type=types.get(target.suffix, "application/octet-stream"))

        def do_OPTIONS(self):
            self._send(204, b"", content_type="text/plain")

        def do_GET(self):
            try:
                if self.path == "/health":
                    self._send(200, {"status": "ok"})
                elif self.path == "/schema":
                    self._send(200, schema_payload)
                elif self.path == "/causal-graph":
                    in_graph = {v for e in edges for v in e}
                    isolated = [n for n in synth.schema.names
                                if n not in in_graph]
                    self._send(200, {"edges": [list(e) for e in edges],
                                     "isolated": isolated})
                else:
                    self._static(self.path)
            except ApiError as exc:
                self._send(exc.status, {"error": str(exc)})
            except Exception:
                self._crash()

        def do_POST(self):
            try:
                if self.path == "/generate":
                    self._generate()
                elif self.path == "/predict":
                    self._predict()
                else:
                    raise ApiError(404, f"no such endpoint {self.path}")
            except ApiError as exc:
                self._send(exc.status, {"error": str(exc)})
            except Exception:
                self._crash()

        def _crash(self):
            incident = secrets.token_hex(6)
            traceback.print_exc()
            self._send(500, {"error": f"internal error (incident {incident})"})

        def _generate(self):
            body = self._read_json()
            values = _parse_query_values(synth, body)
            n = body.get("n", 20)
            if not isinstance(n, int) or not 1 <= n <= 1000:
                raise ApiError(400, "n must be an integer in [1, 1000]")
            seed = body.get("seed")
            if seed is None:
                seed = secrets.randbelow(2**31)
            if not isinstance(seed, int):
                raise ApiError(400, "seed must be an integer")
            query = make_query(values, synth.schema)
            cf = generate(synth, query, n=n, seed=seed, f=classifier)
            histograms = {
                spec.name: conditional_histogram(cf.rows, spec.name, synth.schema)
                for spec in synth.schema.attributes
            }
            self._send(200, {
                "columns": synth.schema.names,
                "rows": json.loads(cf.rows.to_json(orient="values")),
                "validity": [bool(v) for v in cf.valid],
                "distances": [float(d) for d in cf.distances],
                "avg_distance": float(cf.distances.mean()),
                "validity_rate": float(cf.valid.mean()),
                "seed": seed,
                "histograms": histograms,
            })

        def _predict(self):
            body = self._read_json()
            row = body.get("row")
            if not isinstance(row, dict):
                raise ApiError(400, "row must be an object of attribute -> value")
            missing = [n for n in synth.schema.names if n not in row]
            if missing:
                raise ApiError(422, f"row is missing attributes {missing}")
            values = _parse_query_values(synth, {"query": row})
            vec = make_query(values, synth.schema).encode(synth.schema)
            proba = predict_proba(classifier, vec[None, :])[0]
            label = 1 if proba[1] >= proba[0] else -1
            self._send(200, {
                "probabilities": {"-1": float(proba[0]), "1": float(proba[1])},
                "prediction": label,
                "desired": desired,
                "flipped": label == desired,
            })

    return Handler


def make_server(synth, classifier, meta: dict, edges: list, port: int = 0,
                static_dir: Path | None = None) -> ThreadingHTTPServer:
    handler = build_handler(synth, classifier, meta, edges, static_dir)
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def run_service(synth, classifier, meta: dict, edges: list, port: int = 8765):
    static = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    server = make_server(synth, classifier, meta, edges, port=port,
                         static_dir=static if static.is_dir() else None)
    host, actual_port = server.server_address
    print(f"serving on http://{host}:{actual_port} (ctrl-c to stop)")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()


def start_in_thread(synth, classifier, meta: dict, edges: list,
                    static_dir: Path | None = None):
    """Launch on an ephemeral port; returns (server, base_url). For tests
    and embedding."""
    server = make_server(synth, classifier, meta, edges, port=0,
                         static_dir=static_dir)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address
    return server, f"http://{host}:{port}"
