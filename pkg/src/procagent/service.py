"""HTTP simulation service and the simulator clients used by the search loop."""

from __future__ import annotations

import json
import logging
import threading
import time
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional

import httpx

from . import __version__
from . import components as db
from .errors import (
    InvalidPort,
    InvalidUnitParams,
    PortOccupied,
    ProcAgentError,
    PropertyRangeExceeded,
    SchemaError,
    UnknownComponent,
)
from .flowsheet import Flowsheet, from_dict, to_dict
from .simulator import SimulationResult, run_simulation
from .thermo import analyze_binary_vle, method_for

logger = logging.getLogger(__name__)

DEFAULT_HOST = "127.0.0.1"
DEFAULT_PORT = 8765
MAX_BODY = 16 * 1024 * 1024

# type-invariant failures in a well-formed document
UNPROCESSABLE = (UnknownComponent, InvalidUnitParams, InvalidPort, PortOccupied)

METHOD_ALIASES = {"ideal": "IdealRaoult", "idealraoult": "IdealRaoult", "raoult": "IdealRaoult",
                  "margules": "Margules"}


class RequestError(Exception):
    def __init__(self, status: int, error: str, detail: str, pointer: Optional[str] = None):
        self.status = status
        self.body = {"error": error, "detail": detail}
        if pointer is not None:
            self.body["pointer"] = pointer
        super().__init__(detail)


def encode(doc: Any) -> bytes:
    return json.dumps(doc, sort_keys=True).encode("utf-8")


# ---------------------------------------------------------------------------
# Request handlers (transport independent)
# ---------------------------------------------------------------------------


def _option(body: dict, key: str, typ, default, check) -> Any:
    value = body.get(key, default)
    if isinstance(value, bool) or not isinstance(value, typ) or not check(value):
        raise RequestError(HTTPStatus.BAD_REQUEST, "SchemaError", f"invalid {key}", f"/{key}")
    return value


def simulate_document(body: Any) -> dict[str, Any]:
    """Parse a /simulate body and run the simulation; the shared in-process path."""
    if not isinstance(body, dict):
        raise RequestError(HTTPStatus.BAD_REQUEST, "SchemaError", "expected a JSON object", "")
    tol = _option(body, "tol", (int, float), 1e-6, lambda v: v > 0)
    max_iter = _option(body, "max_iter", int, 200, lambda v: v >= 1)
    doc = {k: v for k, v in body.items() if k not in ("tol", "max_iter")}
    try:
        fs = from_dict(doc)
    except SchemaError as exc:
        raise RequestError(HTTPStatus.BAD_REQUEST, "SchemaError", exc.reason, exc.pointer) from exc
    except UNPROCESSABLE as exc:
        raise RequestError(HTTPStatus.UNPROCESSABLE_ENTITY, type(exc).__name__, str(exc)) from exc
    result = run_simulation(fs, tol=float(tol), max_iter=max_iter)
    return {"flowsheet_id": fs.id, **result.to_dict()}


def vle_document(body: Any) -> dict[str, Any]:
    if not isinstance(body, dict):
        raise RequestError(HTTPStatus.BAD_REQUEST, "SchemaError", "expected a JSON object", "")
    comps = body.get("components")
    if not isinstance(comps, list) or len(comps) != 2 or not all(isinstance(c, str) for c in comps):
        raise RequestError(HTTPStatus.BAD_REQUEST, "SchemaError", "components must list exactly 2 names",
                           "/components")
    pressure = _option(body, "pressure", (int, float), 101325.0, lambda v: v > 0)
    raw_method = body.get("method", "IdealRaoult")
    variant = METHOD_ALIASES.get(str(raw_method).lower())
    if variant is None:
        raise RequestError(HTTPStatus.BAD_REQUEST, "SchemaError", f"unknown method {raw_method!r}", "/method")
    try:
        ids = [db.resolve(c) for c in comps]
        result = analyze_binary_vle(ids[0], ids[1], float(pressure), method_for(ids, variant))
    except UnknownComponent as exc:
        raise RequestError(HTTPStatus.BAD_REQUEST, "UnknownComponent", str(exc), "/components") from exc
    except (ValueError, PropertyRangeExceeded) as exc:
        raise RequestError(HTTPStatus.BAD_REQUEST, type(exc).__name__, str(exc)) from exc
    return result.to_dict()


# ---------------------------------------------------------------------------
# HTTP server
# ---------------------------------------------------------------------------


class SimulationHandler(BaseHTTPRequestHandler):
    server_version = f"procagent/{__version__}"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt: str, *args) -> None:
        logger.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, doc: Any) -> None:
        payload = encode(doc)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _body(self) -> Any:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY:
            raise RequestError(HTTPStatus.REQUEST_ENTITY_TOO_LARGE, "TooLarge", "request body too large")
        raw = self.rfile.read(length)
        try:
            return json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise RequestError(HTTPStatus.BAD_REQUEST, "SchemaError", f"body is not JSON: {exc}", "") from exc

    def do_GET(self) -> None:
        if self.path == "/health":
            self._send(HTTPStatus.OK, {"status": "ok", "version": __version__})
        else:
            self._send(HTTPStatus.NOT_FOUND, {"error": "NotFound", "detail": self.path})

    def do_POST(self) -> None:
        routes = {"/simulate": simulate_document, "/vle": vle_document}
        handler = routes.get(self.path)
        if handler is None:
            self._send(HTTPStatus.NOT_FOUND, {"error": "NotFound", "detail": self.path})
            return
        start = time.perf_counter()
        try:
            doc = handler(self._body())
        except RequestError as exc:
            self._send(exc.status, exc.body)
            return
        except Exception as exc:  # internal fault
            logger.exception("internal error on %s", self.path)
            self._send(HTTPStatus.INTERNAL_SERVER_ERROR, {"error": type(exc).__name__, "detail": str(exc)})
            return
        doc["timing_ms"] = (time.perf_counter() - start) * 1000.0
        self._send(HTTPStatus.OK, doc)


def make_server(host: str = DEFAULT_HOST, port: int = DEFAULT_PORT) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), SimulationHandler)
    server.daemon_threads = True
    return server


class BackgroundServer:
    """Server on a daemon thread; port 0 picks a free port."""

    def __init__(self, host: str = DEFAULT_HOST, port: int = 0):
        self.server = make_server(host, port)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "BackgroundServer":
        self.thread.start()
        return self

    def __exit__(self, *exc) -> None:
        self.server.shutdown()
        self.server.server_close()
        self.thread.join()


# ---------------------------------------------------------------------------
# Simulator clients
# ---------------------------------------------------------------------------


class InProcessSimulator:
    def __init__(self, tol: float = 1e-6, max_iter: int = 200):
        self.tol = tol
        self.max_iter = max_iter

    def __call__(self, fs: Flowsheet) -> SimulationResult:
        return run_simulation(fs, tol=self.tol, max_iter=self.max_iter)


class HttpSimulator:
    """Client for ``POST /simulate``; thread-safe for concurrent child evaluation."""

    def __init__(self, base_url: str, tol: float = 1e-6, max_iter: int = 200, timeout: float = 60.0,
                 transport: Optional[httpx.BaseTransport] = None):
        self.tol = tol
        self.max_iter = max_iter
        self._http = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout, transport=transport)

    def close(self) -> None:
        self._http.close()

    def simulate_raw(self, doc: dict[str, Any]) -> httpx.Response:
        return self._http.post("/simulate", json=doc)

    def __call__(self, fs: Flowsheet) -> SimulationResult:
        body = {**to_dict(fs, include_states=False), "tol": self.tol, "max_iter": self.max_iter}
        resp = self.simulate_raw(body)
        if resp.status_code != HTTPStatus.OK:
            raise ProcAgentError(f"simulation service returned {resp.status_code}: {resp.text[:200]}")
        return SimulationResult.from_dict(resp.json())

    def health(self) -> dict[str, Any]:
        resp = self._http.get("/health")
        resp.raise_for_status()
        return resp.json()


def serve(host: str = DEFAULT_HOST, port: int = DEFAULT_PORT) -> None:
    server = make_server(host, port)
    logger.info("serving on http://%s:%d", host, server.server_address[1])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
