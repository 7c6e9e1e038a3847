import json
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from procagent import __version__
from procagent.flowsheet import load_design, to_dict
from procagent.service import BackgroundServer, HttpSimulator, InProcessSimulator, encode, simulate_document


@pytest.fixture(scope="module")
def server():
    with BackgroundServer() as srv:
        yield srv


@pytest.fixture(scope="module")
def http(server):
    with httpx.Client(base_url=server.url, timeout=30.0) as client:
        yield client


def corpus_doc(corpus_paths, stem):
    return to_dict(load_design([p for p in corpus_paths if p.stem == stem][0]), include_states=False)


def strip_timing(doc):
    return {k: v for k, v in doc.items() if k != "timing_ms"}


def test_health_reports_version(http):
    assert http.get("/health").json() == {"status": "ok", "version": __version__}
    assert http.get("/nope").status_code == 404


def test_simulate_ok(http, corpus_paths):
    resp = http.post("/simulate", json=corpus_doc(corpus_paths, "mixer-splitter-recycle"))
    assert resp.status_code == 200
    body = resp.json()
    assert body["converged"] is True and body["timing_ms"] >= 0
    assert body["flowsheet_id"] == "mixer-splitter-recycle"


def test_simulate_non_convergence_is_200(http, corpus_paths):
    doc = {**corpus_doc(corpus_paths, "mixer-splitter-recycle"), "max_iter": 1}
    body = http.post("/simulate", json=doc).json()
    assert body["converged"] is False and body["failure_reason"] == "NotConverged"


def test_simulate_schema_errors(http, corpus_paths):
    doc = corpus_doc(corpus_paths, "heater-chain")
    del doc["streams"]
    resp = http.post("/simulate", json=doc)
    assert resp.status_code == 400
    assert resp.json()["pointer"] == "/streams"
    resp = http.post("/simulate", content=b"{not json", headers={"Content-Type": "application/json"})
    assert resp.status_code == 400
    resp = http.post("/simulate", json={**corpus_doc(corpus_paths, "heater-chain"), "tol": -1})
    assert resp.status_code == 400 and resp.json()["pointer"] == "/tol"


def test_simulate_type_invariant_errors_are_422(http, corpus_paths):
    doc = corpus_doc(corpus_paths, "heater-chain")
    doc["components"] = ["unobtainium"]
    resp = http.post("/simulate", json=doc)
    assert resp.status_code == 422 and resp.json()["error"] == "UnknownComponent"
    doc = corpus_doc(corpus_paths, "splitter-three")
    splitter = next(u for u in doc["units"] if u["kind"] == "Splitter")
    splitter["params"]["fractions"] = [0.9, 0.9, 0.9]
    resp = http.post("/simulate", json=doc)
    assert resp.status_code == 422 and resp.json()["error"] == "InvalidUnitParams"


def test_vle_endpoint(http):
    body = http.post("/vle", json={"components": ["benzene", "toluene"], "pressure": 101325}).json()
    assert body["azeotrope"] is None
    body = http.post("/vle", json={"components": ["ethanol", "water"], "method": "margules"}).json()
    assert body["azeotrope"] is not None
    assert http.post("/vle", json={"components": ["ethanol"]}).status_code == 400
    resp = http.post("/vle", json={"components": ["ethanol", "unobtainium"]})
    assert resp.status_code == 400 and resp.json()["error"] == "UnknownComponent"


def test_http_simulator_equals_in_process(server, corpus_paths):
    remote = HttpSimulator(server.url)
    local = InProcessSimulator()
    assert remote.health()["status"] == "ok"
    for path in corpus_paths:
        fs = load_design(path)
        assert remote(fs).to_dict() == local(fs).to_dict(), path.stem
    remote.close()


def test_concurrent_requests_match_serial(server, corpus_paths):
    docs = [to_dict(load_design(p), include_states=False) for p in corpus_paths]
    expected = [encode(simulate_document(json.loads(json.dumps(d)))) for d in docs]

    def post(doc):
        with httpx.Client(base_url=server.url, timeout=30.0) as c:
            return encode(strip_timing(c.post("/simulate", json=doc).json()))

    with ThreadPoolExecutor(8) as pool:
        got = list(pool.map(post, docs * 2))
    assert got == expected * 2
