import base64
import json
import threading

import pytest
from fastapi.testclient import TestClient

from conftest import simulated
from gardentrack.exceptions import ConfigError, DuplicateUpload, NoAnalyzedSurveys, UnknownSurvey, UnreadableFile
from gardentrack.service import Catalog, ServiceConfig, create_app, extract_header_metadata, load_service_config
from gardentrack.simulate import emit_nmea


def nmea(kind="field", seed=0, device="Xiaomi - Redmi Note 8T"):
    return emit_nmea(simulated(kind, seed).fixes, device_name=device).encode()


@pytest.fixture
def catalog(tmp_path):
    with Catalog(tmp_path / "cat", workers=2) as cat:
        yield cat


# -- metadata ---------------------------------------------------------------------------


def test_header_metadata():
    meta = extract_header_metadata("# Device: Pixel 4a\n# Start: 2021-02-03T11:31:00Z\n$GNGGA,...\n")
    assert meta == {"device_model": "Pixel 4a", "start_time": "2021-02-03T11:31:00Z"}
    assert extract_header_metadata("$GNGGA,...\n") == {}
    custom = {"device_model": [r"^;\s*phone=(?P<value>\S+)"]}
    assert extract_header_metadata("; phone=XT1\n", custom) == {"device_model": "XT1"}


# -- catalog ----------------------------------------------------------------------------


def test_submit_process_report(catalog):
    rec = catalog.submit(nmea(), "alice")
    catalog.wait_idle(30)
    rec = catalog.get(rec.survey_id)
    assert rec.status == "analyzed"
    assert rec.device_model == "Xiaomi - Redmi Note 8T"
    assert rec.start_time == "2021-02-03T11:31:00Z"
    report = catalog.get_report(rec.survey_id)
    assert len(report["report"]["stops"]) == 4
    assert "summary.json" in report["files"]
    assert catalog.report_file(rec.survey_id, "stops.csv").exists()
    with pytest.raises(UnknownSurvey):
        catalog.report_file(rec.survey_id, "missing.csv")


def test_duplicate_is_idempotent(catalog):
    data = nmea()
    a, created_a = catalog.submit_with_status(data, "alice")
    b, created_b = catalog.submit_with_status(data, "bob")
    assert created_a and not created_b
    assert b is a and b.user_handle == "alice"
    with pytest.raises(DuplicateUpload):
        catalog.submit(data, "bob", strict=True)
    catalog.wait_idle(30)
    assert len(catalog.list_surveys()) == 1
    assert len(catalog.index_path.read_text().splitlines()) == 1


def test_declared_metadata_wins(catalog):
    rec = catalog.submit(nmea(), "alice", {"device_model": "Pixel 4a"})
    assert rec.device_model == "Pixel 4a"
    assert rec.metadata_conflicts == [
        {"field": "device_model", "header": "Xiaomi - Redmi Note 8T", "declared": "Pixel 4a"}]


def test_unreadable_and_failed(catalog):
    with pytest.raises(UnreadableFile):
        catalog.submit(b"", "alice")
    with pytest.raises(UnreadableFile):
        catalog.submit(b"\x00\x01binary", "alice")
    rec = catalog.submit(b"just some text\nno sentences\n", "alice")
    catalog.wait_idle(30)
    rec = catalog.get(rec.survey_id)
    assert rec.status == "failed" and rec.failure_reason.startswith("EmptyStream")
    with pytest.raises(UnknownSurvey):
        catalog.get("0" * 16)


def test_concurrent_submissions(catalog):
    blobs = [nmea(seed=k) for k in range(10)]
    ids, errors = [], []

    def go(b, k):
        try:
            ids.append(catalog.submit(b, f"user{k % 3}").survey_id)
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=go, args=(b, k)) for k, b in enumerate(blobs)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    catalog.wait_idle(60)
    assert not errors and len(set(ids)) == 10
    recs = catalog.list_surveys()
    assert len(recs) == 10 and all(r.status == "analyzed" for r in recs)
    index = [json.loads(l) for l in catalog.index_path.read_text().splitlines()]
    assert sorted(i["survey_id"] for i in index) == sorted(ids)
    assert list(catalog.tmp_dir.iterdir()) == []


def test_restart_recovers_state(tmp_path):
    root = tmp_path / "cat"
    with Catalog(root) as cat:
        rid = cat.submit(nmea(), "alice").survey_id
        cat.wait_idle(30)
    (root / "tmp" / "half-written").mkdir()
    (root / "index.jsonl").write_text("")  # index lost; manifests are authoritative
    with Catalog(root, auto_process=False) as cat:
        assert cat.get(rid).status == "analyzed"
        assert not (root / "tmp" / "half-written").exists()
        assert json.loads((root / "index.jsonl").read_text())["survey_id"] == rid
        _, created = cat.submit_with_status(nmea(), "bob")
        assert not created


def test_filters(catalog):
    catalog.submit(nmea(seed=0), "alice")
    catalog.submit(nmea(seed=1, device="Pixel 4a"), "bob")
    catalog.wait_idle(30)
    assert [r.user_handle for r in catalog.list_surveys(user="bob")] == ["bob"]
    assert len(catalog.list_surveys(device="redmi")) == 1
    assert len(catalog.list_surveys(since="2021-02-03T00:00:00Z", until="2021-02-04T00:00:00Z")) == 2
    assert catalog.list_surveys(since="2022-01-01T00:00:00Z") == []
    assert len(catalog.list_surveys(status="analyzed")) == 2


def test_cluster_all(catalog):
    with pytest.raises(NoAnalyzedSurveys):
        catalog.cluster_all()
    for k in range(3):
        catalog.submit(nmea("bench", k), f"u{k}")
    catalog.wait_idle(60)
    fc = catalog.cluster_all(merge_radius=10.0)
    assert len(fc["features"]) == 4
    assert all(f["properties"]["survey_count"] == 3 for f in fc["features"])
    assert len(fc["properties"]["survey_ids"]) == 3


# -- config -----------------------------------------------------------------------------


def test_service_config(tmp_path):
    p = tmp_path / "svc.json"
    p.write_text(json.dumps({"workers": 3, "pipeline": {"merge_radius": 15}}))
    cfg = load_service_config(p, env={"GARDENTRACK_API_TOKEN": "s3cret", "GARDENTRACK_WORKERS": "4"})
    assert cfg.workers == 4 and cfg.api_token == "s3cret" and cfg.pipeline.merge_radius == 15
    with pytest.raises(ConfigError):
        load_service_config(data={"wrokers": 2}, env={})
    with pytest.raises(ConfigError):
        load_service_config(data={"header_patterns": {"device_model": ["(unclosed"]}}, env={})
    with pytest.raises(ConfigError):
        load_service_config(data={}, env={"GARDENTRACK_WORKERS": "many"})


# -- HTTP -------------------------------------------------------------------------------


@pytest.fixture
def client(catalog):
    return TestClient(create_app(catalog))


def test_http_lifecycle(client, catalog):
    assert client.get("/health").json()["status"] == "ok"
    r = client.post("/surveys", files={"file": ("s.nmea", nmea(), "text/plain")},
                    data={"user_handle": "alice", "metadata": json.dumps({"start_time": "2021-02-03T11:31:00Z"})})
    assert r.status_code == 201
    sid = r.json()["survey_id"]
    again = client.post("/surveys", files={"file": ("s.nmea", nmea(), "text/plain")},
                        data={"user_handle": "bob"})
    assert again.status_code == 200 and again.headers["X-Duplicate"] == "true"
    catalog.wait_idle(30)
    assert client.get(f"/surveys/{sid}").json()["status"] == "analyzed"
    rep = client.get(f"/surveys/{sid}/report").json()
    assert len(rep["report"]["stops"]) == 4
    csv_text = client.get(f"/surveys/{sid}/report/stops.csv").text
    assert csv_text.startswith("survey_id,start")
    listing = client.get("/surveys", params={"user": "alice"}).json()
    assert listing["count"] == 1
    hs = client.post("/hotspots", json={"merge_radius": 10}).json()
    assert hs["type"] == "FeatureCollection" and len(hs["features"]) == 3


def test_http_errors(client):
    r = client.get("/surveys/nope")
    assert r.status_code == 404 and r.json()["error"] == "UnknownSurvey"
    r = client.post("/surveys", files={"file": ("e.nmea", b"", "text/plain")}, data={"user_handle": "a"})
    assert r.status_code == 400 and r.json()["error"] == "UnreadableFile"
    r = client.post("/surveys", files={"file": ("e.nmea", b"x", "text/plain")})
    assert r.status_code == 422 and r.json()["error"] == "InvalidRequest"
    r = client.post("/surveys", files={"file": ("e.nmea", b"x", "text/plain")},
                    data={"user_handle": "a", "metadata": "[1]"})
    assert r.json()["error"] == "InvalidMetadata"
    assert client.post("/hotspots", json={}).status_code == 404
    assert client.post("/hotspots", json={"filter": {"colour": 1}}).status_code == 422
    assert client.post("/hotspots", json={"merge_radius": -1}).status_code == 422


def test_http_token(catalog):
    c = TestClient(create_app(catalog, ServiceConfig(api_token="s3cret")))
    assert c.get("/health").status_code == 200
    assert c.get("/surveys").status_code == 401
    assert c.get("/surveys", headers={"Authorization": "Bearer wrong"}).status_code == 401
    assert c.get("/surveys", headers={"Authorization": "Bearer s3cret"}).status_code == 200
    assert c.get("/surveys", headers={"X-Api-Token": "s3cret"}).status_code == 200


def test_bot_webhook(catalog):
    store = {"f1": nmea(seed=5)}
    c = TestClient(create_app(catalog, file_resolver=store.__getitem__))
    inline = {"message": {"from": {"username": "carol"}, "document": {
        "file_name": "a.nmea", "content_base64": base64.b64encode(nmea(seed=6)).decode()}}}
    r = c.post("/webhook/bot", json=inline)
    assert r.status_code == 201 and r.json()["user_handle"] == "carol"
    by_id = {"message": {"from": {"id": 42}, "document": {"file_id": "f1"}}}
    r = c.post("/webhook/bot", json=by_id)
    assert r.status_code == 201 and r.json()["user_handle"] == "42"
    assert c.post("/webhook/bot", json={"message": {}}).status_code == 422
    bad = {"message": {"from": {"username": "x"}, "document": {"content_base64": "!!"}}}
    assert c.post("/webhook/bot", json=bad).json()["error"] == "InvalidUpdate"
