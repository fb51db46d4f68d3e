"""HTTP front of the survey catalog (FastAPI).

Endpoints
---------
``POST /surveys``
    multipart form: ``file`` (NMEA upload), ``user_handle``, optional
    ``metadata`` (JSON object with ``device_model`` / ``start_time``).
    201 with the SurveyRecord for a new file, 200 with the existing record
    for a duplicate (``X-Duplicate: true``).
``GET /surveys``
    query ``user``, ``device`` (substring), ``status``, ``since``, ``until``;
    returns ``{"count": n, "surveys": [SurveyRecord, ...]}``.
``GET /surveys/{id}``
    the SurveyRecord.
``GET /surveys/{id}/report``
    ``{"record": ..., "report": summary-or-null, "files": [...]}``.
``GET /surveys/{id}/report/{name}``
    one report file (CSV / JSON / GeoJSON).
``POST /hotspots``
    JSON ``{"filter": {...list filters...}, "merge_radius": 10}``; returns a
    GeoJSON FeatureCollection.
``POST /webhook/bot``
    bot-style update ``{"message": {"from": {"username": ...},
    "document": {"file_name": ..., "file_id": ..., "content_base64": ...}}}``.
    Inline content is used when present, otherwise ``file_id`` goes through
    the configured file resolver.

Errors are JSON ``{"error": code, "message": text}``. When an API token is
configured every endpoint except ``/health`` requires it, either as
``Authorization: Bearer <token>`` or ``X-Api-Token: <token>``.
"""

from __future__ import annotations

import base64
import binascii
import hmac
import json
import logging
from typing import Any, Callable, Optional

from fastapi import Body, Depends, FastAPI, File, Form, Header, Request, UploadFile
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse

from ..exceptions import (
    ConfigError,
    GardenTrackError,
    NoAnalyzedSurveys,
    UnknownSurvey,
    UnreadableFile,
)
from .catalog import Catalog
from .config import ServiceConfig

log = logging.getLogger(__name__)

__all__ = ["create_app"]

_STATUS = {
    UnknownSurvey: 404,
    NoAnalyzedSurveys: 404,
    UnreadableFile: 400,
    ConfigError: 400,
}


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": code, "message": message})


def _filters(user=None, device=None, status=None, since=None, until=None) -> dict:
    return {"user": user, "device": device, "status": status, "since": since, "until": until}


def create_app(
    catalog: Optional[Catalog] = None,
    config: Optional[ServiceConfig] = None,
    file_resolver: Optional[Callable[[str], bytes]] = None,
) -> FastAPI:
    """Build the application around an existing or freshly opened catalog.

    ``file_resolver`` maps a bot ``file_id`` to the file bytes; a messenger
    bridge plugs in here.
    """
    config = config or ServiceConfig()
    if catalog is None:
        catalog = Catalog(config.catalog_root, config.pipeline, workers=config.workers,
                          auto_process=config.auto_process,
                          header_patterns=config.header_patterns)
    token = config.api_token

    def check_token(authorization: Optional[str] = Header(None),
                    x_api_token: Optional[str] = Header(None)):
        if token is None:
            return
        supplied = x_api_token
        if authorization and authorization.lower().startswith("bearer "):
            supplied = authorization[7:].strip()
        if supplied is None or not hmac.compare_digest(supplied, token):
            raise _Unauthorized()

    app = FastAPI(title="gardentrack ingest", version="0.1.0")
    app.state.catalog = catalog
    auth = [Depends(check_token)]

    @app.exception_handler(_Unauthorized)
    async def _unauth(request: Request, exc):
        return _error(401, "Unauthorized", "missing or invalid API token")

    @app.exception_handler(GardenTrackError)
    async def _domain(request: Request, exc: GardenTrackError):
        status = next((s for cls, s in _STATUS.items() if isinstance(exc, cls)), 422)
        return _error(status, exc.code, str(exc))

    @app.exception_handler(RequestValidationError)
    async def _invalid(request: Request, exc: RequestValidationError):
        return _error(422, "InvalidRequest", "; ".join(
            f"{'.'.join(str(p) for p in e.get('loc', ()))}: {e.get('msg')}" for e in exc.errors()
        ))

    @app.get("/health")
    def health():
        return {"status": "ok", "surveys": len(catalog.list_surveys())}

    def _submit(data: bytes, user_handle: str, declared: dict, filename: str):
        rec, created = catalog.submit_with_status(data, user_handle, declared, filename)
        return JSONResponse(
            status_code=201 if created else 200,
            content=rec.as_dict(),
            headers={"X-Duplicate": "false" if created else "true"},
        )

    @app.post("/surveys", dependencies=auth)
    def post_survey(
        file: UploadFile = File(...),
        user_handle: str = Form(...),
        metadata: Optional[str] = Form(None),
    ):
        declared = {}
        if metadata:
            try:
                declared = json.loads(metadata)
            except ValueError:
                return _error(422, "InvalidMetadata", "metadata must be a JSON object")
            if not isinstance(declared, dict):
                return _error(422, "InvalidMetadata", "metadata must be a JSON object")
        return _submit(file.file.read(), user_handle, declared, file.filename or "")

    @app.get("/surveys", dependencies=auth)
    def get_surveys(user: Optional[str] = None, device: Optional[str] = None,
                    status: Optional[str] = None, since: Optional[str] = None,
                    until: Optional[str] = None):
        try:
            records = catalog.list_surveys(**_filters(user, device, status, since, until))
        except ValueError as exc:
            return _error(422, "InvalidFilter", str(exc))
        return {"count": len(records), "surveys": [r.as_dict() for r in records]}

    @app.get("/surveys/{survey_id}", dependencies=auth)
    def get_survey(survey_id: str):
        return catalog.get(survey_id).as_dict()

    @app.get("/surveys/{survey_id}/report", dependencies=auth)
    def get_report(survey_id: str):
        return catalog.get_report(survey_id)

    @app.get("/surveys/{survey_id}/report/{name}", dependencies=auth)
    def get_report_file(survey_id: str, name: str):
        return FileResponse(catalog.report_file(survey_id, name))

    @app.post("/hotspots", dependencies=auth)
    def post_hotspots(body: Any = Body(None)):
        if body is None:
            body = {}
        if not isinstance(body, dict):
            return _error(422, "InvalidRequest", "body must be a JSON object")
        flt = body.get("filter") or {}
        allowed = {"user", "device", "since", "until"}
        if not isinstance(flt, dict) or set(flt) - allowed:
            return _error(422, "InvalidFilter", f"filter keys must be among {sorted(allowed)}")
        radius = body.get("merge_radius")
        if radius is not None and (not isinstance(radius, (int, float)) or radius < 0):
            return _error(422, "InvalidRequest", "merge_radius must be a non-negative number")
        try:
            return catalog.cluster_all(merge_radius=radius, **flt)
        except ValueError as exc:
            return _error(422, "InvalidFilter", str(exc))

    @app.post("/webhook/bot", dependencies=auth)
    def bot_update(update: Any = Body(...)):
        try:
            message = update["message"]
            sender = message["from"]
            doc = message["document"]
        except (KeyError, TypeError):
            return _error(422, "InvalidUpdate", "expected message.from and message.document")
        handle = sender.get("username") or str(sender.get("id", ""))
        if not handle:
            return _error(422, "InvalidUpdate", "sender has no username or id")
        if doc.get("content_base64"):
            try:
                data = base64.b64decode(doc["content_base64"], validate=True)
            except (binascii.Error, ValueError):
                return _error(422, "InvalidUpdate", "content_base64 is not valid base64")
        elif doc.get("file_id") and file_resolver is not None:
            data = file_resolver(doc["file_id"])
        else:
            return _error(422, "InvalidUpdate", "document has no retrievable content")
        declared = {k: message[k] for k in ("device_model", "start_time") if message.get(k)}
        return _submit(data, handle, declared, doc.get("file_name", ""))

    return app


class _Unauthorized(Exception):
    pass
