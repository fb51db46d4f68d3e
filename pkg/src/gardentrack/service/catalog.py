"""Directory-per-survey catalog with an append-only index.

Layout under the catalog root::

    surveys/<survey_id>/source.nmea     uploaded bytes, never modified
    surveys/<survey_id>/manifest.json   current SurveyRecord
    surveys/<survey_id>/report/         report bundle once analysed
    index.jsonl                          one line per accepted submission
    tmp/                                 staging area for submissions

A submission is staged in ``tmp/`` and renamed into ``surveys/`` in one
step, so a crash leaves either a complete record or nothing visible. The
survey id is derived from the SHA-256 digest of the upload, which makes
duplicate detection a directory lookup.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
import re
import shutil
import threading
import uuid
from concurrent.futures import Future, ThreadPoolExecutor, wait
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

from .. import reports
from ..behaviour import cluster_hotspots
from ..exceptions import (
    DuplicateUpload,
    EmptyStream,
    GardenTrackError,
    NoAnalyzedSurveys,
    UnknownSurvey,
    UnreadableFile,
)
from ..geodesy import get_projection
from ..nmea import parse_stream
from ..pipeline import PipelineConfig, analyze_fixes, event_from_dict
from ..track import load_polyline

log = logging.getLogger(__name__)

__all__ = ["Catalog", "DEFAULT_HEADER_PATTERNS", "SurveyRecord", "extract_header_metadata"]

STATUSES = ("received", "parsed", "analyzed", "failed")
_RANK = {"received": 0, "parsed": 1, "analyzed": 2}

DEFAULT_HEADER_PATTERNS = {
    "device_model": [
        r"^\s*#\s*(?:Device|Model|Smartphone)\s*[:=]\s*(?P<value>.+?)\s*$",
    ],
    "start_time": [
        r"^\s*#\s*(?:Start|Start ?time|Date)\s*[:=]\s*(?P<value>.+?)\s*$",
    ],
}


def _now() -> dt.datetime:
    return dt.datetime.now(dt.timezone.utc).replace(microsecond=0)


def _iso(t: Optional[dt.datetime]) -> Optional[str]:
    if t is None:
        return None
    return t.astimezone(dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_iso(text: Optional[str]) -> Optional[dt.datetime]:
    if not text:
        return None
    t = dt.datetime.fromisoformat(str(text).strip().replace("Z", "+00:00"))
    return t if t.tzinfo else t.replace(tzinfo=dt.timezone.utc)


@dataclass
class SurveyRecord:
    survey_id: str
    user_handle: str
    digest: str
    received_at: str
    device_model: str = ""
    start_time: Optional[str] = None
    filename: str = ""
    status: str = "received"
    failure_reason: Optional[str] = None
    report_paths: Dict[str, str] = field(default_factory=dict)
    metadata_conflicts: List[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SurveyRecord":
        return cls(**d)


def extract_header_metadata(text: str, patterns: Optional[dict] = None, max_lines: int = 50) -> dict:
    """Pull metadata from the leading non-sentence lines of an NMEA file.

    ``patterns`` maps a metadata key to a list of regular expressions with a
    ``value`` named group (or a single group); the first match wins.
    """
    patterns = patterns or DEFAULT_HEADER_PATTERNS
    compiled = {k: [re.compile(p, re.IGNORECASE) for p in v] for k, v in patterns.items()}
    found = {}
    for line in text.splitlines()[:max_lines]:
        if line.lstrip().startswith("$"):
            continue
        for key, regexes in compiled.items():
            if key in found:
                continue
            for rx in regexes:
                m = rx.match(line)
                if m:
                    found[key] = (m.groupdict().get("value") or m.group(1)).strip()
                    break
    return found


class Catalog:
    """Survey store plus a bounded pool of processing workers.

    Parameters
    ----------
    root : path
        Catalog directory; created if missing.
    pipeline : PipelineConfig
        Analysis settings used by :meth:`process_survey` by default.
    workers : int
        Maximum number of surveys processed concurrently.
    auto_process : bool
        Enqueue processing on every new submission.
    header_patterns : dict
        Metadata extraction patterns, see :func:`extract_header_metadata`.
    """

    def __init__(self, root, pipeline: Optional[PipelineConfig] = None, workers: int = 2,
                 auto_process: bool = True, header_patterns: Optional[dict] = None):
        self.root = Path(root)
        self.pipeline = pipeline or PipelineConfig()
        self.auto_process = auto_process
        self.header_patterns = header_patterns or DEFAULT_HEADER_PATTERNS
        self.surveys_dir = self.root / "surveys"
        self.tmp_dir = self.root / "tmp"
        self.index_path = self.root / "index.jsonl"
        self.surveys_dir.mkdir(parents=True, exist_ok=True)
        self.tmp_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._record_locks: Dict[str, threading.Lock] = {}
        self._records: Dict[str, SurveyRecord] = {}
        self._futures: List[Future] = []
        self._pool = ThreadPoolExecutor(max_workers=max(1, int(workers)),
                                        thread_name_prefix="survey-worker")
        self._recover()

    # -- persistence -------------------------------------------------------

    def _recover(self) -> None:
        for leftover in self.tmp_dir.iterdir():
            shutil.rmtree(leftover, ignore_errors=True)
        indexed = set()
        if self.index_path.exists():
            for line in self.index_path.read_text().splitlines():
                try:
                    indexed.add(json.loads(line)["survey_id"])
                except (ValueError, KeyError):
                    log.warning("skipping corrupt index line %r", line)
        for d in sorted(self.surveys_dir.iterdir()):
            manifest = d / "manifest.json"
            if not manifest.exists():
                continue
            rec = SurveyRecord.from_dict(json.loads(manifest.read_text()))
            self._records[rec.survey_id] = rec
            if rec.survey_id not in indexed:
                self._append_index(rec)

    def _append_index(self, rec: SurveyRecord) -> None:
        line = json.dumps({"survey_id": rec.survey_id, "digest": rec.digest,
                           "received_at": rec.received_at}, sort_keys=True)
        with open(self.index_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _survey_dir(self, survey_id: str) -> Path:
        return self.surveys_dir / survey_id

    def _save(self, rec: SurveyRecord) -> None:
        reports.atomic_write(self._survey_dir(rec.survey_id) / "manifest.json",
                             reports.dumps_json(rec.as_dict()))

    def _record_lock(self, survey_id: str) -> threading.Lock:
        with self._lock:
            return self._record_locks.setdefault(survey_id, threading.Lock())

    def _transition(self, rec: SurveyRecord, status: str, reason: Optional[str] = None) -> None:
        if rec.status == "failed":
            raise ValueError(f"{rec.survey_id} already failed")
        if status != "failed" and _RANK[status] < _RANK[rec.status]:
            raise ValueError(f"cannot move {rec.survey_id} from {rec.status} to {status}")
        rec.status = status
        rec.failure_reason = reason
        self._save(rec)

    # -- operations --------------------------------------------------------

    def submit_with_status(self, data: bytes, user_handle: str,
                           declared: Optional[dict] = None, filename: str = "") -> tuple:
        """Like :meth:`submit` but also reports whether a new record was made."""
        if not data or not data.strip():
            raise UnreadableFile("empty upload")
        if b"\x00" in data:
            raise UnreadableFile("upload is not a text file")
        try:
            text = data.decode("ascii")
        except UnicodeDecodeError:
            text = data.decode("latin-1")
        digest = hashlib.sha256(data).hexdigest()
        survey_id = digest[:16]
        declared = {k: v for k, v in (declared or {}).items() if v not in (None, "")}

        with self._lock:
            existing = self._records.get(survey_id)
            if existing is not None:
                return existing, False
            header = extract_header_metadata(text, self.header_patterns)
            conflicts = []
            meta = dict(header)
            for key, value in declared.items():
                if key in header and str(header[key]) != str(value):
                    conflicts.append({"field": key, "header": header[key], "declared": value})
                    log.warning("survey %s: declared %s=%r overrides header %r",
                                survey_id, key, value, header[key])
                meta[key] = value
            start = None
            if meta.get("start_time"):
                try:
                    start = _iso(_parse_iso(meta["start_time"]))
                except ValueError:
                    log.warning("survey %s: unparseable start time %r", survey_id, meta["start_time"])
            rec = SurveyRecord(
                survey_id=survey_id,
                user_handle=str(user_handle),
                digest=digest,
                received_at=_iso(_now()),
                device_model=str(meta.get("device_model", "")),
                start_time=start,
                filename=filename,
                metadata_conflicts=conflicts,
            )
            stage = self.tmp_dir / uuid.uuid4().hex
            stage.mkdir()
            try:
                with open(stage / "source.nmea", "wb") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
                reports.atomic_write(stage / "manifest.json", reports.dumps_json(rec.as_dict()))
                os.rename(stage, self._survey_dir(survey_id))
            except BaseException:
                shutil.rmtree(stage, ignore_errors=True)
                raise
            self._records[survey_id] = rec
            self._append_index(rec)

        if self.auto_process:
            with self._lock:
                self._futures.append(self._pool.submit(self._process_safely, survey_id))
        return rec, True

    def submit(self, data: bytes, user_handle: str, declared: Optional[dict] = None,
               filename: str = "", strict: bool = False) -> SurveyRecord:
        """Store an upload and (optionally) queue it for processing.

        Re-submitting identical bytes returns the existing record unchanged,
        or raises :class:`DuplicateUpload` carrying it when ``strict``.
        Declared metadata (``device_model``, ``start_time``) overrides
        values found in the file header.
        """
        rec, created = self.submit_with_status(data, user_handle, declared, filename)
        if strict and not created:
            raise DuplicateUpload(rec)
        return rec

    def _process_safely(self, survey_id: str) -> None:
        try:
            self.process_survey(survey_id)
        except Exception:  # pragma: no cover - process_survey records failures itself
            log.exception("unexpected failure processing %s", survey_id)

    def process_survey(self, survey_id: str, config: Optional[PipelineConfig] = None) -> SurveyRecord:
        """Run the analysis pipeline and write the report bundle.

        Failures are recorded as ``status = "failed"`` with a reason; this
        method does not raise for bad survey content.
        """
        config = config or self.pipeline
        with self._record_lock(survey_id):
            rec = self.get(survey_id)
            if rec.status == "failed":
                return rec
            d = self._survey_dir(survey_id)
            try:
                data = (d / "source.nmea").read_bytes()
                start = _parse_iso(rec.start_time)
                fixes, parse_report = parse_stream(
                    data.splitlines(), default_date=start.date() if start else None
                )
                if rec.start_time is None:
                    rec.start_time = _iso(fixes[0].timestamp)
                if rec.status == "received":
                    self._transition(rec, "parsed")
                params = get_projection(config.projection)
                poly = load_polyline(config.polyline, params) if config.polyline else None
                analysis = analyze_fixes(fixes, config, survey_id, parse_report, poly)
                written = analysis.write_bundle(d / "report", config)
                rec.report_paths = {
                    name: str(Path(p).relative_to(self.root)) for name, p in sorted(written.items())
                }
                self._transition(rec, "analyzed")
            except EmptyStream as exc:
                self._transition(rec, "failed", f"EmptyStream: {exc}")
            except GardenTrackError as exc:
                self._transition(rec, "failed", f"{exc.code}: {exc}")
            except Exception as exc:  # keep the service alive on unexpected input
                log.exception("processing %s failed", survey_id)
                self._transition(rec, "failed", f"{type(exc).__name__}: {exc}")
            return rec

    def wait_idle(self, timeout: Optional[float] = None) -> None:
        """Block until every queued processing job has finished."""
        with self._lock:
            pending = list(self._futures)
        wait(pending, timeout=timeout)
        with self._lock:
            self._futures = [f for f in self._futures if not f.done()]

    def close(self) -> None:
        self._pool.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- queries -----------------------------------------------------------

    def get(self, survey_id: str) -> SurveyRecord:
        with self._lock:
            try:
                return self._records[survey_id]
            except KeyError:
                raise UnknownSurvey(f"no survey {survey_id!r}") from None

    def get_report(self, survey_id: str) -> dict:
        """Record plus the report summary of an analysed survey."""
        rec = self.get(survey_id)
        summary = None
        path = self._survey_dir(survey_id) / "report" / "summary.json"
        if rec.status == "analyzed" and path.exists():
            summary = json.loads(path.read_text())
        return {"record": rec.as_dict(), "report": summary,
                "files": sorted(rec.report_paths)}

    def report_file(self, survey_id: str, name: str) -> Path:
        rec = self.get(survey_id)
        if name not in rec.report_paths:
            raise UnknownSurvey(f"survey {survey_id!r} has no report file {name!r}")
        return self.root / rec.report_paths[name]

    def list_surveys(self, user: Optional[str] = None, device: Optional[str] = None,
                     status: Optional[str] = None, since=None, until=None) -> List[SurveyRecord]:
        """Records in received-time order, optionally filtered.

        ``device`` matches as a case-insensitive substring; ``since`` and
        ``until`` bound the survey start time (falling back to receipt time).
        """
        since = _parse_iso(since) if isinstance(since, str) else since
        until = _parse_iso(until) if isinstance(until, str) else until
        with self._lock:
            records = list(self._records.values())
        out = []
        for r in records:
            if user is not None and r.user_handle != user:
                continue
            if device is not None and device.lower() not in r.device_model.lower():
                continue
            if status is not None and r.status != status:
                continue
            when = _parse_iso(r.start_time or r.received_at)
            if since is not None and when < since:
                continue
            if until is not None and when > until:
                continue
            out.append(r)
        return sorted(out, key=lambda r: (r.received_at, r.survey_id))

    def cluster_all(self, merge_radius: Optional[float] = None, **filters) -> dict:
        """Hotspot GeoJSON over every analysed survey matching ``filters``."""
        merge_radius = self.pipeline.merge_radius if merge_radius is None else merge_radius
        filters.pop("status", None)
        records = self.list_surveys(status="analyzed", **filters)
        if not records:
            raise NoAnalyzedSurveys("no analysed survey matches the filter")
        events = []
        for r in records:
            summary = json.loads(
                (self._survey_dir(r.survey_id) / "report" / "summary.json").read_text()
            )
            events.extend(event_from_dict(e) for e in summary["stops"])
        hotspots = cluster_hotspots(events, merge_radius)
        fc = reports.hotspots_geojson(hotspots, get_projection(self.pipeline.projection))
        fc["properties"].update({
            "merge_radius_m": merge_radius,
            "survey_ids": [r.survey_id for r in records],
        })
        return fc
