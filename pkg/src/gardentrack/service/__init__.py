"""Survey ingestion: catalog persistence and the HTTP API."""

from .catalog import Catalog, SurveyRecord, extract_header_metadata
from .config import ServiceConfig, load_service_config

__all__ = ["Catalog", "ServiceConfig", "SurveyRecord", "create_app",
           "extract_header_metadata", "load_service_config"]


def create_app(*args, **kwargs):
    from .app import create_app as _create

    return _create(*args, **kwargs)
