"""Smartphone NMEA survey quality assessment and visitor stop detection.

Parse NMEA logs, project them to UTM, measure accuracy against a reference
path, estimate static precision and error autocorrelation, detect stops and
cluster them across surveys into hotspots.
"""

from .behaviour import (
    Hotspot,
    StopEvent,
    cluster_hotspots,
    detect_stops,
    median_filter,
    speed_series,
)
from .geodesy import (
    ProjectedPoint,
    ProjectionParams,
    geodetic_to_projected,
    get_projection,
    projected_to_geodetic,
)
from .nmea import GnssFix, ParseReport, parse_stream, quantization_step, read_nmea
from .pipeline import PipelineConfig, analyze_fixes, analyze_text
from .quality import acf, extract_static_windows, static_precision
from .simulate import ErrorModel, Scenario, emit_nmea, simulate_survey
from .survey import ProjectedTrack, project_fixes
from .track import (
    ReferencePolyline,
    accuracy_stats,
    closest_point_on_polyline,
    load_polyline,
    residual_series,
)

__version__ = "0.1.0"

__all__ = [
    "ErrorModel",
    "GnssFix",
    "Hotspot",
    "ParseReport",
    "PipelineConfig",
    "ProjectedPoint",
    "ProjectedTrack",
    "ProjectionParams",
    "ReferencePolyline",
    "Scenario",
    "StopEvent",
    "accuracy_stats",
    "acf",
    "analyze_fixes",
    "analyze_text",
    "closest_point_on_polyline",
    "cluster_hotspots",
    "detect_stops",
    "emit_nmea",
    "extract_static_windows",
    "geodetic_to_projected",
    "get_projection",
    "load_polyline",
    "median_filter",
    "parse_stream",
    "project_fixes",
    "projected_to_geodetic",
    "quantization_step",
    "read_nmea",
    "residual_series",
    "simulate_survey",
    "speed_series",
    "static_precision",
]
