"""scikit-learn style wrappers around the pipeline stages.

These let the stages sit in ``sklearn.pipeline.Pipeline`` objects and
parameter searches. Inputs are plain arrays:

* :class:`UTMProjector`: ``(n, 2)`` ``[lat, lon]`` <-> ``[easting, northing]``
* :class:`TrackResidualTransformer`: ``(n, 2)`` positions -> residual vectors
* :class:`StopDetector`: ``(n, 3)`` ``[t_seconds, easting, northing]``
* :class:`HotspotClusterer`: ``(n, 2)`` stop centroids, dwell as ``sample_weight``
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .behaviour import (
    DEFAULT_FILTER_WINDOW_S,
    DEFAULT_MERGE_RADIUS_M,
    DEFAULT_MIN_DURATION_S,
    DEFAULT_SPEED_THRESHOLD,
    cluster_points,
    detect_stops,
    median_filter,
    speed_series,
)
from .geodesy import DEFAULT_PROJECTION, geodetic_to_projected, get_projection, projected_to_geodetic
from .survey import ProjectedTrack
from .track import ReferencePolyline, load_polyline, project_onto_polyline

__all__ = ["HotspotClusterer", "StopDetector", "TrackResidualTransformer", "UTMProjector"]

_EPOCH = np.datetime64("1970-01-01T00:00:00", "s")


def _xy(X, estimator, n_features=2):
    X = check_array(X, dtype=np.float64, ensure_min_samples=1, estimator=estimator)
    if X.shape[1] != n_features:
        raise ValueError(f"{type(estimator).__name__} expects {n_features} columns, got {X.shape[1]}")
    return X


class UTMProjector(TransformerMixin, BaseEstimator):
    """Geodetic ``[lat, lon]`` degrees to projected ``[easting, northing]`` m."""

    def __init__(self, projection: str = DEFAULT_PROJECTION):
        self.projection = projection

    def fit(self, X=None, y=None):
        self.params_ = get_projection(self.projection)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = _xy(X, self)
        e, n = geodetic_to_projected(X[:, 0], X[:, 1], self.params_)
        return np.column_stack([np.atleast_1d(e), np.atleast_1d(n)])

    def inverse_transform(self, X):
        check_is_fitted(self, "params_")
        X = _xy(X, self)
        lat, lon = projected_to_geodetic(X[:, 0], X[:, 1], self.params_)
        return np.column_stack([np.atleast_1d(lat), np.atleast_1d(lon)])


class TrackResidualTransformer(TransformerMixin, BaseEstimator):
    """Residual vector (fix minus closest polyline point) for each position.

    Parameters
    ----------
    polyline : ReferencePolyline, path or array
        Reference path. An ``(m, 2)`` array is taken as open projected
        vertices unless ``closed`` is set.
    closed : bool
        Closure flag for array input.
    """

    def __init__(self, polyline=None, closed: bool = False, projection: str = DEFAULT_PROJECTION):
        self.polyline = polyline
        self.closed = closed
        self.projection = projection

    def fit(self, X=None, y=None):
        if self.polyline is None:
            raise ValueError("polyline is required")
        if isinstance(self.polyline, ReferencePolyline):
            self.polyline_ = self.polyline
        elif isinstance(self.polyline, (str, bytes)) or hasattr(self.polyline, "__fspath__"):
            self.polyline_ = load_polyline(self.polyline, get_projection(self.projection))
        else:
            self.polyline_ = ReferencePolyline(np.asarray(self.polyline, dtype=float), self.closed)
        self.n_features_in_ = 2
        return self

    def transform(self, X):
        check_is_fitted(self, "polyline_")
        X = _xy(X, self)
        proj = project_onto_polyline(X, self.polyline_)
        return proj["residual"]

    def score(self, X, y=None):
        """Negative RMS residual distance (higher is better)."""
        r = self.transform(X)
        return -float(np.sqrt(np.mean(np.sum(r * r, axis=1))))


class StopDetector(ClusterMixin, BaseEstimator):
    """Speed-threshold stop detection on a single 1 Hz survey.

    ``fit(X)`` with ``X = [t_seconds, easting, northing]`` sets ``stops_``
    (list of StopEvent) and ``labels_`` (stop index per epoch, -1 while
    moving).
    """

    def __init__(self, speed_threshold: float = DEFAULT_SPEED_THRESHOLD,
                 min_duration: float = DEFAULT_MIN_DURATION_S,
                 filter_window: int = DEFAULT_FILTER_WINDOW_S):
        self.speed_threshold = speed_threshold
        self.min_duration = min_duration
        self.filter_window = filter_window

    def fit(self, X, y=None):
        X = _xy(X, self, n_features=3)
        secs = np.round(X[:, 0]).astype(np.int64)
        times = _EPOCH + secs.astype("timedelta64[s]")
        track = ProjectedTrack(times, X[:, 1].copy(), X[:, 2].copy())
        sp = speed_series(track)
        if self.filter_window and self.filter_window > 1:
            sp = median_filter(sp, self.filter_window)
        self.speed_ = sp.speed
        self.stops_ = detect_stops(sp, self.speed_threshold, self.min_duration)
        labels = np.full(len(X), -1)
        for k, e in enumerate(self.stops_):
            labels[(times >= e.start) & (times <= e.end)] = k
        self.labels_ = labels
        self.n_features_in_ = 3
        return self


class HotspotClusterer(ClusterMixin, BaseEstimator):
    """Single-linkage clustering of stop centroids with a distance cutoff.

    ``sample_weight`` (dwell seconds) weights the cluster centres.
    """

    def __init__(self, merge_radius: float = DEFAULT_MERGE_RADIUS_M):
        self.merge_radius = merge_radius

    def fit(self, X, y=None, sample_weight=None):
        X = _xy(X, self)
        if sample_weight is not None:
            sample_weight = np.asarray(sample_weight, dtype=float)
            if sample_weight.shape != (len(X),):
                raise ValueError("sample_weight must have one value per sample")
        self.labels_, self.cluster_centers_, self.radii_ = cluster_points(
            X, sample_weight, self.merge_radius
        )
        self.n_features_in_ = 2
        return self
