"""Transverse Mercator projection and planar distance helpers.

The forward and inverse maps use Krüger's series in the third flattening
``n``, carried to sixth order. Within 6 degrees of the central meridian the
truncation error is far below a millimetre.

ETRS89 and WGS84 geodetic coordinates are used interchangeably: the datum
shift between them (a few decimetres) is well below smartphone positioning
error, so no datum transformation is applied.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import NamedTuple, Optional, Union

import numpy as np

from .exceptions import OutOfZone, UnknownProjection

__all__ = [
    "DEFAULT_PROJECTION",
    "ProjectedPoint",
    "ProjectionParams",
    "geodetic_to_projected",
    "load_registry",
    "get_projection",
    "planar_distance",
    "projected_to_geodetic",
]

DEFAULT_PROJECTION = "EPSG:25832"

ZONE_HALF_WIDTH_DEG = 6.0
MAX_ABS_LATITUDE_DEG = 84.0
# inverse-map window is checked in projected metres, with margin for the
# convergence of the meridians near the zone edge
_MAX_EASTING_OFFSET = 800_000.0


class ProjectedPoint(NamedTuple):
    easting: float
    northing: float


@dataclass(frozen=True)
class ProjectionParams:
    semi_major_axis: float
    inverse_flattening: float
    central_meridian: float
    latitude_of_origin: float
    scale_factor: float
    false_easting: float
    false_northing: float
    registry_code: str = ""
    name: str = ""

    def __post_init__(self):
        if not self.semi_major_axis > 0:
            raise ValueError("semi_major_axis must be positive")
        if not self.inverse_flattening > 0:
            raise ValueError("inverse_flattening must be positive")
        if not 0 < self.scale_factor <= 1.001:
            raise ValueError("scale_factor must lie in (0, 1.001]")

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def _series(self) -> "_KruegerSeries":
        return _series_for(self.semi_major_axis, self.inverse_flattening)


class _KruegerSeries:
    def __init__(self, a: float, inv_f: float):
        f = 1.0 / inv_f
        n = f / (2.0 - f)
        self.e = math.sqrt(f * (2.0 - f))
        self.e2 = f * (2.0 - f)
        n2, n3, n4, n5, n6 = n**2, n**3, n**4, n**5, n**6
        self.rectifying_radius = a / (1.0 + n) * (1.0 + n2 / 4 + n4 / 64 + n6 / 256)
        self.alpha = np.array([
            n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180 - 127 * n5 / 288
            + 7891 * n6 / 37800,
            13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440 + 281 * n5 / 630
            - 1983433 * n6 / 1935360,
            61 * n3 / 240 - 103 * n4 / 140 + 15061 * n5 / 26880
            + 167603 * n6 / 181440,
            49561 * n4 / 161280 - 179 * n5 / 168 + 6601661 * n6 / 7257600,
            34729 * n5 / 80640 - 3418889 * n6 / 1995840,
            212378941 * n6 / 319334400,
        ])
        self.beta = np.array([
            n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360 - 81 * n5 / 512
            + 96199 * n6 / 604800,
            n2 / 48 + n3 / 15 - 437 * n4 / 1440 + 46 * n5 / 105
            - 1118711 * n6 / 3870720,
            17 * n3 / 480 - 37 * n4 / 840 - 209 * n5 / 4480 + 5569 * n6 / 90720,
            4397 * n4 / 161280 - 11 * n5 / 504 - 830251 * n6 / 7257600,
            4583 * n5 / 161280 - 108847 * n6 / 3991680,
            20648693 * n6 / 638668800,
        ])
        self.orders = np.arange(1, 7)

    def conformal_tau(self, tau):
        e = self.e
        sigma = np.sinh(e * np.arctanh(e * tau / np.sqrt(1.0 + tau**2)))
        return tau * np.sqrt(1.0 + sigma**2) - sigma * np.sqrt(1.0 + tau**2)

    def geodetic_tau(self, tau_prime):
        # Newton iteration on the conformal latitude relation
        tau = np.array(tau_prime, dtype=float, copy=True)
        for _ in range(8):
            tp = self.conformal_tau(tau)
            delta = (tau_prime - tp) * (1.0 + (1.0 - self.e2) * tau**2) / (
                (1.0 - self.e2) * np.sqrt(1.0 + tau**2) * np.sqrt(1.0 + tp**2)
            )
            tau = tau + delta
            if np.all(np.abs(delta) <= 1e-14 * np.maximum(1.0, np.abs(tau))):
                break
        return tau

    def forward(self, phi, lam):
        """Geodetic (radians, lam relative to CM) to (xi, eta) on the unit sphere."""
        tau_p = self.conformal_tau(np.tan(phi))
        xi_p = np.arctan2(tau_p, np.cos(lam))
        eta_p = np.arcsinh(np.sin(lam) / np.sqrt(tau_p**2 + np.cos(lam) ** 2))
        k = 2.0 * self.orders[:, None]
        xi = xi_p + np.sum(
            self.alpha[:, None] * np.sin(k * xi_p.ravel()) * np.cosh(k * eta_p.ravel()),
            axis=0,
        ).reshape(xi_p.shape)
        eta = eta_p + np.sum(
            self.alpha[:, None] * np.cos(k * xi_p.ravel()) * np.sinh(k * eta_p.ravel()),
            axis=0,
        ).reshape(eta_p.shape)
        return xi, eta

    def inverse(self, xi, eta):
        k = 2.0 * self.orders[:, None]
        xi_p = xi - np.sum(
            self.beta[:, None] * np.sin(k * xi.ravel()) * np.cosh(k * eta.ravel()),
            axis=0,
        ).reshape(xi.shape)
        eta_p = eta - np.sum(
            self.beta[:, None] * np.cos(k * xi.ravel()) * np.sinh(k * eta.ravel()),
            axis=0,
        ).reshape(eta.shape)
        tau_p = np.sin(xi_p) / np.sqrt(np.sinh(eta_p) ** 2 + np.cos(xi_p) ** 2)
        lam = np.arctan2(np.sinh(eta_p), np.cos(xi_p))
        phi = np.arctan(self.geodetic_tau(tau_p))
        return phi, lam


@lru_cache(maxsize=16)
def _series_for(a: float, inv_f: float) -> _KruegerSeries:
    return _KruegerSeries(a, inv_f)


def _origin_northing(params: ProjectionParams) -> float:
    if params.latitude_of_origin == 0.0:
        return 0.0
    series = params._series
    xi, _ = series.forward(
        np.array([math.radians(params.latitude_of_origin)]), np.array([0.0])
    )
    return float(params.scale_factor * series.rectifying_radius * xi[0])


def _unwrap(values, scalar):
    if scalar:
        return float(values.reshape(()))
    return values


def geodetic_to_projected(lat, lon, params: Optional[ProjectionParams] = None):
    """Project geodetic degrees to (easting, northing) metres.

    Accepts scalars or array-likes. Raises :class:`OutOfZone` if any input is
    further than 6 degrees from the central meridian or beyond 84 degrees of
    latitude.
    """
    params = params or get_projection()
    scalar = np.ndim(lat) == 0 and np.ndim(lon) == 0
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    lat, lon = np.broadcast_arrays(lat, lon)
    dlon = lon - params.central_meridian
    if np.any(~np.isfinite(lat)) or np.any(~np.isfinite(lon)):
        raise OutOfZone("non-finite coordinate")
    if np.any(np.abs(dlon) > ZONE_HALF_WIDTH_DEG) or np.any(
        np.abs(lat) >= MAX_ABS_LATITUDE_DEG
    ):
        raise OutOfZone(
            f"coordinates outside ±{ZONE_HALF_WIDTH_DEG}° of central meridian "
            f"{params.central_meridian}° or beyond ±{MAX_ABS_LATITUDE_DEG}° latitude"
        )
    series = params._series
    xi, eta = series.forward(np.radians(lat), np.radians(dlon))
    scale = params.scale_factor * series.rectifying_radius
    easting = params.false_easting + scale * eta
    northing = params.false_northing + scale * xi - _origin_northing(params)
    return ProjectedPoint(_unwrap(easting, scalar), _unwrap(northing, scalar))


def projected_to_geodetic(easting, northing, params: Optional[ProjectionParams] = None):
    """Inverse of :func:`geodetic_to_projected`; returns ``(lat, lon)`` degrees."""
    params = params or get_projection()
    scalar = np.ndim(easting) == 0 and np.ndim(northing) == 0
    easting, northing = np.broadcast_arrays(
        np.asarray(easting, dtype=float), np.asarray(northing, dtype=float)
    )
    if np.any(~np.isfinite(easting)) or np.any(~np.isfinite(northing)):
        raise OutOfZone("non-finite coordinate")
    series = params._series
    scale = params.scale_factor * series.rectifying_radius
    if np.any(np.abs(easting - params.false_easting) > _MAX_EASTING_OFFSET):
        raise OutOfZone("easting too far from the false easting for this zone")
    xi = (northing - params.false_northing + _origin_northing(params)) / scale
    eta = (easting - params.false_easting) / scale
    if np.any(np.abs(xi) >= math.pi / 2):
        raise OutOfZone("northing beyond the pole")
    phi, lam = series.inverse(xi, eta)
    lat = np.degrees(phi)
    lon = np.degrees(lam) + params.central_meridian
    if np.any(np.abs(lon - params.central_meridian) > ZONE_HALF_WIDTH_DEG + 1e-9) or np.any(
        np.abs(lat) >= MAX_ABS_LATITUDE_DEG
    ):
        raise OutOfZone("projected point maps outside the zone window")
    return _unwrap(lat, scalar), _unwrap(lon, scalar)


def planar_distance(a, b) -> float:
    """Euclidean distance between two projected points."""
    return math.hypot(b[0] - a[0], b[1] - a[1])


# -- registry ----------------------------------------------------------------


def load_registry(path: Union[str, Path, None] = None) -> dict:
    """Read a projection registry file.

    The file is a JSON object mapping a registry code (``"EPSG:25832"``) to
    an object with keys ``semi_major_axis``, ``inverse_flattening``,
    ``central_meridian``, ``latitude_of_origin``, ``scale_factor``,
    ``false_easting``, ``false_northing`` and optionally ``name``. Without a
    path the bundled registry is read.
    """
    if path is None:
        text = resources.files("gardentrack").joinpath("data/projections.json").read_text()
    else:
        text = Path(path).read_text()
    raw = json.loads(text)
    return {
        code: ProjectionParams(registry_code=code, **entry) for code, entry in raw.items()
    }


@lru_cache(maxsize=1)
def _bundled_registry() -> dict:
    return load_registry()


def get_projection(code: str = DEFAULT_PROJECTION, registry: Optional[dict] = None) -> ProjectionParams:
    registry = registry if registry is not None else _bundled_registry()
    try:
        return registry[code]
    except KeyError:
        raise UnknownProjection(f"projection {code!r} not in registry") from None
