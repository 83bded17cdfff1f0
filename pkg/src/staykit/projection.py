"""WGS84 <-> UTM conversion.

Transverse Mercator via the Krueger n-series to sixth order, which is accurate
to a few nanometres inside a zone and well below a millimetre several zones out.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

A_WGS84 = 6378137.0
F_WGS84 = 1 / 298.257223563
K0 = 0.9996
FALSE_EASTING = 500000.0
FALSE_NORTHING_SOUTH = 10000000.0

_N = F_WGS84 / (2 - F_WGS84)
_E = math.sqrt(F_WGS84 * (2 - F_WGS84))
_A = A_WGS84 / (1 + _N) * (1 + _N**2 / 4 + _N**4 / 64 + _N**6 / 256)


def _series(n):
    n2, n3, n4, n5, n6 = n**2, n**3, n**4, n**5, n**6
    alpha = (
        n / 2 - 2 * n2 / 3 + 5 * n3 / 16 + 41 * n4 / 180 - 127 * n5 / 288 + 7891 * n6 / 37800,
        13 * n2 / 48 - 3 * n3 / 5 + 557 * n4 / 1440 + 281 * n5 / 630 - 1983433 * n6 / 1935360,
        61 * n3 / 240 - 103 * n4 / 140 + 15061 * n5 / 26880 + 167603 * n6 / 181440,
        49561 * n4 / 161280 - 179 * n5 / 168 + 6601661 * n6 / 7257600,
        34729 * n5 / 80640 - 3418889 * n6 / 1995840,
        212378941 * n6 / 319334400,
    )
    beta = (
        n / 2 - 2 * n2 / 3 + 37 * n3 / 96 - n4 / 360 - 81 * n5 / 512 + 96199 * n6 / 604800,
        n2 / 48 + n3 / 15 - 437 * n4 / 1440 + 46 * n5 / 105 - 1118711 * n6 / 3870720,
        17 * n3 / 480 - 37 * n4 / 840 - 209 * n5 / 4480 + 5569 * n6 / 90720,
        4397 * n4 / 161280 - 11 * n5 / 504 - 830251 * n6 / 7257600,
        4583 * n5 / 161280 - 108847 * n6 / 3991680,
        20648693 * n6 / 638668800,
    )
    delta = (
        2 * n - 2 * n2 / 3 - 2 * n3 + 116 * n4 / 45 + 26 * n5 / 45 - 2854 * n6 / 675,
        7 * n2 / 3 - 8 * n3 / 5 - 227 * n4 / 45 + 2704 * n5 / 315 + 2323 * n6 / 945,
        56 * n3 / 15 - 136 * n4 / 35 - 1262 * n5 / 105 + 73814 * n6 / 2835,
        4279 * n4 / 630 - 332 * n5 / 35 - 399572 * n6 / 14175,
        4174 * n5 / 315 - 144838 * n6 / 6237,
        601676 * n6 / 22275,
    )
    return alpha, beta, delta


_ALPHA, _BETA, _DELTA = _series(_N)


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True)
class UtmZone:
    number: int
    north: bool = True

    def __post_init__(self):
        if not 1 <= self.number <= 60:
            raise ProjectionError(f"UTM zone number must be in 1..60, got {self.number}")

    @property
    def central_meridian(self) -> float:
        return (self.number - 1) * 6 - 180 + 3

    @classmethod
    def parse(cls, text: str | int | "UtmZone") -> "UtmZone":
        """Accepts ``"50N"``, ``"11n"``, ``"33S"``, a bare number (north) or a zone."""
        if isinstance(text, UtmZone):
            return text
        if isinstance(text, int):
            return cls(text, True)
        m = re.fullmatch(r"\s*(\d{1,2})\s*([NnSs]?)\s*", str(text))
        if not m:
            raise ProjectionError(f"cannot parse UTM zone {text!r}")
        return cls(int(m.group(1)), m.group(2).upper() != "S")

    @classmethod
    def for_location(cls, lat: float, lon: float) -> "UtmZone":
        number = int(math.floor((lon + 180) / 6)) % 60 + 1
        return cls(number, lat >= 0)

    def __str__(self):
        return f"{self.number}{'N' if self.north else 'S'}"


def auto_zone(lat, lon) -> UtmZone:
    """Zone of the mean position of a point cloud."""
    return UtmZone.for_location(float(np.mean(lat)), float(np.mean(lon)))


def _check_range(lat, lon):
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise ProjectionError("non-finite coordinates")
    if np.any(np.abs(lat) > 90) or np.any(np.abs(lon) > 180):
        raise ProjectionError("latitude must be in [-90, 90] and longitude in [-180, 180]")


def project(lat, lon, zone):
    """Geodetic degrees -> UTM (easting, northing) in metres for ``zone``.

    Scalars in, floats out; arrays in, arrays out.
    """
    zone = UtmZone.parse(zone)
    scalar = np.isscalar(lat) and np.isscalar(lon)
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    _check_range(lat, lon)

    phi = np.radians(lat)
    lam = np.radians(lon - zone.central_meridian)
    lam = (lam + np.pi) % (2 * np.pi) - np.pi
    with np.errstate(divide="ignore", invalid="ignore"):
        sin_phi = np.sin(phi)
        t = np.sinh(np.arctanh(sin_phi) - _E * np.arctanh(_E * sin_phi))
        xi_p = np.arctan2(t, np.cos(lam))
        eta_p = np.arctanh(np.sin(lam) / np.sqrt(1 + t * t))
        xi = xi_p.copy()
        eta = eta_p.copy()
        for j, a in enumerate(_ALPHA, start=1):
            xi += a * np.sin(2 * j * xi_p) * np.cosh(2 * j * eta_p)
            eta += a * np.cos(2 * j * xi_p) * np.sinh(2 * j * eta_p)
    easting = FALSE_EASTING + K0 * _A * eta
    northing = K0 * _A * xi
    if not zone.north:
        northing = northing + FALSE_NORTHING_SOUTH
    if scalar:
        return float(easting), float(northing)
    return easting, northing


def unproject(easting, northing, zone):
    """UTM metres in ``zone`` -> geodetic (lat, lon) degrees."""
    zone = UtmZone.parse(zone)
    scalar = np.isscalar(easting) and np.isscalar(northing)
    easting = np.asarray(easting, dtype=float)
    northing = np.asarray(northing, dtype=float)
    if not zone.north:
        northing = northing - FALSE_NORTHING_SOUTH

    xi = northing / (K0 * _A)
    eta = (easting - FALSE_EASTING) / (K0 * _A)
    xi_p = xi.copy()
    eta_p = eta.copy()
    for j, b in enumerate(_BETA, start=1):
        xi_p -= b * np.sin(2 * j * xi) * np.cosh(2 * j * eta)
        eta_p -= b * np.cos(2 * j * xi) * np.sinh(2 * j * eta)
    chi = np.arcsin(np.sin(xi_p) / np.cosh(eta_p))
    phi = chi.copy()
    for j, d in enumerate(_DELTA, start=1):
        phi += d * np.sin(2 * j * chi)
    lam = np.arctan2(np.sinh(eta_p), np.cos(xi_p))

    lat = np.degrees(phi)
    lon = np.degrees(lam) + zone.central_meridian
    lon = (lon + 180) % 360 - 180
    if scalar:
        return float(lat), float(lon)
    return lat, lon
