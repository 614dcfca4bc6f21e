"""Geomagnetic reference quantities: Legendre functions, field norm, dip bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

NT_PER_GAUSS = 1e5
EARTH_RADIUS_KM = 6371.2
BOUND_EPS = 1e-6


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class GaussCoefficients:
    """Spherical-harmonic coefficients in nT, indexed ``g[n, m]`` / ``h[n, m]``."""

    order: int
    g: np.ndarray
    h: np.ndarray
    epoch: str = ""

    def __post_init__(self):
        shape = (self.order + 1, self.order + 1)
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.g.shape != shape or self.h.shape != shape:
            raise ValueError(f"coefficient arrays must have shape {shape}")
        if not (np.all(np.isfinite(self.g)) and np.all(np.isfinite(self.h))):
            raise ValueError("coefficients must be finite")
        self.h[:, 0] = 0.0

    @classmethod
    def zeros(cls, order: int, epoch: str = "") -> GaussCoefficients:
        n = order + 1
        return cls(order, np.zeros((n, n)), np.zeros((n, n)), epoch)


@dataclass(frozen=True)
class GeoPosition:
    a: float  # km, radial distance from Earth's centre
    theta: float  # rad, co-latitude
    phi: float  # rad, longitude

    def __post_init__(self):
        if not self.a > 0.0:
            raise ValueError("radial distance must be positive")

    @classmethod
    def from_geodetic(cls, lat_deg: float, lon_deg: float, height_km: float = 0.0,
                      re: float = EARTH_RADIUS_KM) -> GeoPosition:
        """Spherical approximation: co-latitude from latitude, radius ``re + height``."""
        return cls(re + height_km, math.radians(90.0 - lat_deg), math.radians(lon_deg))


def _check_legendre_args(n: int, m: int, x: float) -> None:
    if n < 0 or m < 0 or m > n:
        raise ValueError(f"need 0 <= m <= n, got n={n}, m={m}")
    if abs(x) > 1.0:
        raise ValueError(f"|x| must be <= 1, got {x}")


def schmidt_factor(n: int, m: int) -> float:
    if m == 0:
        return 1.0
    return math.sqrt(2.0 * math.factorial(n - m) / math.factorial(n + m))


def legendre_table(nmax: int, x: float, schmidt: bool = False) -> np.ndarray:
    """All ``P_n^m(x)`` for ``0 <= m <= n <= nmax`` (no Condon-Shortley phase).

    Built with the sectoral seed ``P_m^m = (2m-1)!! (1-x^2)^{m/2}`` and the
    three-term recurrence in degree.
    """
    if abs(x) > 1.0:
        raise ValueError(f"|x| must be <= 1, got {x}")
    p = np.zeros((nmax + 1, nmax + 1))
    s = math.sqrt(max(0.0, 1.0 - x * x))
    p[0, 0] = 1.0
    for m in range(1, nmax + 1):
        p[m, m] = (2 * m - 1) * s * p[m - 1, m - 1]
    for m in range(0, nmax):
        p[m + 1, m] = x * (2 * m + 1) * p[m, m]
    for m in range(0, nmax + 1):
        for n in range(m + 2, nmax + 1):
            p[n, m] = (x * (2 * n - 1) * p[n - 1, m] - (n + m - 1) * p[n - 2, m]) / (n - m)
    if schmidt:
        for n in range(nmax + 1):
            for m in range(n + 1):
                p[n, m] *= schmidt_factor(n, m)
    return p


def legendre_assoc(n: int, m: int, x: float, schmidt: bool = False) -> float:
    """Associated Legendre function ``P_n^m(x)`` of degree ``n`` and order ``m``."""
    _check_legendre_args(n, m, x)
    return float(legendre_table(n, x, schmidt)[n, m])


def legendre_table_dtheta(nmax: int, theta: float, schmidt: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """``P_n^m(cos theta)`` and ``d/dtheta P_n^m(cos theta)`` tables.

    Uses ``sin(theta) dP_n^m/dtheta = n cos(theta) P_n^m - (n+m) P_{n-1}^m``,
    which is singular at the poles.
    """
    c, s = math.cos(theta), math.sin(theta)
    if s == 0.0:
        raise ValueError("theta at a pole")
    p = legendre_table(nmax, c)
    dp = np.zeros_like(p)
    for n in range(1, nmax + 1):
        for m in range(n + 1):
            prev = p[n - 1, m] if m <= n - 1 else 0.0
            dp[n, m] = (n * c * p[n, m] - (n + m) * prev) / s
    if schmidt:
        f = np.array([[schmidt_factor(n, m) if m <= n else 0.0 for m in range(nmax + 1)]
                      for n in range(nmax + 1)])
        p, dp = p * f, dp * f
    return p, dp


def legendre_assoc_dtheta(n: int, m: int, theta: float, schmidt: bool = False) -> float:
    """``d/dtheta P_n^m(cos theta)``."""
    _check_legendre_args(n, m, math.cos(theta))
    return float(legendre_table_dtheta(max(n, 1), theta, schmidt)[1][n, m])


def igrf_field_norm(pos: GeoPosition, coeffs: GaussCoefficients, re: float = EARTH_RADIUS_KM,
                    schmidt: bool = False, standard_radial: bool = False) -> float:
    """Geomagnetic field magnitude in Gauss from the three spherical-harmonic sums.

    The radial factor is ``(a / re)^(n+2)``; ``standard_radial`` switches to the
    physical ``(re / a)^(n+2)``. ``schmidt`` applies Schmidt semi-normalization
    to the Legendre functions, which is what published IGRF tables assume.
    """
    s = math.sin(pos.theta)
    if not 0.0 < pos.theta < math.pi or abs(s) < 1e-15:
        raise ValueError("co-latitude must lie strictly between the poles")
    k = coeffs.order
    p, dp = legendre_table_dtheta(k, pos.theta, schmidt)
    ratio = re / pos.a if standard_radial else pos.a / re
    north = east = radial = 0.0
    for n in range(1, k + 1):
        r = ratio ** (n + 2)
        for m in range(0, n + 1):
            cm, sm = math.cos(m * pos.phi), math.sin(m * pos.phi)
            gc = coeffs.g[n, m] * cm + coeffs.h[n, m] * sm
            gs = coeffs.g[n, m] * sm - coeffs.h[n, m] * cm
            north += r * dp[n, m] * gc
            east += r * m * p[n, m] / s * gs
            radial += r * (n + 1) * p[n, m] * gc
    norm = math.sqrt(north * north + east * east + radial * radial) / NT_PER_GAUSS
    return norm


def load_coefficients(path: str | Path) -> GaussCoefficients:
    """Read the ``IGRF <epoch> <order>`` text format (one ``n m g h`` row per line)."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ConfigurationError(f"{path}: empty coefficient file")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "IGRF":
        raise ConfigurationError(f"{path}: header must be 'IGRF <epoch> <order>'")
    try:
        order = int(header[2])
    except ValueError:
        raise ConfigurationError(f"{path}: order must be an integer") from None
    coeffs = GaussCoefficients.zeros(order, header[1])
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 4:
            raise ConfigurationError(f"{path}:{lineno}: expected 'n m g h'")
        try:
            n, m, g, h = int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{lineno}: {exc}") from None
        if not 1 <= n <= order or not 0 <= m <= n:
            raise ConfigurationError(f"{path}:{lineno}: index (n={n}, m={m}) out of range")
        coeffs.g[n, m], coeffs.h[n, m] = g, h
    coeffs.h[:, 0] = 0.0
    return coeffs


def save_coefficients(coeffs: GaussCoefficients, path: str | Path) -> None:
    rows = [f"IGRF {coeffs.epoch or 'unknown'} {coeffs.order}"]
    for n in range(1, coeffs.order + 1):
        for m in range(n + 1):
            rows.append(f"{n} {m} {float(coeffs.g[n, m])!r} {float(coeffs.h[n, m])!r}")
    Path(path).write_text("\n".join(rows) + "\n")


def default_coefficients() -> GaussCoefficients:
    """Bundled IGRF-13 main-field coefficients for epoch 2020.0, degree <= 4."""
    with resources.as_file(resources.files("magrestore") / "data" / "igrf13_2020_n4.txt") as p:
        return load_coefficients(p)


def mD_bounds_from_dip(dip: float, margin: float, eps: float = BOUND_EPS) -> tuple[float, float]:
    """Bounds on ``|mD|`` bracketing ``|sin(dip)|`` by ``margin``."""
    if not abs(dip) < 0.5 * math.pi:
        raise ConfigurationError("|dip| must be below pi/2")
    if not 0.0 < margin < 1.0:
        raise ConfigurationError("margin must lie in (0, 1)")
    centre = abs(math.sin(dip))
    lo = max(eps, centre - margin)
    hi = min(1.0 - eps, centre + margin)
    if lo >= hi:
        raise ConfigurationError(f"mD bounds collapse: ({lo}, {hi})")
    return lo, hi
