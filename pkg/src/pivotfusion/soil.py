"""Soil hydraulic closures (Mualem-van Genuchten) and the Feddes root-uptake sink.

All quantities are SI: heads in m, conductivities in m/s, rates in 1/s.
Functions accept scalars or numpy arrays; parameter fields may themselves be
arrays (one entry per node) and broadcast against ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Capillary capacity returned on the saturated branch (h >= 0), 1/m.
C_FLOOR = 1e-7

SECONDS_PER_DAY = 86400.0


class ParameterError(ValueError):
    """Raised for soil/crop parameters outside their physical domain."""


@dataclass(frozen=True)
class SoilParams:
    theta_s: float
    theta_r: float
    K_s: float
    alpha: float
    n: float

    def __post_init__(self):
        ts, tr = np.asarray(self.theta_s), np.asarray(self.theta_r)
        bad = []
        if np.any(tr < 0) or np.any(tr >= ts) or np.any(ts > 1):
            bad.append("need 0 <= theta_r < theta_s <= 1")
        if np.any(np.asarray(self.K_s) <= 0):
            bad.append("K_s must be positive")
        if np.any(np.asarray(self.alpha) <= 0):
            bad.append("alpha must be positive")
        if np.any(np.asarray(self.n) <= 1):
            bad.append("n must exceed 1")
        if bad:
            raise ParameterError("; ".join(bad))

    @property
    def m(self):
        return 1.0 - 1.0 / np.asarray(self.n)


# Table values used by the synthetic scenarios.
LOAM = SoilParams(theta_s=0.430, theta_r=0.078, K_s=2.889e-6, alpha=3.60, n=1.56)
SANDY_CLAY_LOAM = SoilParams(theta_s=0.410, theta_r=0.090, K_s=7.222e-7, alpha=1.90, n=1.31)
# Carsel & Parrish (1988) class averages; used for the real-quadrant template.
CLAY_LOAM = SoilParams(theta_s=0.41, theta_r=0.095, K_s=7.222e-7, alpha=1.9, n=1.31)


def _scaled(h, p: SoilParams):
    """Return (unsaturated mask, x = -alpha*h clipped to >= 0)."""
    h = np.asarray(h, dtype=float)
    unsat = h < 0
    x = np.where(unsat, -np.asarray(p.alpha) * h, 0.0)
    return unsat, x


def effective_saturation(h, p: SoilParams):
    unsat, x = _scaled(h, p)
    se = (1.0 + x ** p.n) ** (-p.m)
    return np.where(unsat, se, 1.0)


def water_content(h, p: SoilParams):
    """Volumetric water content theta(h); theta_s on the saturated branch."""
    se = effective_saturation(h, p)
    return p.theta_r + (p.theta_s - p.theta_r) * se


def hydraulic_conductivity(h, p: SoilParams):
    """Mualem-van Genuchten unsaturated conductivity K(h), K_s for h >= 0."""
    unsat, x = _scaled(h, p)
    n, m = np.asarray(p.n), p.m
    xn = x ** n
    se = (1.0 + xn) ** (-m)
    # 1 - (1 - Se^(1/m))^m with Se^(1/m) = 1/(1+x^n), evaluated without cancellation
    with np.errstate(divide="ignore"):
        inner = -np.expm1(m * (np.log(xn) - np.log1p(xn)))
    k = p.K_s * np.sqrt(se) * inner ** 2
    return np.where(unsat, k, p.K_s * np.ones_like(k))


def capillary_capacity(h, p: SoilParams, floor: float = C_FLOOR):
    """dtheta/dh for h < 0; ``floor`` on the saturated branch."""
    unsat, x = _scaled(h, p)
    n = np.asarray(p.n)
    c = (p.theta_s - p.theta_r) * p.alpha * (n - 1.0) * x ** (n - 1.0) * (1.0 + x ** n) ** (-(2.0 - 1.0 / n))
    return np.where(unsat, c, floor)


def pressure_head_from_content(theta, p: SoilParams):
    """Inverse of :func:`water_content` on the open interval (theta_r, theta_s)."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= p.theta_r) or np.any(theta >= p.theta_s):
        raise ParameterError("theta must lie strictly between theta_r and theta_s")
    se = (theta - p.theta_r) / (p.theta_s - p.theta_r)
    # x^n = Se^(-1/m) - 1
    xn = np.expm1(-np.log(se) / p.m)
    return -(xn ** (1.0 / np.asarray(p.n))) / p.alpha


@dataclass(frozen=True)
class FeddesParams:
    """Feddes stress-curve breakpoints (m) and rooting depth L (m).

    Either ordering of the four heads is accepted as long as it is monotone;
    uptake is zero outside the [h_w, h1] bracket and ramps linearly inside.
    The defaults are conventional crop values, not site measurements.
    """

    h1: float = -0.1
    h2: float = -0.25
    h3: float = -5.0
    h_w: float = -150.0
    L: float = 0.3

    def __post_init__(self):
        heads = np.array([self.h1, self.h2, self.h3, self.h_w])
        d = np.diff(heads)
        if not (np.all(d <= 0) or np.all(d >= 0)) or heads[0] == heads[-1]:
            raise ParameterError("Feddes heads must form a monotone bracket")
        if self.h1 == self.h2 or self.h3 == self.h_w:
            raise ParameterError("Feddes ramps must have nonzero width")
        if self.L <= 0:
            raise ParameterError("rooting depth L must be positive")


@dataclass(frozen=True)
class CropWeather:
    K_c: float
    PET: float  # m/s
    LAI: float

    def __post_init__(self):
        if self.K_c < 0 or self.PET < 0 or self.LAI < 0:
            raise ParameterError("K_c, PET and LAI must be nonnegative")


def stress_factor(h, f: FeddesParams):
    """Piecewise-linear water stress reduction factor in [0, 1]."""
    h = np.asarray(h, dtype=float)
    wet_ramp = (h - f.h1) / (f.h2 - f.h1)
    dry_ramp = (f.h_w - h) / (f.h_w - f.h3)
    return np.clip(np.minimum(wet_ramp, dry_ramp), 0.0, 1.0)


def potential_transpiration(cw: CropWeather) -> float:
    etp = cw.K_c * cw.PET
    ev = etp * np.exp(-0.623 * cw.LAI)
    return etp - ev


def sink_rate(h, depth, f: FeddesParams, cw: CropWeather, optimum_uptake: bool = True):
    """Root water extraction rate (1/s), depth-independent within the root zone.

    ``depth`` is measured downward from the soil surface (m).
    """
    if f.L <= 0:
        raise ParameterError("rooting depth L must be positive")
    h = np.asarray(h, dtype=float)
    s_max = potential_transpiration(cw) / f.L
    a = np.ones_like(h) if optimum_uptake else stress_factor(h, f)
    return np.where(np.asarray(depth) <= f.L, a * s_max, 0.0)
