"""Single-TCL dynamics: drift, thermostat law, Euler-Maruyama step, nominal power.

Units throughout the package: hours, degrees Celsius, kW.  A cooling TCL is
assumed (running the compressor lowers the temperature).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

OFF = 0
ON = 1


@dataclass(frozen=True)
class TclParams:
    """Thermal and electrical parameters of one TCL.

    Parameters
    ----------
    R : float
        Thermal resistance (degC/kW).
    C : float
        Thermal capacitance (kWh/degC).
    eta : float
        Coefficient of performance.
    P_rated : float
        Electrical power drawn while on (kW).
    sigma : float
        Noise amplitude (degC/sqrt(h)); the temperature increment over ``dt``
        has standard deviation ``sigma * sqrt(dt)``.
    lambda_min, lambda_max : float
        Deadband limits (degC).
    """

    R: float = 2.0
    C: float = 2.0
    eta: float = 2.5
    P_rated: float = 4.0
    sigma: float = 0.3
    lambda_min: float = 19.0
    lambda_max: float = 21.0

    def __post_init__(self):
        if not (self.R > 0 and self.C > 0 and self.eta > 0 and self.P_rated > 0):
            raise ValueError("R, C, eta and P_rated must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not self.lambda_min < self.lambda_max:
            raise ValueError("lambda_min must be below lambda_max")

    @property
    def lambda_set(self) -> float:
        return 0.5 * (self.lambda_min + self.lambda_max)

    def with_(self, **changes) -> "TclParams":
        return replace(self, **changes)


@dataclass
class TclState:
    x: float
    m: int = OFF


def drift(x, m, theta_a, p: TclParams):
    """Temperature rate of change (degC/h) for mode ``m`` (0 off, 1 on).

    Vectorizes over ``x`` and ``m``.
    """
    return -(np.asarray(x) - theta_a) / (p.R * p.C) - np.asarray(m) * p.eta * p.P_rated / p.C


def nominal_power(theta_a, p: TclParams):
    """Power that holds the TCL at the deadband midpoint (kW); not clamped at zero."""
    return (np.asarray(theta_a) - p.lambda_set) / (p.eta * p.R)


def thermostat_next_mode(x, m, p: TclParams):
    """Hysteresis thermostat: on at or above ``lambda_max``, off at or below ``lambda_min``."""
    x = np.asarray(x)
    out = np.where(x >= p.lambda_max, ON, np.where(x <= p.lambda_min, OFF, m))
    return out if out.ndim else int(out)


def sde_step(s: TclState, theta_a: float, dt: float, p: TclParams, noise: float) -> TclState:
    """One Euler-Maruyama step of the temperature SDE; the mode is left unchanged."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = s.x + float(drift(s.x, s.m, theta_a, p)) * dt + p.sigma * np.sqrt(dt) * noise
    return TclState(x=x, m=s.m)
