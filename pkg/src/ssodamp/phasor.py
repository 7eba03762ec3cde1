"""Space-phasor arithmetic and the Park transformation.

Conventions used throughout the package:

* Park transformation is amplitude invariant (peak scaled): a balanced
  set of amplitude ``A`` aligned with the frame angle maps to ``(A, 0)``.
  With this scaling three-phase power is ``1.5 * (v_d*i_d + v_q*i_q)``,
  which is why ``2/3`` and ``3/2`` factors appear in the power/current
  conversions of the plant and controller.
* Frame angles are stored unwrapped; use :func:`wrap_angle` for display.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_TWO_THIRDS_PI = 2.0 * math.pi / 3.0


@dataclass(frozen=True)
class Phasor2:
    """d-q pair of a space phasor in a rotating frame (pu)."""

    d: float
    q: float

    def __post_init__(self):
        if not (math.isfinite(self.d) and math.isfinite(self.q)):
            raise ValueError(f"non-finite phasor components ({self.d}, {self.q})")

    @classmethod
    def from_complex(cls, z: complex) -> "Phasor2":
        return cls(float(z.real), float(z.imag))

    def to_complex(self) -> complex:
        return complex(self.d, self.q)

    def __iter__(self):
        yield self.d
        yield self.q


@dataclass(frozen=True)
class FrameAngle:
    """Angle of a rotating d-q frame (rad), unwrapped."""

    rho: float

    def __post_init__(self):
        if not math.isfinite(self.rho):
            raise ValueError("frame angle must be finite")


@dataclass(frozen=True)
class PerUnitBase:
    s_base: float = 100.0  # MVA
    v_ac_base: float = 20.0  # kV, line-line rms
    v_dc_base: float = 48.9873  # kV
    f_base: float = 60.0  # Hz

    def __post_init__(self):
        for name in ("s_base", "v_ac_base", "v_dc_base", "f_base"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"PerUnitBase.{name} must be strictly positive, got {value}")

    @property
    def omega_base(self) -> float:
        """Base angular frequency (rad/s)."""
        return 2.0 * math.pi * self.f_base

    @property
    def dc_to_ac_ratio(self) -> float:
        """Peak ac phase voltage (pu) produced per pu dc voltage at unit modulation.

        The averaged converter delivers ``m * V_dc / 2`` peak per phase; the
        ac base is the peak phase value of ``v_ac_base``.
        """
        v_ac_peak = self.v_ac_base * math.sqrt(2.0 / 3.0)
        return self.v_dc_base / (2.0 * v_ac_peak)


def _rho(rho) -> float:
    return rho.rho if isinstance(rho, FrameAngle) else float(rho)


def park_transform(abc, rho) -> Phasor2:
    """Map an instantaneous three-phase sample to the d-q frame at angle ``rho``."""
    a, b, c = (float(v) for v in abc)
    th = _rho(rho)
    k = 2.0 / 3.0
    d = k * (a * math.cos(th) + b * math.cos(th - _TWO_THIRDS_PI) + c * math.cos(th + _TWO_THIRDS_PI))
    q = -k * (a * math.sin(th) + b * math.sin(th - _TWO_THIRDS_PI) + c * math.sin(th + _TWO_THIRDS_PI))
    return Phasor2(d, q)


def inverse_park(ph: Phasor2, rho) -> tuple[float, float, float]:
    th = _rho(rho)
    d, q = ph.d, ph.q
    return (
        d * math.cos(th) - q * math.sin(th),
        d * math.cos(th - _TWO_THIRDS_PI) - q * math.sin(th - _TWO_THIRDS_PI),
        d * math.cos(th + _TWO_THIRDS_PI) - q * math.sin(th + _TWO_THIRDS_PI),
    )


def frequency_shift(ph: Phasor2, delta_rho: float) -> Phasor2:
    """Rotate ``ph`` by ``-delta_rho``: the phasor seen from a frame advanced by ``delta_rho``."""
    c, s = math.cos(delta_rho), math.sin(delta_rho)
    return Phasor2(ph.d * c + ph.q * s, -ph.d * s + ph.q * c)


def magnitude(ph: Phasor2) -> float:
    return math.hypot(ph.d, ph.q)


def wrap_angle(rho: float) -> float:
    """Wrap to (-pi, pi]; display only."""
    w = math.remainder(rho, 2.0 * math.pi)
    return math.pi if w == -math.pi else w


def rotate_array(d: np.ndarray, q: np.ndarray, delta_rho) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`frequency_shift` for sampled d-q traces."""
    c, s = np.cos(delta_rho), np.sin(delta_rho)
    return d * c + q * s, -d * s + q * c
