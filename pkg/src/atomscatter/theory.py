"""Closed-form single-photon scattering model for a two-level atom.

All rates are angular frequencies in rad/s and all times are in seconds.
Functions accept scalars or numpy arrays for the time/frequency argument and
return the same shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ParameterError

#: natural linewidth of the Rb-87 D2 line, Gamma0 / 2pi in Hz
RB87_D2_LINEWIDTH_HZ = 6.07e6

#: relative |gammap - gamma0| / gamma0 below which limit formulas are used
DEGENERACY_THRESHOLD = 1e-6


def linewidth_mhz_to_gamma(linewidth_mhz: float) -> float:
    """Convert a linewidth quoted as Gamma/2pi in MHz to rad/s."""
    return 2.0 * math.pi * linewidth_mhz * 1e6


@dataclass(frozen=True)
class AtomParams:
    """Atom side of the model.

    Parameters
    ----------
    gamma0 : float
        Natural linewidth in rad/s.
    overlap : float
        Spatial overlap between excitation mode and atomic dipole mode, in [0, 1].
    omega0 : float
        Resonance frequency in rad/s; 0 means rotating frame.
    """

    gamma0: float = linewidth_mhz_to_gamma(RB87_D2_LINEWIDTH_HZ / 1e6)
    overlap: float = 0.033
    omega0: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.gamma0) and self.gamma0 > 0):
            raise ParameterError(f"gamma0 must be positive, got {self.gamma0!r}")
        if not (0.0 <= self.overlap <= 1.0):
            raise ParameterError(f"overlap must lie in [0, 1], got {self.overlap!r}")
        if not math.isfinite(self.omega0):
            raise ParameterError(f"omega0 must be finite, got {self.omega0!r}")

    @classmethod
    def from_linewidth_mhz(cls, linewidth_mhz: float, overlap: float) -> "AtomParams":
        return cls(gamma0=linewidth_mhz_to_gamma(linewidth_mhz), overlap=overlap)


@dataclass(frozen=True)
class PhotonParams:
    """Exponentially decaying single-photon wavepacket.

    ``gammap`` is the bandwidth in rad/s and ``t0`` the position of the rising
    (Heaviside) edge in seconds.
    """

    gammap: float
    t0: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.gammap) and self.gammap > 0):
            raise ParameterError(f"gammap must be positive, got {self.gammap!r}")
        if not math.isfinite(self.t0):
            raise ParameterError(f"t0 must be finite, got {self.t0!r}")

    @classmethod
    def in_units_of(cls, atom: AtomParams, ratio: float, t0: float = 0.0) -> "PhotonParams":
        """Photon with bandwidth ``ratio * atom.gamma0``."""
        return cls(gammap=ratio * atom.gamma0, t0=t0)


class CurveKind(str, Enum):
    envelope = "envelope"
    excitation = "excitation"
    scattered_rate = "scattered_rate"


@dataclass(frozen=True, eq=False)
class TheoryCurve:
    times: np.ndarray
    values: np.ndarray
    kind: CurveKind

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise ParameterError("times and values must be 1-d arrays of equal length")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ParameterError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "kind", CurveKind(self.kind))
        # the scattered rate is signed: forward re-emission makes it negative late in the pulse
        if self.kind is not CurveKind.scattered_rate and np.any(values < 0):
            raise ParameterError(f"{self.kind.value} curve must be non-negative")


def _is_degenerate(atom: AtomParams, photon: PhotonParams) -> bool:
    return abs(photon.gammap - atom.gamma0) < DEGENERACY_THRESHOLD * atom.gamma0


def _elapsed(photon: PhotonParams, t):
    """Time since the photon edge, clipped at zero, plus the causal mask."""
    s = np.asarray(t, dtype=float) - photon.t0
    return np.where(s > 0, s, 0.0), s > 0


def lorentzian_spectrum(atom: AtomParams, photon: PhotonParams, omega):
    """Unit-area Lorentzian power spectrum of width ``gammap`` centred on ``omega0``."""
    g = photon.gammap
    detuning = np.asarray(omega, dtype=float) - atom.omega0
    return (g / (2.0 * np.pi)) / (detuning**2 + 0.25 * g * g)


def scattering_probability(atom: AtomParams, photon: PhotonParams) -> float:
    lam = atom.overlap
    return 4.0 * lam * (1.0 - lam) * atom.gamma0 / (atom.gamma0 + photon.gammap)


def photon_envelope(photon: PhotonParams, t):
    """Normalized arrival-time density of the photon, in 1/s."""
    s, on = _elapsed(photon, t)
    return np.where(on, photon.gammap * np.exp(-photon.gammap * s), 0.0)


def _excitation_amplitude(atom: AtomParams, photon: PhotonParams, s):
    """Real excited-state amplitude c(s) with P_e = c**2, for s >= 0.

    The difference of exponentials is written with expm1 so the expression
    stays accurate arbitrarily close to gammap == gamma0.
    """
    g0, gp = atom.gamma0, photon.gammap
    lam = atom.overlap
    if _is_degenerate(atom, photon):
        return math.sqrt(lam) * g0 * s * np.exp(-0.5 * g0 * s)
    dg = gp - g0
    # exp(-g0 s/2) - exp(-gp s/2) = -exp(-g0 s/2) * expm1(-dg s/2)
    diff = -np.exp(-0.5 * g0 * s) * np.expm1(-0.5 * dg * s)
    return 2.0 * math.sqrt(lam * g0 * gp) * diff / dg


def excited_population(atom: AtomParams, photon: PhotonParams, t):
    s, on = _elapsed(photon, t)
    c = _excitation_amplitude(atom, photon, s)
    return np.where(on, c * c, 0.0)


def peak_time(atom: AtomParams, photon: PhotonParams) -> float:
    """Time of maximum excitation, measured from the photon edge."""
    g0, gp = atom.gamma0, photon.gammap
    if _is_degenerate(atom, photon):
        return 2.0 / g0
    return 2.0 * math.log(gp / g0) / (gp - g0)


def peak_excitation(atom: AtomParams, photon: PhotonParams) -> float:
    g0, gp = atom.gamma0, photon.gammap
    lam = atom.overlap
    if _is_degenerate(atom, photon):
        return 4.0 * lam * math.exp(-2.0)
    x = gp / g0
    return 4.0 * lam * x ** ((g0 + gp) / (g0 - gp))


def scattered_rate(atom: AtomParams, photon: PhotonParams, t):
    """Rate at which photons are removed from the forward mode, in 1/s.

    Equals dP_e/dt + (1 - overlap) * gamma0 * P_e.  Written in terms of the
    input field amplitude f and the atomic amplitude c this is
    2 sqrt(overlap gamma0) f c - overlap gamma0 c**2, which goes negative at
    late times when the atom re-emits into the forward mode.
    """
    s, on = _elapsed(photon, t)
    lam, g0 = atom.overlap, atom.gamma0
    c = _excitation_amplitude(atom, photon, s)
    f = np.sqrt(photon.gammap) * np.exp(-0.5 * photon.gammap * s)
    rate = 2.0 * math.sqrt(lam * g0) * f * c - lam * g0 * c * c
    return np.where(on, rate, 0.0)


def transmitted_rate(atom: AtomParams, photon: PhotonParams, t):
    """Forward-mode detection density with the atom present (envelope minus scattered rate)."""
    s, on = _elapsed(photon, t)
    c = _excitation_amplitude(atom, photon, s)
    f = np.sqrt(photon.gammap) * np.exp(-0.5 * photon.gammap * s)
    out = f - math.sqrt(atom.overlap * atom.gamma0) * c
    return np.where(on, out * out, 0.0)


def excitation_integral(atom: AtomParams, photon: PhotonParams) -> float:
    """Closed form of the time integral of P_e over the whole pulse."""
    return 4.0 * atom.overlap / (atom.gamma0 + photon.gammap)


def windowed_extinction(atom: AtomParams, photon: PhotonParams, t_min: float, t_max: float) -> float:
    """Extinction expected when both histograms are summed over [t_min, t_max] only.

    Differs from :func:`scattering_probability` by the envelope and re-emission
    tails falling outside the window.
    """
    from scipy.integrate import quad

    lo = max(t_min, photon.t0)
    if t_max <= lo:
        return 0.0
    breaks = [lo + peak_time(atom, photon)]
    breaks = [b for b in breaks if lo < b < t_max]
    deficit, _ = quad(lambda x: float(scattered_rate(atom, photon, x)), lo, t_max,
                      points=breaks or None, epsabs=0.0, epsrel=1e-12, limit=200)
    mass = math.exp(-photon.gammap * (lo - photon.t0)) * -math.expm1(-photon.gammap * (t_max - lo))
    return deficit / mass


def curve(kind: CurveKind | str, atom: AtomParams, photon: PhotonParams, times) -> TheoryCurve:
    """Evaluate one of the time-domain model functions on ``times``."""
    kind = CurveKind(kind)
    if kind is CurveKind.envelope:
        values = photon_envelope(photon, times)
    elif kind is CurveKind.excitation:
        values = excited_population(atom, photon, times)
    else:
        values = scattered_rate(atom, photon, times)
    return TheoryCurve(np.asarray(times, dtype=float), values, kind)
