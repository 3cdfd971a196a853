"""Single-photon scattering off a two-level atom: theory, simulation and analysis."""

__version__ = "0.1.0"

from .theory import (  # noqa: E402
    AtomParams,
    PhotonParams,
    TheoryCurve,
    excited_population,
    lorentzian_spectrum,
    peak_excitation,
    peak_time,
    photon_envelope,
    scattered_rate,
    scattering_probability,
)
from .simulate import Histogram, SimConfig, simulate_reference, simulate_with_atom  # noqa: E402
from .analysis import (  # noqa: E402
    analyze,
    bootstrap_uncertainty,
    extinction,
    extract_peak,
    fit_bandwidth,
    normalize,
    reconstruct_excitation,
)
