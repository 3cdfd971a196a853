"""Measurement pipeline: normalization, bandwidth fit, extinction, excitation reconstruction.

Histograms are always compared per herald, so reference and with-atom runs
may have different herald numbers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import least_squares

from . import _kernels
from .errors import BinningError, FitError, NormalizationError, ParameterError
from .simulate import DEFAULT_SUM_WINDOW, Histogram
from .theory import AtomParams

#: fit range for the photon bandwidth, seconds
DEFAULT_FIT_WINDOW = (2e-9, 100e-9)

MIN_FIT_BINS = 10
MAX_REWEIGHTS = 50


@dataclass(eq=False)
class NormalizedTrace:
    """Per-bin detection probability divided by the heralding efficiency."""

    t_start: float
    bin_width: float
    rates: np.ndarray
    eta_f: float
    n_heralds: int
    window: tuple[float, float] = DEFAULT_SUM_WINDOW

    def edges(self) -> np.ndarray:
        return self.t_start + self.bin_width * np.arange(self.rates.size + 1)

    def centers(self) -> np.ndarray:
        return self.t_start + self.bin_width * (np.arange(self.rates.size) + 0.5)

    def counts(self) -> np.ndarray:
        return self.rates * (self.n_heralds * self.eta_f)


@dataclass
class BandwidthFit:
    gammap_hat: float
    t0_hat: float
    amplitude_hat: float
    std_errors: dict
    fit_window: tuple[float, float]
    goodness: float
    n_bins: int = 0


@dataclass
class ExtinctionEstimate:
    epsilon_hat: float
    sigma: float
    window: tuple[float, float]
    sigma_bootstrap: float | None = None


@dataclass(eq=False)
class ExcitationTrace:
    times: np.ndarray
    p_e: np.ndarray
    sigma: np.ndarray
    lambda_used: float
    gamma0_used: float

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.p_e = np.asarray(self.p_e, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if not (self.times.shape == self.p_e.shape == self.sigma.shape):
            raise ParameterError("times, p_e and sigma must have equal length")


class PeakEstimate(NamedTuple):
    value: float
    sigma: float
    time: float


@dataclass
class BootstrapResult:
    """Poisson-resampled replicas of the pipeline statistics."""

    epsilon_samples: np.ndarray
    peak_samples: np.ndarray
    peak_time_samples: np.ndarray
    p_e_sigma: np.ndarray
    n_resamples: int
    seed: int

    @property
    def epsilon_sigma(self) -> float:
        return float(np.std(self.epsilon_samples, ddof=1))

    @property
    def peak_sigma(self) -> float:
        return float(np.std(self.peak_samples, ddof=1))


@dataclass
class AnalysisResult:
    bandwidth: BandwidthFit
    extinction: ExtinctionEstimate
    excitation: ExcitationTrace
    peak: PeakEstimate
    provenance: dict = field(default_factory=dict)


def window_mask(edges: np.ndarray, window) -> np.ndarray:
    """Bins lying entirely inside ``window`` (edges compared with a small tolerance)."""
    t_min, t_max = window
    tol = 1e-6 * float(edges[1] - edges[0])
    return (edges[:-1] >= t_min - tol) & (edges[1:] <= t_max + tol)


def _check_binning(a: Histogram, b: Histogram) -> None:
    if a.n_bins != b.n_bins or not math.isclose(a.bin_width, b.bin_width, rel_tol=1e-12) or not math.isclose(
        a.t_start, b.t_start, rel_tol=1e-12, abs_tol=1e-9 * a.bin_width
    ):
        raise BinningError(
            f"histograms do not share binning: ({a.t_start}, {a.bin_width}, {a.n_bins}) "
            f"vs ({b.t_start}, {b.bin_width}, {b.n_bins})"
        )


def _window_or_raise(hist: Histogram, window) -> np.ndarray:
    mask = window_mask(hist.edges(), window)
    if not mask.any():
        raise ParameterError(f"window {window} contains no complete bins")
    return mask


def normalize(reference: Histogram, window=DEFAULT_SUM_WINDOW) -> tuple[NormalizedTrace, float]:
    """Normalize a reference histogram to its heralding efficiency.

    eta_f is the fraction of heralds producing a forward count inside
    ``window``; the returned rates then sum to one over that window.
    """
    if reference.n_heralds <= 0:
        raise NormalizationError("reference histogram has no heralds")
    mask = _window_or_raise(reference, window)
    total = int(reference.counts[mask].sum())
    if total == 0:
        raise NormalizationError(f"reference histogram has no counts in window {window}")
    eta_f = total / reference.n_heralds
    rates = reference.counts / total
    trace = NormalizedTrace(reference.t_start, reference.bin_width, rates, eta_f, reference.n_heralds, tuple(window))
    return trace, eta_f


def _exp_model(params, x):
    amp, g = params
    return amp * np.exp(-g * x) * -math.expm1(-g)


def fit_bandwidth(trace: NormalizedTrace, window=DEFAULT_FIT_WINDOW, max_nfev: int = 200) -> BandwidthFit:
    """Weighted least-squares fit of an exponentially decaying photon to a normalized trace.

    Each bin is modelled by its exact integral of A*exp(-gammap*(t - t_ref)),
    t_ref being the window start.  The first pass weights bins by
    sqrt(max(counts, 1)); the weights are then replaced by the square root of
    the fitted expected counts and the fit repeated until the rate settles,
    which removes the low-count bias of observed-count weights.  Standard
    errors come from the Fisher information at the optimum.  A and the edge time t0 are not separately
    identifiable from the decay alone, so t0 is recovered afterwards from the
    cumulative mass up to the end of the brightest bin.

    Raises
    ------
    FitError
        If the window is empty or the optimizer stops without converging.
    """
    edges = trace.edges()
    dt = trace.bin_width
    mask = window_mask(edges, window)
    n = int(mask.sum())
    if n < MIN_FIT_BINS:
        raise ParameterError(f"fit window {window} holds {n} bins, need at least {MIN_FIT_BINS}")
    scale = trace.n_heralds * trace.eta_f
    y = trace.rates[mask]
    counts = y * scale
    if not np.any(counts > 0):
        raise FitError("all bins in the fit window are empty")
    sigma = np.sqrt(np.maximum(counts, 1.0)) / scale
    t_ref = edges[:-1][mask][0]
    x = (edges[:-1][mask] - t_ref) / dt

    pos = counts > 0
    if pos.sum() >= 2:
        w = np.sqrt(counts[pos])
        slope, intercept = np.polyfit(x[pos], np.log(y[pos]), 1, w=w)
        g_seed = -slope
    else:
        g_seed = 0.1
    if not (np.isfinite(g_seed) and g_seed > 0):
        g_seed = 0.1
    amp_seed = y[0] / -math.expm1(-g_seed) if y[0] > 0 else np.max(y)

    def solve(p0, sigma):
        def resid(p):
            return (_exp_model(p, x) - y) / sigma

        def jac(p):
            amp, g = p
            m = _exp_model(p, x)
            d_amp = m / amp
            d_g = m * (-x + math.exp(-g) / -math.expm1(-g))
            return np.column_stack([d_amp, d_g]) / sigma[:, None]

        res = least_squares(
            resid, x0=p0, jac=jac, bounds=([0.0, 1e-12], [np.inf, np.inf]),
            x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=max_nfev,
        )
        if res.status <= 0 or not np.all(np.isfinite(res.x)):
            raise FitError(f"bandwidth fit did not converge: {res.message}", last_iterate=res.x)
        return res

    res = solve([amp_seed, g_seed], sigma)
    # Observed-count weights bias the decay rate when bins are sparse; re-weighting
    # with the fitted model's expected counts converges to the Poisson likelihood optimum.
    for _ in range(MAX_REWEIGHTS):
        previous = res.x[1]
        sigma = np.sqrt(np.maximum(_exp_model(res.x, x) * scale, 1e-12)) / scale
        res = solve(res.x, sigma)
        if abs(res.x[1] - previous) <= 1e-12 * previous:
            break
    amp, g = res.x
    jw = res.jac
    try:
        cov = np.linalg.inv(jw.T @ jw)
    except np.linalg.LinAlgError as exc:
        raise FitError("singular Fisher information at the optimum", last_iterate=res.x) from exc

    # edge time from the cumulative mass C up to the end of the brightest bin
    # and the fitted mass M beyond it: C + M = total, M / total = exp(-gammap (t_end - t0))
    before_end = edges[1:] <= edges[1:][mask][-1] + 1e-6 * dt
    i_peak = int(np.argmax(np.where(before_end, trace.rates, -np.inf)))
    t_end = edges[i_peak + 1]
    cum = float(trace.rates[: i_peak + 1].sum())
    var_cum = float(trace.rates[: i_peak + 1].sum()) / scale

    def edge_time(p, c):
        a, gg = p
        m = a * math.exp(-gg * (t_end - t_ref) / dt)
        return t_end + dt * math.log(m / (c + m)) / gg, c + m

    t0_hat, amp_total = edge_time(res.x, cum)
    grad_t0, grad_amp = np.zeros(3), np.zeros(3)
    base = np.array([amp, g, cum])
    for j in range(3):
        h = 1e-6 * abs(base[j]) or 1e-12
        up, dn = base.copy(), base.copy()
        up[j] += h
        dn[j] -= h
        t_up, a_up = edge_time(up[:2], up[2])
        t_dn, a_dn = edge_time(dn[:2], dn[2])
        grad_t0[j] = (t_up - t_dn) / (2 * h)
        grad_amp[j] = (a_up - a_dn) / (2 * h)
    full_cov = np.zeros((3, 3))
    full_cov[:2, :2] = cov
    full_cov[2, 2] = var_cum

    chi2 = float(np.sum(res.fun**2))
    return BandwidthFit(
        gammap_hat=float(g / dt),
        t0_hat=float(t0_hat),
        amplitude_hat=float(amp_total),
        std_errors={
            "gammap": float(math.sqrt(cov[1, 1]) / dt),
            "t0": float(math.sqrt(grad_t0 @ full_cov @ grad_t0)),
            "amplitude": float(math.sqrt(grad_amp @ full_cov @ grad_amp)),
        },
        fit_window=(float(window[0]), float(window[1])),
        goodness=chi2 / max(n - 2, 1),
        n_bins=n,
    )


def extinction(reference: Histogram, with_atom: Histogram, window=DEFAULT_SUM_WINDOW) -> ExtinctionEstimate:
    """Relative deficit of forward counts with the atom present.

    The two window sums are treated as independent Poisson totals for the
    first-order error.
    """
    _check_binning(reference, with_atom)
    mask = _window_or_raise(reference, window)
    s0 = int(reference.counts[mask].sum())
    s1 = int(with_atom.counts[mask].sum())
    if s0 == 0:
        raise NormalizationError(f"reference histogram has no counts in window {window}")
    r0 = s0 / reference.n_heralds
    r1 = s1 / with_atom.n_heralds
    ratio = r1 / r0
    var = s1 / (with_atom.n_heralds * r0) ** 2 + ratio**2 / s0
    return ExtinctionEstimate(1.0 - ratio, math.sqrt(var), (float(window[0]), float(window[1])))


def _integrator_coeffs(decay: float, dt: float):
    """Propagator and source weight of dP/dt = delta - decay * P over one bin."""
    a = math.exp(-decay * dt)
    b = -math.expm1(-decay * dt) / decay if decay > 0 else dt
    return a, b


def _integrate(delta: np.ndarray, decay: float, dt: float) -> np.ndarray:
    """Exponential-integrator solution at bin ends for piecewise-constant delta.

    ``delta`` is (replicas, bins); P starts at zero at the first bin edge.
    """
    a, b = _integrator_coeffs(decay, dt)
    return _kernels.first_order_recursion(np.ascontiguousarray(b * delta), a)


def _integrate_variance(var_delta: np.ndarray, decay: float, dt: float) -> np.ndarray:
    a, b = _integrator_coeffs(decay, dt)
    return _kernels.first_order_recursion(np.ascontiguousarray(b * b * var_delta), a * a)


def reconstruct_excitation(
    reference: Histogram, with_atom: Histogram, atom: AtomParams, window=DEFAULT_SUM_WINDOW
) -> ExcitationTrace:
    """Excited-state population from the time-resolved transmission deficit.

    Integrates dP_e/dt = delta(t) - (1 - overlap) gamma0 P_e with the exact
    exponential update per bin, delta being the per-bin deficit divided by
    eta_f and the bin width, starting from P_e = 0 at the window start.
    Values are reported at the integrator nodes, i.e. the right edge of each
    bin.  ``sigma`` is linear Poisson propagation of the counts (eta_f held
    fixed).
    """
    _check_binning(reference, with_atom)
    trace, eta_f = normalize(reference, window)
    mask = window_mask(reference.edges(), window)
    dt = reference.bin_width
    g0 = reference.counts[mask] / reference.n_heralds
    g1 = with_atom.counts[mask] / with_atom.n_heralds
    norm = eta_f * dt
    delta = (g0 - g1) / norm
    var_delta = (g0 / reference.n_heralds + g1 / with_atom.n_heralds) / norm**2
    decay = (1.0 - atom.overlap) * atom.gamma0
    p_e = _integrate(delta[None, :], decay, dt)[0]
    var = _integrate_variance(var_delta[None, :], decay, dt)[0]
    return ExcitationTrace(
        times=reference.edges()[1:][mask],
        p_e=p_e,
        sigma=np.sqrt(var),
        lambda_used=atom.overlap,
        gamma0_used=atom.gamma0,
    )


def extract_peak(trace: ExcitationTrace) -> PeakEstimate:
    """Peak of a trace from a 3-point parabola around the earliest argmax bin.

    ``sigma`` is the trace's per-bin uncertainty at that bin; the bootstrap
    replaces it with the spread of the same statistic over replicas.
    """
    if trace.p_e.size < 3:
        raise ParameterError("need at least 3 bins to extract a peak")
    value, offset, idx = _kernels.parabolic_peak(np.ascontiguousarray(trace.p_e[None, :]))
    i = int(idx[0])
    dt = trace.times[1] - trace.times[0]
    return PeakEstimate(float(value[0]), float(trace.sigma[i]), float(trace.times[i] + offset[0] * dt))


def bootstrap_uncertainty(
    reference: Histogram,
    with_atom: Histogram,
    atom: AtomParams,
    n_resamples: int = 1000,
    seed: int = 0,
    window=DEFAULT_SUM_WINDOW,
) -> BootstrapResult:
    """Resample every bin as Poisson(observed) and rerun the estimators per replica.

    Deterministic for a given seed; the two histograms use independent streams.
    """
    if n_resamples < 100:
        raise ParameterError("n_resamples must be at least 100")
    _check_binning(reference, with_atom)
    mask = _window_or_raise(reference, window)
    ss_ref, ss_atom = np.random.SeedSequence(seed).spawn(2)
    c0 = np.random.default_rng(ss_ref).poisson(reference.counts[mask], size=(n_resamples, int(mask.sum())))
    c1 = np.random.default_rng(ss_atom).poisson(with_atom.counts[mask], size=(n_resamples, int(mask.sum())))

    s0 = c0.sum(axis=1)
    if np.any(s0 == 0):
        raise NormalizationError("a bootstrap replica has no reference counts in the window")
    r0 = s0 / reference.n_heralds
    r1 = c1.sum(axis=1) / with_atom.n_heralds
    eps = 1.0 - r1 / r0

    dt = reference.bin_width
    delta = (c0 / reference.n_heralds - c1 / with_atom.n_heralds) / (r0[:, None] * dt)
    decay = (1.0 - atom.overlap) * atom.gamma0
    p_e = _integrate(delta, decay, dt)
    value, offset, idx = _kernels.parabolic_peak(p_e)
    times = reference.edges()[1:][mask]
    return BootstrapResult(
        epsilon_samples=eps,
        peak_samples=value,
        peak_time_samples=times[idx] + offset * dt,
        p_e_sigma=np.std(p_e, axis=0, ddof=1),
        n_resamples=n_resamples,
        seed=seed,
    )


def analyze(
    reference: Histogram,
    with_atom: Histogram,
    atom: AtomParams,
    sum_window=DEFAULT_SUM_WINDOW,
    fit_window=DEFAULT_FIT_WINDOW,
    n_bootstrap: int = 0,
    seed: int = 0,
    provenance: dict | None = None,
) -> tuple[AnalysisResult, BootstrapResult | None]:
    """Run the full pipeline on a reference / with-atom histogram pair."""
    _check_binning(reference, with_atom)
    trace, _ = normalize(reference, sum_window)
    bandwidth = fit_bandwidth(trace, fit_window)
    ext = extinction(reference, with_atom, sum_window)
    excitation = reconstruct_excitation(reference, with_atom, atom, sum_window)
    peak = extract_peak(excitation)
    boot = None
    if n_bootstrap:
        boot = bootstrap_uncertainty(reference, with_atom, atom, n_bootstrap, seed, sum_window)
        ext.sigma_bootstrap = boot.epsilon_sigma
        excitation.sigma = boot.p_e_sigma
        peak = PeakEstimate(peak.value, boot.peak_sigma, peak.time)
    prov = {
        "sum_window": [float(sum_window[0]), float(sum_window[1])],
        "fit_window": [float(fit_window[0]), float(fit_window[1])],
        "overlap": atom.overlap,
        "gamma0": atom.gamma0,
        "n_bootstrap": int(n_bootstrap),
        "bootstrap_seed": int(seed),
    }
    prov.update(provenance or {})
    return AnalysisResult(bandwidth, ext, excitation, peak, prov), boot
