"""Command-line front end: ``atomscatter {theory,simulate,analyze,reproduce-figures,replay}``.

Every command writes its outputs plus ``manifest.json`` into ``--out``
(default ``$ATOMSCATTER_OUT`` or ``./atomscatter-out``).  The manifest holds
the fully resolved settings; ``atomscatter replay manifest.json`` re-runs the
command from it and checks the output hashes.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .analysis import DEFAULT_FIT_WINDOW, analyze
from .errors import (
    AtomScatterError,
    BinningError,
    ConfigError,
    FitError,
    FormatError,
    NormalizationError,
    ParameterError,
)
from .figures import default_settings, reproduce_figures
from .formats import (
    atomic_write_text,
    config_from_dict,
    config_to_dict,
    dumps_json,
    load_config,
    read_histogram,
    sha256_file,
    table_to_csv,
    write_histogram,
    write_result,
)
from .simulate import DEFAULT_SUM_WINDOW, simulate_reference, simulate_with_atom
from .theory import (
    RB87_D2_LINEWIDTH_HZ,
    AtomParams,
    PhotonParams,
    excited_population,
    linewidth_mhz_to_gamma,
    lorentzian_spectrum,
    peak_excitation,
    peak_time,
    photon_envelope,
    scattering_probability,
)

log = logging.getLogger("atomscatter")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_FIT = 4
EXIT_DATA = 5
EXIT_MISMATCH = 6

OUT_ENV = "ATOMSCATTER_OUT"
MANIFEST = "manifest.json"


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "atomscatter-out")


def _fmt_ratio(x: float) -> str:
    return np.format_float_positional(x, trim="-")


# -- runners: resolved settings -> written files ----------------------------

def run_theory(cfg: dict, out: Path) -> list[Path]:
    atom = AtomParams(gamma0=cfg["gamma0"], overlap=cfg["overlap"])
    ratios = np.asarray(cfg["gammap_over_gamma0"], dtype=float)
    photons = [PhotonParams.in_units_of(atom, r, cfg["t0"]) for r in ratios]
    meta = {"overlap": atom.overlap, "gamma0_rad_s": repr(atom.gamma0)}
    written = [
        atomic_write_text(out / "theory_epsilon.csv", table_to_csv({
            "gammap_over_gamma0": ratios,
            "gammap_rad_s": [p.gammap for p in photons],
            "epsilon": [scattering_probability(atom, p) for p in photons],
        }, meta)),
        atomic_write_text(out / "theory_peak.csv", table_to_csv({
            "gammap_over_gamma0": ratios,
            "p_e_max": [peak_excitation(atom, p) for p in photons],
            "t_peak_ns": [(p.t0 + peak_time(atom, p)) * 1e9 for p in photons],
        }, meta)),
    ]
    times = np.linspace(0.0, cfg["t_max"], cfg["n_times"])
    excitation = {"t_ns": times * 1e9}
    envelope = {"t_ns": times * 1e9}
    for r, p in zip(ratios, photons):
        excitation[f"p_e@{_fmt_ratio(r)}"] = excited_population(atom, p, times)
        envelope[f"envelope@{_fmt_ratio(r)}"] = photon_envelope(p, times)
    written.append(atomic_write_text(out / "theory_excitation.csv", table_to_csv(excitation, {**meta, "kind": "excitation"})))
    written.append(atomic_write_text(out / "theory_envelope.csv", table_to_csv(envelope, {**meta, "kind": "envelope", "unit": "1/s"})))
    detuning = np.linspace(-5.0, 5.0, 201)
    spectrum = {"detuning_over_gamma0": detuning}
    for r, p in zip(ratios, photons):
        spectrum[f"spectrum@{_fmt_ratio(r)}"] = lorentzian_spectrum(atom, p, atom.omega0 + detuning * atom.gamma0) * atom.gamma0
    written.append(atomic_write_text(out / "theory_spectrum.csv", table_to_csv(spectrum, {**meta, "unit": "per gamma0"})))
    return written


def run_simulate(cfg: dict, out: Path) -> list[Path]:
    config = config_from_dict(cfg)
    return [
        write_histogram(simulate_reference(config), out / "reference.csv"),
        write_histogram(simulate_with_atom(config), out / "with_atom.csv"),
    ]


def run_analyze(cfg: dict, out: Path) -> list[Path]:
    reference = read_histogram(cfg["reference"]["path"])
    with_atom = read_histogram(cfg["with_atom"]["path"])
    atom = AtomParams(gamma0=cfg["gamma0"], overlap=cfg["overlap"])
    provenance = {
        "inputs": {k: dict(cfg[k]) for k in ("reference", "with_atom")},
        "simulation_seeds": [reference.seed, with_atom.seed],
    }
    result, _ = analyze(
        reference, with_atom, atom, tuple(cfg["window"]), tuple(cfg["fit_window"]),
        n_bootstrap=cfg["bootstrap"], seed=cfg["seed"], provenance=provenance,
    )
    g0 = atom.gamma0
    bw, ext, exc, peak = result.bandwidth, result.extinction, result.excitation, result.peak
    fitted = PhotonParams(bw.gammap_hat, bw.t0_hat)
    return [
        write_result(result, out / "analysis.json"),
        atomic_write_text(out / "fig3_extinction.csv", table_to_csv({
            "gammap_over_gamma0": [bw.gammap_hat / g0],
            "gammap_sigma_over_gamma0": [bw.std_errors["gammap"] / g0],
            "epsilon": [ext.epsilon_hat],
            "sigma": [ext.sigma if ext.sigma_bootstrap is None else ext.sigma_bootstrap],
        })),
        atomic_write_text(out / "fig4_excitation.csv", table_to_csv({
            "t_ns": exc.times * 1e9,
            "p_e": exc.p_e,
            "sigma": exc.sigma,
            "p_e_theory": excited_population(atom, fitted, exc.times),
        }, {"overlap": atom.overlap})),
        atomic_write_text(out / "fig5_peak.csv", table_to_csv({
            "gammap_over_gamma0": [bw.gammap_hat / g0],
            "p_e_max": [peak.value],
            "sigma": [peak.sigma],
            "t_peak_ns": [peak.time * 1e9],
        })),
    ]


def run_reproduce(cfg: dict, out: Path) -> list[Path]:
    return reproduce_figures(cfg, out)


RUNNERS = {
    "theory": run_theory,
    "simulate": run_simulate,
    "analyze": run_analyze,
    "reproduce-figures": run_reproduce,
}


# -- resolution of CLI arguments into settings ------------------------------

def _atom_settings(args) -> dict:
    if not (0.0 <= args.overlap <= 1.0):
        raise ConfigError("--lambda must lie in [0, 1]")
    if not args.linewidth_mhz > 0:
        raise ConfigError("--linewidth-mhz must be positive")
    return {"overlap": args.overlap, "gamma0": linewidth_mhz_to_gamma(args.linewidth_mhz)}


def resolve_theory(args) -> dict:
    ratios = list(args.gammap_over_gamma0 or [])
    if args.grid:
        start, stop, num = args.grid
        if int(num) != num or num < 1:
            raise ConfigError("--grid NUM must be a positive integer")
        ratios.extend(np.linspace(start, stop, int(num)).tolist())
    if not ratios:
        ratios = [1.0]
    if any(not r > 0 for r in ratios):
        raise ConfigError("--gammap-over-gamma0 values must be positive")
    if not args.t_max > 0:
        raise ConfigError("--t-max must be positive")
    if args.n_times < 2:
        raise ConfigError("--n-times must be at least 2")
    return {
        **_atom_settings(args),
        "gammap_over_gamma0": sorted(set(float(r) for r in ratios)),
        "t0": args.t0,
        "t_max": args.t_max,
        "n_times": args.n_times,
    }


def resolve_simulate(args) -> dict:
    if not args.config:
        raise ConfigError("--config is required for simulate")
    config = load_config(args.config)
    doc = config_to_dict(config)
    if args.seed is not None:
        doc["seed"] = args.seed
        config_from_dict(doc)
    return doc


def _input_record(path) -> dict:
    path = Path(path).resolve()
    return {"path": str(path), "sha256": sha256_file(path)}


def _check_window(name: str, window) -> list[float]:
    if window[0] >= window[1]:
        raise ConfigError(f"{name} must satisfy t_min < t_max")
    return [float(window[0]), float(window[1])]


def resolve_analyze(args) -> dict:
    if args.bootstrap and args.bootstrap < 100:
        raise ConfigError("--bootstrap must be 0 or at least 100")
    return {
        "reference": _input_record(args.reference),
        "with_atom": _input_record(args.with_atom),
        **_atom_settings(args),
        "window": _check_window("--window", args.window or DEFAULT_SUM_WINDOW),
        "fit_window": _check_window("--fit-window", args.fit_window or DEFAULT_FIT_WINDOW),
        "bootstrap": int(args.bootstrap),
        "seed": int(args.seed if args.seed is not None else 0),
    }


def resolve_reproduce(args) -> dict:
    settings = default_settings(args.seed if args.seed is not None else 2017)
    settings.update(_atom_settings(args))
    if args.bootstrap is not None:
        if args.bootstrap < 100:
            raise ConfigError("--bootstrap must be at least 100")
        settings["bootstrap"] = int(args.bootstrap)
    if args.n_heralds is not None:
        if args.n_heralds < 1:
            raise ConfigError("--n-heralds must be positive")
        settings["n_heralds"] = int(args.n_heralds)
    if args.window:
        settings["window"] = _check_window("--window", args.window)
    settings["coherent_extinction"] = args.coherent_extinction
    return settings


RESOLVERS = {
    "theory": resolve_theory,
    "simulate": resolve_simulate,
    "analyze": resolve_analyze,
    "reproduce-figures": resolve_reproduce,
}


# -- manifest ---------------------------------------------------------------

def write_manifest(command: str, settings: dict, out: Path, outputs: list[Path], argv) -> Path:
    inputs = [settings[k] for k in ("reference", "with_atom") if isinstance(settings.get(k), dict)]
    manifest = {
        "toolkit": "atomscatter",
        "version": __version__,
        "backend": _kernels.backend(),
        "command": command,
        "argv": list(argv),
        "resolved_config": settings,
        "seed": settings.get("seed"),
        "inputs": inputs,
        "outputs": [{"path": p.name, "sha256": sha256_file(p)} for p in outputs],
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    return atomic_write_text(out / MANIFEST, dumps_json(manifest))


def replay(manifest_path, out: Path | None = None) -> tuple[bool, list[str]]:
    """Re-run a manifest; returns (all outputs identical, list of mismatched names)."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    command = manifest["command"]
    if command not in RUNNERS:
        raise ConfigError(f"unknown command {command!r}", "/command")
    for record in manifest.get("inputs", []):
        if sha256_file(record["path"]) != record["sha256"]:
            raise FormatError(f"input {record['path']} changed since the manifest was written")
    out = Path(out) if out is not None else manifest_path.parent
    outputs = RUNNERS[command](manifest["resolved_config"], out)
    expected = {o["path"]: o["sha256"] for o in manifest["outputs"]}
    actual = {p.name: sha256_file(p) for p in outputs}
    mismatched = sorted(k for k in expected.keys() | actual.keys() if expected.get(k) != actual.get(k))
    return not mismatched, mismatched


# -- argparse ---------------------------------------------------------------

def _add_atom_flags(p):
    p.add_argument("--lambda", dest="overlap", type=float, default=0.033,
                   help="spatial overlap between probe and dipole mode (default 0.033)")
    p.add_argument("--linewidth-mhz", type=float, default=RB87_D2_LINEWIDTH_HZ / 1e6,
                   help="atomic linewidth gamma0/2pi in MHz (default 6.07)")


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reads ``-10e-9`` as a negative number, not an option."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._negative_number_matcher = re.compile(r"^-(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="atomscatter", description="Theory, simulation and analysis of single-photon scattering off a two-level atom.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./atomscatter-out)")
        p.add_argument("--seed", type=int, default=None, help="random seed (u64)")

    p = sub.add_parser("theory", help="evaluate the closed-form model on grids")
    _add_atom_flags(p)
    p.add_argument("--gammap-over-gamma0", type=float, nargs="+", help="photon bandwidths in units of gamma0")
    p.add_argument("--grid", type=float, nargs=3, metavar=("START", "STOP", "NUM"),
                   help="additional evenly spaced bandwidth grid in units of gamma0")
    p.add_argument("--t0", type=float, default=0.0, help="photon edge time, s")
    p.add_argument("--t-max", type=float, default=200e-9, help="end of the time grid, s")
    p.add_argument("--n-times", type=int, default=401)
    common(p)

    p = sub.add_parser("simulate", help="simulate reference and with-atom histograms")
    p.add_argument("--config", required=True, help="simulation config JSON")
    common(p)

    p = sub.add_parser("analyze", help="analyze a reference / with-atom histogram pair")
    p.add_argument("reference")
    p.add_argument("with_atom")
    _add_atom_flags(p)
    p.add_argument("--window", type=float, nargs=2, metavar=("T_MIN", "T_MAX"),
                   help="summation window in s (default -10e-9 100e-9)")
    p.add_argument("--fit-window", type=float, nargs=2, metavar=("T_MIN", "T_MAX"),
                   help="bandwidth fit window in s (default 2e-9 100e-9)")
    p.add_argument("--bootstrap", type=int, default=0, metavar="N", help="Poisson bootstrap replicas")
    common(p)

    p = sub.add_parser("reproduce-figures", help="simulate and analyze the full bandwidth scan")
    _add_atom_flags(p)
    p.add_argument("--n-heralds", type=int, default=None)
    p.add_argument("--bootstrap", type=int, default=None, metavar="N")
    p.add_argument("--window", type=float, nargs=2, metavar=("T_MIN", "T_MAX"))
    p.add_argument("--coherent-extinction", type=float, default=None,
                   help="measured weak-coherent-field extinction to include as a reference point")
    common(p)

    p = sub.add_parser("replay", help="re-run a command from its manifest and compare outputs")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="output directory (default: the manifest's directory)")
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, ParameterError)):
        return EXIT_CONFIG
    if isinstance(exc, FitError):
        return EXIT_FIT
    if isinstance(exc, (BinningError, NormalizationError)):
        return EXIT_DATA
    if isinstance(exc, (FormatError, OSError)):
        return EXIT_IO
    return 1


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            ok, mismatched = replay(args.manifest, Path(args.out) if args.out else None)
            if ok:
                print("replay: all outputs identical")
                return EXIT_OK
            print(f"replay: outputs differ: {', '.join(mismatched)}", file=sys.stderr)
            return EXIT_MISMATCH
        out = Path(args.out or _default_out())
        settings = RESOLVERS[args.command](args)
        outputs = RUNNERS[args.command](settings, out)
        manifest = write_manifest(args.command, settings, out, outputs, argv)
        for path in outputs + [manifest]:
            print(path)
        return EXIT_OK
    except (AtomScatterError, OSError) as exc:
        print(f"atomscatter {args.command}: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
