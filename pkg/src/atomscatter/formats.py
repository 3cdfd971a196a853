"""File formats: histogram CSV, curve CSV, analysis JSON, simulation config, run manifest."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import jsonschema
import numpy as np

from .analysis import (
    AnalysisResult,
    BandwidthFit,
    ExcitationTrace,
    ExtinctionEstimate,
    PeakEstimate,
)
from .errors import ConfigError, FormatError
from .simulate import DEFAULT_BIN_WIDTH, DEFAULT_SUM_WINDOW, Histogram, SimConfig
from .theory import RB87_D2_LINEWIDTH_HZ, AtomParams, PhotonParams, linewidth_mhz_to_gamma

SCHEMA_VERSION = 1
HISTOGRAM_MAGIC = "# atomscatter histogram v1"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt_ns(seconds: float) -> str:
    return np.format_float_positional(seconds * 1e9, precision=6, trim="-")


# -- histogram CSV ---------------------------------------------------------

def histogram_to_csv(hist: Histogram) -> str:
    lines = [
        HISTOGRAM_MAGIC,
        f"# label={hist.label.value}",
        f"# n_heralds={hist.n_heralds}",
        f"# t_start={hist.t_start!r}",
        f"# bin_width={hist.bin_width!r}",
        "# time_unit=ns, t_ns is the bin center; t_start and bin_width in seconds",
    ]
    if hist.seed is not None:
        lines.append(f"# seed={hist.seed}")
    for key in sorted(hist.diagnostics):
        lines.append(f"# diag.{key}={json.dumps(hist.diagnostics[key])}")
    lines.append("# t_ns,counts")
    for t, c in zip(hist.centers(), hist.counts):
        lines.append(f"{_fmt_ns(t)},{int(c)}")
    return "\n".join(lines) + "\n"


def write_histogram(hist: Histogram, path) -> Path:
    return atomic_write_text(path, histogram_to_csv(hist))


def parse_histogram(text: str, source: str = "<string>") -> Histogram:
    meta: dict[str, str] = {}
    diagnostics = {}
    times, counts = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body and "," not in body.split("=", 1)[0]:
                key, value = body.split("=", 1)
                key = key.strip()
                if key.startswith("diag."):
                    diagnostics[key[5:]] = json.loads(value)
                else:
                    meta[key] = value.strip()
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"{source}:{lineno}: expected 't_ns,counts'")
        try:
            times.append(float(parts[0]))
            value = float(parts[1])
        except ValueError as exc:
            raise FormatError(f"{source}:{lineno}: {exc}") from exc
        if value != int(value):
            raise FormatError(f"{source}:{lineno}: counts must be integers")
        counts.append(int(value))
    if not counts:
        raise FormatError(f"{source}: no data rows")
    if "n_heralds" not in meta:
        raise FormatError(f"{source}: missing '# n_heralds=' header")
    try:
        if "bin_width" in meta:
            bin_width = float(meta["bin_width"])
        elif len(times) > 1:
            bin_width = float(np.median(np.diff(times))) * 1e-9
        else:
            raise FormatError(f"{source}: cannot infer bin width from a single row")
        t_start = float(meta["t_start"]) if "t_start" in meta else times[0] * 1e-9 - 0.5 * bin_width
        seed = int(meta["seed"]) if "seed" in meta else None
        return Histogram(
            t_start=t_start,
            bin_width=bin_width,
            counts=np.asarray(counts, dtype=np.int64),
            n_heralds=int(meta["n_heralds"]),
            label=meta.get("label", "reference"),
            seed=seed,
            diagnostics=diagnostics,
        )
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{source}: {exc}") from exc


def read_histogram(path) -> Histogram:
    path = Path(path)
    return parse_histogram(path.read_text(), str(path))


# -- generic curve CSV -----------------------------------------------------

def table_to_csv(columns: dict[str, np.ndarray], meta: dict | None = None) -> str:
    """Plot-ready CSV: ``# key=value`` header lines, then a ``#``-prefixed column header."""
    buf = io.StringIO()
    for key, value in (meta or {}).items():
        buf.write(f"# {key}={value}\n")
    names = list(columns)
    buf.write("# " + ",".join(names) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    arrays = [np.asarray(columns[n]) for n in names]
    for row in zip(*arrays):
        writer.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


def read_table(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    meta, header, rows = {}, None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k.strip()] = v.strip()
            else:
                header = [h.strip() for h in body.split(",")]
        elif line.strip():
            rows.append([float(v) for v in line.split(",")])
    if header is None:
        raise FormatError(f"{path}: missing column header")
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}, meta


# -- analysis JSON ---------------------------------------------------------

def result_to_dict(result: AnalysisResult) -> dict:
    bw, ext, exc = result.bandwidth, result.extinction, result.excitation
    return {
        "schema": SCHEMA_VERSION,
        "bandwidth": {
            "gammap_hat": bw.gammap_hat,
            "t0_hat": bw.t0_hat,
            "amplitude_hat": bw.amplitude_hat,
            "std_errors": dict(bw.std_errors),
            "fit_window": list(bw.fit_window),
            "goodness": bw.goodness,
            "n_bins": bw.n_bins,
        },
        "extinction": {
            "epsilon_hat": ext.epsilon_hat,
            "sigma": ext.sigma,
            "window": list(ext.window),
            "sigma_bootstrap": ext.sigma_bootstrap,
        },
        "excitation": {
            "times": exc.times.tolist(),
            "p_e": exc.p_e.tolist(),
            "sigma": exc.sigma.tolist(),
            "lambda_used": exc.lambda_used,
            "gamma0_used": exc.gamma0_used,
        },
        "peak": result.peak._asdict(),
        "provenance": result.provenance,
    }


def result_from_dict(doc: dict) -> AnalysisResult:
    if doc.get("schema") != SCHEMA_VERSION:
        raise FormatError(f"unsupported analysis schema {doc.get('schema')!r}")
    b, e, x = doc["bandwidth"], doc["extinction"], doc["excitation"]
    return AnalysisResult(
        bandwidth=BandwidthFit(
            gammap_hat=b["gammap_hat"], t0_hat=b["t0_hat"], amplitude_hat=b["amplitude_hat"],
            std_errors=dict(b["std_errors"]), fit_window=tuple(b["fit_window"]),
            goodness=b["goodness"], n_bins=b["n_bins"],
        ),
        extinction=ExtinctionEstimate(e["epsilon_hat"], e["sigma"], tuple(e["window"]), e["sigma_bootstrap"]),
        excitation=ExcitationTrace(
            np.array(x["times"], dtype=float), np.array(x["p_e"], dtype=float),
            np.array(x["sigma"], dtype=float), x["lambda_used"], x["gamma0_used"],
        ),
        peak=PeakEstimate(**doc["peak"]),
        provenance=doc["provenance"],
    )


def dumps_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_result(result: AnalysisResult, path) -> Path:
    return atomic_write_text(path, dumps_json(result_to_dict(result)))


def read_result(path) -> AnalysisResult:
    return result_from_dict(json.loads(Path(path).read_text()))


# -- simulation config -----------------------------------------------------

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}

SIM_CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "atom", "photon", "n_heralds"],
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "atom": {
            "type": "object",
            "additionalProperties": False,
            "required": ["overlap"],
            "properties": {
                "gamma0": _POSITIVE,
                "linewidth_mhz": _POSITIVE,
                "overlap": {"type": "number", "minimum": 0, "maximum": 1},
            },
            "not": {"required": ["gamma0", "linewidth_mhz"]},
        },
        "photon": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gammap": _POSITIVE,
                "gammap_over_gamma0": _POSITIVE,
                "t0": {"type": "number"},
            },
            "oneOf": [{"required": ["gammap"]}, {"required": ["gammap_over_gamma0"]}],
        },
        "n_heralds": {"type": "integer", "minimum": 1},
        "heralding_efficiency": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "background_rate": {"type": "number", "minimum": 0},
        "window": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "bin_width": _POSITIVE,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "edge_smearing": {"type": "number", "minimum": 0},
    },
}


def _pointer(path) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in path)


def validate_config(doc) -> None:
    """Raise ConfigError with the JSON pointer of the first offending field."""
    validator = jsonschema.Draft202012Validator(SIM_CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda err: (len(err.absolute_path), list(map(str, err.absolute_path))))
    if not errors:
        return
    err = errors[0]
    path = list(err.absolute_path)
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            path.append(extra[0])
            raise ConfigError(f"unknown field {extra[0]!r}", _pointer(path))
    if err.validator == "required" and isinstance(err.instance, dict):
        missing = [k for k in err.validator_value if k not in err.instance]
        if missing:
            path.append(missing[0])
            raise ConfigError(f"required field {missing[0]!r} is missing", _pointer(path))
    raise ConfigError(err.message, _pointer(path))


def config_from_dict(doc: dict) -> SimConfig:
    validate_config(doc)
    a = doc["atom"]
    gamma0 = a["gamma0"] if "gamma0" in a else linewidth_mhz_to_gamma(a.get("linewidth_mhz", RB87_D2_LINEWIDTH_HZ / 1e6))
    p = doc["photon"]
    gammap = p["gammap"] if "gammap" in p else p["gammap_over_gamma0"] * gamma0
    try:
        atom = AtomParams(gamma0=float(gamma0), overlap=float(a["overlap"]))
        photon = PhotonParams(gammap=float(gammap), t0=float(p.get("t0", 0.0)))
        return SimConfig(
            atom=atom,
            photon=photon,
            n_heralds=int(doc["n_heralds"]),
            heralding_efficiency=float(doc.get("heralding_efficiency", 1.0)),
            background_rate=float(doc.get("background_rate", 0.0)),
            window=tuple(float(v) for v in doc.get("window", DEFAULT_SUM_WINDOW)),
            bin_width=float(doc.get("bin_width", DEFAULT_BIN_WIDTH)),
            seed=int(doc.get("seed", 0)),
            edge_smearing=float(doc.get("edge_smearing", 0.0)),
        )
    except ValueError as exc:
        field = "/window" if "window" in str(exc) else ""
        raise ConfigError(str(exc), field) from exc


def config_to_dict(config: SimConfig) -> dict:
    """Fully materialized config in SI units; valid input for :func:`config_from_dict`."""
    return {
        "schema": SCHEMA_VERSION,
        "atom": {"gamma0": config.atom.gamma0, "overlap": config.atom.overlap},
        "photon": {"gammap": config.photon.gammap, "t0": config.photon.t0},
        "n_heralds": config.n_heralds,
        "heralding_efficiency": config.heralding_efficiency,
        "background_rate": config.background_rate,
        "window": list(config.window),
        "bin_width": config.bin_width,
        "seed": config.seed,
        "edge_smearing": config.edge_smearing,
    }


def load_config(path) -> SimConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return config_from_dict(doc)
