import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _helpers import standard_config
from atomscatter.analysis import analyze
from atomscatter.errors import ConfigError, FormatError
from atomscatter.formats import (
    config_from_dict,
    config_to_dict,
    histogram_to_csv,
    load_config,
    parse_histogram,
    read_histogram,
    read_result,
    read_table,
    sha256_file,
    table_to_csv,
    validate_config,
    write_histogram,
    write_result,
)
from atomscatter.simulate import Histogram, simulate_pair, simulate_reference
from atomscatter.theory import linewidth_mhz_to_gamma


def _minimal():
    return {"schema": 1, "atom": {"overlap": 0.033}, "photon": {"gammap_over_gamma0": 1.96}, "n_heralds": 1000}


class TestHistogramCsv:
    def test_round_trip(self, atom, tmp_path):
        hist = simulate_reference(standard_config(atom, 2.0, n_heralds=10**5, seed=3))
        path = write_histogram(hist, tmp_path / "h.csv")
        back = read_histogram(path)
        assert back == hist
        assert back.t_start == hist.t_start and back.bin_width == hist.bin_width
        assert back.seed == hist.seed
        assert back.diagnostics == hist.diagnostics

    @settings(max_examples=50, deadline=None)
    @given(
        counts=st.lists(st.integers(0, 2**40), min_size=1, max_size=40),
        t_start=st.floats(-1e-6, 1e-6, allow_nan=False),
        bin_width=st.floats(1e-12, 1e-8),
        n_heralds=st.integers(1, 2**50),
    )
    def test_round_trip_property(self, counts, t_start, bin_width, n_heralds):
        hist = Histogram(t_start, bin_width, np.array(counts), n_heralds, "with_atom", seed=7)
        back = parse_histogram(histogram_to_csv(hist))
        assert back == hist
        assert back.t_start == t_start and back.bin_width == bin_width

    def test_headerless_binning_inferred(self):
        text = "# n_heralds=100\n# t_ns,counts\n-9.5,0\n-8.5,3\n-7.5,4\n"
        hist = parse_histogram(text)
        assert hist.bin_width == pytest.approx(1e-9)
        assert hist.t_start == pytest.approx(-10e-9)
        np.testing.assert_array_equal(hist.counts, [0, 3, 4])

    @pytest.mark.parametrize("text", [
        "# n_heralds=10\n0.5,1,2\n",
        "# n_heralds=10\n0.5,abc\n",
        "# n_heralds=10\n0.5,1.5\n",
        "0.5,1\n1.5,2\n",
        "# n_heralds=10\n",
        "# n_heralds=10\n0.5,-1\n",
    ])
    def test_malformed(self, text):
        with pytest.raises(FormatError):
            parse_histogram(text)

    def test_hash_is_stable(self, atom, tmp_path):
        hist = simulate_reference(standard_config(atom, 2.0, n_heralds=1000))
        a = sha256_file(write_histogram(hist, tmp_path / "a.csv"))
        b = sha256_file(write_histogram(hist, tmp_path / "b.csv"))
        assert a == b and len(a) == 64


def test_table_round_trip(tmp_path):
    cols = {"x": np.array([0.1, 1 / 3, -2e-300]), "y": np.array([1.0, math.pi, 7.0])}
    path = tmp_path / "t.csv"
    path.write_text(table_to_csv(cols, {"overlap": 0.033, "note": "abc"}))
    back, meta = read_table(path)
    assert list(back) == ["x", "y"]
    for k in cols:
        np.testing.assert_array_equal(back[k], cols[k])
    assert meta == {"overlap": "0.033", "note": "abc"}


def test_result_round_trip(atom, tmp_path):
    g0, g = simulate_pair(standard_config(atom, 1.96, n_heralds=10**5, seed=2))
    result, _ = analyze(g0, g, atom, n_bootstrap=100, provenance={"inputs": {"ref": "abc"}})
    back = read_result(write_result(result, tmp_path / "r.json"))
    assert back.bandwidth == result.bandwidth
    assert back.extinction == result.extinction
    assert back.peak == result.peak
    np.testing.assert_array_equal(back.excitation.p_e, result.excitation.p_e)
    np.testing.assert_array_equal(back.excitation.times, result.excitation.times)
    assert back.provenance == json.loads(json.dumps(result.provenance))


def test_result_schema_checked():
    from atomscatter.formats import result_from_dict
    with pytest.raises(FormatError):
        result_from_dict({"schema": 99})


class TestConfig:
    def test_minimal_defaults(self):
        cfg = config_from_dict(_minimal())
        assert cfg.atom.gamma0 == pytest.approx(linewidth_mhz_to_gamma(6.07))
        assert cfg.photon.gammap == pytest.approx(1.96 * cfg.atom.gamma0)
        assert cfg.window == (-10e-9, 100e-9)
        assert cfg.bin_width == 1e-9
        assert cfg.seed == 0

    def test_round_trip(self, atom):
        cfg = standard_config(atom, 3.3, n_heralds=123, seed=2**63 + 5, heralding_efficiency=0.4,
                           background_rate=10.0, edge_smearing=1e-9)
        doc = json.loads(json.dumps(config_to_dict(cfg)))
        assert config_from_dict(doc) == cfg

    @pytest.mark.parametrize("mutate,pointer", [
        (lambda d: d["atom"].update(foo=1), "/atom/foo"),
        (lambda d: d.update(bogus=True), "/bogus"),
        (lambda d: d["atom"].update(overlap=1.5), "/atom/overlap"),
        (lambda d: d.update(n_heralds=0), "/n_heralds"),
        (lambda d: d.update(n_heralds=1.5), "/n_heralds"),
        (lambda d: d["photon"].update(gammap=1e8), "/photon"),
        (lambda d: d.update(window=[1e-8]), "/window"),
        (lambda d: d.update(seed=-3), "/seed"),
        (lambda d: d.pop("n_heralds"), "/n_heralds"),
        (lambda d: d.update(schema=2), "/schema"),
        (lambda d: d.pop("schema"), "/schema"),
    ])
    def test_invalid_reports_pointer(self, mutate, pointer):
        doc = _minimal()
        mutate(doc)
        with pytest.raises(ConfigError) as info:
            validate_config(doc)
        assert info.value.pointer == pointer

    def test_semantic_window_error(self):
        doc = _minimal()
        doc["window"] = [0.0, 10.5e-9]
        with pytest.raises(ConfigError) as info:
            config_from_dict(doc)
        assert info.value.pointer == "/window"

    def test_unknown_key_message(self):
        doc = _minimal()
        doc["atom"]["foo"] = 1
        with pytest.raises(ConfigError, match="foo"):
            validate_config(doc)

    def test_load_bad_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)
