"""File formats: scenarios, timestamps, histograms, curves, reports."""

import json

import numpy as np
import pytest

from homlab import io
from homlab.errors import FileFormatError, ScenarioError
from homlab.simulate import Channel, DetectionSeries, histogram


def _series(rng, n, channel):
    t = np.sort(rng.integers(0, 10**12, size=n)).astype(np.int64)
    return DetectionSeries(channel=channel, times_ps=t)


class TestScenario:
    def test_bundled_scenario_loads(self):
        path = io.bundled_scenario_path("oband_default")
        scn = io.load_scenario(path)
        assert scn.name == "oband_default"
        assert scn.bin_width_ps == 48
        assert scn.tpi.alpha2 == 0.63
        p = scn.tpi_params()
        assert p.sigma_j == pytest.approx(43.27294572467457, abs=1e-12)

    def test_unknown_bundle_name(self):
        with pytest.raises(ScenarioError):
            io.bundled_scenario_path("does_not_exist")

    def test_round_trip(self, tmp_path, paper_scenario):
        out = tmp_path / "scn.json"
        io.save_scenario(out, paper_scenario)
        back = io.load_scenario(out)
        assert back == paper_scenario

    def test_invalid_json_rejected(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ScenarioError):
            io.load_scenario(bad)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ScenarioError):
            io.load_scenario(tmp_path / "absent.json")

    def test_field_errors_name_the_field(self, tmp_path, paper_scenario):
        doc = json.loads(
            io.bundled_scenario_path("oband_default").read_text()
        )
        doc["qd_rate_cps"] = -5.0
        bad = tmp_path / "neg.json"
        bad.write_text(json.dumps(doc))
        with pytest.raises(ScenarioError) as err:
            io.load_scenario(bad)
        assert "qd_rate_cps" in str(err.value)

    def test_unknown_field_rejected(self, tmp_path):
        doc = json.loads(
            io.bundled_scenario_path("oband_default").read_text()
        )
        doc["surprise"] = 1
        bad = tmp_path / "extra.json"
        bad.write_text(json.dumps(doc))
        with pytest.raises(ScenarioError):
            io.load_scenario(bad)

    def test_detector_spec_accessor(self, paper_scenario):
        spec = paper_scenario.detector_spec(Channel.D1)
        assert spec.jitter_sigma_ps == 30.6
        assert spec.dead_time_ps == 40_000


class TestTimestampsCsv:
    def test_round_trip(self, tmp_path, rng):
        series = [_series(rng, 500, Channel.D1), _series(rng, 300, Channel.D2)]
        path = tmp_path / "t.csv"
        io.write_timestamps_csv(path, series)
        back = io.read_timestamps_csv(path)
        assert len(back) == 2
        for orig, got in zip(series, back):
            assert got.channel == orig.channel
            np.testing.assert_array_equal(got.times_ps, orig.times_ps)

    def test_header_enforced(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("time,chan\n1,D1\n")
        with pytest.raises(FileFormatError):
            io.read_timestamps_csv(p)

    def test_bad_channel_name(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("time_ps,channel\n1,D9\n")
        with pytest.raises(FileFormatError):
            io.read_timestamps_csv(p)

    def test_unsorted_channel_rejected(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("time_ps,channel\n5,D1\n1,D1\n")
        with pytest.raises(FileFormatError):
            io.read_timestamps_csv(p)


class TestTimestampsBinary:
    def test_large_round_trip_bit_identical(self, tmp_path, rng):
        series = [
            _series(rng, 600_000, Channel.D1),
            _series(rng, 400_000, Channel.D2),
        ]
        path = tmp_path / "t.bin"
        io.write_timestamps_binary(path, series)
        back = io.read_timestamps_binary(path)
        assert [s.channel for s in back] == [Channel.D1, Channel.D2]
        for orig, got in zip(series, back):
            np.testing.assert_array_equal(got.times_ps, orig.times_ps)
        # second write produces identical bytes
        path2 = tmp_path / "t2.bin"
        io.write_timestamps_binary(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_magic_enforced(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"NOPE" + b"\x00" * 9)
        with pytest.raises(FileFormatError):
            io.read_timestamps_binary(p)

    def test_truncation_detected(self, tmp_path, rng):
        p = tmp_path / "x.bin"
        io.write_timestamps_binary(p, [_series(rng, 10, Channel.D1)])
        blob = p.read_bytes()
        p.write_bytes(blob[:-3])
        with pytest.raises(FileFormatError):
            io.read_timestamps_binary(p)

    def test_unknown_channel_tag(self, tmp_path):
        p = tmp_path / "x.bin"
        rec = np.zeros(1, dtype=[("time_ps", "<i8"), ("channel", "u1")])
        rec["channel"] = 7
        p.write_bytes(io.TIMESTAMP_MAGIC + rec.tobytes())
        with pytest.raises(FileFormatError):
            io.read_timestamps_binary(p)


class TestHistogramJson:
    def test_round_trip_exact(self, tmp_path, rng):
        h = histogram(
            rng.integers(-7000, 7000, 5000), 48, 6000.0,
            span_ps=10**12, n_start=100, n_stop=90, seed_list=[3, 5],
        )
        p = tmp_path / "h.json"
        io.write_histogram(p, h)
        assert io.read_histogram(p) == h

    def test_missing_field_rejected(self, tmp_path, rng):
        h = histogram(rng.integers(-500, 500, 50), 48, 500.0)
        p = tmp_path / "h.json"
        io.write_histogram(p, h)
        doc = json.loads(p.read_text())
        del doc["overflow"]
        p.write_text(json.dumps(doc))
        with pytest.raises(FileFormatError):
            io.read_histogram(p)

    def test_unknown_field_rejected(self, tmp_path, rng):
        h = histogram(rng.integers(-500, 500, 50), 48, 500.0)
        p = tmp_path / "h.json"
        io.write_histogram(p, h)
        doc = json.loads(p.read_text())
        doc["extra"] = 1
        p.write_text(json.dumps(doc))
        with pytest.raises(FileFormatError):
            io.read_histogram(p)

    def test_invalid_values_rejected(self, tmp_path, rng):
        h = histogram(rng.integers(-500, 500, 50), 48, 500.0)
        p = tmp_path / "h.json"
        io.write_histogram(p, h)
        doc = json.loads(p.read_text())
        doc["counts"][3] = -2
        p.write_text(json.dumps(doc))
        with pytest.raises(FileFormatError):
            io.read_histogram(p)

    def test_not_json_rejected(self, tmp_path):
        p = tmp_path / "h.json"
        p.write_text("[1, 2, 3]")
        with pytest.raises(FileFormatError):
            io.read_histogram(p)


class TestCurveCsv:
    def test_round_trip(self, tmp_path):
        t = np.linspace(-500.0, 500.0, 21)
        v = np.exp(-np.abs(t) / 150.0)
        s = np.full(t.size, 0.01)
        p = tmp_path / "c.csv"
        io.write_curve_csv(p, t, v, s)
        tt, vv, ss = io.read_curve_csv(p)
        np.testing.assert_allclose(tt, t, atol=1e-6)
        np.testing.assert_allclose(vv, v, rtol=1e-9)
        np.testing.assert_allclose(ss, s, rtol=1e-9)

    def test_sigma_defaults_to_zero(self, tmp_path):
        p = tmp_path / "c.csv"
        io.write_curve_csv(p, [0.0, 1.0], [2.0, 3.0])
        _, _, ss = io.read_curve_csv(p)
        np.testing.assert_array_equal(ss, [0.0, 0.0])

    def test_length_mismatch_rejected(self, tmp_path):
        with pytest.raises(FileFormatError):
            io.write_curve_csv(tmp_path / "c.csv", [0.0], [1.0, 2.0])

    def test_points_header_enforced(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text("delay,vis,err\n10,0.9,0.05\n")
        with pytest.raises(FileFormatError):
            io.read_points_csv(p)

    def test_points_round_trip(self, tmp_path):
        p = tmp_path / "pts.csv"
        p.write_text(
            "delay_ps,visibility,sigma\n25,0.83,0.05\n125,0.41,0.04\n"
        )
        d, v, s = io.read_points_csv(p)
        np.testing.assert_allclose(d, [25.0, 125.0])
        np.testing.assert_allclose(v, [0.83, 0.41])
        np.testing.assert_allclose(s, [0.05, 0.04])


def test_write_report_structure(tmp_path, paper_scenario):
    from homlab import workflows
    from homlab.estimate import binned_model_values, NormalizedG2, fit_g2_model

    centers = workflows.scenario_tau_centers(paper_scenario)
    truth = paper_scenario.tpi_params()
    sig = np.full(centers.size, 1e-6)
    g = NormalizedG2(centers, binned_model_values(truth, centers), sig, 1.0)
    gq = NormalizedG2(
        centers,
        binned_model_values(truth, centers, phi=np.pi / 2),
        sig,
        1.0,
    )
    res = fit_g2_model(g, gq, truth, free=("alpha2", "g0"))
    p = tmp_path / "report.json"
    io.write_report(p, res)
    doc = json.loads(p.read_text())
    assert set(doc) >= {
        "params",
        "std_errors",
        "free_params",
        "covariance",
        "chi2",
        "dof",
        "converged",
        "n_iterations",
        "settings",
    }
    assert doc["free_params"] == ["alpha2", "g0"]
    assert len(doc["covariance"]) == 4
    assert doc["converged"] is True
