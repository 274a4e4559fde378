"""Command line layer tests: config parsing round trips, exit codes,
artifact layout, schema validation and byte-level determinism.

Everything here invokes main() in-process; run payloads stay at 21 to 201
points per side so the whole module is a few seconds. The frozen verify
numbers come straight from the 101-base convergence table probe.
"""

import json
import math

import jsonschema
import numpy as np
import pytest

from dncollapse.cli import (
    RAY_CSV_COLUMNS,
    RunConfig,
    _clean,
    _fnum,
    _kruskal_corner,
    _load_schema,
    config_from_dict,
    default_deep_config,
    default_exponent_config,
    default_pulse_config,
    load_config,
    main,
)
from dncollapse.evolution import SchemeConfig
from dncollapse.geometry import ConfigurationError
from dncollapse.initial_data import Family, InitialDataSpec


def full_config() -> RunConfig:
    # every optional field takes a non-default value
    return RunConfig(
        u_min=0.0, u_max=1.9, v_min=0.0, v_max=0.3, n_u=41, n_v=33,
        initial=InitialDataSpec(family=Family.PULSE, amplitude=1200.0,
                                v_a=0.02, v_b=0.045, shape_exponent=6,
                                r_corner=2.0),
        scheme=SchemeConfig(r_floor=1e-3, corrector_iterations=3,
                            constraint_check_cadence=8,
                            log_omega_abort=150.0, threads=2,
                            checkpoint_path="chk.npz", checkpoint_cadence=25),
        rays=(3, 30), fit_r_lo=0.01, fit_r_hi=0.2,
        criterion_v1=0.02, criterion_v2=0.045,
        out_dir="somewhere", dump_grid=True, seed=11,
        amplitudes=(0.0, 800.0), epsilons=(0.0, 0.05),
    )


def deep_payload() -> dict:
    c = _kruskal_corner
    return {
        "grid": {"u_min": c(0.02), "u_max": c(0.0008),
                 "v_min": c(0.02), "v_max": c(0.0008),
                 "n_u": 101, "n_v": 101},
        "initial_data": {"family": "PERTURBED_SCHWARZSCHILD", "M": 0.5,
                         "epsilon": 0.0},
        "scheme": {"r_floor": 0.001},
    }


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


class TestConfigRoundTrip:
    def test_dict_round_trip_is_exact(self):
        cfg = full_config()
        assert config_from_dict(cfg.to_dict()) == cfg

    def test_json_file_round_trip(self, tmp_path):
        cfg = full_config()
        path = tmp_path / "full.json"
        path.write_text(json.dumps(cfg.to_dict()))
        assert load_config(path) == cfg

    def test_ini_file_round_trip(self, tmp_path):
        cfg = full_config()
        path = tmp_path / "full.ini"
        path.write_text(cfg.to_ini())
        assert load_config(path) == cfg

    def test_ini_text_layout(self):
        text = full_config().to_ini()
        assert "[grid]" in text
        assert "amplitudes = 0.0,800.0" in text
        assert "family = PULSE" in text

    def test_empty_sections_are_omitted(self):
        cfg = config_from_dict({
            "grid": {"u_min": 0.0, "u_max": 1.0, "v_min": 0.0, "v_max": 1.0,
                     "n_u": 11, "n_v": 11},
            "initial_data": {"family": "MINKOWSKI"},
        })
        assert "[sweep]" not in cfg.to_ini()
        assert "[diagnostics]" not in cfg.to_ini()

    def test_defaults_resolve_at_parse_time(self):
        cfg = config_from_dict({
            "grid": {"u_min": 0.0, "u_max": 1.0, "v_min": 0.0, "v_max": 1.0,
                     "n_u": 11, "n_v": 11},
            "initial_data": {"family": "MINKOWSKI"},
        })
        assert cfg.initial.M == 0.5
        assert cfg.initial.shape_exponent == 4
        assert cfg.scheme.r_floor is None  # resolved against the data later
        assert cfg.scheme.corrector_iterations == 2
        assert cfg.scheme.constraint_check_cadence == 16
        assert cfg.scheme.log_omega_abort == 200.0
        assert cfg.scheme.threads == 1
        assert cfg.rays is None
        assert not cfg.dump_grid
        assert cfg.seed == 0
        assert cfg.amplitudes is None


class TestConfigValidation:
    BASE = {
        "grid": {"u_min": 0.0, "u_max": 1.0, "v_min": 0.0, "v_max": 1.0,
                 "n_u": 11, "n_v": 11},
        "initial_data": {"family": "MINKOWSKI"},
    }

    @pytest.mark.parametrize("mutate", [
        lambda d: d.update({"grids": {}}),
        lambda d: d["grid"].update({"nu": 11}),
        lambda d: d["grid"].pop("n_v"),
        lambda d: d["grid"].update({"n_u": "eleven"}),
        lambda d: d.update({"initial_data": {"family": "pulse"}}),
        lambda d: d.update({"initial_data": ["MINKOWSKI"]}),
    ])
    def test_bad_payloads_raise(self, mutate):
        payload = {k: dict(v) for k, v in self.BASE.items()}
        mutate(payload)
        with pytest.raises(ConfigurationError):
            config_from_dict(payload)

    def test_half_a_fit_window_is_rejected(self, tmp_path):
        payload = {k: dict(v) for k, v in self.BASE.items()}
        payload["diagnostics"] = {"fit_r_lo": 0.01}
        with pytest.raises(ConfigurationError):
            load_config(write_config(tmp_path, payload))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "nope.ini")

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError):
            load_config(path)

    def test_json_must_be_an_object(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigurationError):
            load_config(path)

    def test_malformed_ini(self, tmp_path):
        path = tmp_path / "bad.ini"
        path.write_text("[grid\nu_min = 0")
        with pytest.raises(ConfigurationError):
            load_config(path)


class TestDefaultConfigs:
    def test_kruskal_corner_inverts_to_the_radius(self):
        from dncollapse.initial_data import schwarzschild_r_from_uv
        for r in (0.9, 0.45, 0.05, 0.015):
            c = _kruskal_corner(r)
            assert 0.0 < c < 1.0
            assert schwarzschild_r_from_uv(c, c, 0.5) == pytest.approx(
                r, rel=1e-12)
        # deeper corners sit closer to the singularity at UV = 1
        assert _kruskal_corner(0.9) < _kruskal_corner(0.05)

    def test_pulse_base(self):
        cfg = default_pulse_config()
        assert cfg.initial.family is Family.PULSE
        assert (cfg.n_u, cfg.n_v) == (401, 401)
        assert (cfg.initial.v_a, cfg.initial.v_b) == (0.02, 0.045)
        assert cfg.amplitudes == (0.0, 500.0, 1000.0, 1500.0, 2000.0, 2500.0)
        assert cfg.scheme.r_floor == 1e-3
        assert (cfg.u_max, cfg.v_max) == (1.9, 0.3)

    def test_exponent_base(self):
        cfg = default_exponent_config()
        assert cfg.initial.family is Family.PERTURBED_SCHWARZSCHILD
        assert (cfg.n_u, cfg.n_v) == (801, 801)
        assert cfg.u_min == _kruskal_corner(0.45)
        assert cfg.u_max == _kruskal_corner(0.015)
        assert (cfg.fit_r_lo, cfg.fit_r_hi) == (0.05, 0.3)
        assert cfg.epsilons == (0.0, 0.025, 0.05, 0.1)
        assert cfg.scheme.r_floor == 0.012

    def test_deep_base(self):
        cfg = default_deep_config(epsilon=0.1)
        assert cfg.initial.epsilon == 0.1
        assert cfg.u_min == _kruskal_corner(0.02)
        assert cfg.u_max == _kruskal_corner(0.0008)
        assert cfg.scheme.r_floor == 0.001
        assert default_deep_config().initial.epsilon == 0.0


class TestRunCommand:
    def test_completed_run_writes_validated_artifacts(self, tmp_path):
        cfg = write_config(tmp_path, deep_payload())
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        assert sorted(p.name for p in out.iterdir()) == [
            "ray_0098.csv", "summary.json", "summary.txt"]
        summary = json.loads((out / "summary.json").read_text())
        jsonschema.validate(summary, _load_schema())
        assert summary["status"] == "completed"
        assert summary["criterion"] is None  # not a pulse family
        co = summary["constants"]
        assert 0.95 <= co["c1_hat"] <= 1.0
        assert 0.95 <= co["c2_hat"] <= 1.0
        assert 5.8 <= co["n_hat"] <= 6.2
        assert 5.8 <= co["n_hat_cross"] <= 6.2
        assert -1.05 <= co["omega_slope"] <= -0.95
        names = [c["name"] for c in summary["checks"]]
        assert names == ["curvature_lower_bound", "mass_monotonicity",
                         "trapped_persistence", "horizon_mass_duality",
                         "scalar_bound_plateau", "ray_limit_variation"]
        by_name = {c["name"]: c for c in summary["checks"]}
        for name in ("curvature_lower_bound", "mass_monotonicity",
                     "trapped_persistence", "scalar_bound_plateau"):
            assert by_name[name]["status"] == "pass", name
        assert by_name["horizon_mass_duality"]["status"] == "not-applicable"
        # the final-decade variation sits near 2.5% at this coarse
        # resolution, just over its 2% gate; refinement brings it under
        tv = by_name["ray_limit_variation"]
        assert tv["status"] == "fail"
        assert 0.02 < tv["value"] < 0.05

    def test_ray_csv_layout(self, tmp_path):
        payload = deep_payload()
        payload["diagnostics"] = {"rays": [50]}
        cfg = write_config(tmp_path, payload)
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        lines = (out / "ray_0050.csv").read_text().splitlines()
        assert lines[0] == ",".join(RAY_CSV_COLUMNS)
        assert len(lines) == 1 + 101  # header plus one row per active point
        for cell in lines[5].split(","):
            float(cell)  # parseable, nan allowed

    def test_dump_grid_flag(self, tmp_path):
        cfg = write_config(tmp_path, deep_payload())
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out),
                     "--dump-grid"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["artifacts"]["grid_dump"] == "grid_dump.npz"
        dump = np.load(out / "grid_dump.npz")
        assert sorted(dump.files) == ["lam", "log_omega", "mask", "nu",
                                      "phi", "r", "u", "v", "w", "z"]
        assert dump["r"].shape == (101, 101)
        assert dump["u"].shape == (101,)

    def test_ray_csv_bytes_are_reproducible(self, tmp_path):
        cfg = write_config(tmp_path, deep_payload())
        blobs = []
        for name, threads in (("a", None), ("b", None), ("c", "3")):
            argv = ["run", "--config", cfg, "--out", str(tmp_path / name)]
            if threads:
                argv += ["--threads", threads]
            assert main(argv) == 0
            blobs.append((tmp_path / name / "ray_0098.csv").read_bytes())
        assert blobs[0] == blobs[1] == blobs[2]

    def test_bad_ray_index_fails_before_writing(self, tmp_path, capsys):
        payload = deep_payload()
        payload["diagnostics"] = {"rays": [500]}
        cfg = write_config(tmp_path, payload)
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 2
        assert not out.exists()
        assert "configuration error" in capsys.readouterr().err

    def test_numerical_blowup_keeps_partial_artifacts(self, tmp_path, capsys):
        # an absurdly small abort threshold trips on the first pulse diamond
        payload = {
            "grid": {"u_min": 0.0, "u_max": 1.0, "v_min": 0.0, "v_max": 0.3,
                     "n_u": 21, "n_v": 21},
            "initial_data": {"family": "PULSE", "amplitude": 500.0,
                             "v_a": 0.05, "v_b": 0.15},
            "scheme": {"r_floor": 1e-3, "log_omega_abort": 1e-6},
        }
        cfg = write_config(tmp_path, payload)
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 3
        assert "numerical blowup" in capsys.readouterr().err
        summary = json.loads((out / "summary.json").read_text())
        jsonschema.validate(summary, _load_schema())
        assert summary["status"] == "numerical-blowup"
        assert 0 < summary["evolution"]["diagonals_completed"] < 40
        assert (out / "summary.txt").is_file()

    def test_env_var_supplies_the_output_dir(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        monkeypatch.setenv("DNCOLLAPSE_OUT", "from_env")
        cfg = write_config(tmp_path, deep_payload())
        assert main(["run", "--config", cfg]) == 0
        assert (tmp_path / "from_env" / "summary.json").is_file()

    def test_config_out_dir_is_honored(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        payload = deep_payload()
        payload["output"] = {"out_dir": "from_config"}
        cfg = write_config(tmp_path, payload)
        assert main(["run", "--config", cfg]) == 0
        assert (tmp_path / "from_config" / "summary.json").is_file()


class TestSweepCommands:
    SHALLOW = {
        "grid": {"u_min": 0.0, "u_max": 0.3, "v_min": 0.0, "v_max": 0.3,
                 "n_u": 51, "n_v": 51},
        "initial_data": {"family": "PULSE", "amplitude": 0.0,
                         "v_a": 0.02, "v_b": 0.045},
        "scheme": {"r_floor": 1e-3},
        "sweep": {"amplitudes": [0.0, 1500.0]},
    }

    def full_depth(self):
        payload = {k: dict(v) for k, v in self.SHALLOW.items()}
        payload["grid"] = {"u_min": 0.0, "u_max": 1.9, "v_min": 0.0,
                           "v_max": 0.3, "n_u": 51, "n_v": 51}
        return payload

    def test_consistent_sweep_exits_zero(self, tmp_path):
        cfg = write_config(tmp_path, self.full_depth())
        out = tmp_path / "out"
        assert main(["criterion-sweep", "--config", cfg,
                     "--out", str(out)]) == 0
        lines = (out / "criterion_sweep.csv").read_text().splitlines()
        assert lines[0] == ("amplitude,eta0,delta0,E_of_delta0,"
                            "predicted,observed,status")
        rows = [line.split(",") for line in lines[1:]]
        assert [r[4] for r in rows] == ["false", "true"]
        assert [r[5] for r in rows] == ["false", "true"]
        assert all(r[6] == "completed" for r in rows)

    def test_prediction_without_trapping_exits_four(self, tmp_path, capsys):
        # same pulse on a shallow domain: predicted, but nothing can trap
        cfg = write_config(tmp_path, self.SHALLOW)
        out = tmp_path / "out"
        assert main(["criterion-sweep", "--config", cfg,
                     "--out", str(out)]) == 4
        assert "FAILURE" in capsys.readouterr().err
        lines = (out / "criterion_sweep.csv").read_text().splitlines()
        assert lines[2].split(",")[4:6] == ["true", "false"]

    def test_sweep_needs_two_amplitudes(self, tmp_path):
        payload = {k: dict(v) for k, v in self.SHALLOW.items()}
        payload["sweep"] = {"amplitudes": [1500.0]}
        cfg = write_config(tmp_path, payload)
        assert main(["criterion-sweep", "--config", cfg,
                     "--out", str(tmp_path / "out")]) == 2

    def test_sweep_rows_are_thread_order_independent(self, tmp_path):
        cfg = write_config(tmp_path, self.full_depth())
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["criterion-sweep", "--config", cfg, "--out", str(a)]) == 0
        assert main(["criterion-sweep", "--config", cfg, "--out", str(b),
                     "--threads", "2"]) == 0
        assert ((a / "criterion_sweep.csv").read_bytes()
                == (b / "criterion_sweep.csv").read_bytes())

    def expo_payload(self):
        c = _kruskal_corner
        return {
            "grid": {"u_min": c(0.45), "u_max": c(0.015),
                     "v_min": c(0.45), "v_max": c(0.015),
                     "n_u": 201, "n_v": 201},
            "initial_data": {"family": "PERTURBED_SCHWARZSCHILD", "M": 0.5},
            "scheme": {"r_floor": 0.012},
            "diagnostics": {"fit_r_lo": 0.05, "fit_r_hi": 0.3},
            "sweep": {"epsilons": [0.0, 0.1]},
        }

    def test_exponent_sweep_recovers_the_rate(self, tmp_path):
        cfg = write_config(tmp_path, self.expo_payload())
        out = tmp_path / "out"
        assert main(["exponent-sweep", "--config", cfg,
                     "--out", str(out)]) == 0
        lines = (out / "exponent_sweep.csv").read_text().splitlines()
        assert lines[0] == "epsilon,n_hat,d1_hat,d2_hat,omega_slope,status"
        for line in lines[1:]:
            eps, n_hat, d1, d2, slope, status = line.split(",")
            assert status == "completed"
            assert abs(float(n_hat) - 6.0) <= 0.05
        # the perturbed row carries the injected scalar amplitude
        assert float(lines[2].split(",")[3]) == pytest.approx(0.1, rel=1e-12)

    def test_epsilon_outside_the_modeled_range_is_rejected(self, tmp_path):
        payload = self.expo_payload()
        payload["sweep"] = {"epsilons": [0.0, 0.5]}
        cfg = write_config(tmp_path, payload)
        assert main(["exponent-sweep", "--config", cfg,
                     "--out", str(tmp_path / "out")]) == 2


@pytest.fixture(scope="module")
def verify_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("verify")
    rc = main(["verify-schwarzschild", "--levels", "3", "--out", str(out)])
    return rc, out


@pytest.fixture(scope="module")
def valid_summary(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("schema")
    cfg = write_config(tmp, deep_payload())
    out = tmp / "out"
    assert main(["run", "--config", cfg, "--out", str(out)]) == 0
    return json.loads((out / "summary.json").read_text())


class TestVerifyCommand:

    def test_exit_zero_and_artifacts(self, verify_out):
        rc, out = verify_out
        assert rc == 0
        assert (out / "convergence.csv").is_file()
        assert (out / "verify.txt").is_file()

    def test_table_matches_the_frozen_values(self, verify_out):
        _, out = verify_out
        lines = (out / "convergence.csv").read_text().splitlines()
        assert lines[0] == "quantity,level,h,error,order"
        rows = [line.split(",") for line in lines[1:]]
        assert len(rows) == 12
        by_q = {}
        for q, lvl, h, err, order in rows:
            by_q.setdefault(q, []).append((float(h), float(err),
                                           float(order) if order else None))
        assert set(by_q) == {"r", "log_omega", "constraint", "kretschmann"}
        errs = [e for _, e, _ in by_q["r"]]
        assert errs[0] == pytest.approx(1.3163105051592766e-3, rel=1e-9)
        assert errs[2] == pytest.approx(9.6709237467851317e-5, rel=1e-9)
        for q, rows_q in by_q.items():
            assert rows_q[0][2] is None
            assert 1.8 <= rows_q[-1][2] <= 2.2, q
            assert rows_q[0][1] > rows_q[1][1] > rows_q[2][1], q

    def test_too_few_levels_is_a_config_error(self):
        assert main(["verify-schwarzschild", "--levels", "2"]) == 2


class TestReportCommand:
    def test_rerender_is_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, deep_payload())
        out = tmp_path / "out"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        original = (out / "summary.txt").read_bytes()
        (out / "summary.txt").unlink()
        assert main(["report", "--out", str(out)]) == 0
        assert (out / "summary.txt").read_bytes() == original

    def test_corrupt_summary(self, tmp_path):
        (tmp_path / "summary.json").write_text("{not json")
        assert main(["report", "--out", str(tmp_path)]) == 2

    def test_missing_summary(self, tmp_path):
        assert main(["report", "--out", str(tmp_path / "nowhere")]) == 2


class TestSummarySchema:
    def test_produced_summary_validates(self, valid_summary):
        jsonschema.validate(valid_summary, _load_schema())

    def test_missing_required_key_is_rejected(self, valid_summary):
        broken = dict(valid_summary)
        del broken["status"]
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(broken, _load_schema())

    def test_unknown_top_level_key_is_rejected(self, valid_summary):
        broken = dict(valid_summary)
        broken["surprise"] = 1
        with pytest.raises(jsonschema.ValidationError):
            jsonschema.validate(broken, _load_schema())

    def test_nan_and_infinity_become_null(self):
        cleaned = _clean({"a": float("nan"),
                          "b": [np.float64(1.5), float("inf")],
                          "c": np.int64(3), "d": np.bool_(True)})
        assert cleaned == {"a": None, "b": [1.5, None], "c": 3, "d": True}

    def test_float_formatting_is_17_digit(self):
        assert _fnum(0.1) == "0.10000000000000001"
        assert _fnum(1.0) == "1"
        assert _fnum(float("nan")) == "nan"
