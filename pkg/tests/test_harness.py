import csv
import json

import pytest

from cgostab.cli import main
from cgostab.errors import ConfigurationError
from cgostab.harness import (
    CSV_HEADER, OUTPUT_ROOT_ENV, config_hash, execute, load_config, run_directory, verify_run,
)

SMALL_AUDIT = {"audit": {"gammas": [0.0, 3.0], "ks": [1.0], "beta_min": 10.0,
                         "beta_max": 40.0, "N": 8}}
ZERO = {"terms": []}


def _write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def _manifest(run_dir):
    return json.loads((run_dir / "manifest.json").read_text())


class TestConfig:
    def test_defaults_and_overrides(self):
        cfg = load_config(overrides={"kind": "cgo", "N": 6, "params": {"gamma": 2.0}})
        assert cfg["N"] == 6 and cfg["params"] == {"gamma": 2.0, "k": 1.0}

    @pytest.mark.parametrize("bad", [
        {"kind": "nope"},
        {"kind": "cgo", "r": 2.5},
        {"kind": "cgo", "tol": 0},
        {"kind": "sweep", "deltas": []},
        {"kind": "sweep", "deltas": [1e-6, 1e-4]},
        {"kind": "sweep", "deltas": [1e-4, 2.0]},
        {"kind": "cgo", "betas": [20.0, 10.0]},
    ])
    def test_rejected(self, bad):
        with pytest.raises(ConfigurationError):
            load_config(overrides=bad)

    def test_hash_stable(self):
        a = load_config(overrides={"kind": "cgo"})
        b = load_config(overrides={"kind": "cgo"})
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(load_config(overrides={"kind": "cgo", "seed": 1}))

    def test_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
        cfg = load_config(overrides={"kind": "cgo"})
        assert run_directory(cfg).parent == tmp_path


class TestRuns:
    def test_symbol_audit_and_verify(self, tmp_path):
        code, d = execute("symbol-audit", _write(tmp_path, SMALL_AUDIT), tmp_path / "audit")
        assert code == 0
        m = _manifest(d)
        assert m["passed"] and all(m["assertions"].values())
        assert {"config.json", "certificates.json", "symbol_margins.svg"} <= set(m["outputs"])
        assert verify_run(d) == []
        (d / "certificates.json").write_text("[]")
        assert verify_run(d) == ["hash mismatch certificates.json"]

    def test_green_check_same_potential(self, tmp_path):
        cfg = {"N": 8, "potential2": load_config(overrides={"kind": "cgo"})["potential"]}
        code, d = execute("green-check", _write(tmp_path, cfg), tmp_path / "green")
        rep = json.loads((d / "green_report.json").read_text())
        assert code == 0 and rep["same_potential"]

    def test_cgo_below_beta0(self, tmp_path):
        cfg = {"N": 6, "beta": 0.5, "calibrate": False}
        code, d = execute("cgo", _write(tmp_path, cfg), tmp_path / "cgo")
        m = _manifest(d)
        assert code == 1 and not m["passed"]
        assert m["error"].startswith("PreconditionError")

    def test_cgo_sweep_outputs(self, tmp_path):
        cfg = {"N": 6, "betas": [10.0, 20.0], "calibrate": False}
        code, d = execute("cgo", _write(tmp_path, cfg), tmp_path / "cgo")
        assert code == 0
        for name in ("trace_0.jsonl", "trace_1.jsonl", "cgo_profile.csv", "cgo_profile.svg",
                     "cgo_contraction.svg", "cgo_report.json"):
            assert (d / name).exists()
        rows = list(csv.reader((d / "cgo_profile.csv").open()))
        assert rows[0] == ["beta"] + [f"order{j}" for j in range(5)] and len(rows) == 3

    def test_svg_deterministic(self, tmp_path):
        cfg = _write(tmp_path, {"N": 6, "betas": [10.0, 20.0], "calibrate": False})
        _, a = execute("cgo", cfg, tmp_path / "a")
        _, b = execute("cgo", cfg, tmp_path / "b")
        for name in ("cgo_profile.svg", "cgo_contraction.svg", "cgo_profile.csv"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestSweep:
    CFG = {"potential": ZERO, "N": 4, "N_oracle": 4, "L": 12, "order": 16,
           "schedule": "manual", "deltas": [1e-4, 1e-6], "betas": [10.0, 20.0], "eta": 2.5}

    def test_zero_potential_degenerate(self, tmp_path):
        # with q = 0 the error is pure data noise, so tiny noise keeps it at the floor
        cfg = dict(self.CFG, deltas=[1e-9, 1e-11])
        code, d = execute("sweep", _write(tmp_path, cfg), tmp_path / "s")
        rep = json.loads((d / "sweep_report.json").read_text())
        assert rep["fit"]["degenerate"]
        assert all(r["err_l2"] <= 1e-7 for r in rep["rows"])
        assert code == 0

    def test_zero_potential_error_tracks_noise(self, tmp_path):
        _, d = execute("sweep", _write(tmp_path, self.CFG), tmp_path / "n")
        rows = json.loads((d / "sweep_report.json").read_text())["rows"]
        for r in rows:
            assert 0.1 <= r["err_l2"] / r["delta"] <= 10

    def test_csv_header_and_bytes(self, tmp_path):
        cfg = _write(tmp_path, self.CFG)
        _, a = execute("sweep", cfg, tmp_path / "a")
        _, b = execute("sweep", cfg, tmp_path / "b")
        text = (a / "sweep.csv").read_text()
        assert text.splitlines()[0] == ",".join(CSV_HEADER)
        assert (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
        assert (a / "sweep_error.svg").read_bytes() == (b / "sweep_error.svg").read_bytes()

    def test_skipped_rows_continue(self, tmp_path):
        cfg = dict(self.CFG, schedule="thm1.1", betas=None)
        code, d = execute("sweep", _write(tmp_path, cfg), tmp_path / "t")
        rep = json.loads((d / "sweep_report.json").read_text())
        assert rep["skipped"] == 2 and len(rep["rows"]) == 2
        rows = list(csv.DictReader((d / "sweep.csv").open()))
        assert all(r["err_l2"] == "" and r["realized_dist"] != "" for r in rows)
        assert code == 1


class TestCli:
    def test_audit_then_verify(self, tmp_path, capsys):
        cfg = _write(tmp_path, SMALL_AUDIT)
        out = tmp_path / "run"
        assert main(["symbol-audit", "--config", str(cfg), "--out", str(out), "--seed", "3",
                     "--threads", "1"]) == 0
        assert main(["verify", str(out)]) == 0
        assert capsys.readouterr().out.strip().endswith("ok")
        assert json.loads((out / "config.json").read_text())["seed"] == 3

    def test_requires_subcommand(self):
        with pytest.raises(SystemExit):
            main([])
