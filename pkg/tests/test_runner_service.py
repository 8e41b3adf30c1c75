import json
import warnings

import pytest

from attractordim.config import parse_config
from attractordim.errors import (
    EXIT_HYPOTHESIS,
    EXIT_INCONCLUSIVE,
    EXIT_OK,
    EXIT_USAGE,
)
from attractordim.runner import build_report, execute, materialize, materialize_report

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from fastapi.testclient import TestClient

from attractordim.service.app import create_app

BASE = """
[grid]
points = 3, 3, 3

[problem]
f = -u**3
u0 = 0.4*sin(pi*x)*sin(pi*y)*sin(pi*z)
d_potential = 0

[time]
dt = 0.005
t_end = 0.05

[dimension]
d_max = 2
settle_fraction = 0.2
"""

BAD_COERCIVITY = """
[grid]
points = 3, 3, 3

[problem]
beta = -100
f = 0
d_potential = 0
"""


@pytest.fixture(scope="module")
def base_cfg():
    return parse_config(BASE)


class TestExecute:
    def test_simulate_ok(self, base_cfg):
        rec = execute("simulate", base_cfg, seed=0)
        assert rec.status == "ok" and rec.exit_code == EXIT_OK
        series = rec.outputs["series"]
        assert series[0]["time"] == 0.0
        assert series[-1]["time"] == pytest.approx(0.05)
        # decaying problem: norms shrink
        assert series[-1]["l2"] < series[0]["l2"]

    def test_bound_trivial_dimension(self, base_cfg):
        rec = execute("bound", base_cfg, seed=0)
        br = rec.outputs["bound_report"]
        assert rec.exit_code == EXIT_OK
        assert br["d_final"] == 1
        assert br["n_count"] == 0
        assert br["d_const"] >= 0.0
        assert rec.outputs["clr_diagnostics"]["negative_count"] == 0

    def test_bound_zero_reaction(self):
        cfg = parse_config(
            "[grid]\npoints = 3, 3, 3\n\n[problem]\nf = 0\nd_potential = 0\n"
        )
        rec = execute("bound", cfg, seed=0)
        assert rec.exit_code == EXIT_OK
        br = rec.outputs["bound_report"]
        assert br["d_final"] == 1
        assert br["d_const"] == 0.0
        assert br["s_radius"] == 0.0

    def test_spectrum_hypothesis_violation_exit(self):
        rec = execute("spectrum", parse_config(BAD_COERCIVITY), seed=0)
        assert rec.status == "hypothesis-violation"
        assert rec.exit_code == EXIT_HYPOTHESIS
        assert "coercive" in rec.error

    def test_dim_estimate_inconclusive_exit(self):
        cfg = parse_config(BASE + "\nmargin = 1e30\n")
        rec = execute("dim-estimate", cfg, seed=0)
        assert rec.status == "inconclusive"
        assert rec.exit_code == EXIT_INCONCLUSIVE
        assert rec.outputs["dimension"]["d_certified"] is None

    def test_verify_all_pass(self, base_cfg):
        rec = execute("verify", base_cfg, seed=0)
        assert rec.exit_code == EXIT_OK
        assert rec.outputs["all_passed"]
        names = {c["name"] for c in rec.outputs["checks"]}
        assert {
            "uniform_local_absorption",
            "pair_contraction_certificate",
            "subspace_compression",
            "kinetic_orthonormal_inequality",
            "equilibrium_radius",
            "dominating_potential_pointwise",
        } <= names

    def test_determinism_modulo_timestamps(self, base_cfg):
        for command in ("simulate", "dim-estimate", "bound"):
            rec1 = execute(command, base_cfg, seed=3).as_dict()
            rec2 = execute(command, base_cfg, seed=3).as_dict()
            for rec in (rec1, rec2):
                rec.pop("started_utc")
                rec.pop("finished_utc")
            assert json.dumps(rec1, sort_keys=True) == json.dumps(rec2, sort_keys=True)

    def test_random_ensemble_members(self):
        cfg = parse_config(BASE + "\nensemble_random = 2\nensemble_amplitude = 0.05\n")
        fields = cfg.ensemble_fields(__import__("numpy").random.default_rng(0))
        assert len(fields) == 3
        rec = execute("dim-estimate", cfg, seed=0)
        assert rec.outputs["dimension"]["ensemble_size"] == 3

    def test_bound_without_norm_source_is_config_error(self):
        cfg = parse_config(BASE.replace("d_potential = 0\n", ""))
        rec = execute("bound", cfg, seed=0)
        assert rec.status == "config-error"
        assert rec.exit_code == EXIT_USAGE

    def test_blow_up_maps_to_numerical_failure(self):
        from attractordim.errors import EXIT_NUMERICAL

        cfg = parse_config(
            """
[grid]
points = 3, 3, 3

[problem]
f = u**3
u0 = 60
growth_c = 6

[time]
dt = 0.5
t_end = 10
blowup_threshold = 1e6
"""
        )
        rec = execute("simulate", cfg, seed=0)
        assert rec.status == "numerical-failure"
        assert rec.exit_code == EXIT_NUMERICAL
        assert "blow-up" in rec.error

    def test_verify_failure_exit_on_bogus_constant(self):
        from attractordim.errors import EXIT_NUMERICAL

        # an absurdly small embedding constant breaks the absorption check
        cfg = parse_config(
            BASE
            + "\n[constants]\nm_b = 1e-6\nm_b_provenance = deliberately bogus\n"
        )
        rec = execute("verify", cfg, seed=0)
        assert rec.status == "numerical-failure"
        assert rec.exit_code == EXIT_NUMERICAL
        failed = [c for c in rec.outputs["checks"] if not c["passed"]]
        assert any(c["name"] == "uniform_local_absorption" for c in failed)


class TestMaterialize:
    def test_simulate_artifacts(self, base_cfg, tmp_path):
        rec = execute("simulate", base_cfg, seed=0)
        written = materialize(rec, tmp_path)
        names = {p.rsplit("/", 1)[-1] for p in written}
        assert {"run.json", "series.csv", "series.svg"} <= names
        run = json.loads((tmp_path / "run.json").read_text())
        assert run["command"] == "simulate"

    def test_field_snapshots_written(self, tmp_path):
        cfg = parse_config(BASE + "\n[output]\nsave_fields = true\n")
        rec = execute("simulate", cfg, seed=0)
        written = materialize(rec, tmp_path)
        flds = [p for p in written if p.endswith(".fld")]
        assert len(flds) == len(rec.outputs["series"])
        from attractordim.domain import read_field

        fld = read_field(flds[-1])
        assert fld.grid.shape == (3, 3, 3)

    def test_dim_artifacts(self, base_cfg, tmp_path):
        rec = execute("dim-estimate", base_cfg, seed=0)
        written = materialize(rec, tmp_path)
        names = {p.rsplit("/", 1)[-1] for p in written}
        assert {"run.json", "history.csv", "logvolume.svg", "criterion.svg"} <= names
        header = (tmp_path / "history.csv").read_text().splitlines()[0]
        assert header.startswith("time,log_volume_d1")
        assert "trace_sum_d1" in header


class TestReport:
    def test_single_record_row(self, base_cfg, tmp_path):
        rec = execute("bound", base_cfg, seed=0)
        rows = build_report([rec])
        assert len(rows) == 1
        assert rows[0]["d_final"] == 1
        written = materialize_report(rows, tmp_path)
        assert any(p.endswith("report.csv") for p in written)
        assert any(p.endswith("report.svg") for p in written)

    def test_merges_by_config_hash(self, base_cfg):
        rows = build_report([
            execute("bound", base_cfg, seed=0),
            execute("dim-estimate", base_cfg, seed=0),
        ])
        assert len(rows) == 1
        assert rows[0]["d_estimate"] == 1
        assert rows[0]["d_final"] == 1

    def test_incompatible_grids_flagged_not_fatal(self, base_cfg):
        other = parse_config(BASE.replace("points = 3, 3, 3", "points = 4, 4, 4"))
        rows = build_report([
            execute("bound", base_cfg, seed=0),
            execute("bound", other, seed=0),
        ])
        assert len(rows) == 2
        assert rows[0]["grid_compatible"] is True
        assert rows[1]["grid_compatible"] is False

    def test_empty_list_rejected(self):
        from attractordim.errors import ConfigError

        with pytest.raises(ConfigError):
            build_report([])

    def test_sweep_rows_monotone_in_reaction_slope(self):
        # growing the linear reaction slope can only raise the bound columns
        template = """
[grid]
x = 0, 1
y = 0, 1
z = 0, 3
points = 3, 3, 9

[problem]
f = {c}*u
growth_c = 0.001

[dimension]
set_h1 = 0
set_l52 = 0
set_l6 = 0
"""
        records = [
            execute("bound", parse_config(template.format(c=c)), seed=0)
            for c in (5.0, 21.0, 24.0)
        ]
        rows = build_report(records)
        finals = [r["d_final"] for r in rows]
        counts = [r["n_count"] for r in rows]
        assert finals == sorted(finals)
        assert counts == sorted(counts)
        assert counts[0] < counts[-1]


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


class TestService:
    def test_health(self, client):
        resp = client.get("/health")
        assert resp.status_code == 200
        assert resp.json()["status"] == "ok"

    def test_validate_ok(self, client):
        resp = client.post("/v1/validate", json={"config_text": BASE})
        body = resp.json()
        assert body["valid"] is True
        assert body["config_hash"]

    def test_validate_reports_errors(self, client):
        resp = client.post("/v1/validate", json={"config_text": "[grid]\npoints = 1,1,1\n"})
        body = resp.json()
        assert body["valid"] is False
        assert body["errors"]

    def test_run_simulate(self, client):
        resp = client.post("/v1/run/simulate", json={"config_text": BASE, "seed": 1})
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["outputs"]["series"]

    def test_run_config_error_payload(self, client):
        resp = client.post("/v1/run/bound", json={"config_text": "[grid]\n"})
        body = resp.json()
        assert body["status"] == "config-error"
        assert body["exit_code"] == EXIT_USAGE
        assert body["outputs"]["config_errors"]

    def test_unknown_command_404(self, client):
        resp = client.post("/v1/run/fly", json={"config_text": BASE})
        assert resp.status_code == 404

    def test_report_endpoint(self, client):
        run = client.post("/v1/run/bound", json={"config_text": BASE, "seed": 0}).json()
        resp = client.post("/v1/report", json={"records": [run]})
        assert resp.status_code == 200
        rows = resp.json()["rows"]
        assert rows[0]["d_final"] == 1

    def test_report_empty_400(self, client):
        resp = client.post("/v1/report", json={"records": []})
        assert resp.status_code == 400


class TestRemoteServer:
    def test_cli_against_live_server(self, tmp_path):
        import socket
        import threading
        import time

        import uvicorn

        from attractordim.cli import main

        with socket.socket() as sock:
            sock.bind(("127.0.0.1", 0))
            port = sock.getsockname()[1]
        server = uvicorn.Server(
            uvicorn.Config(create_app(), host="127.0.0.1", port=port,
                           log_level="error")
        )
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        try:
            deadline = time.time() + 15
            while not server.started:
                if time.time() > deadline:
                    pytest.fail("uvicorn did not start")
                time.sleep(0.05)
            cfg_path = tmp_path / "exp.cfg"
            cfg_path.write_text(BASE)
            out = tmp_path / "out"
            code = main([
                "simulate", "--config", str(cfg_path), "--out", str(out),
                "--server", f"http://127.0.0.1:{port}",
            ])
            assert code == 0
            assert (out / "series.csv").exists()
        finally:
            server.should_exit = True
            thread.join(timeout=10)


class TestCli:
    def test_simulate_roundtrip(self, tmp_path):
        from attractordim.cli import main

        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text(BASE)
        out = tmp_path / "out"
        code = main(["simulate", "--config", str(cfg_path), "--out", str(out),
                     "--seed", "2"])
        assert code == 0
        assert (out / "run.json").exists()
        assert (out / "series.csv").exists()

    def test_exit_code_hypothesis_violation(self, tmp_path):
        from attractordim.cli import main

        cfg_path = tmp_path / "bad.cfg"
        cfg_path.write_text(BAD_COERCIVITY)
        code = main(["spectrum", "--config", str(cfg_path), "--out",
                     str(tmp_path / "o")])
        assert code == EXIT_HYPOTHESIS

    def test_exit_code_inconclusive(self, tmp_path):
        from attractordim.cli import main

        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text(BASE + "\nmargin = 1e30\n")
        code = main(["dim-estimate", "--config", str(cfg_path), "--out",
                     str(tmp_path / "o")])
        assert code == EXIT_INCONCLUSIVE

    def test_exit_code_config_error(self, tmp_path):
        from attractordim.cli import main

        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text("[grid]\npoints = 1,1,1\n")
        code = main(["bound", "--config", str(cfg_path), "--out",
                     str(tmp_path / "o")])
        assert code == EXIT_USAGE

    def test_missing_config_file(self, tmp_path):
        from attractordim.cli import main

        code = main(["simulate", "--config", str(tmp_path / "absent.cfg")])
        assert code == EXIT_USAGE

    def test_report_subcommand(self, tmp_path):
        from attractordim.cli import main

        cfg_path = tmp_path / "exp.cfg"
        cfg_path.write_text(BASE)
        out1 = tmp_path / "o1"
        assert main(["bound", "--config", str(cfg_path), "--out", str(out1)]) == 0
        out2 = tmp_path / "rep"
        code = main(["report", "--records", str(out1 / "run.json"),
                     "--out", str(out2)])
        assert code == 0
        assert (out2 / "report.csv").exists()

    def test_full_workflow_on_shipped_config(self, tmp_path):
        # mirror the README workflow end to end on the shipped experiment
        from pathlib import Path

        from attractordim.cli import main

        cfg_path = Path(__file__).resolve().parents[1] / "configs" / "cubic_sink.cfg"
        assert cfg_path.exists()
        record_paths = []
        for command in ("simulate", "spectrum", "bound", "dim-estimate", "verify"):
            out = tmp_path / command
            code = main([command, "--config", str(cfg_path), "--out", str(out),
                         "--seed", "1"])
            assert code == 0, command
            record_paths.append(out / "run.json")
        out = tmp_path / "report"
        code = main(["report", "--records", *map(str, record_paths),
                     "--out", str(out)])
        assert code == 0
        rows = (out / "report.csv").read_text().splitlines()
        assert len(rows) == 2  # header + one merged row for the single config
