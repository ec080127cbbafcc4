"""Command-line entry points, exit codes, and report files."""

import hashlib
import json
from pathlib import Path

import pytest

from qkdcert.cli import (
    EXIT_CONFIG,
    EXIT_DIM_CAP,
    EXIT_INVARIANT,
    EXIT_OK,
    main,
)
from qkdcert.fixtures import SCHEMA_VERSION

REPO_FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def write(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def scenario_payload(**overrides):
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "scenario",
        "name": "cli_case",
        "seed": 5,
        "model": {"family": "iid_detector", "params": {"mu_dark": 0.02}},
        "key_layout": 1,
        "key_lengths": [1],
        "robust": {"mu_dark": [0.0, 0.05]},
        "eps_cert": 0.01,
        "stipulated_eps": [0.05],
    }
    payload.update(overrides)
    return payload


def read_report(out_dir, name):
    return json.loads((Path(out_dir) / name).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# verify


def test_verify_counterexample_fixture(tmp_path, capsys):
    cfg = str(REPO_FIXTURES / "counterexample_l4.cfg")
    out = tmp_path / "out"
    code = main(["verify", "--config", cfg, "--seed", "1", "--out", str(out)])
    assert code == EXIT_OK
    assert "wrote" in capsys.readouterr().out
    report = read_report(out, "verify_usd_counterexample_l4_s0.json")
    assert report["command"] == "verify"
    assert report["config_sha256"] == hashlib.sha256(
        Path(cfg).read_bytes()
    ).hexdigest()
    assert report["result"]["conditional_distance"] == 0.9375
    assert report["result"]["holds_sum"] and report["result"]["holds_max"]
    assert "seconds" in report["timing"]


def test_verify_writes_to_stdout_without_out(tmp_path, capsys):
    cfg = write(tmp_path, scenario_payload())
    code = main(["verify", "--config", cfg])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["seed"] == 5  # taken from the config
    assert report["result"]["holds_sum"]


def test_verify_refused_stipulation_exits_3(tmp_path):
    cfg = str(REPO_FIXTURES / "bad_stipulated.cfg")
    assert main(["verify", "--config", cfg, "--seed", "1"]) == EXIT_INVARIANT


def test_verify_dimension_cap_exits_4(tmp_path):
    payload = scenario_payload(
        key_layout=4,
        key_lengths=[4, 4],
        stipulated_eps=[0.05, 0.05],
    )
    cfg = write(tmp_path, payload)
    assert main(["verify", "--config", cfg]) == EXIT_DIM_CAP


def test_verify_adaptive_flag_mismatch_exits_2(tmp_path):
    cfg = write(tmp_path, scenario_payload())
    assert main(["verify", "--config", cfg, "--adaptive"]) == EXIT_CONFIG


def test_verify_adaptive_fixture(tmp_path):
    cfg = str(REPO_FIXTURES / "adaptive_degrading.cfg")
    out = tmp_path / "out"
    code = main(["verify", "--config", cfg, "--seed", "2", "--adaptive",
                 "--out", str(out)])
    assert code == EXIT_OK
    report = read_report(out, "verify_adaptive_degrading.json")
    assert report["result"]["holds_sum"]
    assert report["result"]["coverage_defect"] <= report["result"]["eps_cert"]


def test_verify_bad_schema_exits_2(tmp_path):
    cfg = write(tmp_path, scenario_payload(schema_version=7))
    assert main(["verify", "--config", cfg]) == EXIT_CONFIG
    cfg2 = write(tmp_path, scenario_payload(surprise=1), name="k.json")
    assert main(["verify", "--config", cfg2]) == EXIT_CONFIG


def test_verify_without_any_seed_exits_2(tmp_path):
    payload = scenario_payload()
    del payload["seed"]
    cfg = write(tmp_path, payload)
    assert main(["verify", "--config", cfg]) == EXIT_CONFIG


# ---------------------------------------------------------------------------
# certify


def test_certify_device_config(tmp_path, capsys):
    cfg = str(REPO_FIXTURES / "device_cert.cfg")
    out = tmp_path / "out"
    code = main(["certify", "--config", cfg, "--seed", "9", "--out", str(out)])
    assert code == EXIT_OK
    report = read_report(out, "certify_detector_bench_cert.json")
    result = report["result"]
    assert result["rule"] == "containment"
    assert set(result["intervals"]) == {"mu_dark", "mu_trojan"}
    assert 0.0 <= result["approval_probability_exact"] <= 1.0
    for name, ci in result["intervals"].items():
        assert ci["low"] <= result["observed"][name] <= ci["high"]


def test_certify_rejects_scenario_config(tmp_path):
    cfg = write(tmp_path, scenario_payload())
    assert main(["certify", "--config", cfg, "--seed", "1"]) == EXIT_CONFIG


def test_certify_is_deterministic(tmp_path):
    cfg = str(REPO_FIXTURES / "device_cert.cfg")
    out1, out2 = tmp_path / "a", tmp_path / "b"
    main(["certify", "--config", cfg, "--seed", "9", "--out", str(out1)])
    main(["certify", "--config", cfg, "--seed", "9", "--out", str(out2)])
    r1 = read_report(out1, "certify_detector_bench_cert.json")
    r2 = read_report(out2, "certify_detector_bench_cert.json")
    r1.pop("timing"), r2.pop("timing")
    assert r1 == r2


# ---------------------------------------------------------------------------
# audit


def test_audit_brackets_instances(tmp_path):
    cfg = write(tmp_path, scenario_payload())
    out = tmp_path / "out"
    code = main(["audit", "--config", cfg, "--samples", "50", "--out", str(out)])
    assert code == EXIT_OK
    report = read_report(out, "audit_cli_case.json")
    (row,) = report["result"]["instances"]
    assert row["classical"]
    assert row["exact"] == pytest.approx(0.02, abs=1e-12)
    assert row["lower"] <= row["exact"] + 1e-9
    assert row["exact"] <= row["upper"] + 1e-6
    assert row["bracket_ok"]


def test_audit_rejects_adaptive_config():
    cfg = str(REPO_FIXTURES / "adaptive_degrading.cfg")
    assert main(["audit", "--config", cfg, "--seed", "1"]) == EXIT_CONFIG


# ---------------------------------------------------------------------------
# suite


def test_suite_requires_seed():
    with pytest.raises(SystemExit) as err:
        main(["suite"])
    assert err.value.code == 2  # argparse's own exit for missing --seed


def test_suite_tiny_reports_are_reproducible(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["suite", "--seed", "11", "--sizes", "tiny",
                 "--out", str(out1)]) == EXIT_OK
    assert main(["suite", "--seed", "11", "--sizes", "tiny",
                 "--out", str(out2)]) == EXIT_OK
    rep1 = read_report(out1, "suite_report.json")
    rep2 = read_report(out2, "suite_report.json")
    rep1.pop("timing"), rep2.pop("timing")
    assert rep1 == rep2
    assert rep1["result"]["ok"]
    csv1 = (out1 / "suite_scenarios.csv").read_bytes()
    csv2 = (out2 / "suite_scenarios.csv").read_bytes()
    assert csv1 == csv2
    header = csv1.decode().splitlines()[0]
    assert header.startswith("name,family,attack,engine")


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as err:
        main(["transmogrify"])
    assert err.value.code == 2
