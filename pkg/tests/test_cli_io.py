import json
from pathlib import Path

import numpy as np
import pytest

from stiffbl import cli
from stiffbl.config import (ConfigError, build_plan, default_config,
                            parse_config)
from stiffbl.io import emit_outputs, read_field, read_series, verify_outputs
from stiffbl.sweep import run_sweep

FAST_SWEEP = """
[grid]
nx = 48

[data]
horizon = 0.3

[solver]
snapshot_times = 0.01, 0.1, 0.2, 0.3

[sweep]
ladder = 4, 8
"""

ZERO_SWEEP = """
[grid]
nx = 48

[data]
horizon = 0.3
u0_kind = zero
f_left = 0.0
f_right = 0.0
flux_floor = 0.0

[solver]
snapshot_times = 0.01, 0.1, 0.2, 0.3

[sweep]
ladder = 4, 8
"""


def test_empty_document_materializes_defaults():
    cfg = parse_config("")
    assert cfg == default_config()
    assert cfg.get("stiff", "gamma") == 8.0
    assert cfg.get("sweep", "ladder") == (4.0, 8.0, 16.0, 32.0, 64.0, 128.0)
    assert cfg.get("meta", "config_version") == 1


def test_echo_closure_property():
    for text in ("", FAST_SWEEP, "[stiff]\ngamma = 12.5\nalpha = 3.0\n"):
        cfg = parse_config(text)
        assert parse_config(cfg.to_ini()) == cfg


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("[grid]\nfoo = 1\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config("[turbo]\nx = 1\n")


def test_alpha_must_exceed_one():
    with pytest.raises(ConfigError, match="strictly greater than 1"):
        parse_config("[stiff]\nalpha = 1.0\n")
    with pytest.raises(ConfigError, match="strictly greater than 1"):
        parse_config("[stiff]\ngamma = 1.0\n")


def test_p_m_sign_carries_hypothesis_tag():
    with pytest.raises(ConfigError, match="hypothesis A"):
        parse_config("[model]\np_m = -1\n")


def test_parse_error_reported():
    with pytest.raises(ConfigError, match="parse error"):
        parse_config("[grid\nnx = 3\n")
    with pytest.raises(ConfigError, match=r"\[grid\] nx"):
        parse_config("[grid]\nnx = banana\n")


def test_snapshot_times_must_fit_horizon():
    with pytest.raises(ConfigError, match="snapshot_times"):
        parse_config("[data]\nhorizon = 0.5\n")  # default times reach 1.0


@pytest.fixture(scope="module")
def emitted(tmp_path_factory):
    cfg = parse_config(FAST_SWEEP)
    plan = build_plan(cfg)
    report = run_sweep(plan)
    out = tmp_path_factory.mktemp("out")
    manifest = emit_outputs(report, plan.grid, cfg, out)
    return cfg, plan, report, out, manifest


def test_member_directories_and_manifest(emitted):
    _, _, _, out, manifest = emitted
    member_dirs = sorted(d.name for d in out.iterdir() if d.name.startswith("member_"))
    assert member_dirs == ["member_4", "member_8"]
    on_disk = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file())
    assert sorted(manifest) == on_disk
    assert not (out / ".partial").exists()


def test_summary_json_contents(emitted):
    _, _, report, out, _ = emitted
    summary = json.loads((out / "summary.json").read_text())
    assert summary["gammas"] == [4.0, 8.0]
    assert summary["all_pass"] == report.all_pass
    assert "4" in summary["members"] and "8" in summary["members"]
    assert len(summary["cauchy"]["u"]) == 1


def test_series_round_trip_bit_identical(emitted):
    _, _, report, out, _ = emitted
    series = read_series(out / "member_4" / "series.csv")
    stored = report.members[0].report.series
    for col, arr in stored.items():
        back = series[col]
        same = (back == arr) | (np.isnan(back) & np.isnan(arr))
        assert np.all(same)
    u, p = read_field(out / "member_4" / "field_0.csv", 1)
    assert np.array_equal(u, report.members[0].trajectory.snapshots[0].u)
    assert np.array_equal(p, u ** 4.0)


def test_verify_outputs_pass_and_detect_tamper(emitted, tmp_path):
    _, _, _, out, _ = emitted
    result = verify_outputs(out)
    assert result["ok"], result["mismatches"][:3]
    assert result["checked"] > 0

    # tamper with one stored diagnostic value
    import shutil
    broken = tmp_path / "broken"
    shutil.copytree(out, broken)
    spath = broken / "member_4" / "series.csv"
    lines = spath.read_text().splitlines()
    cells = lines[2].split(",")
    cells[1] = "0.123456"
    lines[2] = ",".join(cells)
    spath.write_text("\n".join(lines) + "\n")
    result = verify_outputs(broken)
    assert not result["ok"]


def test_verify_rejects_partial_marker(emitted, tmp_path):
    import shutil
    _, _, _, out, _ = emitted
    partial = tmp_path / "partial"
    shutil.copytree(out, partial)
    (partial / ".partial").write_text("")
    assert not verify_outputs(partial)["ok"]


def test_zero_run_series_all_zero(tmp_path):
    cfg = parse_config(ZERO_SWEEP)
    plan = build_plan(cfg)
    report = run_sweep(plan)
    out = tmp_path / "zero"
    emit_outputs(report, plan.grid, cfg, out)
    series = read_series(out / "member_4" / "series.csv")
    for col, arr in series.items():
        if col == "time":
            continue
        vals = arr[~np.isnan(arr)]
        assert np.all(vals == 0.0), col


def test_cli_run_and_verify_exit_codes(tmp_path):
    cfg_path = tmp_path / "cfg.ini"
    cfg_path.write_text(FAST_SWEEP)
    out = tmp_path / "run_out"
    assert cli.main(["run", "--config", str(cfg_path), "--out", str(out),
                     "--gamma", "6"]) == 0
    assert (out / "member_6").is_dir()
    assert cli.main(["verify", "--out", str(out)]) == 0
    # corrupt and re-verify
    spath = out / "member_6" / "series.csv"
    lines = spath.read_text().splitlines()
    cells = lines[1].split(",")
    cells[2] = "42"
    lines[1] = ",".join(cells)
    spath.write_text("\n".join(lines) + "\n")
    assert cli.main(["verify", "--out", str(out)]) == 2


def test_cli_operational_error_exit_code(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[stiff]\nalpha = 0.5\n")
    assert cli.main(["run", "--config", str(bad),
                     "--out", str(tmp_path / "x")]) == 1


def test_cli_oracle_check():
    assert cli.main(["oracle-check"]) == 0


def test_build_plan_2d_config():
    cfg = parse_config("""
[grid]
dim = 2
nx = 48
ny = 48

[data]
horizon = 0.05
f_left = 0.0
f_right = 0.0
flux_floor = 0.0

[solver]
snapshot_times = 0.05

[sweep]
ladder = 4, 8
""")
    plan = build_plan(cfg)
    assert plan.grid.dim == 2
    assert plan.data.u0.shape == (48 * 48,)
    assert plan.tests.centers.shape[1] == 2
    fb = plan.data.boundary_flux(0.0, plan.grid.faces.bcentroid)
    assert fb.shape == (plan.grid.faces.n_boundary,)


def test_plots_are_tidy_long_format(emitted):
    _, _, _, out, _ = emitted
    for name in ("summary_long.csv", "cauchy.csv"):
        header = (out / "plots" / name).read_text().splitlines()[0]
        assert header == "gamma,quantity,value"


def test_cli_parallel_sweep_matches_sequential(tmp_path):
    # the truncated ladder fails the cross-gamma ratio verdicts by design
    # (exit 2 = ran with findings); parallel and sequential must agree bit
    # for bit on everything
    cfg_path = tmp_path / "cfg.ini"
    cfg_path.write_text(FAST_SWEEP)
    out_seq = tmp_path / "seq"
    out_par = tmp_path / "par"
    code_seq = cli.main(["sweep", "--config", str(cfg_path), "--out", str(out_seq)])
    code_par = cli.main(["sweep", "--config", str(cfg_path), "--out", str(out_par),
                         "--parallel", "2"])
    assert code_seq in (0, 2) and code_par == code_seq
    s = json.loads((out_seq / "summary.json").read_text())
    p = json.loads((out_par / "summary.json").read_text())
    assert s["members"] == p["members"]
    assert s["cauchy"] == p["cauchy"]
    assert s["verdicts"] == p["verdicts"]
