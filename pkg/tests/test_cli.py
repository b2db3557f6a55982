import csv
import json
import shutil
import subprocess

import numpy as np
import pytest

from mwtl.cli import CHECK_ORDER, ConfigError, RunConfig, main, run

SMALL = {"grid": {"n": 1, "L": 6}, "corpus": {"size": 3, "band": [4, 12]},
         "profile": {"jmin": 2, "jmax": 4}}


def cfg_file(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def test_calderon_only_summary(tmp_path):
    out = tmp_path / "out"
    code = main(["run", "--config", cfg_file(tmp_path, {"checks": ["calderon"]}), "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert list(summary) == ["calderon"]
    assert summary["calderon"]["pass"] is True
    assert summary["calderon"]["residual"] < 1e-8
    rows = list(csv.DictReader((out / "calderon.csv").open()))
    assert len(rows) == 10 and list(rows[0]) == ["member_id", "residual"]


def test_identity_full_run_passes(tmp_path):
    out = tmp_path / "full"
    summary = run(dict(SMALL, m=2), out=out)
    assert list(summary) == list(CHECK_ORDER)
    assert all(v["pass"] for v in summary.values())
    agg = json.loads((out / "equiv.json").read_text())
    assert {a["pair"] for a in agg} >= {"star/F", "square/F", "gstar/F", "F_AQ/F"}
    # identity weight, p = 2: the A_Q and plain variants coincide
    spread = {a["pair"]: a["spread"] for a in agg}
    assert spread["F_AQ/F"] == pytest.approx(1.0, abs=1e-9)
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["beta"] == pytest.approx(1.0)
    assert resolved["a"] == pytest.approx(1 + 0.5 + 1) and resolved["lam"] == pytest.approx(2.0)
    assert resolved["flags"] == {"a_valid": True, "lam_valid": True}
    assert resolved["multiplier"]["ell"] == 3
    for name in ("apchar", "doubling", "reducing", "norms", "equiv", "jcf", "fs", "c38",
                 "hormander", "multiplier"):
        assert (out / f"{name}.csv").exists(), name


def test_seeded_runs_are_byte_identical(tmp_path):
    cfg = dict(SMALL, weight={"kind": "diagonal_power", "exponents": [0.5, -0.3], "center": [0.25]},
               p=1.5, checks=["reduce", "norms", "equiv", "multiplier"])
    a, b = tmp_path / "a", tmp_path / "b"
    run(cfg, seed=5, out=a)
    run(cfg, seed=5, out=b)
    for f in sorted(p.name for p in a.iterdir()):
        if f == "config.resolved.json":
            ra = json.loads((a / f).read_text())
            rb = json.loads((b / f).read_text())
            assert ra.pop("out") != rb.pop("out")
            assert ra == rb
        else:
            assert (a / f).read_bytes() == (b / f).read_bytes(), f
    run(cfg, seed=6, out=tmp_path / "c")
    assert (a / "norms.csv").read_bytes() != (tmp_path / "c" / "norms.csv").read_bytes()


def test_dependency_order_ignores_listing_order(tmp_path):
    summary = run(dict(SMALL, checks=["equiv", "calderon", "apchar"]), out=tmp_path)
    assert list(summary) == ["apchar", "calderon", "equiv"]


@pytest.mark.parametrize("obj,field", [
    ({"gridd": {}}, "gridd"),
    ({"grid": {"n": 3, "L": 6}}, "grid"),
    ({"grid": {"n": 1, "L": 6, "extra": 1}}, "grid.extra"),
    ({"m": 0}, "m"),
    ({"p": -1.0}, "p"),
    ({"weight": {"kind": "wobbly"}}, "weight"),
    ({"profile": {"c1": 0.5, "c2": 2.0, "jmin": 2, "jmax": 9}}, "profile"),
    ({"reducing": {"method": "qr"}}, "reducing.method"),
    ({"corpus": {"size": 0}}, "corpus.size"),
    ({"corpus": {"band": [5, 2]}}, "corpus.band"),
    ({"checks": ["calderon", "bogus"]}, "checks"),
    ({"multiplier": {"kind": "laplace"}}, "multiplier"),
])
def test_config_errors_name_the_field(tmp_path, capsys, obj, field):
    obj = dict(obj)
    obj.setdefault("checks", ["multiplier"] if "multiplier" in obj else ["calderon"])
    code = main(["run", "--config", cfg_file(tmp_path, obj), "--out", str(tmp_path / "o")])
    assert code == 2
    assert f"'{field}" in capsys.readouterr().err


def test_config_error_type():
    with pytest.raises(ConfigError, match="'grid'"):
        RunConfig.from_dict({"grid": {"n": 1, "L": 1}})
    with pytest.raises(ConfigError, match="seed"):
        RunConfig.from_dict({}, seed=-1)
    with pytest.raises(ConfigError):
        RunConfig.from_dict([])


def test_unreadable_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2


def test_threshold_violation_exits_nonzero(tmp_path, capsys):
    cfg = {"checks": ["calderon", "fs"], "thresholds": {"calderon": 0.0}}
    code = main(["run", "--config", cfg_file(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code == 1
    captured = capsys.readouterr()
    assert "failing checks: calderon" in captured.err
    assert "fs: pass" in captured.out


def test_subcommands_map_to_checks(tmp_path, capsys):
    cfg = cfg_file(tmp_path, SMALL)
    for cmd, expect in (("apchar", ["apchar"]), ("reduce", ["reduce"]), ("norms", ["norms"]),
                        ("equiv", ["equiv"]), ("multiplier", ["hormander", "multiplier"])):
        out = tmp_path / cmd
        assert main([cmd, "--config", cfg, "--out", str(out)]) == 0
        assert list(json.loads((out / "summary.json").read_text())) == expect
    out = tmp_path / "chk"
    capsys.readouterr()
    assert main(["check", "fs", "jcf", "--config", cfg, "--out", str(out)]) == 0
    assert set(json.loads((out / "summary.json").read_text())) == {"jcf", "fs"}
    assert capsys.readouterr().out.split() == ["jcf:", "pass", "fs:", "pass"]


def test_gen_weight(tmp_path, capsys):
    cfg = cfg_file(tmp_path, {"grid": {"n": 1, "L": 4}, "m": 2,
                              "weight": {"kind": "rotating", "exponents": [0.5, -0.3],
                                         "center": [0.25], "rate": 1.0}})
    assert main(["gen-weight", "--config", cfg, "--out", str(tmp_path / "w")]) == 0
    rows = list(csv.DictReader((tmp_path / "w" / "weight.csv").open()))
    assert list(rows[0]) == ["sample_index", "row", "col", "re", "im"]
    assert len(rows) == 16 * 4
    M = np.zeros((16, 2, 2))
    for r in rows:
        M[int(r["sample_index"]), int(r["row"]), int(r["col"])] = float(r["re"])
    assert np.allclose(M, np.swapaxes(M, 1, 2))
    spec = json.loads((tmp_path / "w" / "weight_spec.json").read_text())
    assert spec["kind"] == "rotating"


def test_seed_argument_validation(capsys):
    with pytest.raises(SystemExit):
        main(["run", "--seed", "-3"])
    with pytest.raises(SystemExit):
        main(["run", "--seed", str(2 ** 64)])


def test_large_seed_accepted(tmp_path):
    summary = run(dict(SMALL, checks=["reduce"], p=1.5), seed=2 ** 64 - 1, out=tmp_path)
    assert summary["reduce"]["pass"]


@pytest.mark.skipif(shutil.which("mwtl") is None, reason="console script not installed")
def test_console_script(tmp_path):
    cfg = cfg_file(tmp_path, {"checks": ["calderon"]})
    res = subprocess.run(["mwtl", "run", "--config", cfg, "--out", str(tmp_path / "o")],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "calderon: pass" in res.stdout
