import json

import pytest

from rfbsde.cli import main, parse_config
from rfbsde.errors import ConfigError

BASE = """
seed = 3
[problem]
name = "heat-neumann"
[domain]
id = "interval"
[grid]
horizon = 0.5
steps = 50
delay = 0.1
[initial]
kind = "constant"
x = [0.25]
"""

OPS = """
[[operations]]
op = "evaluate_u"
samples = 2000
points = [[0.0, 0.25], [0.0, 0.5]]

[[operations]]
op = "exp_moment"
samples = 1000
q_list = [0.5, 1.0]

[[operations]]
op = "solve"
samples = 500

[[operations]]
op = "penalization_sweep"
samples = 300
n_list = [10, 1000]
"""


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_run_writes_report(tmp_path):
    cfg = _write(tmp_path, BASE + OPS)
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == 3
    for f in report["manifest"]:
        assert (out / f).stat().st_size > 0
    u = (out / "00_evaluate_u_u.csv").read_text().splitlines()
    assert u[0] == "# seed: 3" and u[2] == "t,x0,u,stderr,samples" and len(u) == 5
    assert any("n=1000" in w for w in report["warnings"])


def test_identical_runs_and_threads(tmp_path):
    cfg = _write(tmp_path, BASE + OPS)
    outs = []
    for i, threads in enumerate(("1", "1", "3")):
        out = tmp_path / f"o{i}"
        assert main(["run", str(cfg), "--out", str(out), "--threads", threads]) == 0
        outs.append(out)
    names = json.loads((outs[0] / "report.json").read_text())["manifest"]
    for name in list(names) + ["report.json"]:
        ref = (outs[0] / name).read_bytes()
        assert all((o / name).read_bytes() == ref for o in outs[1:])


def test_json_mirror(tmp_path):
    from rfbsde.cli import tomllib
    data = tomllib.loads(BASE + OPS)
    cfg = _write(tmp_path, json.dumps(data), "c.json")
    assert main(["run", str(cfg), "--out", str(tmp_path / "j")]) == 0


def test_bad_delay_exit_2(tmp_path, capsys):
    cfg = _write(tmp_path, BASE.replace("delay = 0.1", "delay = 0.013") + OPS)
    assert main(["run", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert "integer multiple" in capsys.readouterr().err


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = _write(tmp_path, BASE.replace("[domain]", "[domain]\nshape = 1") + OPS)
    assert main(["run", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert "shape" in capsys.readouterr().err


def test_missing_seed_and_file(tmp_path):
    with pytest.raises(ConfigError, match="seed"):
        parse_config({"grid": {"horizon": 1, "steps": 10, "delay": 0.1}})
    assert main(["run", str(tmp_path / "nope.toml")]) == 2
    csv_cfg = BASE.replace('kind = "constant"\nx = [0.25]', 'kind = "csv"\npath = "h.csv"')
    assert main(["run", str(_write(tmp_path, csv_cfg)), "--out", str(tmp_path / "x")]) == 2


def test_csv_initial(tmp_path):
    (tmp_path / "h.csv").write_text("time,x0\n0.0,0.2\n0.01,0.25\n0.02,0.3\n")
    text = BASE.replace('kind = "constant"\nx = [0.25]', 'kind = "csv"\npath = "h.csv"')
    text += '[[operations]]\nop = "simulate"\nsamples = 10\n'
    assert main(["run", str(_write(tmp_path, text)), "--out", str(tmp_path / "o")]) == 0


def test_numerical_failure_exit_3(tmp_path, capsys, monkeypatch):
    import rfbsde.cli as cli
    from rfbsde.errors import RegressionError

    def broken(*args, **kwargs):
        raise RegressionError("singular normal equations")

    monkeypatch.setattr(cli, "simulate_forward", broken)
    text = BASE + '[[operations]]\nop = "simulate"\nsamples = 5\n'
    rc = main(["run", str(_write(tmp_path, text)), "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "00_simulate" in capsys.readouterr().err


def test_validate(tmp_path, capsys):
    cfg = _write(tmp_path, BASE + OPS)
    assert main(["validate", str(cfg), "--out", str(tmp_path / "v")]) == 0
    delay = BASE.replace('"heat-neumann"', '"linear-delay"')
    assert main(["validate", str(_write(tmp_path, delay, "d.toml")), "--out",
                 str(tmp_path / "v2")]) == 1
    rep = json.loads((tmp_path / "v2" / "validate.json").read_text())
    assert rep["lipschitz"]["passed"] and not rep["h1_h2"]["pass_h1"]
