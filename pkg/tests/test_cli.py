import argparse
import json
import subprocess
import sys

import pytest

from fedledger import __version__
from fedledger.cli import EXIT_CODES, build_parser, envelope, fail_from_response, main


def write_config(tmp_path, data):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return str(path)


def tiny_config(tmp_path):
    return {
        "T": 1,
        "R": 1,
        "eta": 4,
        "rho": 20,
        "gamma": 8,
        "L": 2,
        "M": 2,
        "seeds": [1],
        "activity_p": 1.0,
        "anomalies": {"k_global": 2, "k_local": 2, "f_min": 2, "pool_size": 3},
        "dataset": {
            "kind": "synthetic",
            "synthetic": {
                "n_departments": 2,
                "rows_per_dept": 40,
                "n_categorical": 2,
                "n_numerical": 1,
            },
        },
        "out_dir": str(tmp_path / "runs"),
    }


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert capsys.readouterr().out.strip() == __version__


def test_missing_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


# --- override plumbing ------------------------------------------------------


def test_envelope_sugar_flags(tmp_path):
    config_path = write_config(tmp_path, {"T": 2})
    args = argparse.Namespace(
        config=config_path,
        overrides=["fl=fedprox"],
        out=str(tmp_path / "o"),
        scale=4,
        seeds="3, 5,7",
    )
    body = envelope(args)
    assert body["config"] == {"T": 2}
    assert body["overrides"] == [
        "fl=fedprox",
        f"out_dir={json.dumps(str(tmp_path / 'o'))}",
        "scale=4",
        "seeds=[3, 5, 7]",
    ]


def test_envelope_without_sugar():
    args = argparse.Namespace(config=None, overrides=[])
    assert envelope(args) == {"config": {}, "overrides": []}


def test_config_file_missing(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["validate-config", "--config", "/nonexistent.json"])
    assert exc.value.code == 1
    assert "error (config)" in capsys.readouterr().err


def test_config_file_bad_json(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(SystemExit) as exc:
        main(["validate-config", "--config", str(path)])
    assert exc.value.code == 1


def test_fail_from_response_maps_categories():
    class Fake:
        def __init__(self, body):
            self._body = body
            self.text = json.dumps(body)

        def json(self):
            return self._body

    assert fail_from_response(Fake({"category": "config", "message": "m"})) == 1
    assert fail_from_response(Fake({"category": "data", "message": "m"})) == 2
    assert fail_from_response(Fake({"category": "runtime", "message": "m"})) == 3
    assert fail_from_response(Fake({"category": "surprise", "message": "m"})) == 3
    assert EXIT_CODES == {"config": 1, "data": 2, "runtime": 3}


# --- subcommands against the in-process service -----------------------------


def test_validate_config_prints_canonical(capsys):
    code = main(["validate-config", "--set", "T=3", "--set", "fl=fedprox"])
    assert code == 0
    out, err = capsys.readouterr()
    canonical = json.loads(out)
    assert canonical["T"] == 3
    assert canonical["fl"] == "fedprox"
    assert "run id:" in err


def test_validate_config_bad_value(capsys):
    code = main(["validate-config", "--set", "scenario=9"])
    assert code == 1
    assert "error (config" in capsys.readouterr().err


def test_run_subcommand(tmp_path, capsys):
    config_path = write_config(tmp_path, tiny_config(tmp_path))
    code = main(["run", "--config", config_path])
    assert code == 0
    out = capsys.readouterr().out
    run_dir = out.strip().split("\n")[-1]
    assert "done" in out
    assert run_dir.startswith(str(tmp_path / "runs"))
    for name in ("metrics.csv", "summary.json", "config.json"):
        assert list((tmp_path / "runs").glob(f"*/{name}"))


def test_run_out_flag_overrides_directory(tmp_path, capsys):
    config_path = write_config(tmp_path, tiny_config(tmp_path))
    out_dir = tmp_path / "elsewhere"
    code = main(["run", "--config", config_path, "--out", str(out_dir)])
    assert code == 0
    assert any(out_dir.iterdir())


def test_run_invalid_config_exit_code(tmp_path, capsys):
    config_path = write_config(tmp_path, {"fl": "gossip"})
    code = main(["run", "--config", config_path])
    assert code == 1
    assert "error (config" in capsys.readouterr().err


def test_synth_data_and_encode(tmp_path, capsys):
    csv_path = tmp_path / "data.csv"
    code = main([
        "synth-data", "--out", str(csv_path), "--departments", "2",
        "--rows", "25", "--cat", "2", "--num", "1", "--seed", "3",
    ])
    assert code == 0
    assert "50 rows" in capsys.readouterr().out
    assert csv_path.is_file()

    cache = tmp_path / "data.flds"
    code = main([
        "encode", "--kind", "synthetic", "--path", str(csv_path),
        "--out", str(cache), "--pool-size", "2",
    ])
    assert code == 0
    assert "encoded 50 rows" in capsys.readouterr().out
    assert cache.is_file()


def test_encode_missing_input_exit_code(tmp_path, capsys):
    code = main([
        "encode", "--kind", "philadelphia",
        "--path", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o"),
    ])
    assert code == 2
    assert "error (data)" in capsys.readouterr().err


def test_replot_subcommand(tmp_path, capsys):
    config_path = write_config(tmp_path, tiny_config(tmp_path))
    assert main(["run", "--config", config_path]) == 0
    run_dir = capsys.readouterr().out.strip().split("\n")[-1]
    out_dir = tmp_path / "replotted"
    code = main([
        "replot", "--metrics", f"{run_dir}/metrics.csv", "--out", str(out_dir),
    ])
    assert code == 0
    charts = sorted(p.name for p in out_dir.iterdir())
    assert charts == ["ap_vs_experience.svg", "dept_error_vs_experience.svg"]


def test_parser_knows_all_handlers():
    parser = build_parser()
    actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    names = set(actions[0].choices)
    assert names == {"run", "validate-config", "synth-data", "encode", "replot", "serve"}


def test_console_module_smoke():
    proc = subprocess.run(
        [sys.executable, "-m", "fedledger.cli", "--version"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.strip() == __version__
