"""The nxs command line: run, validate, bench, train, plot."""
import numpy as np
import pytest

import nxs.cli as cli
from nxs.lda import model_load

GOOD = """\
[pipeline]
loop_period = 0.01

[node.source]
kind = "Generator"
mode = "random"
channels = 2
fs = 250.0
seed = 5

[node.square]
kind = "ApplyFunction"
input = "source"
expr = "x^2"
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def parse_kv(out):
    pairs = {}
    for line in out.strip().splitlines():
        key, _, value = line.partition("=")
        pairs[key] = value
    return pairs


def test_run_accelerated(tmp_path, capsys):
    path = write(tmp_path, "p.toml", GOOD)
    code = cli.main(["run", path, "--steps", "50", "--accelerated"])
    out = parse_kv(capsys.readouterr().out)
    assert code == 0
    assert out["steps"] == "50"
    assert int(out["counter.source.out.samples"]) >= 100  # 50 steps at 250 Hz
    assert "mean_step_ms" in out and "overrun_rate" in out
    assert float(out["elapsed_wall_s"]) < 5.0


def test_run_missing_file(tmp_path, capsys):
    code = cli.main(["run", str(tmp_path / "nope.toml")])
    assert code == 2
    assert "cannot read" in capsys.readouterr().err


def test_run_unknown_kind_suggests_a_fix(tmp_path, capsys):
    path = write(tmp_path, "p.toml", GOOD.replace('"ApplyFunction"', '"ApplyFonction"'))
    code = cli.main(["run", path])
    err = capsys.readouterr().err
    assert code == 2
    assert "ApplyFunction" in err


def test_run_empty_pipeline(tmp_path, capsys):
    path = write(tmp_path, "p.toml", "[pipeline]\nloop_period = 0.01\n")
    assert cli.main(["run", path]) == 2
    assert "no nodes" in capsys.readouterr().err


def test_run_invalid_graph_exits_three(tmp_path, capsys):
    dangling = GOOD + """
[node.band]
kind = "ButterFilter"
lowcut = 8.0
highcut = 12.0
"""
    path = write(tmp_path, "p.toml", dangling)  # band has no input
    code = cli.main(["run", path])
    out = parse_kv(capsys.readouterr().out)
    assert code == 3
    assert int(out["errors"]) >= 1
    assert "DanglingInput" in out["error.1"]


def test_run_construction_error_exits_three(tmp_path, capsys):
    bad = GOOD + """
[node.band]
kind = "ButterFilter"
input = "square"
lowcut = 30.0
highcut = 12.0
"""
    path = write(tmp_path, "p.toml", bad)      # reversed band edges
    code = cli.main(["run", path])
    assert code == 3
    assert "construction failed" in capsys.readouterr().err


def test_run_node_failure_exits_four(tmp_path, capsys):
    bad = GOOD.replace('"x^2"', '"sqrt(x - 100)"')
    path = write(tmp_path, "p.toml", bad)
    code = cli.main(["run", path, "--steps", "5", "--accelerated"])
    captured = capsys.readouterr()
    assert code == 4
    assert "square" in captured.err
    assert "steps=" in captured.out            # the report still comes out


def test_validate_reports_and_exits(tmp_path, capsys):
    good = write(tmp_path, "good.toml", GOOD)
    assert cli.main(["validate", good]) == 0
    out = parse_kv(capsys.readouterr().out)
    assert out["valid"] == "true"
    assert out["errors"] == "0"

    bad = write(tmp_path, "bad.toml", GOOD + """
[node.band]
kind = "ButterFilter"
lowcut = 8.0
highcut = 12.0
""")
    assert cli.main(["validate", bad]) == 3
    out = parse_kv(capsys.readouterr().out)
    assert out["valid"] == "false"
    assert int(out["errors"]) == 1


def test_bench_zero_duration(capsys):
    assert cli.main(["bench", "--duration", "0"]) == 0
    out = parse_kv(capsys.readouterr().out)
    assert out["steps"] == "0"
    assert "note" in out


def test_bench_reference_pipeline(capsys):
    assert cli.main(["bench", "--duration", "0.3"]) == 0
    out = parse_kv(capsys.readouterr().out)
    for key in ("steps", "elapsed_wall_s", "mean_step_ms", "p95_step_ms",
                "max_step_ms", "overrun_rate", "samples_per_s"):
        assert key in out
    assert int(out["steps"]) >= 20
    assert float(out["samples_per_s"]) > 0


def feature_csv(tmp_path, with_blank=True):
    lines = ["time,f1,f2,label"]
    rows = [(-1.2, 0.1, "left"), (-0.9, -0.2, "left"), (-1.1, 0.3, "left"),
            (1.0, 0.2, "right"), (1.3, -0.1, "right"), (0.8, 0.0, "right")]
    for i, (x, y, lbl) in enumerate(rows):
        lines.append(f"{i * 0.5},{x},{y},{lbl}")
    if with_blank:
        lines.append("9.9,0.0,0.0,")           # unlabeled, must be skipped
    return write(tmp_path, "features.csv", "\n".join(lines) + "\n")


def test_train_fits_and_saves(tmp_path, capsys):
    csv = feature_csv(tmp_path)
    out_file = str(tmp_path / "model.json")
    assert cli.main(["train", csv, "--out", out_file]) == 0
    out = parse_kv(capsys.readouterr().out)
    assert out["rows"] == "6"
    assert out["classes"] == "left,right"
    assert float(out["accuracy"]) >= 0.99
    model = model_load(out_file)
    assert model.labels == ("left", "right")
    assert model.feature_order == ("f1", "f2")


def test_train_numeric_label_column(tmp_path, capsys):
    lines = ["time,f1,f2,cls"]
    for i in range(8):
        side = 1 if i % 2 else 2
        lines.append(f"{i * 0.5},{(-1.0 if side == 1 else 1.0) + i * 0.01},0.5,{side}")
    csv = write(tmp_path, "coded.csv", "\n".join(lines) + "\n")
    out_file = str(tmp_path / "model.json")
    assert cli.main(["train", csv, "--label-column", "cls", "--out", out_file]) == 0
    out = parse_kv(capsys.readouterr().out)
    assert set(out["classes"].split(",")) == {"1", "2"}
    assert model_load(out_file).dim == 2        # cls column removed from features


def test_train_error_paths(tmp_path, capsys):
    csv = feature_csv(tmp_path)
    assert cli.main(["train", csv, "--label-column", "nope"]) == 2
    assert "nope" in capsys.readouterr().err

    assert cli.main(["train", str(tmp_path / "missing.csv")]) == 2
    capsys.readouterr()

    single = write(tmp_path, "single.csv",
                   "time,f1,label\n0.0,1.0,only\n0.5,2.0,only\n")
    assert cli.main(["train", single]) == 3     # one class cannot be fit
    capsys.readouterr()

    blank = write(tmp_path, "blank.csv", "time,f1,label\n0.0,1.0,\n")
    assert cli.main(["train", blank]) == 2
    assert "no labeled rows" in capsys.readouterr().err


def signal_csv(tmp_path):
    times = np.arange(50) / 50.0
    lines = ["time,ch1,ch2"]
    for i, t in enumerate(times):
        lines.append(f"{t},{np.sin(6.28 * t):.6f},{i * 0.1:.6f}")
    return write(tmp_path, "signal.csv", "\n".join(lines) + "\n")


def test_plot_renders_svg(tmp_path, capsys):
    csv = signal_csv(tmp_path)
    out_file = tmp_path / "plot.svg"
    assert cli.main(["plot", csv, "--out", str(out_file)]) == 0
    out = parse_kv(capsys.readouterr().out)
    assert out["channels"] == "ch1,ch2"
    assert out["points"] == "50"
    svg = out_file.read_text()
    assert svg.startswith("<svg")
    assert svg.count("<polyline") == 2
    assert "time (s)" in svg and "value" in svg
    assert ">ch1<" in svg and ">ch2<" in svg    # legend entries


def test_plot_channel_selection(tmp_path, capsys):
    csv = signal_csv(tmp_path)
    out_file = tmp_path / "one.svg"
    assert cli.main(["plot", csv, "--out", str(out_file),
                     "--channels", "ch2"]) == 0
    capsys.readouterr()
    assert out_file.read_text().count("<polyline") == 1

    assert cli.main(["plot", csv, "--channels", "Oz"]) == 2
    assert "Oz" in capsys.readouterr().err

    empty = write(tmp_path, "empty.csv", "time,ch1\n")
    assert cli.main(["plot", empty]) == 2
    assert "no data rows" in capsys.readouterr().err


def test_help_lists_the_node_catalogue():
    text = cli.build_parser().format_help()
    assert "node kinds:" in text
    for kind in ("ButterFilter", "Generator", "Reader", "Classify"):
        assert kind in text


def test_keyboard_interrupt_maps_to_130(tmp_path, monkeypatch):
    def boom(args):
        raise KeyboardInterrupt
    monkeypatch.setattr(cli, "cmd_run", boom)
    assert cli.main(["run", str(tmp_path / "p.toml")]) == 130
