"""Pipeline description files and the node registry."""
import pytest

from nxs.dsl import build_pipeline, load_pipeline, parse_pipeline
from nxs.errors import (DuplicateNodeName, PipelineFileError, UnknownNodeKind)
from nxs.graph import DEFAULT_LOOP_PERIOD, validate_pipeline
from nxs import registry

GOOD = """
[pipeline]
loop_period = 0.02

[node.source]
kind = "Generator"
mode = "oscillator"
channels = 2
fs = 250.0

[node.band]
kind = "ButterFilter"
input = "source"
lowcut = 8.0
highcut = 12.0

[node.epochs]
kind = "TimeBasedEpoching"
input = "band"
duration = 1.0
interval = 0.5

[node.stats]
kind = "UnivariateStat"
input = "epochs"
stat = "mean"
"""


def test_declaration_order_is_preserved():
    spec = parse_pipeline(GOOD)
    assert [d.name for d in spec.nodes] == ["source", "band", "epochs", "stats"]
    assert spec.loop_period == 0.02
    assert spec.nodes[1].kind == "ButterFilter"
    assert spec.nodes[1].inputs == ("source",)
    assert spec.nodes[1].params == {"lowcut": 8.0, "highcut": 12.0}


def test_build_produces_a_valid_pipeline():
    pipeline = build_pipeline(parse_pipeline(GOOD))
    assert [n.name for n in pipeline.nodes] == ["source", "band", "epochs", "stats"]
    assert pipeline.loop_period == 0.02
    report = validate_pipeline(pipeline)
    assert report.ok, [str(e) for e in report.errors]


def test_input_accepts_string_or_list():
    text = GOOD + """
[node.probe]
kind = "Probe"
input = ["stats", "epochs"]
"""
    spec = parse_pipeline(text)
    assert spec.nodes[-1].inputs == ("stats", "epochs")
    with pytest.raises(PipelineFileError):
        parse_pipeline(GOOD.replace('input = "source"', "input = 7"))


def test_port_qualified_input_reference():
    text = """
[node.reader]
kind = "Generator"
mode = "random"

[node.probe]
kind = "Probe"
input = "reader.out"
"""
    pipeline = build_pipeline(parse_pipeline(text))
    assert validate_pipeline(pipeline).ok


def test_default_loop_period():
    spec = parse_pipeline('[node.g]\nkind = "Generator"\nmode = "random"\n')
    assert spec.loop_period == DEFAULT_LOOP_PERIOD


def test_duplicate_node_name_is_named():
    text = GOOD + '\n[node.band]\nkind = "NotchFilter"\nfreq = 50.0\n'
    with pytest.raises(DuplicateNodeName) as info:
        parse_pipeline(text)
    assert info.value.name == "band"


def test_unknown_kind_suggests_a_fix():
    spec = parse_pipeline('[node.f]\nkind = "ButerFilter"\nlowcut = 8.0\n'
                          'highcut = 12.0\n')
    with pytest.raises(UnknownNodeKind) as info:
        build_pipeline(spec)
    assert info.value.kind == "ButerFilter"
    assert info.value.hint == "ButterFilter"


def test_missing_required_parameter():
    spec = parse_pipeline('[node.f]\nkind = "ButterFilter"\nlowcut = 8.0\n')
    with pytest.raises(PipelineFileError) as info:
        build_pipeline(spec)
    assert "highcut" in str(info.value)


def test_unknown_parameter_warns_but_builds():
    node, warnings = registry.create(
        "Generator", "g", {"mode": "random", "wavelength": 3})
    assert node.kind == "Generator"
    assert len(warnings) == 1
    assert "wavelength" in warnings[0]


def test_unknown_keys_collected_as_warnings():
    text = "[pipeline]\nloop_period = 0.01\nspeed = 3\n\n" \
           "[general]\nname = \"x\"\n\n[node.g]\nkind = \"Generator\"\nmode = \"random\"\n"
    spec = parse_pipeline(text)
    assert len(spec.warnings) == 2
    assert any("speed" in w for w in spec.warnings)
    assert any("general" in w for w in spec.warnings)


def test_empty_file_is_an_error():
    with pytest.raises(PipelineFileError) as info:
        parse_pipeline("")
    assert "no nodes" in str(info.value)


def test_toml_syntax_error_is_wrapped():
    with pytest.raises(PipelineFileError):
        parse_pipeline("[node.x\nkind == nah")


def test_bad_loop_period():
    for value in ("0.0", "-1", '"fast"'):
        text = f"[pipeline]\nloop_period = {value}\n\n" \
               '[node.g]\nkind = "Generator"\nmode = "random"\n'
        with pytest.raises(PipelineFileError):
            parse_pipeline(text)


def test_missing_kind():
    with pytest.raises(PipelineFileError):
        parse_pipeline("[node.g]\nmode = \"random\"\n")


def test_load_pipeline_from_disk(tmp_path):
    path = tmp_path / "p.toml"
    path.write_text(GOOD)
    pipeline = load_pipeline(path)
    assert len(pipeline.nodes) == 4


def test_registry_catalogue_lists_every_kind():
    rows = registry.catalogue()
    kinds = [kind for kind, _, _ in rows]
    assert kinds == sorted(kinds)
    for expected in ("Generator", "ButterFilter", "TimeBasedEpoching",
                     "PsdWelch", "Classify", "RdaReceive", "Reader", "ToCsv",
                     "UdpSend", "TcpReceive", "Stimulator", "Probe"):
        assert expected in kinds
    gen_row = next(r for r in rows if r[0] == "Generator")
    param_names = [p.name for p in gen_row[2]]
    assert "mode" in param_names and "name" not in param_names
    mode = next(p for p in gen_row[2] if p.name == "mode")
    assert mode.required
    assert mode.describe() == "mode (required)"
    fs = next(p for p in gen_row[2] if p.name == "fs")
    assert not fs.required and fs.default == 250.0
