import xml.etree.ElementTree as ET

import pytest

from widthlab import csvio
from widthlab.cli import build_parser, main, resolve_config
from widthlab.config import SEED_ENV

FAST = ["--epochs", "15"]


@pytest.fixture
def ini(tmp_path):
    path = tmp_path / "fast.ini"
    path.write_text(
        "[sweep]\nwidths = 3, 5\nseeds = 0, 1\n"
        "[train]\nrecord_every = 5\n"
        "[grid]\nn_points = 9\n"
        "[sampling]\nfunction_samples = 30\nupcross_points = 40\nupcross_bins = 4\ntanh_kernel_samples = 1000\n"
    )
    return path


def run(*argv):
    return main([str(a) for a in argv])


def test_seed_precedence(ini, monkeypatch):
    parser = build_parser()
    monkeypatch.setenv(SEED_ENV, "7")
    assert resolve_config(parser.parse_args(["converge", "--config", str(ini)])).seeds == (7,)
    assert resolve_config(parser.parse_args(["converge", "--config", str(ini), "--seed", "3"])).seeds == (3,)
    monkeypatch.delenv(SEED_ENV)
    assert resolve_config(parser.parse_args(["converge", "--config", str(ini)])).seeds == (0, 1)


@pytest.mark.parametrize(
    "command",
    [
        ["dataset", "--dataset", "sine"],
        ["converge"],
        ["converge", "--activation", "tanh"],
        ["posterior", "--width", "4"],
        ["prior-check", "--activation", "relu"],
        ["param-density", "--width", "4"],
        ["bound-check", "--width", "4"],
    ],
    ids=lambda c: "-".join(c),
)
def test_byte_identical_reruns(tmp_path, ini, monkeypatch, command):
    monkeypatch.delenv(SEED_ENV, raising=False)
    outputs = []
    for rep in ("a", "b"):
        out = tmp_path / rep
        assert run(*command, "--config", ini, "--out", out, *FAST) == 0
        files = sorted(p for p in out.iterdir() if not p.name.endswith("_timing.csv"))
        assert files
        outputs.append({p.name: p.read_bytes() for p in files})
    assert outputs[0] == outputs[1]


def test_errors_exit_2(tmp_path, capsys):
    assert run("converge", "--dataset", f"csv:{tmp_path / 'missing.csv'}", "--out", tmp_path) == 2
    assert "widthlab: error:" in capsys.readouterr().err
    assert run("bound-check", "--activation", "relu", "--out", tmp_path, *FAST) == 2


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["converge", "--activation", "sigmoid"])
    assert info.value.code == 2


def svg_root(path):
    root = ET.parse(path).getroot()
    assert root.tag == "{http://www.w3.org/2000/svg}svg"
    assert root.get("viewBox") == "0 0 800 500"
    return root


def test_plots(tmp_path, ini, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    out = tmp_path / "r"
    assert run("converge", "--config", ini, "--out", out, *FAST) == 0
    assert run("posterior", "--config", ini, "--out", out, "--width", 4, *FAST) == 0
    assert run("prior-check", "--config", ini, "--out", out, *FAST) == 0
    for csv_name, kind in [
        ("convergence_two_points_erf.csv", "convergence"),
        ("posterior_two_points_erf_K4_s0.csv", "predictive"),
        ("prior_upcrossings_two_points_erf.csv", "upcrossings"),
    ]:
        svg = tmp_path / f"{kind}.svg"
        assert run("plot", out / csv_name, "--kind", kind, "--out", svg) == 0
        svg_root(svg)
        first = svg.read_bytes()
        run("plot", out / csv_name, "--kind", kind, "--out", svg)
        assert svg.read_bytes() == first


def test_plot_schema_mismatch(tmp_path, capsys):
    path = csvio.write_rows(tmp_path / "x.csv", ["a"], [[1]])
    assert run("plot", path, "--kind", "convergence") == 2
    assert "error" in capsys.readouterr().err
