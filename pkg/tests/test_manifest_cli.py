import json

import pytest

from bcalculus import expr as ex
from bcalculus.cli import dumps, main
from bcalculus.manifest import ManifestError, bundled, load, loads

MINIMAL = """\
[manifold]
coords   = x, y, z
defining = "sin(z)"
order    = 1
"""


# -- loading ------------------------------------------------------------------

def test_bundled_abc_loads():
    man = load("abc")
    M = man.manifold
    assert M.coords == ("x", "y", "z") and M.order == 1
    assert ex.equivalent(M.defining, ex.parse("sin(z)"))
    X = man.fields["X"]
    assert ex.equivalent(X.coeffs[0], ex.parse("A*sin(z) + C*cos(y)"))
    assert {"A", "B", "C"} <= set(man.defaults)
    assert "g" in man.metrics and "mu" in man.forms


@pytest.mark.parametrize("name", bundled())
def test_every_bundled_manifest_loads(name):
    man = load(name)
    assert man.tasks


def test_empty_file_is_missing_manifold():
    with pytest.raises(ManifestError, match=r"missing \[manifold\]"):
        loads("")


def test_field_arity_error_carries_section_and_line():
    text = MINIMAL + '\n[field X]\nx = "1"\ny = "2"\n'
    with pytest.raises(ManifestError) as err:
        loads(text, "bad.manifest")
    e = err.value
    assert "arity" in str(e) or "component" in str(e)
    assert e.section == "field X"
    assert e.line is not None and "bad.manifest" in str(e)


def test_parse_error_reports_line():
    text = MINIMAL + '\n[form a]\ndx = "sin(x"\n'
    with pytest.raises(ManifestError) as err:
        loads(text)
    assert err.value.line == 7


def test_unknown_coordinate():
    text = MINIMAL + '\n[form a]\ndw = "1"\n'
    with pytest.raises(ManifestError, match="w"):
        loads(text)


def test_unbound_symbol_rejected():
    text = MINIMAL + '\n[form a]\ndx = "q*x"\n'
    with pytest.raises(ManifestError):
        loads(text)


def test_params_become_symbols():
    text = MINIMAL + '\n[params]\nK = 2\n\n[form a]\ndx = "K*cos(y)"\n'
    man = loads(text)
    assert man.defaults == {"K": 2.0}
    assert any("K" in ex.free_names(c) for c in man.forms["a"].coeffs.values())


# -- output formatting --------------------------------------------------------------

def test_json_writer_is_deterministic_and_total():
    text = dumps({"b": [1.0, float("nan"), float("inf")], "a": 0.1, "c": True})
    obj = json.loads(text)
    assert list(obj) == ["a", "b", "c"]
    assert obj["b"] == [1.0, "nan", "inf"]
    assert '"a": 0.10000000000000001' in text


# -- commands --------------------------------------------------------------------

def run(tmp_path, *argv):
    out = tmp_path / "out"
    rc = main([*argv, "--out", str(out)])
    verdict = json.loads((out / "verdicts.json").read_text()) if (out / "verdicts.json").exists() else None
    return rc, verdict, out


def test_check_beltrami_abc(tmp_path, capsys):
    rc, v, _ = run(tmp_path, "check-beltrami", "abc", "--field", "X", "--param", "A=0")
    assert rc == 0 and v["holds"]
    assert v["f"] == "1"
    rc, v, _ = run(tmp_path, "check-beltrami", "abc")
    assert rc == 1 and not v["holds"]


def test_reeb_prints_field(tmp_path, capsys):
    rc, v, _ = run(tmp_path, "reeb", "contact_c0", "--form", "alpha")
    line = capsys.readouterr().out
    assert rc == 0
    assert "(sin(x)/B)*d/dy" in line and "(cos(x)/B)*sin(z)*d/dz" in line


def test_trace_singular_periodic(tmp_path):
    rc, v, out = run(tmp_path, "trace", "contact_c0", "--field", "R", "--seed", "0,0,1.0",
                     "--tmax", "200")
    assert rc == 0
    assert v["class"] == "singular_periodic"
    header = (out / "trace.csv").read_text().splitlines()[0]
    assert header.endswith("x,y,z,dist_to_Z")


def test_unknown_command_and_missing_object(tmp_path, capsys):
    assert main(["frobnicate", "abc", "--out", str(tmp_path)]) == 2
    assert main(["check-stationary", "bernoulli_case1", "--out", str(tmp_path)]) == 2
    assert main(["reeb", "contact_c0", "--form", "nope", "--out", str(tmp_path)]) == 2
    assert main(["reeb", "no_such_manifest", "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_artifacts_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        main(["trace", "contact_c0", "--field", "R", "--seed", "0,0,1.0", "--tmax", "50",
              "--out", str(out)])
        main(["converge", "darboux_b2", "--out", str(out / "c")])
    for rel in ("verdicts.json", "trace.csv", "c/verdicts.json", "c/converge.csv"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_csv_floats_have_17_digits(tmp_path):
    _, _, out = run(tmp_path, "trace", "contact_c0", "--field", "R", "--seed", "0,0,1.0",
                    "--tmax", "5")
    row = (out / "trace.csv").read_text().splitlines()[1].split(",")
    for cell in row:
        v = float(cell)
        assert float(f"{v:.17g}") == v


def test_periods_nan_for_pole(tmp_path):
    rc, v, out = run(tmp_path, "periods", "cylinder_tischler", "--forms", "a1,a2",
                     "--cycles", "x,y")
    assert rc == 1
    assert "nan" in (out / "periods.csv").read_text()


TASKS = [(name, cmd) for name in bundled() for cmd in load(name).tasks]


@pytest.mark.parametrize("name,cmd", TASKS, ids=[f"{n}-{c}" for n, c in TASKS])
def test_every_bundled_task_runs(tmp_path, name, cmd):
    rc, v, _ = run(tmp_path, cmd, name)
    assert rc in (0, 1)
    assert v["command"] == cmd and v["holds"] == (rc == 0)


EXPECTED = {
    ("abc", "beltrami-to-contact"): 0,
    ("contact_c0", "check-contact"): 0,
    ("contact_c0", "contact-to-beltrami"): 0,
    ("cylinder_tischler", "periods"): 0,
    ("cylinder_tischler", "fibration"): 0,
    ("darboux_symplectic", "check-symplectic"): 0,
    ("darboux_b2", "check-symplectic"): 0,
    ("darboux_contact", "check-contact"): 0,
    ("bernoulli_case1", "pullback"): 0,
    ("bernoulli_case2", "pullback"): 0,
}


@pytest.mark.parametrize("key", sorted(EXPECTED))
def test_bundled_examples_hold(tmp_path, key):
    rc, _, _ = run(tmp_path, key[1], key[0])
    assert rc == EXPECTED[key]


def test_pullback_outputs(tmp_path, capsys):
    run(tmp_path, "pullback", "bernoulli_case1")
    assert "dtheta^domega" in capsys.readouterr().out
    run(tmp_path, "pullback", "bernoulli_case2", "--map", "j_plain")
    assert "(1/v)*dv^dw" in capsys.readouterr().out
