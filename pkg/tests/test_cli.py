import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from premultisym.cli import (
    EXIT_CHECK_FAILED,
    EXIT_INPUT,
    EXIT_NO_SOLUTION,
    EXIT_OK,
    EXIT_UNDECIDED,
    main,
)

ROOT = Path(__file__).resolve().parent.parent
MODELS = ROOT / "models"
GOLDEN = Path(__file__).resolve().parent / "golden"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def write(tmp_path, text, name="m.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_affine_example_golden(capsys):
    code, out, _ = run(capsys, "analyze", MODELS / "affine_example.toml", "--format", "structured")
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc == json.loads((GOLDEN / "affine_example.json").read_text())
    assert [g["constraints"] for g in doc["generations"]] == [["y1 - y2"]]
    assert doc["splitting"]["omega_nabla"] == "0"
    assert doc["lagrangian"]["p"] == "y1*y2"


def test_affine_form_matches_lagrangian_form(capsys):
    _, a, _ = run(capsys, "analyze", MODELS / "affine_example.toml", "--format", "structured")
    _, b, _ = run(capsys, "analyze", MODELS / "affine_example_form.toml", "--format", "structured")
    a, b = json.loads(a), json.loads(b)
    assert a["generations"] == b["generations"]
    assert a["splitting"]["gamma"] == b["splitting"]["gamma"]
    assert b["affine"]["engine_agrees"] is True


def test_structured_output_is_deterministic(capsys):
    outs = {run(capsys, "analyze", MODELS / "harmonic.toml", "--format", "structured", "--seed", "3")[1] for _ in range(3)}
    assert len(outs) == 1


def test_zero_omega(capsys):
    code, out, _ = run(capsys, "analyze", MODELS / "zero_omega.toml", "--format", "structured")
    doc = json.loads(out)
    assert code == EXIT_OK
    assert doc["generations"] == [] and doc["splitting"]["gamma"] == "0"
    assert all(v == "0" for v in doc["solution"]["particular"])


def test_harmonic_text_report(capsys):
    code, out, _ = run(capsys, "analyze", MODELS / "harmonic.toml")
    assert code == EXIT_OK
    assert "regularity: regular" in out
    assert "Euler-Lagrange relation: G_v1_1_1 + G_v1_2_2 = 0" in out
    assert "semi-holonomy forced: True" in out


@pytest.mark.parametrize("name", ["affine_example", "affine_example_form", "harmonic", "zero_omega"])
def test_check_passes_on_shipped_models(capsys, name):
    code, out, _ = run(capsys, "check", MODELS / f"{name}.toml")
    assert code == EXIT_OK
    assert "FAIL" not in out


def test_check_reports_corrupted_form(capsys):
    code, out, _ = run(capsys, "check", MODELS / "corrupted.toml")
    assert code == EXIT_CHECK_FAILED
    assert "FAIL  assumption" in out and "('y1', 'y2', 'y3')" in out


def test_analyze_rejects_corrupted_form(capsys):
    code, _, err = run(capsys, "analyze", MODELS / "corrupted.toml")
    assert code == EXIT_INPUT and "y1" in err


OMEGA_MODEL = """
[model]
kind = "premultisymplectic"
base = ["t"]
fields = {fields}
[model.omega]
{omega}
"""


@pytest.mark.parametrize(
    "fields,omega,code",
    [
        ('["q", "p"]', '"dq^dt" = "p"', EXIT_OK),
        ('["q"]', '"dq^dt" = "t"', EXIT_NO_SOLUTION),
        ('["q"]', '"dq^dt" = "1"', EXIT_NO_SOLUTION),
    ],
)
def test_analyze_exit_codes(capsys, tmp_path, fields, omega, code):
    p = write(tmp_path, OMEGA_MODEL.format(fields=fields, omega=omega))
    assert run(capsys, "analyze", p)[0] == code


def test_iteration_limit_exit_code(capsys, tmp_path):
    p = write(
        tmp_path,
        '[model]\nkind = "lagrangian"\nbase = ["t"]\nfields = ["y1", "y2"]\nlagrangian = "v1_1^2/2 + y1*y2"\n',
    )
    code, out, _ = run(capsys, "analyze", p, "--max-generations", "2", "--format", "structured")
    assert code == EXIT_UNDECIDED
    assert json.loads(out)["status"] == "iteration-limit"
    assert run(capsys, "analyze", p)[0] == EXIT_OK


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("[model\nkind = 1", "line 1"),
        ('[model]\nkind = "nope"\nbase = ["x"]\nfields = ["y"]\n', "kind"),
        ('[model]\nkind = "lagrangian"\nbase = ["x"]\nfields = ["y1"]\nlagrangian = "v1_1^2 + z"\n', "z"),
        ('[model]\nkind = "lagrangian"\nbase = ["x"]\nfields = ["y1"]\nlagrangian = "v1_1^2 +"\n', "lagrangian"),
        ('[model]\nkind = "premultisymplectic"\nbase = ["x"]\nfields = ["y"]\nomega = {"dy^dz" = "1"}\n', "omega"),
        ('[model]\nkind = "affine"\nbase = ["x"]\nfields = ["y"]\na = "y"\n', "affine"),
    ],
)
def test_input_errors(capsys, tmp_path, text, fragment):
    code, out, err = run(capsys, "analyze", write(tmp_path, text))
    assert code == EXIT_INPUT and out == ""
    assert fragment in err


def test_missing_file(capsys, tmp_path):
    code, _, err = run(capsys, "analyze", tmp_path / "absent.toml")
    assert code == EXIT_INPUT and "cannot read" in err


def test_integrate_table(capsys, tmp_path):
    out_path = tmp_path / "table.txt"
    code, _, err = run(capsys, "integrate", MODELS / "harmonic.toml", "--grid", "0:1:1/16", "--output", out_path)
    assert code == EXIT_OK
    assert "Euler-Lagrange residual" in err
    data = np.loadtxt(out_path, comments="#")
    assert data.shape == (17 * 17, 5)
    x1, x2, y = data[:, 0], data[:, 1], data[:, 2]
    # the model's section integrates to exp(x1/8) cos(x2/8)
    assert np.abs(y - np.exp(x1 / 8) * np.cos(x2 / 8)).max() < 1e-9


def test_integrate_structured_with_start(capsys):
    code, out, _ = run(
        capsys, "integrate", MODELS / "zero_omega.toml", "--grid", "0:1:1/4", "--start", "y1=2", "--format", "structured"
    )
    assert code == EXIT_OK
    doc = json.loads(out)
    assert doc["defect"] == 0 and doc["euler_lagrange"] is None
    assert [a["nodes"] for a in doc["grid"]] == [5, 5]
    assert np.all(np.loadtxt(doc["table"].splitlines(), comments="#")[:, 2] == 2)


def test_integrate_rejects_off_constraint_start(capsys):
    code, _, err = run(capsys, "integrate", MODELS / "harmonic.toml", "--grid", "0:1:1/4", "--start", "y1=1,v1_1=1,v1_2=0")
    assert code == EXIT_INPUT and "violates" in err


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "premultisym", "analyze", str(MODELS / "zero_omega.toml")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == EXIT_OK and "final-submanifold-found" in proc.stdout
