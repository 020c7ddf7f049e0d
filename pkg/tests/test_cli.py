import csv
import json
from pathlib import Path

import pytest

from osgoodlab import cli
from osgoodlab.elliptic import OrderingReport
from osgoodlab.errors import KappaNotPositive

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = """
[problem]
bounds = -1, 1
grid_n = 65
beta = {beta}

[nonlinearity]
kind = {kind}
{extra}

[run]
dt = 2e-3
times = 0.01, 0.1
maximal = false
"""


def config(tmp_path, name="run.ini", beta="0", kind="power", extra="p = 0.5"):
    path = tmp_path / name
    path.write_text(SMALL.format(beta=beta, kind=kind, extra=extra))
    return str(path)


def run(tmp_path, command, cfg, *extra):
    out = tmp_path / "out"
    code = cli.main([command, "--config", cfg, "--out", str(out), *extra])
    report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, report, out


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


# osgood


def test_osgood_convergent(tmp_path):
    code, report, _ = run(tmp_path, "osgood", config(tmp_path))
    assert code == 0
    assert report["classification"] == "Convergent"
    assert report["integral_estimate"] == pytest.approx(2.0, rel=1e-8)


def test_osgood_divergent(tmp_path):
    code, report, _ = run(tmp_path, "osgood", config(tmp_path, kind="log_osgood", extra=""))
    assert code == 0
    assert report["classification"] == "Divergent"
    assert report["integral_estimate"] == "inf"


INCONCLUSIVE = dict(kind="log_perturbed", extra="p = 0.97\namplitude = 0.5\nrate = 1")


def test_osgood_inconclusive(tmp_path):
    # oscillating, slowly shrinking shell increments: neither test fires
    code, report, _ = run(tmp_path, "osgood", config(tmp_path, **INCONCLUSIVE))
    assert code == 2
    assert report["classification"] == "Inconclusive"


def test_config_errors_name_the_key(tmp_path, capsys):
    cfg = Path(config(tmp_path))
    cfg.write_text(cfg.read_text().replace("grid_n = 65", "grid_n = 8"))
    assert cli.main(["osgood", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "problem.grid_n" in capsys.readouterr().err

    cfg.write_text(SMALL.format(beta="0", kind="power", extra="p = 0.5\nbogus = 1"))
    assert cli.main(["osgood", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "nonlinearity.bogus" in capsys.readouterr().err

    assert cli.main(["osgood", "--config", str(tmp_path / "missing.ini")]) == 1


def test_epsilon_above_cap_is_rejected(tmp_path):
    cfg = Path(config(tmp_path))
    cfg.write_text(cfg.read_text() + "epsilon = 20\n")
    assert cli.main(["osgood", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_unknown_subcommand_exits():
    with pytest.raises(SystemExit):
        cli.main(["nonsense", "--config", "x.ini"])


# validate-lemmas


@pytest.mark.parametrize("beta", ["0", "0.5", "1"])
def test_validate_lemmas_pass(tmp_path, beta):
    code, report, out = run(tmp_path, "validate-lemmas", config(tmp_path, beta=beta))
    assert code == 0
    assert report["passed"] and report["min_ordering_gap"] >= -1e-12
    assert report["kappa"] > 0 and report["r"] == 0.25
    assert header(out / "kernel.csv") == ["x", "y", "t", "K", "K_D"]
    with open(out / "kernel.csv") as fh:
        assert sum(1 for _ in fh) == 1 + 2 * 65 * 65


def test_validate_lemmas_radius_too_large(tmp_path):
    cfg = Path(config(tmp_path))
    cfg.write_text(cfg.read_text() + "r = 0.4\n")
    assert cli.main(["validate-lemmas", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_validate_lemmas_reports_violation(tmp_path, monkeypatch):
    bad = OrderingReport(min_gap=-0.5, max_dirichlet=1.0, tol_order=1e-12, worst=(0.0, 0.1, 0.01),
                         semigroup_min_gap=0.0, per_time=((0.01, -0.5),))
    monkeypatch.setattr(cli, "verify_kernel_ordering", lambda *a, **k: bad)
    code, report, _ = run(tmp_path, "validate-lemmas", config(tmp_path))
    assert code == 3
    assert report["violation"] == {"x_y_t": [0.0, 0.1, 0.01], "gap": -0.5}


def test_validate_lemmas_reports_kappa_failure(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise KappaNotPositive("kappa <= 0")

    monkeypatch.setattr(cli, "estimate_kappa", boom)
    code, report, _ = run(tmp_path, "validate-lemmas", config(tmp_path))
    assert code == 3 and report["kappa"] is None and "kappa" in report["kappa_error"]


# certify


def test_certify_nonuniqueness(tmp_path):
    code, report, out = run(tmp_path, "certify", config(tmp_path))
    assert code == 0
    assert report["result"] == "NonUniqueness"
    assert report["zero_field_residual"] == 0.0
    assert header(out / "fields.csv") == ["x", "t", "v", "U", "w"]


def test_certify_osgood_holds(tmp_path):
    code, report, out = run(tmp_path, "certify", config(tmp_path, extra="p = 1.5"))
    assert code == 0
    assert report["result"] == "OsgoodHolds" and report["conclusion"] == "uniqueness"
    assert not (out / "fields.csv").exists()


def test_certify_inconclusive(tmp_path):
    code, report, _ = run(tmp_path, "certify", config(tmp_path, **INCONCLUSIVE))
    assert code == 2 and report["result"] == "Inconclusive"


def test_certify_failure_exit(tmp_path):
    cfg = Path(config(tmp_path))
    cfg.write_text(cfg.read_text() + "max_iter = 2\n")
    code, report, _ = run(tmp_path, "certify", str(cfg))
    assert code == 3
    assert report["result"] == "CertificateFailed" and report["error"] == "NonConvergence"


def test_certify_is_deterministic(tmp_path):
    cfg = config(tmp_path)
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert cli.main(["certify", "--config", cfg, "--out", str(out)]) == 0
        outs.append(((out / "report.json").read_bytes(), (out / "fields.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_overrides(tmp_path):
    code, report, out = run(tmp_path, "certify", config(tmp_path), "--grid-n", "41", "--dt", "4e-3")
    assert code == 0
    assert report["params"]["dt"] <= 4e-3
    xs = {row[0] for row in csv.reader(open(out / "fields.csv"))} - {"x"}
    assert len(xs) == 41


@pytest.mark.parametrize("name", ["dirichlet_sqrt.ini", "neumann_flat.ini", "variable_robin.ini"])
def test_shipped_configs_certify(tmp_path, name):
    code, report, _ = run(tmp_path, "certify", str(CONFIGS / name), "--grid-n", "65")
    assert code == 0 and report["result"] == "NonUniqueness"


def test_shipped_lipschitz_config(tmp_path):
    code, report, _ = run(tmp_path, "certify", str(CONFIGS / "lipschitz.ini"))
    assert code == 0 and report["result"] == "OsgoodHolds"


def test_two_dimensional_kernel_header(tmp_path):
    path = tmp_path / "sq.ini"
    path.write_text("[problem]\nbounds = -1, 1, -1, 1\ngrid_n = 33\n[nonlinearity]\nkind = power\np = 0.5\n"
                    "[run]\ntimes = 0.01\nkernel_stride = 8\n")
    code, _, out = run(tmp_path, "validate-lemmas", str(path))
    assert code == 0
    assert header(out / "kernel.csv") == ["x_1", "x_2", "y_1", "y_2", "t", "K", "K_D"]
