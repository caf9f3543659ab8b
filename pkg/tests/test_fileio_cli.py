import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dmfm import fileio
from dmfm.cli import EXIT_CONFIG, EXIT_INPUT, main
from dmfm.series import MatrixSeries


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_panel_roundtrip_property(T, p1, p2, seed):
    g = np.random.default_rng(seed)
    Y = g.standard_normal((T, p1, p2)) * 10.0 ** g.integers(-8, 8)
    mask = g.random((T, p1, p2)) > 0.2
    back = fileio.parse_panel(fileio.format_panel(Y, mask))
    assert np.array_equal(back.Y[mask], Y[mask])
    expected = None if mask.all() else mask
    assert (back.mask is None and expected is None) or np.array_equal(back.mask, expected)


def test_panel_format_layout():
    text = fileio.format_panel(np.arange(4.0).reshape(1, 2, 2), np.array([[[1, 0], [1, 1]]], bool))
    assert text == "1 2 2\n0.0 NA\n2.0 3.0\n"


@pytest.mark.parametrize(
    "text",
    ["", "1 2\n", "1 1 2\n1.0\n", "2 1 1\n1.0\n", "1 1 1\nabc\n"],
)
def test_malformed_panels(text):
    with pytest.raises(ValueError):
        fileio.parse_panel(text)


def test_config_roundtrip():
    cfg = fileio.parse_config("mu = 0.7\nfamily = skewt\nseed = 4\nmissing_aware = true\nout = runs/a\n")
    text = fileio.serialize_config(cfg)
    assert fileio.parse_config(text) == cfg
    assert cfg["missing_aware"] is True and cfg["seed"] == 4


@pytest.mark.parametrize(
    "text",
    ["bogus = 1\n", "seed = 1.5\n", "mu = 2\n", "family = cauchy\n", "missing_aware = yes\n", "reps = 0\n", "[x]\n"],
)
def test_config_rejections(text):
    with pytest.raises(fileio.ConfigError):
        fileio.parse_config(text)


def test_simulate_deterministic_bytes(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(capsys, "simulate", "--seed", 1, "--out", a)[0] == 0
    assert run(capsys, "simulate", "--seed", 1, "--out", b)[0] == 0
    for name in ("panel.txt", "truth.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert not (a / "mask.txt").exists()


def test_simulate_block_mask_zero_count(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("missing = block\npi = 0.25\nT = 100\np1 = 20\np2 = 20\n")
    code, out, _ = run(capsys, "simulate", "--config", cfg, "--out", tmp_path)
    assert code == 0 and "missing=block" in out
    body = (tmp_path / "mask.txt").read_text().split("\n", 1)[1]
    assert body.split().count("0") == 5000


def test_simulate_levels_flag(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("mu = 1.0\n")
    run(capsys, "simulate", "--config", cfg, "--out", tmp_path)
    values, _ = fileio.parse_document((tmp_path / "truth.txt").read_text())
    assert values["nonstationary"] == "true"


def test_estimate_recovers_loadings(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("T = 400\np1 = 20\np2 = 20\nseed = 2\n")
    run(capsys, "simulate", "--config", cfg, "--out", tmp_path)
    args = ("estimate", "--panel", tmp_path / "panel.txt", "--truth", tmp_path / "truth.txt", "--k1", 2, "--k2", 2)
    code, out, _ = run(capsys, *args, "--out", tmp_path / "e1")
    assert code == 0
    values, sections = fileio.parse_document((tmp_path / "e1" / "report.txt").read_text())
    assert float(values["D_R"]) <= 0.1
    assert "D(R)=" in out
    run(capsys, *args, "--out", tmp_path / "e2")
    for name in ("report.txt", "loglik.csv", "S_hat.txt", "F_hat.txt"):
        assert (tmp_path / "e1" / name).read_bytes() == (tmp_path / "e2" / name).read_bytes()
    path = (tmp_path / "e1" / "loglik.csv").read_text().splitlines()
    assert path[0] == "iteration,loglik,delta" and len(path) == int(values["n_star"]) + 2


def test_estimate_selects_factor_counts(tmp_path, capsys):
    run(capsys, "simulate", "--out", tmp_path)
    code, _, _ = run(capsys, "estimate", "--panel", tmp_path / "panel.txt", "--out", tmp_path)
    values, _ = fileio.parse_document((tmp_path / "report.txt").read_text())
    assert code == 0 and (values["k1"], values["k2"]) == ("2", "2")


def test_estimate_refuses_masked_panel(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("missing = random\npi = 0.2\np1 = 8\np2 = 8\nT = 30\n")
    run(capsys, "simulate", "--config", cfg, "--out", tmp_path)
    code, _, err = run(capsys, "estimate", "--panel", tmp_path / "panel.txt", "--out", tmp_path)
    assert code == EXIT_INPUT and err.startswith("error: input:") and "missing-aware" in err
    code, _, _ = run(capsys, "estimate", "--panel", tmp_path / "panel.txt", "--out", tmp_path, "--missing-aware")
    assert code == 0


def test_error_lines(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nonsense = 3\n")
    code, _, err = run(capsys, "simulate", "--config", cfg)
    assert code == EXIT_CONFIG and err.count("\n") == 1 and err.startswith("error: config:")
    code, _, err = run(capsys, "estimate", "--panel", tmp_path / "missing.txt")
    assert code == EXIT_INPUT
    code, _, err = run(capsys, "replicate", "--reps", 0)
    assert code == EXIT_CONFIG
    code, _, err = run(capsys, "replicate", "--reps", 5)
    assert code == EXIT_CONFIG


def test_loglik_figure(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_max = 1\nT = 40\np1 = 8\np2 = 8\n")
    assert run(capsys, "loglik-figure", "--config", cfg, "--out", tmp_path)[0] == 0
    lines = (tmp_path / "loglik_path.csv").read_text().splitlines()
    assert lines[0] == "mode,iteration,loglik"
    stat = [ln for ln in lines[1:] if ln.startswith("stationary")]
    lev = [ln for ln in lines[1:] if ln.startswith("levels")]
    assert len(stat) == 2 and len(lev) == 2


def test_first_iteration_dominates_gain(tmp_path, capsys):
    from dmfm.em import EmConfig, run_em
    from dmfm.simulate import DgpConfig, simulate

    shares = []
    for seed in range(1, 11):
        L = run_em(simulate(DgpConfig(seed=seed)).Y, EmConfig()).loglik_path
        total = L[-1] - L[0]
        shares.append((L[1] - L[0]) / total if total > 0 else 1.0)
    assert np.median(shares) > 0.5


def test_replicate_rows_written(tmp_path, capsys):
    code, out, _ = run(capsys, "replicate", "--table", "T1", "--reps", 10, "--rows", "0", "--jobs", 1, "--out", tmp_path)
    assert code == 0
    values, sections = fileio.parse_document((tmp_path / "table_T1.txt").read_text())
    assert values["reps"] == "10"
    header, row = sections["ratios"]
    assert header[-1] == "MSE_S_sd" and row[0] == "0"
    assert all(np.isfinite(float(v)) for v in row[-6:])


def test_matrix_series_rejects_nonfinite_observed():
    Y = np.ones((2, 2, 2))
    Y[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        MatrixSeries(Y)
    mask = np.ones_like(Y, bool)
    mask[0, 0, 0] = False
    assert MatrixSeries(Y, mask).has_missing
