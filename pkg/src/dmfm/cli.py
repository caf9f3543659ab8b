"""Command-line entry point: ``dmfm {simulate,estimate,replicate,loglik-figure}``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fileio
from .em import EmFailure, run_em
from .fileio import ConfigError, fmt, format_document
from .kalman import FilterDivergence
from .metrics import col_space_distance, mse_signal
from .pe import eigenvalue_ratio_k
from .replicate import default_jobs, replicate_table
from .simulate import simulate

EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5


class InputError(ValueError):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat 'key = value' config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--k1", type=int)
    common.add_argument("--k2", type=int)
    common.add_argument("--mode", choices=("stationary", "levels"))
    common.add_argument("--missing-aware", action="store_true", default=None)
    common.add_argument("--separate-mar", action="store_true", default=None)

    p = argparse.ArgumentParser(prog="dmfm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate a panel and its truth sidecar")
    est = sub.add_parser("estimate", parents=[common], help="run PE + EM on a panel file")
    est.add_argument("--panel", type=Path)
    est.add_argument("--truth", type=Path, help="truth sidecar for accuracy metrics")
    rep = sub.add_parser("replicate", parents=[common], help="Monte Carlo EM/PE ratio tables")
    rep.add_argument("--table", choices=("T1", "T2", "T3", "T4"))
    rep.add_argument("--reps", type=int)
    rep.add_argument("--jobs", type=int)
    rep.add_argument("--rows", help="comma-separated row indices to run")
    sub.add_parser("loglik-figure", parents=[common], help="log-likelihood path per EM iteration")
    return p


def gather_config(args) -> dict:
    cfg = {}
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise InputError(f"cannot read config: {exc}") from None
        cfg = fileio.parse_config(text)
    flags = {
        "seed": args.seed, "out": args.out, "k1": args.k1, "k2": args.k2, "mode": args.mode,
        "missing_aware": args.missing_aware, "separate_mar": args.separate_mar,
    }
    for name in ("panel", "truth", "table", "reps", "jobs", "rows"):
        flags[name] = getattr(args, name, None)
    for k, v in flags.items():
        if v is not None:
            cfg[k] = fileio.coerce(k, str(v) if isinstance(v, Path) else v)
    fileio.validate(cfg)
    return cfg


def out_dir(cfg: dict) -> Path:
    d = Path(cfg.get("out", "."))
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {d}: {exc.strerror}") from None
    return d


def cmd_simulate(cfg: dict) -> str:
    dgp = fileio.dgp_config(cfg)
    truth = simulate(dgp)
    d = out_dir(cfg)
    fileio.write_panel(d / "panel.txt", truth.Y)
    if truth.Y.has_missing:
        (d / "mask.txt").write_text(fileio.format_mask(truth.Y.mask))
    fileio.write_truth(d / "truth.txt", truth, dgp)
    return (
        f"simulated T={dgp.T} p1={dgp.p1} p2={dgp.p2} mu={fmt(dgp.mu)} delta={fmt(dgp.delta)} "
        f"tau={fmt(dgp.tau)} family={dgp.family} missing={dgp.missing} seed={dgp.seed}"
    )


def cmd_estimate(cfg: dict) -> str:
    if "panel" not in cfg:
        raise ConfigError("estimate needs a panel file (--panel or 'panel = ...')")
    try:
        Y = fileio.read_panel(cfg["panel"])
    except OSError as exc:
        raise InputError(f"cannot read panel: {exc.strerror}") from None
    except ValueError as exc:
        raise InputError(f"malformed panel: {exc}") from None
    if Y.has_missing and not cfg.get("missing_aware", False):
        raise InputError("panel has missing entries; rerun with --missing-aware")
    if "k1" not in cfg or "k2" not in cfg:
        kmax = min(8, Y.p1 - 1, Y.p2 - 1)
        k1, k2 = eigenvalue_ratio_k(Y.filled(0.0), kmax)
        cfg = {"k1": k1, "k2": k2, **cfg}
    em_cfg = fileio.em_config(cfg)
    rep = run_em(Y, em_cfg)
    d = out_dir(cfg)
    th = rep.theta_hat
    values = {
        "T": Y.T, "p1": Y.p1, "p2": Y.p2, "k1": em_cfg.k1, "k2": em_cfg.k2, "mode": em_cfg.mode,
        "missing_aware": em_cfg.missing_aware, "separate_mar": em_cfg.separate_mar,
        "converged": rep.converged, "n_star": rep.n_star,
        "loglik_init": rep.loglik_path[0], "loglik_final": rep.loglik_path[-1],
        "transition_spectral_radius": float(np.max(np.abs(np.linalg.eigvals(th.BA)))),
    }
    summary = f"n_star={rep.n_star} converged={'true' if rep.converged else 'false'} loglik={fmt(rep.loglik_path[-1])}"
    if "truth" in cfg:
        try:
            tr = fileio.read_truth(cfg["truth"])
        except (OSError, KeyError, ValueError) as exc:
            raise InputError(f"cannot read truth sidecar: {exc}") from None
        dR = col_space_distance(tr["R"], th.R)
        dC = col_space_distance(tr["C"], th.C)
        mS = mse_signal(tr["S"], rep.S_hat)
        values.update({"D_R": dR, "D_C": dC, "MSE_S": mS})
        summary += f" D(R)={dR:.4f} D(C)={dC:.4f} MSE_S={mS:.4f}"
    sections = {
        "warnings": [[w.replace(",", ";")] for w in rep.warnings],
        "R": th.R.tolist(),
        "C": th.C.tolist(),
        "Hdiag": [th.Hdiag.tolist()],
        "Kdiag": [th.Kdiag.tolist()],
        "BA": th.BA.tolist(),
        "QP": th.QP.tolist(),
    }
    (d / "report.txt").write_text(format_document(values, sections))
    path = [["iteration", "loglik", "delta"]]
    path += [[n, L, "" if n == 0 else rep.delta_path[n - 1]] for n, L in enumerate(rep.loglik_path)]
    (d / "loglik.csv").write_text("\n".join(",".join(fmt(v) if isinstance(v, float) else str(v) for v in r) for r in path) + "\n")
    fileio.write_panel(d / "S_hat.txt", rep.S_hat)
    fileio.write_panel(d / "F_hat.txt", rep.F_hat)
    return summary


def cmd_replicate(cfg: dict) -> str:
    table = cfg.get("table", "T1")
    reps = cfg.get("reps", 10)
    if reps < 10:
        raise ConfigError("replicate needs reps >= 10")
    rows = None
    if "rows" in cfg:
        try:
            rows = [int(v) for v in cfg["rows"].split(",")]
        except ValueError:
            raise ConfigError("rows must be comma-separated integers") from None
    T = cfg.get("T", 100)
    try:
        text = replicate_table(table, reps, cfg.get("seed", 1), cfg.get("jobs", default_jobs()), T, rows)
    except IndexError:
        raise ConfigError("row index out of range") from None
    d = out_dir(cfg)
    (d / f"table_{table}.txt").write_text(text)
    return f"wrote {d / f'table_{table}.txt'}"


def cmd_loglik_figure(cfg: dict) -> str:
    dgp = fileio.dgp_config(cfg)
    base = fileio.em_config(cfg)
    lines = ["mode,iteration,loglik"]
    for mode, mu in (("stationary", dgp.mu if dgp.mu < 1 else 0.7), ("levels", 1.0)):
        truth = simulate(replace(dgp, mu=mu))
        em_cfg = replace(base, mode=mode, missing_aware=truth.Y.has_missing or base.missing_aware)
        rep = run_em(truth.Y, em_cfg)
        lines += [f"{mode},{n},{fmt(L)}" for n, L in enumerate(rep.loglik_path)]
    d = out_dir(cfg)
    (d / "loglik_path.csv").write_text("\n".join(lines) + "\n")
    return f"wrote {d / 'loglik_path.csv'}"


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "replicate": cmd_replicate,
    "loglik-figure": cmd_loglik_figure,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = gather_config(args)
        print(COMMANDS[args.command](cfg))
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except InputError as exc:
        return _fail("input", exc, EXIT_INPUT)
    except (EmFailure, FilterDivergence, np.linalg.LinAlgError) as exc:
        return _fail("numerical", exc, EXIT_NUMERICAL)
    except OSError as exc:
        return _fail("io", exc, EXIT_IO)
    except ValueError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    return 0


def _fail(category: str, exc: Exception, code: int) -> int:
    msg = " ".join(str(exc).split())
    print(f"error: {category}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
