"""Monte Carlo comparison of EM against the projected estimator."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .em import EmConfig, balanced_subpanel_init, run_em
from .fileio import fmt, format_document
from .metrics import evaluate
from .pe import imputed_pe, pe_init
from .simulate import DgpConfig, simulate

TABLES = ("T1", "T2", "T3", "T4")
DIMS = ((20, 20), (10, 30))


@dataclass(frozen=True)
class Scenario:
    dgp: DgpConfig
    separate_mar: bool = False
    subpanel_init: bool = False

    @property
    def mode(self) -> str:
        return "levels" if self.dgp.nonstationary else "stationary"

    @property
    def missing(self) -> bool:
        return self.dgp.missing != "none"

    def label(self) -> list[str]:
        d = self.dgp
        return [fmt(d.mu), fmt(d.delta), fmt(d.tau), d.family, d.missing, fmt(d.pi), str(d.p1), str(d.p2), str(d.T)]


LABEL_COLUMNS = ["mu", "delta", "tau", "family", "missing", "pi", "p1", "p2", "T"]


def table_rows(table: str, T: int = 100) -> list[Scenario]:
    if table not in TABLES:
        raise ValueError(f"table must be one of {TABLES}")
    rows = []
    if table in ("T1", "T3"):
        grid = [(0.7, 0.0, 0.0, "normal"), (0.7, 0.7, 0.5, "normal")]
        if table == "T1":
            grid += [(0.7, 0.0, 0.0, "skewt"), (0.7, 0.7, 0.5, "skewt"), (1.0, 0.0, 0.0, "normal"), (1.0, 0.7, 0.5, "normal")]
        for mu, delta, tau, fam in grid:
            for p1, p2 in DIMS:
                d = DgpConfig(T=T, p1=p1, p2=p2, mu=mu, delta=delta, tau=tau, family=fam)
                rows.append(Scenario(d, separate_mar=table == "T3"))
    elif table == "T2":
        for kind in ("random", "block"):
            for fam in ("normal", "skewt"):
                for pi in (0.25, 0.5):
                    for p1, p2 in DIMS:
                        rows.append(Scenario(DgpConfig(T=T, p1=p1, p2=p2, family=fam, missing=kind, pi=pi)))
    else:
        for mu, fam in ((0.7, "normal"), (0.7, "skewt"), (1.0, "normal")):
            for pi in (0.25, 0.5):
                for p1, p2 in DIMS:
                    d = DgpConfig(T=T, p1=p1, p2=p2, mu=mu, family=fam, missing="block", pi=pi)
                    rows.append(Scenario(d, subpanel_init=True))
    return rows


def one_replicate(sc: Scenario, seed: int, em_overrides: dict | None = None) -> np.ndarray:
    """EM/PE ratios ``[D(R), D(C), MSE_S, MSE_Y0]`` for one simulated panel."""
    dgp = replace(sc.dgp, seed=seed)
    truth = simulate(dgp)
    Y = truth.Y
    cfg = EmConfig(
        k1=dgp.k1, k2=dgp.k2, mode=sc.mode, missing_aware=sc.missing, separate_mar=sc.separate_mar,
        **(em_overrides or {}),
    )
    if sc.missing:
        pe, _ = imputed_pe(Y, dgp.k1, dgp.k2)
        init = balanced_subpanel_init(Y, dgp.k1, dgp.k2, sc.mode)[0] if sc.subpanel_init else pe
    else:
        pe = init = pe_init(Y, dgp.k1, dgp.k2)
    rep = run_em(Y, cfg, init=init)
    P = truth.params
    Y_full = truth.S + truth.E
    W = Y.mask if sc.missing else None
    m_em = evaluate(P["R"], P["C"], truth.S, rep.theta_hat.R, rep.theta_hat.C, rep.S_hat, Y_full, W)
    m_pe = evaluate(P["R"], P["C"], truth.S, pe.R0, pe.C0, pe.signal, Y_full, W)
    r = m_em.ratio(m_pe)
    return np.array([r.d_R, r.d_C, r.mse_S, np.nan if r.mse_Y0 is None else r.mse_Y0])


def _job(args):
    sc, seed, over = args
    return one_replicate(sc, seed, over)


def run_scenario(sc: Scenario, reps: int, seed: int, jobs: int = 1, em_overrides=None) -> np.ndarray:
    """``(reps, 4)`` ratios; replicate ``r`` uses seed ``seed + r``."""
    tasks = [(sc, seed + r, em_overrides) for r in range(reps)]
    if jobs <= 1:
        return np.array([_job(t) for t in tasks])
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return np.array(list(ex.map(_job, tasks)))


def default_jobs() -> int:
    return max(1, os.cpu_count() or 1)


def summarize(ratios: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and sample standard deviations."""
    sd = ratios.std(axis=0, ddof=1) if len(ratios) > 1 else np.zeros(ratios.shape[1])
    return ratios.mean(axis=0), sd


def replicate_table(table: str, reps: int, seed: int, jobs: int = 1, T: int = 100, rows=None) -> str:
    """Text table of mean and sd of EM/PE ratios, one line per scenario row."""
    if reps < 1:
        raise ValueError("reps must be at least 1")
    scen = table_rows(table, T)
    idx = range(len(scen)) if rows is None else rows
    metrics = ["D_R", "D_C", "MSE_S"] + (["MSE_Y0"] if table in ("T2", "T4") else [])
    header = ["row"] + LABEL_COLUMNS
    for m in metrics:
        header += [f"{m}_mean", f"{m}_sd"]
    out = [header]
    for i in idx:
        sc = scen[i]
        mean, sd = summarize(run_scenario(sc, reps, seed, jobs)[:, : len(metrics)])
        line = [str(i)] + sc.label()
        for j in range(len(metrics)):
            line += [f"{mean[j]:.6f}", f"{sd[j]:.6f}"]
        out.append(line)
    values = {"table": table, "reps": reps, "seed": seed}
    return format_document(values, {"ratios": out})
