"""Plain-text formats for panels, truth sidecars, reports and run configs.

Panel: first line ``T p1 p2``, then ``T`` blocks of ``p1`` lines with ``p2``
whitespace-separated values each; missing cells are written ``NA``.

Key/value documents hold ``key = value`` lines followed by optional
sections, each opened by ``[name]`` and holding comma-separated rows.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

import numpy as np

from .em import EmConfig
from .series import MatrixSeries
from .simulate import DgpConfig


def fmt(x: float) -> str:
    """Shortest text that reads back to the same double."""
    return repr(float(x))


# ----------------------------------------------------------------------------
# panels


def format_panel(Y: np.ndarray, mask: np.ndarray | None = None) -> str:
    Y = np.asarray(Y, dtype=float)
    T, p1, p2 = Y.shape
    lines = [f"{T} {p1} {p2}"]
    for t in range(T):
        for i in range(p1):
            row = Y[t, i]
            if mask is None:
                lines.append(" ".join(fmt(v) for v in row))
            else:
                lines.append(" ".join(fmt(v) if m else "NA" for v, m in zip(row, mask[t, i])))
    return "\n".join(lines) + "\n"


def write_panel(path, Y: np.ndarray | MatrixSeries) -> None:
    if isinstance(Y, MatrixSeries):
        text = format_panel(Y.Y, Y.mask)
    else:
        text = format_panel(Y)
    Path(path).write_text(text)


def parse_panel(text: str) -> MatrixSeries:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty panel file")
    try:
        T, p1, p2 = (int(v) for v in lines[0].split())
    except ValueError:
        raise ValueError("panel header must be 'T p1 p2'") from None
    body = lines[1:]
    if len(body) != T * p1:
        raise ValueError(f"expected {T * p1} data lines, found {len(body)}")
    Y = np.empty((T, p1, p2))
    mask = np.ones((T, p1, p2), dtype=bool)
    for n, ln in enumerate(body):
        toks = ln.split()
        if len(toks) != p2:
            raise ValueError(f"data line {n + 2}: expected {p2} values, found {len(toks)}")
        t, i = divmod(n, p1)
        for j, tok in enumerate(toks):
            if tok == "NA":
                Y[t, i, j] = np.nan
                mask[t, i, j] = False
            else:
                Y[t, i, j] = float(tok)
    return MatrixSeries(Y, mask)


def read_panel(path) -> MatrixSeries:
    return parse_panel(Path(path).read_text())


def format_mask(mask: np.ndarray) -> str:
    T, p1, p2 = mask.shape
    lines = [f"{T} {p1} {p2}"]
    lines += [" ".join("1" if m else "0" for m in mask[t, i]) for t in range(T) for i in range(p1)]
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# key/value documents


def format_document(values: dict, sections: dict | None = None) -> str:
    out = []
    for k, v in values.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = fmt(v)
        out.append(f"{k} = {v}")
    for name, rows in (sections or {}).items():
        out.append("")
        out.append(f"[{name}]")
        for row in rows:
            out.append(",".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    return "\n".join(out) + "\n"


def parse_document(text: str) -> tuple[dict[str, str], dict[str, list[list[str]]]]:
    values: dict[str, str] = {}
    sections: dict[str, list[list[str]]] = {}
    current = None
    for n, raw in enumerate(text.splitlines(), 1):
        ln = raw.split("#", 1)[0].strip()
        if not ln:
            continue
        if ln.startswith("[") and ln.endswith("]"):
            current = ln[1:-1].strip()
            sections[current] = []
        elif current is not None:
            sections[current].append([c.strip() for c in ln.split(",")])
        elif "=" in ln:
            k, v = ln.split("=", 1)
            values[k.strip()] = v.strip()
        else:
            raise ValueError(f"line {n}: expected 'key = value'")
    return values, sections


def section_array(rows: list[list[str]]) -> np.ndarray:
    return np.array([[float(v) for v in r] for r in rows])


def write_truth(path, truth, cfg: DgpConfig) -> None:
    P = truth.params
    values = dict(config_values(cfg, include=DGP_KEYS))
    values["nonstationary"] = cfg.nonstationary
    T, p1, p2 = truth.S.shape
    sections = {
        "R": P["R"].tolist(),
        "C": P["C"].tolist(),
        "A": P["A"].tolist(),
        "B": P["B"].tolist(),
        "S": truth.S.reshape(T * p1, p2).tolist(),
    }
    Path(path).write_text(format_document(values, sections))


def read_truth(path) -> dict:
    values, sections = parse_document(Path(path).read_text())
    T, p1, p2 = int(values["T"]), int(values["p1"]), int(values["p2"])
    out = {k: section_array(v) for k, v in sections.items()}
    out["S"] = out["S"].reshape(T, p1, p2)
    out["values"] = values
    return out


# ----------------------------------------------------------------------------
# run configuration

DGP_KEYS = tuple(f.name for f in fields(DgpConfig))
EM_KEYS = tuple(f.name for f in fields(EmConfig))
RUN_KEYS = ("out", "reps", "jobs", "table", "panel", "truth", "rows")
ALL_KEYS = tuple(dict.fromkeys(DGP_KEYS + EM_KEYS + RUN_KEYS))

_INT = {"T", "p1", "p2", "k1", "k2", "seed", "n_max", "reps", "jobs"}
_FLOAT = {"mu", "delta", "tau", "pi", "eps"}
_BOOL = {"missing_aware", "separate_mar"}
_CHOICES = {
    "family": ("normal", "skewt"),
    "missing": ("none", "random", "block"),
    "mode": ("stationary", "levels"),
    "table": ("T1", "T2", "T3", "T4"),
}


class ConfigError(ValueError):
    pass


def coerce(key: str, value):
    if key not in ALL_KEYS:
        raise ConfigError(f"unknown key {key!r}")
    try:
        if key in _INT:
            if isinstance(value, str):
                value = value.strip()
                if not value.lstrip("-").isdigit():
                    raise ValueError
            return int(value)
        if key in _FLOAT:
            return float(value)
        if key in _BOOL:
            if isinstance(value, bool):
                return value
            v = str(value).strip().lower()
            if v not in ("true", "false"):
                raise ValueError
            return v == "true"
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {key}") from None
    value = str(value).strip()
    if key in _CHOICES and value not in _CHOICES[key]:
        raise ConfigError(f"{key} must be one of {_CHOICES[key]}")
    return value


def parse_config(text: str) -> dict:
    values, sections = parse_document(text)
    if sections:
        raise ConfigError("config files take no [sections]")
    cfg = {k: coerce(k, v) for k, v in values.items()}
    validate(cfg)
    return cfg


def serialize_config(cfg: dict) -> str:
    return format_document({k: cfg[k] for k in ALL_KEYS if k in cfg})


def validate(cfg: dict) -> None:
    """Range checks by building the typed configs the values feed."""
    try:
        dgp_config(cfg)
        em_config(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.get("reps", 1) < 1:
        raise ConfigError("reps must be at least 1")
    if cfg.get("jobs", 1) < 1:
        raise ConfigError("jobs must be at least 1")


def dgp_config(cfg: dict) -> DgpConfig:
    return DgpConfig(**{k: cfg[k] for k in DGP_KEYS if k in cfg})


def em_config(cfg: dict) -> EmConfig:
    return EmConfig(**{k: cfg[k] for k in EM_KEYS if k in cfg})


def config_values(obj, include=None) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj) if include is None or f.name in include}
