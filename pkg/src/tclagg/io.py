"""Plain-text inputs and outputs: weather CSV, trace CSVs, JSON reports.

Every writer formats floats with ``repr`` and sorts JSON keys so that a given
set of inputs always produces the same bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


class WeatherError(ValueError):
    pass


def read_weather_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``(t_hours, theta_a_c)`` columns, validated."""
    path = Path(path)
    if not path.is_file():
        raise WeatherError(f"weather file not found: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["t_hours", "theta_a_c"]:
        raise WeatherError(f"{path}: expected header 't_hours,theta_a_c'")
    t, th = [], []
    for n, row in enumerate(rows[1:], start=2):
        if not row or not "".join(row).strip():
            continue
        try:
            a, b = (float(v) for v in row)
        except ValueError as exc:
            raise WeatherError(f"{path}:{n}: cannot parse {row!r}") from exc
        if math.isnan(a) or math.isnan(b):
            raise WeatherError(f"{path}:{n}: NaN value")
        t.append(a)
        th.append(b)
    if not t:
        raise WeatherError(f"{path}: no data rows")
    t = np.array(t)
    if np.any(np.diff(t) <= 0):
        bad = int(np.flatnonzero(np.diff(t) <= 0)[0]) + 3
        raise WeatherError(f"{path}:{bad}: time column must be strictly increasing")
    return t, np.array(th)


def load_weather(path, dt: float, steps: int | None = None) -> np.ndarray:
    """Read ``t_hours,theta_a_c`` and resample to ``t_k = t_0 + k * dt``.

    Linear interpolation at the grid points.  Without ``steps`` the series
    covers the file's time span; with it, exactly ``steps + 1`` samples are
    returned and the file must cover ``steps * dt`` hours.
    """
    if not dt > 0:
        raise WeatherError("dt must be positive")
    t, th = read_weather_table(path)
    span = t[-1] - t[0]
    if steps is None:
        steps = int(math.floor(span / dt + 1e-9))
    if steps * dt > span * (1 + 1e-12) + 1e-12:
        raise WeatherError(f"{path}: covers {span:g} h but {steps * dt:g} h are needed")
    tk = t[0] + dt * np.arange(steps + 1)
    return np.interp(tk, t, th)


def write_weather(path, t_hours, theta_a) -> None:
    with open(Path(path), "w", newline="") as fh:
        fh.write("t_hours,theta_a_c\n")
        for a, b in zip(t_hours, theta_a):
            fh.write(f"{float(a)!r},{float(b)!r}\n")


def write_trace_csv(path, dt: float, Y, gamma, theta_a) -> None:
    """Columns ``k,t,Y,gamma_model,theta_a``; ``theta_a`` may be one shorter."""
    Y = np.asarray(Y, dtype=float)
    with open(Path(path), "w", newline="") as fh:
        fh.write("k,t,Y,gamma_model,theta_a\n")
        for k in range(Y.size):
            th = float(theta_a[min(k, len(theta_a) - 1)])
            fh.write(f"{k},{k * dt!r},{float(Y[k])!r},{float(gamma[k])!r},{th!r}\n")


def read_trace_csv(path) -> dict:
    with open(Path(path), newline="") as fh:
        rd = csv.DictReader(fh)
        rows = list(rd)
    return {c: np.array([float(r[c]) for r in rows]) for c in ("k", "t", "Y", "gamma_model", "theta_a")}


def write_histogram_csv(path, H) -> None:
    """Rows ``k,chain,bin,count`` with 1-based bins, one per (step, chain, CV)."""
    H = np.asarray(H)
    N = H.shape[1] // 2
    with open(Path(path), "w", newline="") as fh:
        fh.write("k,chain,bin,count\n")
        for k in range(H.shape[0]):
            for c, chain in enumerate(("off", "on")):
                for j in range(N):
                    fh.write(f"{k},{chain},{j + 1},{int(H[k, c * N + j])}\n")


def read_histogram_csv(path) -> np.ndarray:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    K = max(int(r["k"]) for r in rows) + 1
    N = max(int(r["bin"]) for r in rows)
    H = np.zeros((K, 2 * N), dtype=np.int64)
    for r in rows:
        H[int(r["k"]), (N if r["chain"] == "on" else 0) + int(r["bin"]) - 1] = int(r["count"])
    return H


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, obj) -> None:
    with open(Path(path), "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
