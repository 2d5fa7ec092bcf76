"""Lag-domain analysis of exponential moving averages.

An average mu updated as mu <- alpha*mu + (1-alpha)*phi weights the
input phi_{t-i} by (1-alpha)*alpha^i.  A linear combination of such
averages at different scales therefore applies a closed-form kernel
over past inputs, and inspecting that kernel shows what a read-out of
the averages can compute: differences of two scales give band-pass
kernels that ignore the present and peak at a controllable lag.

viewpoint_kernel computes each term as w * alpha^i with the per-term
weight w = coefficient * (1 - alpha) formed first.  For coefficients of
the form 1/(1-alpha) this makes w exactly 1.0 in float64, so difference
kernels like 0.999^i - 0.99^i come out bit-exact, including an exact
zero at lag 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_HORIZON = 1000


def _check_alpha(alpha: float) -> float:
    a = float(alpha)
    if not np.isfinite(a) or not 0.0 <= a < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    return a


def ema_weight_profile(alpha: float, horizon: int = DEFAULT_HORIZON) -> np.ndarray:
    """Kernel of a single average: a length-horizon vector whose entry i
    (the lag behind the present, i = 0..horizon-1) is (1-alpha)*alpha^i."""
    a = _check_alpha(alpha)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    lags = np.arange(horizon, dtype=np.float64)
    return (1.0 - a) * a ** lags


@dataclass(frozen=True)
class ViewpointSpec:
    """A named linear combination of averaging scales.

    terms: (coefficient, alpha) pairs.  The kernel over past inputs is
    sum_j coeff_j * (1-alpha_j) * alpha_j^i for lag i.
    """

    terms: tuple[tuple[float, float], ...]
    horizon: int = DEFAULT_HORIZON
    label: str = "viewpoint"

    def __post_init__(self):
        if not self.terms:
            raise ValueError("a viewpoint needs at least one term")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        canon = []
        for coeff, alpha in self.terms:
            c = float(coeff)
            if not np.isfinite(c):
                raise ValueError("coefficients must be finite")
            canon.append((c, _check_alpha(alpha)))
        object.__setattr__(self, "terms", tuple(canon))


def viewpoint_kernel(spec: ViewpointSpec) -> np.ndarray:
    """Length-horizon kernel; index is the lag behind the present."""
    lags = np.arange(spec.horizon, dtype=np.float64)
    total = np.zeros(spec.horizon)
    for coeff, alpha in spec.terms:
        w = coeff * (1.0 - alpha)   # formed first: see module docstring
        total += w * alpha ** lags
    return total


def difference_view(alpha_hi: float, alpha_lo: float,
                    horizon: int = DEFAULT_HORIZON,
                    label: str | None = None) -> ViewpointSpec:
    """ema(alpha_hi)/(1-alpha_hi) - ema(alpha_lo)/(1-alpha_lo).

    The normalization cancels the (1-alpha) kernel prefactors, leaving
    alpha_hi^i - alpha_lo^i: zero at lag 0, positive afterwards, with a
    single interior maximum.
    """
    hi, lo = _check_alpha(alpha_hi), _check_alpha(alpha_lo)
    if hi <= lo:
        raise ValueError("alpha_hi must exceed alpha_lo")
    if label is None:
        label = f"diff_{hi:g}_{lo:g}"
    terms = ((1.0 / (1.0 - hi), hi), (-1.0 / (1.0 - lo), lo))
    return ViewpointSpec(terms=terms, horizon=horizon, label=label)


def default_viewpoints(horizon: int = DEFAULT_HORIZON) -> list[ViewpointSpec]:
    """Four reference views, slow to fast, plus one with a restored
    mid-scale component that shifts weight back toward the present."""
    v1 = difference_view(0.999, 0.99, horizon)
    v2 = difference_view(0.99, 0.9, horizon)
    v3 = difference_view(0.9, 0.5, horizon)
    v4 = ViewpointSpec(
        terms=v1.terms + ((0.5 / (1.0 - 0.9), 0.9),),
        horizon=horizon,
        label="diff_0.999_0.99_plus_0.9",
    )
    return [v1, v2, v3, v4]


def ema_scan(phis: np.ndarray, alpha: float) -> np.ndarray:
    """Iterate mu <- alpha*mu + (1-alpha)*phi from mu=0 over a scalar
    sequence; returns the trajectory of mu, same length as phis."""
    a = _check_alpha(alpha)
    x = np.asarray(phis, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("phis must be a 1-D sequence")
    out = np.empty_like(x)
    mu = 0.0
    for t in range(x.shape[0]):
        mu = a * mu + (1.0 - a) * x[t]
        out[t] = mu
    return out


def apply_kernel(kernel: np.ndarray, phis: np.ndarray) -> float:
    """Evaluate a lag kernel against the end of a sequence:
    sum_i kernel[i] * phis[-1-i], truncated to the available history."""
    k = np.asarray(kernel, dtype=np.float64)
    x = np.asarray(phis, dtype=np.float64)
    if k.ndim != 1 or x.ndim != 1:
        raise ValueError("kernel and phis must be 1-D")
    m = min(k.shape[0], x.shape[0])
    return float(np.dot(k[:m], x[::-1][:m]))


def combine_scans(spec: ViewpointSpec, phis: np.ndarray) -> float:
    """The viewpoint value reached by actually running the averages:
    sum_j coeff_j * ema_scan(phis, alpha_j)[-1]."""
    total = 0.0
    for coeff, alpha in spec.terms:
        total += coeff * ema_scan(phis, alpha)[-1]
    return total


def export_profiles(path, specs: list[ViewpointSpec]) -> None:
    """CSV with a lag column and one column per viewpoint, full float64
    round-trip precision: one row per lag, header from the labels.  All
    specs must share a horizon; an empty list writes the header only."""
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ValueError("viewpoint labels must be unique")
    lines = [",".join(["lag"] + labels)]
    if specs:
        horizon = specs[0].horizon
        for s in specs:
            if s.horizon != horizon:
                raise ValueError("all viewpoints must share a horizon")
        kernels = [viewpoint_kernel(s) for s in specs]
        for i in range(horizon):
            row = [str(i)] + [repr(float(k[i])) for k in kernels]
            lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_profiles(path) -> tuple[list[str], np.ndarray]:
    """Inverse of export_profiles: (labels, (horizon+1, n_views) array)."""
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    if header[0] != "lag":
        raise ValueError("not a viewpoint profile CSV")
    labels = header[1:]
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        rows.append([float(v) for v in parts[1:]])
    values = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(labels))
    return labels, values
