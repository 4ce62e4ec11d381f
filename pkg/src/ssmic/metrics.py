"""Rate-distortion metrics: MSE/PSNR, bpp, Bjontegaard delta rate."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

BD_SAMPLES = 1000


@dataclass(frozen=True)
class RdPoint:
    bpp: float
    psnr: float
    label: str = ""

    def __post_init__(self):
        if not self.bpp > 0:
            raise ValueError(f"bpp must be > 0, got {self.bpp}")


def mse(x: np.ndarray, x_hat: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {x_hat.shape}")
    return float(np.mean((x - x_hat) ** 2))


def psnr_from_mse(value: float, peak: float = 255.0) -> float:
    if value == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / value)


def psnr(x: np.ndarray, x_hat: np.ndarray) -> float:
    """PSNR in dB over 8-bit RGB; ``math.inf`` for identical images."""
    return psnr_from_mse(mse(x, x_hat))


def bpp(total_bits: float, height: int, width: int) -> float:
    return total_bits / (height * width)


def _as_arrays(points: Sequence[RdPoint]) -> tuple[np.ndarray, np.ndarray]:
    if len(points) < 4:
        raise ValueError(f"BD-rate needs at least 4 RD points per curve, got {len(points)}")
    rate = np.array([p.bpp for p in points], dtype=np.float64)
    quality = np.array([p.psnr for p in points], dtype=np.float64)
    if not np.isfinite(quality).all():
        raise ValueError("BD-rate needs finite PSNR values")
    return rate, quality


def bd_rate(anchor: Sequence[RdPoint], test: Sequence[RdPoint], samples: int = BD_SAMPLES) -> float:
    """Average rate difference of ``test`` vs ``anchor`` at equal PSNR, in %.

    Classical Bjontegaard: a cubic fit of log10(rate) against PSNR per curve,
    integrated with the trapezoid rule over the overlapping PSNR interval.
    Negative means ``test`` needs fewer bits than the anchor.
    """
    r_a, q_a = _as_arrays(anchor)
    r_t, q_t = _as_arrays(test)
    lo = max(q_a.min(), q_t.min())
    hi = min(q_a.max(), q_t.max())
    if not hi > lo:
        raise ValueError(f"RD curves do not overlap in PSNR ([{lo:.3f}, {hi:.3f}] is empty)")
    fit_a = np.polyfit(q_a, np.log10(r_a), 3)
    fit_t = np.polyfit(q_t, np.log10(r_t), 3)
    grid = np.linspace(lo, hi, samples)
    int_a = np.trapezoid(np.polyval(fit_a, grid), grid)
    int_t = np.trapezoid(np.polyval(fit_t, grid), grid)
    mean_diff = (int_t - int_a) / (hi - lo)
    return float((10.0**mean_diff - 1.0) * 100.0)


def bd_rate_matrix(curves: Mapping[str, Sequence[RdPoint]]) -> dict[tuple[str, str], float]:
    """BD-rate of every curve (column) against every other curve (row anchor)."""
    return {(a, t): bd_rate(curves[a], curves[t]) for a in curves for t in curves}


# CSV/table emitters


RD_FIELDS = ("label", "bpp", "psnr")


def write_rd_csv(points: Iterable[RdPoint], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RD_FIELDS)
    for p in points:
        writer.writerow([p.label, repr(p.bpp), repr(p.psnr)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_rd_csv(path: str | Path) -> list[RdPoint]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"bpp", "psnr"} <= set(rows[0]):
        raise ValueError(f"{path}: expected a CSV with 'bpp' and 'psnr' columns")
    return [RdPoint(float(r["bpp"]), float(r["psnr"]), r.get("label", "") or "") for r in rows]


def format_bd_matrix(matrix: Mapping[tuple[str, str], float], fmt: str = "table") -> str:
    names = list(dict.fromkeys(a for a, _ in matrix))
    rows = [["anchor \\ test"] + names]
    for a in names:
        rows.append([a] + [f"{matrix[(a, t)]:.2f}" for t in names])
    if fmt == "csv":
        return "\n".join(",".join(r) for r in rows) + "\n"
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows) + "\n"


def gnuplot_script(csv_paths: Sequence[str | Path], output: str = "rd.png") -> str:
    """A gnuplot script plotting PSNR against bpp for RD CSV files."""
    plots = ", ".join(
        f"'{p}' using 2:3 with linespoints title '{Path(p).stem}'" for p in csv_paths
    )
    return (
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        f"set terminal pngcairo size 800,600\nset output '{output}'\n"
        "set xlabel 'bpp'\nset ylabel 'PSNR (dB)'\nset grid\n"
        f"plot {plots}\n"
    )
