"""Objective metrics for enhanced audio. All are pure functions of their inputs.

Energy ratios are capped at +/-60 dB; a residual energy is floored at 1e-12
of the reference energy so silence never yields infinity.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError, UndefinedMetricError

DB_CAP = 60.0
REL_FLOOR = 1e-12


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise InvalidInputError(f"signals must have equal length ({a.shape[0]} vs {b.shape[0]})")
    return a, b


def _reduction_db(num: np.ndarray, den: np.ndarray, what: str) -> float:
    e_num = float(np.dot(num, num))
    if e_num == 0.0:
        raise UndefinedMetricError(f"{what} is silent")
    e_den = max(float(np.dot(den, den)), REL_FLOOR * e_num)
    return float(np.clip(10.0 * np.log10(e_num / e_den), -DB_CAP, DB_CAP))


def erle(mic, out) -> float:
    """Echo return loss enhancement in dB over a far-end single-talk clip."""
    mic, out = _pair(mic, out)
    return _reduction_db(mic, out, "microphone signal")


def bak_suppr(inp, out) -> float:
    """Energy reduction in dB on a clip holding only interfering talkers."""
    inp, out = _pair(inp, out)
    return _reduction_db(inp, out, "input signal")


@dataclass(frozen=True)
class TsosConfig:
    frame_ms: float = 20.0
    hop_ms: float = 10.0
    active_db: float = 40.0      # frames within this much of the loudest target frame count
    threshold_db: float = 10.0   # attenuation beyond this is over-suppression
    sample_rate: int = 16000


def _frame_energy(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    if x.shape[0] < win:
        x = np.pad(x, (0, win - x.shape[0]))
    n = 1 + (x.shape[0] - win) // hop
    idx = np.arange(n)[:, None] * hop + np.arange(win)[None, :]
    return (x[idx] ** 2).sum(axis=1)


def tsos(target, enhanced, cfg: TsosConfig = TsosConfig()) -> float:
    """Fraction of active target frames attenuated by more than ``threshold_db``."""
    target, enhanced = _pair(target, enhanced)
    win = int(round(cfg.frame_ms * cfg.sample_rate / 1000))
    hop = int(round(cfg.hop_ms * cfg.sample_rate / 1000))
    et = _frame_energy(target, win, hop)
    ee = _frame_energy(enhanced, win, hop)
    peak = et.max()
    if peak <= 0:
        raise UndefinedMetricError("target has no active frames")
    active = et >= peak * 10.0 ** (-cfg.active_db / 10.0)
    et, ee = et[active], ee[active]
    # E_t / E_e > 10^(thr/10), written without dividing by a zero frame
    over = et > ee * 10.0 ** (cfg.threshold_db / 10.0)
    return float(over.mean())


def si_sdr(ref, est) -> float:
    """Scale-invariant signal-to-distortion ratio in dB."""
    ref, est = _pair(ref, est)
    e_ref = float(np.dot(ref, ref))
    if e_ref == 0.0:
        raise UndefinedMetricError("reference is silent")
    alpha = float(np.dot(est, ref)) / e_ref
    proj = alpha * ref
    resid = est - proj
    e_proj = float(np.dot(proj, proj))
    e_res = float(np.dot(resid, resid))
    if e_proj == 0.0:
        return -DB_CAP
    e_res = max(e_res, REL_FLOOR * e_proj)
    return float(np.clip(10.0 * np.log10(e_proj / e_res), -DB_CAP, DB_CAP))


METRICS = {"erle": erle, "tsos": tsos, "baksuppr": bak_suppr, "sisdr": si_sdr}


@dataclass
class MetricReport:
    """Per-clip metric values plus mean/median aggregates."""

    config_hash: str = ""
    rows: list = field(default_factory=list)   # (clip_id, metric, value)

    def add(self, clip_id: str, metric: str, value: float) -> None:
        self.rows.append((str(clip_id), str(metric), float(value)))

    def values(self, metric: str) -> np.ndarray:
        return np.array([v for _, m, v in self.rows if m == metric])

    def aggregate(self) -> dict:
        out = {}
        for m in sorted({m for _, m, _ in self.rows}):
            v = self.values(m)
            out[m] = {"mean": float(v.mean()), "median": float(np.median(v)), "count": int(v.size)}
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["clip_id", "metric", "value"])
        for cid, m, v in self.rows:
            w.writerow([cid, m, repr(v)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"config_hash": self.config_hash, "db_cap": DB_CAP, "relative_energy_floor": REL_FLOOR,
                           "aggregate": self.aggregate()}, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, text: str, config_hash: str = "") -> "MetricReport":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["clip_id", "metric", "value"]:
            raise InvalidInputError("metric CSV must start with the header clip_id,metric,value")
        rep = cls(config_hash)
        for cid, m, v in rows[1:]:
            rep.add(cid, m, float(v))
        return rep
