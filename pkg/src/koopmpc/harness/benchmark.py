"""Scenario comparisons and the two benchmark suites."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .closed_loop import ClosedLoopTrace, fit_model, model_cache_key, run_closed_loop
from .scenario import Scenario, four_tanks_scenario, vdp_scenario

logger = logging.getLogger(__name__)

PLATEAU_WINDOW = 100


def plateau(err: np.ndarray, window: int = PLATEAU_WINDOW):
    """Geometric-mean level and max/min ratio over the last ``window`` samples."""
    tail = np.asarray(err[-window:], dtype=float)
    tail = np.maximum(tail, np.finfo(float).tiny)
    return float(np.exp(np.mean(np.log(tail)))), float(tail.max() / tail.min())


@dataclass
class Comparison:
    traces: list

    @property
    def names(self):
        return [t.name for t in self.traces]

    def error_table(self, which: str = "output") -> np.ndarray:
        """Per-step error columns, one per scenario, padded with NaN."""
        cols = [t.err_output if which == "output" else t.err_state for t in self.traces]
        T = max(len(c) for c in cols)
        out = np.full((T, len(cols)), np.nan)
        for j, c in enumerate(cols):
            out[:len(c), j] = c
        return out

    def summary(self) -> list[dict]:
        rows = []
        for t in self.traces:
            level, ratio = plateau(t.err_output)
            rows.append({
                "scenario": t.name,
                "steps": t.steps,
                "final_err_state": float(t.err_state[-1]),
                "final_err_output": float(t.err_output[-1]),
                "tail_level": level,
                "tail_ratio": ratio,
                "mean_ocp_iters": float(np.mean(t.ocp_iters)),
            })
        return rows

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for t in self.traces:
            t.write_csv(out / f"{t.name}.csv")
        rows = self.summary()
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in r.items()})
        table = self.error_table()
        with open(out / "errors.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k"] + self.names)
            for k, row in enumerate(table):
                w.writerow([k] + [f"{v:.17g}" for v in row])
        (out / "errors.gp").write_text(_gnuplot(self.names))


def _gnuplot(names) -> str:
    lines = [
        "set datafile separator ','",
        "set logscale y",
        "set key outside",
        "set xlabel 'k'",
        "set ylabel 'error norm'",
        "set terminal pngcairo size 900,500",
        "set output 'errors.png'",
    ]
    plots = [f"'errors.csv' using 1:{j + 2} with lines title '{name}'" for j, name in enumerate(names)]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def compare_scenarios(scenarios: list[Scenario], models: dict | None = None) -> Comparison:
    """Run each scenario, sharing one fitted model per distinct model configuration."""
    if not scenarios:
        raise ValueError("nothing to compare")
    first = scenarios[0]
    for s in scenarios[1:]:
        if s.system != first.system or s.simulation.x0 != first.simulation.x0:
            raise ValueError("compared scenarios must share the system and initial state")
    models = {} if models is None else models
    traces = []
    for s in scenarios:
        key = model_cache_key(s)
        if key not in models:
            models[key] = fit_model(s)
        logger.info("running %s", s.name)
        traces.append(run_closed_loop(s, models[key]))
    return Comparison(traces)


def suite(name: str, seed: int = 0) -> list[Scenario]:
    if name == "vdp":
        return [vdp_scenario(kind, mode, seed=seed) for kind, mode in (
            ("bilinear", "standard"), ("bilinear", "offset_free"), ("edmdc", "standard"),
            ("edmdc", "offset_free"), ("safedmd", "standard"))]
    if name in ("four-tanks", "four_tanks"):
        return [four_tanks_scenario(kind, mode, eq, seed=seed) for kind, mode, eq in (
            ("bilinear", "standard", "known"), ("bilinear", "offset_free", "known"),
            ("bilinear", "standard", "unknown"), ("bilinear", "offset_free", "unknown"),
            ("edmdc", "standard", "known"), ("edmdc", "offset_free", "known"))]
    raise ValueError(f"unknown suite {name!r}")


def run_suite(name: str, out_dir=None, seed: int = 0) -> Comparison:
    comp = compare_scenarios(suite(name, seed))
    if out_dir is not None:
        comp.write(out_dir)
    return comp


__all__ = ["Comparison", "ClosedLoopTrace", "compare_scenarios", "plateau", "run_suite", "suite"]
