"""Fit the cost model's free parameters to measured overheads.

Each target is a scenario (usually an SDP preset variant) and the overhead
percentage measured for it. Traffic statistics are replayed once per target;
the search then only re-evaluates the analytic model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from ..errors import CalibrationError, ConfigError
from ..sim.costmodel import CostModelParams, model_cycles
from .scenario import load_scenario, workload_for, workload_stats

# parameters the search moves; b16 stays tied to 4 * b4 (four times the S-boxes)
FREE = ("b4", "hmac_bytes_per_cycle", "pmac_bytes_per_cycle_per_engine", "set_bytes_per_cycle")
SBOX_SPEEDUP = 4.0
TIE = 0.10
PRIOR_WEIGHT = 1e-3
STEPS = (2.0, 1.5, 1.2, 1.1, 1.05, 1.02, 1.01, 1.005)
SWEEPS = 40


@dataclass(frozen=True)
class Target:
    label: str
    overhead_pct: float
    cfg: object
    stats: dict
    baseline: object


@dataclass
class CalibrationResult:
    params: CostModelParams
    residuals: list          # (label, target %, model %)
    objective: float
    ordering_ok: bool

    def table(self) -> str:
        rows = ["label\ttarget_pct\tmodel_pct\trel_err"]
        for label, t, m in self.residuals:
            rows.append(f"{label}\t{t:g}\t{m:.2f}\t{(m - t) / t:+.3f}")
        return "\n".join(rows) + "\n"


def parse_targets(text: str, base_dir=".") -> list[tuple[Path, float]]:
    out = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise ConfigError("targets line needs <config_path>\\t<overhead_pct>", n)
        try:
            pct = float(parts[1])
        except ValueError:
            raise ConfigError(f"bad overhead {parts[1]!r}", n) from None
        out.append((Path(base_dir) / parts[0].strip(), pct))
    return out


def load_targets(path) -> list[Target]:
    path = Path(path)
    targets = []
    for cfg_path, pct in parse_targets(path.read_text(), path.parent):
        scn = load_scenario(cfg_path)
        workload = workload_for(scn)
        if workload is None:
            raise ConfigError(f"{cfg_path}: calibration targets need a preset workload")
        rep = workload_stats(workload)
        targets.append(Target(scn.name, pct, workload.cfg, rep.shield.stats, rep.baseline))
    return targets


def model_pct(t: Target, params: CostModelParams) -> float:
    return float(model_cycles(t.cfg, params, t.stats, t.baseline).overhead_pct)


def _tied(a: float, b: float) -> bool:
    return abs(a - b) <= TIE * max(abs(a), abs(b))


def ordering_holds(targets, values) -> bool:
    """The model must tie where the targets tie and strictly order elsewhere."""
    order = sorted(range(len(targets)), key=lambda i: -targets[i].overhead_pct)
    for i, j in zip(order, order[1:]):
        if _tied(targets[i].overhead_pct, targets[j].overhead_pct):
            if not _tied(values[i], values[j]):
                return False
        elif not (values[i] > values[j] and not _tied(values[i], values[j])):
            return False
    return True


def _params(base: CostModelParams, logs: dict) -> CostModelParams:
    kw = {k: math.exp(v) for k, v in logs.items()}
    kw["b16"] = kw["b4"] * SBOX_SPEEDUP
    return base.with_values(**kw)


def calibrate(targets: list[Target], start: CostModelParams | None = None) -> CalibrationResult:
    if len(targets) < 3:
        raise CalibrationError(f"calibration needs at least 3 targets, got {len(targets)}")
    start = start or CostModelParams()
    prior = {k: math.log(getattr(start, k)) for k in FREE}

    def objective(logs):
        p = _params(start, logs)
        err = 0.0
        for t in targets:
            m = model_pct(t, p)
            if m <= 0 or t.overhead_pct <= 0:
                err += 100.0
            else:
                err += (math.log(m) - math.log(t.overhead_pct)) ** 2
        return err + PRIOR_WEIGHT * sum((logs[k] - prior[k]) ** 2 for k in FREE)

    logs = dict(prior)
    best = objective(logs)
    for step in STEPS:
        d = math.log(step)
        for _ in range(SWEEPS):
            improved = False
            for k in FREE:
                for sign in (1, -1):
                    trial = dict(logs)
                    trial[k] += sign * d
                    val = objective(trial)
                    if val < best - 1e-12:
                        logs, best, improved = trial, val, True
                        break
            if not improved:
                break

    params = _params(start, logs)
    values = [model_pct(t, params) for t in targets]
    residuals = [(t.label, t.overhead_pct, v) for t, v in zip(targets, values)]
    ok = ordering_holds(targets, values)
    result = CalibrationResult(params, residuals, best, ok)
    if not ok:
        raise CalibrationError("no parameter set reproduced the target ordering:\n"
                               + result.table())
    return result
