"""Time-series scenarios: loading, validation, synthesis, per-step views.

A scenario directory holds six CSV files (loads_p, loads_q, prods_p,
prods_v, maintenance, timestamps); headers carry element ids, one row per
5-minute step. Floats are written with shortest round-trip repr so a
load/write cycle is bit-exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .grid import GridModel
from .powerflow import Injections

INTERVAL_MINUTES = 5
STEPS_PER_DAY = 24 * 60 // INTERVAL_MINUTES


class ChronicFormatError(ValueError):
    pass


class ChronicInfeasible(ValueError):
    pass


@dataclass(frozen=True)
class MaintenanceEvent:
    line_id: str
    start_step: int
    duration_steps: int

    @property
    def end_step(self) -> int:
        return self.start_step + self.duration_steps


@dataclass
class Chronic:
    load_ids: list[str]
    gen_ids: list[str]
    load_p: np.ndarray          # (T, n_load) MW
    load_q: np.ndarray          # (T, n_load) MVAr
    prod_p: np.ndarray          # (T, n_gen) MW
    prod_v: np.ndarray          # (T, n_gen) p.u.
    maintenance: list[MaintenanceEvent]
    timestamps: list[datetime]
    name: str = ""

    @property
    def n_steps(self) -> int:
        return self.load_p.shape[0]

    def validate(self):
        t = self.n_steps
        for label, arr, ids in (("loads_p", self.load_p, self.load_ids),
                                ("loads_q", self.load_q, self.load_ids),
                                ("prods_p", self.prod_p, self.gen_ids),
                                ("prods_v", self.prod_v, self.gen_ids)):
            if arr.shape != (t, len(ids)):
                raise ChronicFormatError(f"{label}: length mismatch, {arr.shape[0]} rows vs {t}")
        if len(self.timestamps) != t:
            raise ChronicFormatError(f"timestamps: length mismatch, {len(self.timestamps)} rows vs {t}")
        if np.any(self.load_p < 0):
            raise ChronicFormatError("negative load active power")
        windows: dict[str, list[MaintenanceEvent]] = {}
        for ev in self.maintenance:
            if ev.start_step < 0 or ev.duration_steps <= 0 or ev.end_step > t:
                raise ChronicFormatError(f"maintenance window out of range for line {ev.line_id}")
            for other in windows.setdefault(ev.line_id, []):
                if ev.start_step < other.end_step and other.start_step < ev.end_step:
                    raise ChronicFormatError(f"overlapping maintenance windows on line {ev.line_id}")
            windows[ev.line_id].append(ev)

    def align(self, grid: GridModel) -> "Chronic":
        """Reorder columns to the grid's element order, checking ids by name."""
        for ids, known, kind in ((self.load_ids, grid.load_pos, "load"),
                                 (self.gen_ids, grid.gen_pos, "generator")):
            for eid in ids:
                if eid not in known:
                    raise ChronicFormatError(f"unknown {kind} id {eid!r}")
            if len(ids) != len(known):
                missing = set(known) - set(ids)
                raise ChronicFormatError(f"chronic missing {kind} columns: {sorted(missing)}")
        for ev in self.maintenance:
            if ev.line_id not in grid.line_pos:
                raise ChronicFormatError(f"maintenance references unknown line {ev.line_id!r}")
        lperm = [self.load_ids.index(l.id) for l in grid.loads]
        gperm = [self.gen_ids.index(g.id) for g in grid.generators]
        return Chronic(
            load_ids=[l.id for l in grid.loads],
            gen_ids=[g.id for g in grid.generators],
            load_p=self.load_p[:, lperm],
            load_q=self.load_q[:, lperm],
            prod_p=self.prod_p[:, gperm],
            prod_v=self.prod_v[:, gperm],
            maintenance=list(self.maintenance),
            timestamps=list(self.timestamps),
            name=self.name,
        )

    def validate_against(self, grid: GridModel):
        aligned = self.align(grid)
        if np.any(aligned.prod_p < -1e-9) or np.any(aligned.prod_p > grid.gen_p_max + 1e-9):
            raise ChronicFormatError("scheduled generation outside [0, p_max]")


def injections_at(chronic: Chronic, t: int) -> Injections:
    """Realized injections for step ``t`` (columns in the chronic's order)."""
    if not 0 <= t < chronic.n_steps:
        raise IndexError(f"step {t} outside chronic of length {chronic.n_steps}")
    return Injections(chronic.load_p[t].copy(), chronic.load_q[t].copy(),
                      chronic.prod_p[t].copy(), chronic.prod_v[t].copy())


def forecast_at(chronic: Chronic, t: int, sigma: float = 0.0, seed: int = 0) -> Injections:
    """Injections that simulate() assumes for step ``t``.

    Perfect foresight by default; with ``sigma`` > 0 an additive zero-mean
    gaussian error (deterministic per step) degrades load and generation
    values. Voltage setpoints are always known exactly.
    """
    inj = injections_at(chronic, t)
    if sigma > 0.0:
        rng = np.random.default_rng([seed & 0x7FFFFFFF, t])
        inj.load_p = inj.load_p + rng.normal(0.0, sigma, inj.load_p.shape)
        inj.load_q = inj.load_q + rng.normal(0.0, sigma, inj.load_q.shape)
        inj.gen_p = inj.gen_p + rng.normal(0.0, sigma, inj.gen_p.shape)
    return inj


def maintenance_active(chronic: Chronic, line_id: str, t: int) -> bool:
    return any(ev.line_id == line_id and ev.start_step <= t < ev.end_step
               for ev in chronic.maintenance)


# ---------------------------------------------------------------------------
# CSV layout


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_table(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _read_table(path: Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ChronicFormatError(f"{path.name}: empty file") from None
        data = []
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ChronicFormatError(f"{path.name}:{rownum}: expected {len(header)} cells")
            try:
                data.append([float(v) for v in row])
            except ValueError:
                raise ChronicFormatError(f"{path.name}:{rownum}: non-numeric cell") from None
    return header, np.array(data) if data else np.zeros((0, len(header)))


def write_chronic(chronic: Chronic, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    _write_table(path / "loads_p.csv", chronic.load_ids,
                 ([_fmt(v) for v in row] for row in chronic.load_p))
    _write_table(path / "loads_q.csv", chronic.load_ids,
                 ([_fmt(v) for v in row] for row in chronic.load_q))
    _write_table(path / "prods_p.csv", chronic.gen_ids,
                 ([_fmt(v) for v in row] for row in chronic.prod_p))
    _write_table(path / "prods_v.csv", chronic.gen_ids,
                 ([_fmt(v) for v in row] for row in chronic.prod_v))
    _write_table(path / "maintenance.csv", ["line_id", "start_step", "duration_steps"],
                 ([ev.line_id, str(ev.start_step), str(ev.duration_steps)]
                  for ev in chronic.maintenance))
    _write_table(path / "timestamps.csv", ["datetime"],
                 ([ts.isoformat(timespec="minutes")] for ts in chronic.timestamps))


def load_chronic(path, grid: GridModel | None = None) -> Chronic:
    """Parse and validate a scenario directory; optionally align to a grid."""
    path = Path(path)
    load_ids, load_p = _read_table(path / "loads_p.csv")
    load_ids_q, load_q = _read_table(path / "loads_q.csv")
    gen_ids, prod_p = _read_table(path / "prods_p.csv")
    gen_ids_v, prod_v = _read_table(path / "prods_v.csv")
    if load_ids_q != load_ids:
        raise ChronicFormatError("loads_q.csv: header differs from loads_p.csv")
    if gen_ids_v != gen_ids:
        raise ChronicFormatError("prods_v.csv: header differs from prods_p.csv")

    maintenance = []
    with open(path / "maintenance.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and header != ["line_id", "start_step", "duration_steps"]:
            raise ChronicFormatError("maintenance.csv: unexpected header")
        for rownum, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ChronicFormatError(f"maintenance.csv:{rownum}: expected 3 cells")
            try:
                maintenance.append(MaintenanceEvent(row[0], int(row[1]), int(row[2])))
            except ValueError:
                raise ChronicFormatError(f"maintenance.csv:{rownum}: non-numeric cell") from None

    timestamps = []
    with open(path / "timestamps.csv", newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for rownum, row in enumerate(reader, start=2):
            try:
                timestamps.append(datetime.fromisoformat(row[0]))
            except (IndexError, ValueError):
                raise ChronicFormatError(f"timestamps.csv:{rownum}: bad datetime") from None

    chronic = Chronic(load_ids, gen_ids, load_p, load_q, prod_p, prod_v,
                      maintenance, timestamps, name=path.name)
    chronic.validate()
    if grid is not None:
        chronic = chronic.align(grid)
        chronic.validate_against(grid)
    return chronic


# ---------------------------------------------------------------------------
# Synthetic scenarios


@dataclass
class SyntheticConfig:
    """Knobs of the synthetic scenario generator.

    ``base_load_p`` maps load ids to their reference MW; the daily curve is
    level + amplitude * cos(2*pi*(hour - peak_hour)/24) with bounded
    multiplicative noise on top. Generation is dispatched proportionally to
    p_max to cover the noiseless curve times ``loss_margin``.
    """

    days: int = 1
    seed: int = 0
    start: str = "2026-06-01T00:00"
    base_load_p: dict[str, float] = field(default_factory=dict)
    gen_voltage: dict[str, float] = field(default_factory=dict)
    default_gen_voltage: float = 1.04
    load_level: float = 0.9
    load_amplitude: float = 0.2
    load_noise: float = 0.01
    peak_hour: float = 15.0
    power_factor: float = 0.95
    loss_margin: float = 1.03
    maintenance_rate: float = 0.0       # expected events per day
    maintenance_min_steps: int = 6
    maintenance_max_steps: int = 24
    name: str = ""

    def to_dict(self) -> dict:
        from dataclasses import asdict
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "SyntheticConfig":
        return SyntheticConfig(**d)


def _maintenance_candidates(grid: GridModel) -> list[str]:
    # Outages must not split the default grid; checked by static application.
    from .actions import Action, islands_statically
    return [l.id for l in sorted(grid.lines, key=lambda l: l.id)
            if not islands_statically(grid, Action(line_id=l.id))]


def generate_synthetic(grid: GridModel, config: SyntheticConfig,
                       check_solvable: bool = True) -> Chronic:
    """Deterministic synthetic chronic; solvable base case or it raises."""
    if not config.base_load_p:
        raise ChronicInfeasible("config.base_load_p is empty")
    rng = np.random.default_rng(config.seed)
    t_len = config.days * STEPS_PER_DAY
    start = datetime.fromisoformat(config.start)
    timestamps = [start + timedelta(minutes=INTERVAL_MINUTES * i) for i in range(t_len)]

    load_ids = [l.id for l in grid.loads]
    gen_ids = [g.id for g in grid.generators]
    try:
        base_p = np.array([config.base_load_p[i] for i in load_ids])
    except KeyError as exc:
        raise ChronicInfeasible(f"no base load for {exc}") from exc

    hours = np.array([ts.hour + ts.minute / 60.0 for ts in timestamps])
    curve = config.load_level + config.load_amplitude * np.cos(
        2.0 * math.pi * (hours - config.peak_hour) / 24.0)
    noise = rng.normal(0.0, config.load_noise, size=(t_len, len(load_ids)))
    if config.load_noise > 0:
        noise = np.clip(noise, -3.0 * config.load_noise, 3.0 * config.load_noise)
    load_p = base_p[None, :] * curve[:, None] * (1.0 + noise)
    load_p = np.maximum(load_p, 0.0)
    q_ratio = math.tan(math.acos(config.power_factor))
    load_q = load_p * q_ratio

    total = base_p.sum() * curve * config.loss_margin
    p_max_sum = grid.gen_p_max.sum()
    if np.max(total) > p_max_sum:
        raise ChronicInfeasible(
            f"peak dispatch {np.max(total):.1f} MW exceeds installed {p_max_sum:.1f} MW")
    share = grid.gen_p_max / p_max_sum
    prod_p = total[:, None] * share[None, :]
    prod_v = np.tile(
        np.array([config.gen_voltage.get(g, config.default_gen_voltage) for g in gen_ids]),
        (t_len, 1))

    maintenance: list[MaintenanceEvent] = []
    n_events = int(rng.poisson(config.maintenance_rate * config.days))
    candidates = _maintenance_candidates(grid) if n_events else []
    for _ in range(n_events):
        if not candidates:
            break
        line = candidates[int(rng.integers(len(candidates)))]
        dur = int(rng.integers(config.maintenance_min_steps, config.maintenance_max_steps + 1))
        if t_len - dur - 24 <= 12:
            continue
        start_step = int(rng.integers(12, t_len - dur - 12))
        ev = MaintenanceEvent(line, start_step, dur)
        if any(o.line_id == line and ev.start_step < o.end_step and o.start_step < ev.end_step
               for o in maintenance):
            continue
        maintenance.append(ev)

    chronic = Chronic(load_ids, gen_ids, load_p, load_q, prod_p, prod_v,
                      maintenance, timestamps, name=config.name or f"synthetic-{config.seed}")
    chronic.validate()
    chronic.validate_against(grid)

    if check_solvable:
        from .powerflow import build_case, solve_ac
        sol = solve_ac(build_case(grid, grid.default_topology(), injections_at(chronic, 0)))
        if not sol.converged:
            raise ChronicInfeasible("base case power flow diverges at step 0")
    return chronic


def split_days(chronic: Chronic) -> list[Chronic]:
    """Slice a multi-day chronic into independent single-day chronics."""
    out = []
    for d in range(chronic.n_steps // STEPS_PER_DAY):
        lo, hi = d * STEPS_PER_DAY, (d + 1) * STEPS_PER_DAY
        events = []
        for ev in chronic.maintenance:
            s, e = max(ev.start_step, lo), min(ev.end_step, hi)
            if s < e:
                events.append(MaintenanceEvent(ev.line_id, s - lo, e - s))
        out.append(Chronic(chronic.load_ids, chronic.gen_ids,
                           chronic.load_p[lo:hi].copy(), chronic.load_q[lo:hi].copy(),
                           chronic.prod_p[lo:hi].copy(), chronic.prod_v[lo:hi].copy(),
                           events, chronic.timestamps[lo:hi],
                           name=f"{chronic.name}-day{d}"))
    return out


def load_manifest(path) -> list[Path]:
    """Scenario manifest: one scenario directory per line, relative to the file."""
    path = Path(path)
    dirs = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            dirs.append((path.parent / line).resolve())
    return dirs


def write_manifest(scenario_dirs, path) -> None:
    path = Path(path)
    rel = []
    for d in scenario_dirs:
        d = Path(d)
        try:
            rel.append(str(d.relative_to(path.parent)))
        except ValueError:
            rel.append(str(d))
    path.write_text("".join(f"{r}\n" for r in rel))
