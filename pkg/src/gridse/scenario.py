"""Case-file ingestion, snapshot experiments and report emission.

Case bundles are directories holding buses.csv and lines.csv (headers below)
plus an optional case.json with the MVA base, a format version tag and
optional per-bus load weights. Snapshot runs scale the loads, solve a truth
power flow, synthesize measurements from a per-snapshot derived seed and
estimate with one-snapshot memory (each snapshot warm-starts from the
previous estimate).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .controller import ScalarOutput, SwitchedSystem, discretize
from .estimator import EstimatorConfig, SingularGain, estimate
from .measurements import (
    DEFAULT_SIGMA_FLOW,
    DEFAULT_SIGMA_INJ,
    DEFAULT_SIGMA_V,
    FROM,
    TO,
    Measurement,
    MeasurementKind,
    MeasurementSet,
    full_measurement_plan,
    generate_measurements,
)
from .network import (
    Branch,
    BusKind,
    BusRow,
    Network,
    NetworkError,
    build_network,
    build_ybus,
    buses_from_rows,
    with_scaled_loads,
)
from .powerflow import SingularJacobian, StateVector, solve_power_flow

BUSES_FILE = "buses.csv"
LINES_FILE = "lines.csv"
CASE_FILE = "case.json"
BUS_COLUMNS = ["bus", "vsp_pu", "pg_mw", "qg_mvar", "pl_mw", "ql_mvar"]
LINE_COLUMNS = ["from_bus", "to_bus", "r_pu", "x_pu", "b_half_pu"]
MEASUREMENT_COLUMNS = ["kind", "bus", "branch", "end", "value_pu", "sigma_pu"]
REPORT_COLUMNS = [
    "snapshot",
    "bus",
    "v_true_pu",
    "v_est_pu",
    "angle_true_deg",
    "angle_est_deg",
    "iterations",
    "objective",
    "converged",
]


class CaseFileError(ValueError):
    """Parse failure in a case or data file, with position information."""

    def __init__(self, file, line: int, column: str, reason: str):
        self.file = str(file)
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"{self.file}:{line}: column '{column}': {reason}")


@dataclass(frozen=True)
class CaseBundle:
    network: Network
    directory: str
    buses_path: str
    lines_path: str
    case_path: Optional[str]
    version: str
    bus_load_weights: dict


def builtin_case_dir(name: str) -> Path:
    return Path(__file__).parent / "cases" / name


def resolve_case_dir(name_or_path: str) -> Path:
    """A case argument is either a directory path or the name of a shipped case."""
    p = Path(name_or_path)
    if p.is_dir():
        return p
    builtin = builtin_case_dir(name_or_path)
    if builtin.is_dir():
        return builtin
    raise CaseFileError(name_or_path, 0, "-", "case directory not found")


def _parse_float(cell: str, path, line_no: int, column: str) -> float:
    try:
        return float(cell)
    except ValueError:
        raise CaseFileError(path, line_no, column, f"cannot parse {cell!r} as a number") from None


def _parse_int(cell: str, path, line_no: int, column: str) -> int:
    try:
        return int(cell)
    except ValueError:
        raise CaseFileError(path, line_no, column, f"cannot parse {cell!r} as an integer") from None


def _read_rows(path: Path, required_columns: list, optional: tuple = ()):
    try:
        text = path.read_text()
    except OSError as exc:
        raise CaseFileError(path, 0, "-", f"cannot read file: {exc}") from exc
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows:
        raise CaseFileError(path, 1, "-", "file is empty")
    header = [c.strip() for c in rows[0]]
    allowed = required_columns + list(optional)
    if header[: len(required_columns)] != required_columns or any(
        c not in allowed for c in header
    ):
        raise CaseFileError(
            path, 1, "-", f"expected header {','.join(required_columns)}, got {','.join(header)}"
        )
    out = []
    for line_no, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise CaseFileError(path, line_no, "-", f"expected {len(header)} cells, got {len(row)}")
        out.append((line_no, dict(zip(header, (c.strip() for c in row)))))
    return out


_KIND_NAMES = {"slack": BusKind.SLACK, "pv": BusKind.PV, "pq": BusKind.PQ}


def load_case(dir_path) -> CaseBundle:
    """Parse and validate a case directory into a CaseBundle."""
    directory = Path(dir_path)
    buses_path = directory / BUSES_FILE
    lines_path = directory / LINES_FILE

    bus_rows = []
    for line_no, rec in _read_rows(buses_path, BUS_COLUMNS, optional=("kind",)):
        kind = None
        if rec.get("kind"):
            key = rec["kind"].lower()
            if key not in _KIND_NAMES:
                raise CaseFileError(buses_path, line_no, "kind", f"unknown bus kind {rec['kind']!r}")
            kind = _KIND_NAMES[key]
        bus_rows.append(
            (
                line_no,
                BusRow(
                    id=_parse_int(rec["bus"], buses_path, line_no, "bus"),
                    v_setpoint=_parse_float(rec["vsp_pu"], buses_path, line_no, "vsp_pu"),
                    p_gen=_parse_float(rec["pg_mw"], buses_path, line_no, "pg_mw"),
                    q_gen=_parse_float(rec["qg_mvar"], buses_path, line_no, "qg_mvar"),
                    p_load=_parse_float(rec["pl_mw"], buses_path, line_no, "pl_mw"),
                    q_load=_parse_float(rec["ql_mvar"], buses_path, line_no, "ql_mvar"),
                    kind=kind,
                ),
            )
        )
    if not bus_rows:
        raise CaseFileError(buses_path, 1, "-", "no bus rows")

    branches = []
    for line_no, rec in _read_rows(lines_path, LINE_COLUMNS):
        try:
            branches.append(
                Branch(
                    from_bus=_parse_int(rec["from_bus"], lines_path, line_no, "from_bus"),
                    to_bus=_parse_int(rec["to_bus"], lines_path, line_no, "to_bus"),
                    resistance=_parse_float(rec["r_pu"], lines_path, line_no, "r_pu"),
                    reactance=_parse_float(rec["x_pu"], lines_path, line_no, "x_pu"),
                    half_charging=_parse_float(rec["b_half_pu"], lines_path, line_no, "b_half_pu"),
                )
            )
        except NetworkError as exc:
            raise CaseFileError(lines_path, line_no, "-", str(exc)) from exc

    base_mva = 100.0
    version = "1"
    weights: dict = {}
    case_path = directory / CASE_FILE
    if case_path.is_file():
        try:
            meta = json.loads(case_path.read_text())
        except json.JSONDecodeError as exc:
            raise CaseFileError(case_path, exc.lineno, "-", exc.msg) from exc
        base_mva = float(meta.get("base_mva", base_mva))
        version = str(meta.get("version", version))
        for key, w in dict(meta.get("bus_load_weights", {})).items():
            weights[int(key)] = float(w)
    else:
        case_path = None

    try:
        buses = buses_from_rows([row for _, row in bus_rows])
    except NetworkError as exc:
        raise CaseFileError(buses_path, bus_rows[0][0], "-", str(exc)) from exc
    network = build_network(buses, branches, base_mva=base_mva)
    for bus_id in weights:
        if not (1 <= bus_id <= network.n_buses):
            raise CaseFileError(case_path, 0, "bus_load_weights", f"bus {bus_id} does not exist")
    return CaseBundle(
        network=network,
        directory=str(directory),
        buses_path=str(buses_path),
        lines_path=str(lines_path),
        case_path=str(case_path) if case_path else None,
        version=version,
        bus_load_weights=weights,
    )


def save_case(network: Network, dir_path, version: str = "1") -> None:
    """Write a network back out as a case directory (lossless float repr)."""
    directory = Path(dir_path)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / BUSES_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BUS_COLUMNS + ["kind"])
        for bus in network.buses:
            w.writerow(
                [bus.id, repr(bus.v_setpoint), repr(bus.p_gen), repr(bus.q_gen),
                 repr(bus.p_load), repr(bus.q_load), bus.kind.value]
            )
    with open(directory / LINES_FILE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LINE_COLUMNS)
        for br in network.branches:
            w.writerow(
                [br.from_bus, br.to_bus, repr(br.resistance), repr(br.reactance), repr(br.half_charging)]
            )
    meta = {"version": version, "base_mva": network.base_mva}
    (directory / CASE_FILE).write_text(json.dumps(meta, indent=4) + "\n")


def write_measurements_csv(mset: MeasurementSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEASUREMENT_COLUMNS)
        for m in mset:
            k = m.kind
            w.writerow(
                [
                    k.quantity,
                    k.bus if k.bus is not None else "",
                    k.branch if k.branch is not None else "",
                    k.end if k.end is not None else "",
                    repr(m.value),
                    repr(m.sigma),
                ]
            )


def _kind_from_record(rec: dict, path, line_no: int) -> MeasurementKind:
    quantity = rec["kind"]
    bus = _parse_int(rec["bus"], path, line_no, "bus") if rec["bus"] else None
    branch = _parse_int(rec["branch"], path, line_no, "branch") if rec["branch"] else None
    end = rec["end"] or None
    if end is not None and end not in (FROM, TO):
        raise CaseFileError(path, line_no, "end", f"end must be '{FROM}' or '{TO}', got {end!r}")
    try:
        return MeasurementKind(quantity=quantity, bus=bus, branch=branch, end=end)
    except ValueError as exc:
        raise CaseFileError(path, line_no, "kind", str(exc)) from exc


def read_measurements_csv(path) -> MeasurementSet:
    path = Path(path)
    measurements = []
    for line_no, rec in _read_rows(path, MEASUREMENT_COLUMNS):
        kind = _kind_from_record(rec, path, line_no)
        if not rec["value_pu"]:
            raise CaseFileError(path, line_no, "value_pu", "measurement value missing")
        measurements.append(
            Measurement(
                kind=kind,
                value=_parse_float(rec["value_pu"], path, line_no, "value_pu"),
                sigma=_parse_float(rec["sigma_pu"], path, line_no, "sigma_pu"),
            )
        )
    return MeasurementSet(measurements=tuple(measurements))


def write_plan_csv(plan, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEASUREMENT_COLUMNS)
        for kind, sigma in plan:
            w.writerow(
                [
                    kind.quantity,
                    kind.bus if kind.bus is not None else "",
                    kind.branch if kind.branch is not None else "",
                    kind.end if kind.end is not None else "",
                    "",
                    repr(sigma),
                ]
            )


def read_plan_csv(path) -> list:
    path = Path(path)
    plan = []
    for line_no, rec in _read_rows(path, MEASUREMENT_COLUMNS):
        kind = _kind_from_record(rec, path, line_no)
        plan.append((kind, _parse_float(rec["sigma_pu"], path, line_no, "sigma_pu")))
    return plan


@dataclass(frozen=True)
class SnapshotPlan:
    snapshot_count: int
    load_scale: tuple          # one multiplier per snapshot, all > 0
    seed: int
    sigma_v: float = DEFAULT_SIGMA_V
    sigma_inj: float = DEFAULT_SIGMA_INJ
    sigma_flow: float = DEFAULT_SIGMA_FLOW
    tol: float = 1e-6
    max_iter: int = 50
    noise: bool = True

    def __post_init__(self):
        object.__setattr__(self, "load_scale", tuple(float(s) for s in self.load_scale))
        if self.snapshot_count < 1:
            raise ValueError(f"snapshot_count must be >= 1, got {self.snapshot_count}")
        if len(self.load_scale) != self.snapshot_count:
            raise ValueError(
                f"load_scale has {len(self.load_scale)} entries for {self.snapshot_count} snapshots"
            )
        if any(s <= 0 for s in self.load_scale):
            raise ValueError("load_scale entries must be > 0")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class SnapshotRecord:
    index: int
    load_scale: float
    truth: Optional[StateVector]
    estimate: Optional[StateVector]
    iterations: int
    objective: float
    converged: bool
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class SnapshotReport:
    records: tuple
    bus_ids: tuple

    @property
    def any_failed(self) -> bool:
        return any(r.failed for r in self.records)

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.records if not r.failed)


def derive_snapshot_seed(seed: int, snapshot: int) -> int:
    """Deterministic per-snapshot seed from (run seed, snapshot index)."""
    return int(np.random.SeedSequence([int(seed), int(snapshot)]).generate_state(1, np.uint64)[0])


def run_snapshots(bundle: CaseBundle, plan: SnapshotPlan) -> SnapshotReport:
    """The multi-snapshot estimation loop with one-snapshot memory.

    Snapshot k scales all loads by plan.load_scale[k] (times any per-bus
    weight from case.json), solves the truth power flow, generates the full
    measurement plan with the seed derived from (plan.seed, k), and estimates
    warm-started from snapshot k-1's estimate (flat start at k=0). A snapshot
    whose solver fails is recorded with an error and the run continues.
    """
    records = []
    previous: Optional[StateVector] = None
    for k in range(plan.snapshot_count):
        scale = plan.load_scale[k]
        try:
            net_k = with_scaled_loads(bundle.network, scale, bundle.bus_load_weights)
            pf = solve_power_flow(net_k, tol=1e-8, max_iter=20)
            if not pf.converged:
                raise RuntimeError(
                    f"truth power flow did not converge (max mismatch {pf.max_mismatch:.3e})"
                )
            mplan = full_measurement_plan(net_k, plan.sigma_v, plan.sigma_inj, plan.sigma_flow)
            mset = generate_measurements(
                pf.state, mplan, derive_snapshot_seed(plan.seed, k), net_k, build_ybus(net_k),
                noise=plan.noise,
            )
            config = EstimatorConfig(tol=plan.tol, max_iter=plan.max_iter, start=previous)
            est = estimate(net_k, mset, config)
        except (SingularGain, SingularJacobian, NetworkError, RuntimeError, np.linalg.LinAlgError) as exc:
            records.append(
                SnapshotRecord(
                    index=k, load_scale=scale, truth=None, estimate=None,
                    iterations=0, objective=float("nan"), converged=False, error=str(exc),
                )
            )
            continue
        previous = est.state
        records.append(
            SnapshotRecord(
                index=k,
                load_scale=scale,
                truth=pf.state,
                estimate=est.state,
                iterations=est.iterations,
                objective=est.objective,
                converged=est.converged,
            )
        )
    bus_ids = tuple(bus.id for bus in bundle.network.buses)
    return SnapshotReport(records=tuple(records), bus_ids=bus_ids)


def report_rows(report: SnapshotReport) -> list:
    """Flattened per-bus rows for emission; failed snapshots contribute none.

    Voltages and angles are rounded to the 4 decimals the report format
    prints, so CSV and JSON emissions agree field-for-field.
    """
    rows = []
    for rec in report.records:
        if rec.failed:
            continue
        for i, bus_id in enumerate(report.bus_ids):
            rows.append(
                {
                    "snapshot": rec.index,
                    "bus": bus_id,
                    "v_true_pu": round(float(rec.truth.magnitudes[i]), 4),
                    "v_est_pu": round(float(rec.estimate.magnitudes[i]), 4),
                    "angle_true_deg": round(float(np.degrees(rec.truth.angles[i])), 4),
                    "angle_est_deg": round(float(np.degrees(rec.estimate.angles[i])), 4),
                    "iterations": rec.iterations,
                    "objective": round(float(rec.objective), 6),
                    "converged": bool(rec.converged),
                }
            )
    return rows


def render_report_csv(report: SnapshotReport) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for row in report_rows(report):
        w.writerow(
            [
                row["snapshot"],
                row["bus"],
                f"{row['v_true_pu']:.4f}",
                f"{row['v_est_pu']:.4f}",
                f"{row['angle_true_deg']:.4f}",
                f"{row['angle_est_deg']:.4f}",
                row["iterations"],
                f"{row['objective']:.6f}",
                "true" if row["converged"] else "false",
            ]
        )
    return out.getvalue()


def render_report_json(report: SnapshotReport) -> str:
    return json.dumps({"rows": report_rows(report)}, indent=2) + "\n"


def emit_report(report: SnapshotReport, fmt: str, out_path) -> None:
    """Write the snapshot report as CSV or JSON."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"format must be 'csv' or 'json', got {fmt!r}")
    text = render_report_csv(report) if fmt == "csv" else render_report_json(report)
    try:
        with open(out_path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write report to {out_path}: {exc}") from exc


def load_switched_system(path):
    """Read a SwitchedSystem (and optional scalar output gain) from JSON.

    The config provides either A and b directly, or a continuous-time model
    {"continuous": {"a": ..., "b": ..., "dt": ...}} that is discretized by
    forward Euler.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise CaseFileError(path, 0, "-", f"cannot read file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CaseFileError(path, exc.lineno, "-", exc.msg) from exc

    try:
        if "continuous" in raw:
            cont = raw["continuous"]
            model = discretize(cont["a"], cont["b"], float(cont["dt"]))
            a_mat, b_vec = model.A, model.b
        else:
            a_mat, b_vec = raw["A"], raw["b"]
        system = SwitchedSystem(
            A=np.asarray(a_mat, dtype=float),
            b=np.asarray(b_vec, dtype=float),
            alpha=float(raw["alpha"]),
            beta=float(raw["beta"]),
            Q=np.asarray(raw["Q"], dtype=float),
            r=np.asarray(raw["r"], dtype=float),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing config key {exc}") from exc
    output = ScalarOutput(gain=np.asarray(raw["output"], dtype=float)) if "output" in raw else None
    return system, output
