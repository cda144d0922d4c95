"""
harness.py

Scenario runner: configuration and validation, single-run simulation,
seed-parallel batches, summary aggregation, detector calibration and
threshold / hyperparameter tuning.
"""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from sensortrust.belief import DEFAULT_PRIOR
from sensortrust.control import (
    DEFAULT_INPUT_WEIGHT,
    DEFAULT_STATE_WEIGHTS,
    LASE_AD_B,
    LASE_AD_S,
    LqrController,
    ThresholdPolicy,
    lqr_design,
)
from sensortrust.detection import (
    DEFAULT_BUDGET,
    DetectorCalibration,
    calibrate,
    estimate_eta,
    run_detector,
)
from sensortrust.estimation import DEFAULT_REPLAY_LENGTH, EkfEstimate
from sensortrust.loop import LoopContext
from sensortrust.perception import COMPONENT_NAMES, N_COMPONENTS
from sensortrust.persistence import SensorTrustPersistence
from sensortrust.plant import STATE_NAMES, CartPole, PlantParams
from sensortrust.probing import SafeSet
from sensortrust.scenarios import get_scenario
from sensortrust.sensors import (
    AttackSchedule,
    SensorId,
    SensorNoise,
    SensorSuite,
    StochasticAttacker,
    apply_attack,
    attacker_step,
)
from sensortrust.utilities import ConvergenceError, EstimatorFault, MethodFactory

logger = logging.getLogger(__name__)

STOCHASTIC = "stochastic"
FAILURE_ANGLE = np.pi / 2
FAILURE_PENALTY = 1e3
WORKERS_ENV = "SENSORTRUST_WORKERS"

RUN_COLUMNS = (
    ["t"]
    + list(STATE_NAMES)
    + [f"y_{name}" for name in COMPONENT_NAMES]
    + [f"alert_{name}" for name in COMPONENT_NAMES]
    + [f"pi_{sensor.label}" for sensor in SensorId]
    + [f"trusted_{sensor.label}" for sensor in SensorId]
    + ["probing", "u"]
    + [f"xhat_{name}" for name in STATE_NAMES]
)
BATCH_COLUMNS = ["method", "scenario", "seed"] + RUN_COLUMNS

DEFAULT_WINDOW_GRID = tuple(
    (low, round(low + width, 6))
    for low in (0.4, 0.45, 0.499, 0.5, 0.55)
    for width in (0.001, 0.05, 0.09, 0.15)
)
DEFAULT_WOLF_GRID = tuple(np.logspace(-2, 2, 20))


class ConfigValidationResult:
    """
    Outcome of validating a :class:`ScenarioConfig`.

    Attributes
    ----------
    errors : List[str]
        Problems that prevent a run.
    warnings : List[str]
        Settings that are ignored or suspicious.
    """
    def __init__(self, errors: List[str], warnings: List[str]):
        self.errors = errors
        self.warnings = warnings

    @property
    def is_valid(self) -> bool:
        return len(self.errors) == 0

    def summary(self) -> str:
        """
        Human-readable summary listing every error and warning.

        Returns
        -------
        str
        """
        lines = [
            f"Configuration {'VALID' if self.is_valid else 'INVALID'}",
            f"{len(self.errors)} error(s), {len(self.warnings)} warning(s)"
        ]
        if self.errors:
            lines.append("Errors:")
            lines.extend(f"  - {e}" for e in self.errors)
        if self.warnings:
            lines.append("Warnings:")
            lines.extend(f"  - {w}" for w in self.warnings)
        return "\n".join(lines)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "is_valid": self.is_valid,
            "errors": self.errors,
            "warnings": self.warnings
        }


@dataclass
class ScenarioConfig:
    """
    Everything one batch of runs needs.

    Parameters
    ----------
    scenario : str
        Registered scenario name (e.g. ``EncoderAttack(3.0)``) or
        ``"stochastic"`` for the Markov attacker.
    method : str
        Method selector registered in MethodFactory.
    seeds : tuple of int
        Distinct run seeds.
    master_seed : int
        Combined with each run seed to derive its random streams.
    horizon_s : float
        Simulated time per run; must be a whole number of steps.
    plant : PlantParams
    noise : SensorNoise
    thresholds : ThresholdPolicy, optional
        Overrides the LASE-AD variant's preset window.
    wolf_c : float, optional
        Overrides the WoLF variant's default hyperparameter.
    attacker : StochasticAttacker
        Used when ``scenario == "stochastic"``.
    schedule : AttackSchedule, optional
        Custom scripted attack; takes precedence over ``scenario``.
    initial_state : tuple of float
    initial_variance : float
        Diagonal of the initial filter covariance.
    prior : float
        Initial attack probability per sensor.
    safe : SafeSet
    replay_length : int
    calibration : DetectorCalibration, optional
        Required before any run.
    output_dir : str, optional
        Where run logs and the summary are written.
    """
    scenario: str = "NoAttack"
    method: str = "normal"
    seeds: Tuple[int, ...] = tuple(range(50))
    master_seed: int = 0
    horizon_s: float = 10.0
    plant: PlantParams = field(default_factory=PlantParams)
    noise: SensorNoise = field(default_factory=SensorNoise)
    thresholds: Optional[ThresholdPolicy] = None
    wolf_c: Optional[float] = None
    attacker: StochasticAttacker = field(default_factory=StochasticAttacker)
    schedule: Optional[AttackSchedule] = None
    initial_state: Tuple[float, float, float, float] = (0.0, 0.0, 0.05, 0.0)
    initial_variance: float = 1e-4
    prior: float = DEFAULT_PRIOR
    safe: SafeSet = field(default_factory=SafeSet)
    replay_length: int = DEFAULT_REPLAY_LENGTH
    calibration: Optional[DetectorCalibration] = None
    output_dir: Optional[str] = None

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon_s / self.plant.dt))

    @property
    def is_stochastic(self) -> bool:
        return self.schedule is None and self.scenario.strip().lower() == STOCHASTIC

    def attack_schedule(self) -> Optional[AttackSchedule]:
        """The scripted schedule, or None for the stochastic attacker."""
        if self.schedule is not None:
            return self.schedule
        if self.is_stochastic:
            return None
        return get_scenario(self.scenario)

    def scenario_label(self) -> str:
        return self.schedule.name if self.schedule is not None else self.scenario.strip()

    def validate(self) -> ConfigValidationResult:
        """
        Check every field and report all problems at once.

        Returns
        -------
        ConfigValidationResult
        """
        errors: List[str] = []
        warnings: List[str] = []

        if self.method not in MethodFactory.registry:
            errors.append(f"Unknown method '{self.method}'. Choose one of: {', '.join(MethodFactory.names())}")
        if self.schedule is None and not self.is_stochastic:
            try:
                get_scenario(self.scenario)
            except ValueError as e:
                errors.append(str(e))

        if not np.isfinite(self.horizon_s) or self.horizon_s <= 0:
            errors.append(f"horizon_s must be positive, got {self.horizon_s}")
        elif abs(self.horizon_s / self.plant.dt - round(self.horizon_s / self.plant.dt)) > 1e-9:
            errors.append(f"horizon_s={self.horizon_s} is not a whole number of dt={self.plant.dt} steps")

        seeds = list(self.seeds)
        if not seeds:
            errors.append("At least one seed is required")
        if any(not isinstance(seed, (int, np.integer)) or seed < 0 for seed in seeds):
            errors.append(f"Seeds must be non-negative integers, got {seeds}")
        elif len(set(seeds)) != len(seeds):
            duplicates = sorted({seed for seed in seeds if seeds.count(seed) > 1})
            errors.append(f"Seeds must be distinct; duplicated: {duplicates}")
        if not isinstance(self.master_seed, (int, np.integer)) or self.master_seed < 0:
            errors.append(f"master_seed must be a non-negative integer, got {self.master_seed}")

        if self.calibration is None:
            errors.append("A detector calibration is required; run the calibrate command first")

        x0 = np.asarray(self.initial_state, dtype=float)
        if x0.shape != (4,) or not np.all(np.isfinite(x0)):
            errors.append(f"initial_state must be 4 finite values, got {list(self.initial_state)}")
        if not np.isfinite(self.initial_variance) or self.initial_variance <= 0:
            errors.append(f"initial_variance must be positive, got {self.initial_variance}")
        if not 0.0 < self.prior < 1.0:
            errors.append(f"prior must lie in (0, 1), got {self.prior}")
        if self.replay_length < 1:
            errors.append(f"replay_length must be at least 1, got {self.replay_length}")

        if self.wolf_c is not None:
            if not self.method.startswith("wolf-"):
                warnings.append(f"wolf_c is ignored by method '{self.method}'")
            elif not np.isfinite(self.wolf_c) or self.wolf_c <= 0:
                errors.append(f"wolf_c must be positive, got {self.wolf_c}")
        if self.thresholds is not None and not self.method.startswith("lase-ad"):
            warnings.append(f"thresholds are ignored by method '{self.method}'")
        if self.schedule is not None and self.scenario not in ("NoAttack", self.schedule.name):
            warnings.append(f"Custom schedule '{self.schedule.name}' overrides scenario '{self.scenario}'")

        return ConfigValidationResult(errors, warnings)

    def method_options(self) -> Dict[str, Any]:
        """Constructor arguments specific to the configured method."""
        if self.method.startswith("wolf-") and self.wolf_c is not None:
            return {"c": self.wolf_c}
        if self.method.startswith("lase-ad") and self.thresholds is not None:
            return {"policy": self.thresholds}
        return {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "method": self.method,
            "seeds": [int(seed) for seed in self.seeds],
            "master_seed": int(self.master_seed),
            "horizon_s": self.horizon_s,
            "plant": self.plant.to_dict(),
            "noise": self.noise.to_dict(),
            "thresholds": self.thresholds.to_dict() if self.thresholds is not None else None,
            "wolf_c": self.wolf_c,
            "attacker": self.attacker.to_dict(),
            "schedule": self.schedule.to_dict() if self.schedule is not None else None,
            "initial_state": [float(v) for v in self.initial_state],
            "initial_variance": self.initial_variance,
            "prior": self.prior,
            "safe": self.safe.to_dict(),
            "replay_length": self.replay_length,
            "calibration": self.calibration.to_dict() if self.calibration is not None else None,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScenarioConfig':
        """
        Build a config from its JSON form.

        ``calibration_path`` may be given instead of an inline calibration.

        Raises
        ------
        ValueError
            On unknown keys or malformed nested objects.
        """
        data = dict(data)
        known = set(cls.__dataclass_fields__) | {"calibration_path"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"Unknown scenario config keys: {unknown}")
        converters = {
            "plant": PlantParams.from_dict,
            "noise": SensorNoise.from_dict,
            "thresholds": ThresholdPolicy.from_dict,
            "attacker": StochasticAttacker.from_dict,
            "schedule": AttackSchedule.from_dict,
            "safe": SafeSet.from_dict,
            "calibration": DetectorCalibration.from_dict,
            "seeds": lambda value: tuple(int(seed) for seed in value),
            "initial_state": lambda value: tuple(float(v) for v in value),
        }
        kwargs = {}
        for key, value in data.items():
            if key == "calibration_path" or value is None:
                continue
            kwargs[key] = converters[key](value) if key in converters else value
        if data.get("calibration_path") and "calibration" not in kwargs:
            kwargs["calibration"] = SensorTrustPersistence.load_calibration(data["calibration_path"])
        return cls(**kwargs)

    @classmethod
    def load(cls, filepath: str) -> 'ScenarioConfig':
        return cls.from_dict(SensorTrustPersistence.load(filepath))


@dataclass
class RunRecord:
    """
    Per-step log and outcome of one run.

    Attributes
    ----------
    frame : pd.DataFrame
        One row per step, columns :data:`RUN_COLUMNS`.
    failed : bool
        Latched once |theta| exceeded 90 degrees, or on an estimator fault.
    cost : float
        Undiscounted quadratic control cost over the logged steps.
    failure_time : float, optional
        First time the failure was detected.
    fault : str, optional
        Estimator-fault diagnostic; the log stops at the faulting step.
    normalized : np.ndarray
        (T, 4) standardized innovations seen by the detector.
    """
    method: str
    scenario: str
    seed: int
    frame: pd.DataFrame
    failed: bool
    cost: float
    failure_time: Optional[float] = None
    fault: Optional[str] = None
    normalized: Optional[np.ndarray] = None

    def summary(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "scenario": self.scenario,
            "seed": self.seed,
            "failed": self.failed,
            "cost": self.cost,
            "failure_time": self.failure_time,
            "fault": self.fault,
        }


def run_streams(master_seed: int, seed: int) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent (process noise, sensor noise, attacker) generators for one run."""
    children = np.random.SeedSequence([int(master_seed), int(seed)]).spawn(3)
    return tuple(np.random.default_rng(child) for child in children)


def _placeholder_calibration() -> DetectorCalibration:
    return DetectorCalibration(tau=1e12, b=0.0)


def simulate_run(
    config: ScenarioConfig,
    seed: int,
    controller: Optional[LqrController] = None,
    calibration: Optional[DetectorCalibration] = None,
) -> RunRecord:
    """
    Simulate one closed-loop run.

    The log continues past a fall with the failure latched. An estimator
    fault ends the run early and marks it failed.

    Parameters
    ----------
    config : ScenarioConfig
    seed : int
        Run seed; streams derive from ``(config.master_seed, seed)``.
    controller : LqrController, optional
        Precomputed nominal controller.
    calibration : DetectorCalibration, optional
        Overrides ``config.calibration``.

    Returns
    -------
    RunRecord
    """
    calibration = calibration or config.calibration or _placeholder_calibration()
    context = LoopContext.build(
        calibration,
        plant_params=config.plant,
        noise=config.noise,
        controller=controller,
        safe=config.safe,
        replay_length=config.replay_length,
    )
    plant = context.plant
    dt = plant.dt
    suite = SensorSuite(plant, config.noise)
    process_rng, sensor_rng, attack_rng = run_streams(config.master_seed, seed)

    x = np.asarray(config.initial_state, dtype=float).copy()
    initial = EkfEstimate(x.copy(), np.eye(4) * config.initial_variance)
    method = MethodFactory.create(
        config.method, context=context, initial=initial, prior=config.prior, **config.method_options()
    )
    schedule = config.attack_schedule()
    attacker = config.attacker if schedule is None else None
    M_x = np.diag(DEFAULT_STATE_WEIGHTS)

    n = config.n_steps
    rows = np.full((n, len(RUN_COLUMNS)), np.nan)
    normalized = np.full((n, N_COMPONENTS), np.nan)
    u_applied = 0.0
    failed, failure_time, fault, cost = False, None, None, 0.0
    logged = n
    for k in range(n):
        t = k * dt
        raw = suite.measure_all(x, u_applied, sensor_rng, k)
        if attacker is not None:
            attacker, biases = attacker_step(attacker, attack_rng)
            raw = raw.with_offsets(biases) if biases else raw
            attack_active = bool(biases)
        else:
            raw, z = apply_attack(raw, schedule, k, dt)
            attack_active = bool(z.any())
        try:
            out = method.step(raw, attack_active)
        except (EstimatorFault, np.linalg.LinAlgError) as e:
            fault = f"k={k}: {e}"
            logger.warning(f"{config.method} seed {seed}: estimator fault, run marked failed ({fault})")
            failed = True
            failure_time = failure_time if failure_time is not None else t
            logged = k
            break

        rows[k] = np.concatenate([
            [t],
            x,
            out.soft.y,
            out.alerts,
            out.belief.pi,
            [float(sensor in out.trusted) for sensor in SensorId],
            [float(out.probing), out.u],
            out.estimate.x,
        ])
        normalized[k] = method.last_normalized
        if not failed and abs(x[2]) > FAILURE_ANGLE:
            failed, failure_time = True, t
        cost += (float(x @ M_x @ x) + DEFAULT_INPUT_WEIGHT * out.u ** 2) * dt
        x = plant.step(x, out.u, noise=plant.sample_process_noise(process_rng))
        u_applied = out.u

    frame = pd.DataFrame(rows[:logged], columns=RUN_COLUMNS)
    return RunRecord(
        method=config.method,
        scenario=config.scenario_label(),
        seed=int(seed),
        frame=frame,
        failed=failed,
        cost=cost,
        failure_time=failure_time,
        fault=fault,
        normalized=normalized[:logged],
    )


def _run_task(args) -> RunRecord:
    # Module level so ProcessPoolExecutor can pickle it.
    config, seed, controller, calibration = args
    return simulate_run(config, seed, controller=controller, calibration=calibration)


def resolve_workers(workers: Optional[int] = None) -> int:
    """
    Worker-pool size from the argument or ``SENSORTRUST_WORKERS`` (default 1).

    Raises
    ------
    ValueError
        If the value is not a positive integer.
    """
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            workers = int(raw)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer, got '{raw}'")
    if workers < 1:
        raise ValueError(f"Worker count must be at least 1, got {workers}")
    return workers


def _run_seeds(config: ScenarioConfig, workers: int, calibration=None) -> List[RunRecord]:
    controller = lqr_design(config.plant)
    tasks = [(config, seed, controller, calibration) for seed in config.seeds]
    if workers == 1 or len(tasks) == 1:
        records = [_run_task(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            records = list(executor.map(_run_task, tasks))
    return sorted(records, key=lambda record: record.seed)


def _mean_trace(records: Sequence[RunRecord], columns: List[str]) -> pd.DataFrame:
    frames = [record.frame[["t"] + columns] for record in records if len(record.frame)]
    if not frames:
        return pd.DataFrame(columns=columns, index=pd.Index([], name="t"), dtype=float)
    return pd.concat(frames, ignore_index=True).groupby("t", sort=True)[columns].mean()


@dataclass
class MethodSummary:
    """
    Aggregates of one (scenario, method) batch.

    ``cost_quartiles`` are taken over non-failed runs only and are NaN when
    every run failed.
    """
    method: str
    scenario: str
    n_runs: int
    failures: int
    faults: int
    cost_quartiles: Tuple[float, float, float]
    belief_trace: pd.DataFrame
    probing_rate: pd.Series

    @property
    def failure_rate(self) -> float:
        return self.failures / self.n_runs if self.n_runs else 0.0

    @property
    def failure_stderr(self) -> float:
        """Binomial standard error of the failure rate."""
        if not self.n_runs:
            return 0.0
        p = self.failure_rate
        return float(np.sqrt(p * (1.0 - p) / self.n_runs))

    @classmethod
    def from_records(cls, records: Sequence[RunRecord]) -> 'MethodSummary':
        records = sorted(records, key=lambda record: record.seed)
        costs = np.array([record.cost for record in records if not record.failed])
        quartiles = tuple(float(q) for q in np.percentile(costs, [25, 50, 75])) if costs.size else (np.nan,) * 3
        belief_columns = [f"pi_{sensor.label}" for sensor in SensorId]
        beliefs = _mean_trace(records, belief_columns)
        beliefs.columns = [sensor.label for sensor in SensorId]
        probing = _mean_trace(records, ["probing"])["probing"]
        return cls(
            method=records[0].method,
            scenario=records[0].scenario,
            n_runs=len(records),
            failures=sum(record.failed for record in records),
            faults=sum(record.fault is not None for record in records),
            cost_quartiles=quartiles,
            belief_trace=beliefs,
            probing_rate=probing,
        )

    def to_dict(self) -> Dict[str, Any]:
        def finite_or_none(value):
            return None if not np.isfinite(value) else float(value)

        return {
            "method": self.method,
            "scenario": self.scenario,
            "n_runs": self.n_runs,
            "failures": self.failures,
            "faults": self.faults,
            "failure_rate": self.failure_rate,
            "failure_stderr": self.failure_stderr,
            "cost_quartiles": [finite_or_none(q) for q in self.cost_quartiles],
            "t": [float(t) for t in self.belief_trace.index],
            "belief_trace": {column: self.belief_trace[column].astype(float).tolist() for column in self.belief_trace.columns},
            "probing_rate": self.probing_rate.astype(float).tolist(),
        }


class SummaryReport:
    """
    Summaries keyed by (scenario, method), plus cross-method comparisons.
    """
    def __init__(self, summaries: Optional[Dict[Tuple[str, str], MethodSummary]] = None):
        self.summaries: Dict[Tuple[str, str], MethodSummary] = dict(summaries or {})

    @classmethod
    def from_records(cls, records: Iterable[RunRecord]) -> 'SummaryReport':
        groups: Dict[Tuple[str, str], List[RunRecord]] = {}
        for record in records:
            groups.setdefault((record.scenario, record.method), []).append(record)
        return cls({key: MethodSummary.from_records(group) for key, group in sorted(groups.items())})

    def merge(self, other: 'SummaryReport') -> 'SummaryReport':
        return SummaryReport({**self.summaries, **other.summaries})

    def get(self, method: str, scenario: Optional[str] = None) -> MethodSummary:
        """
        Summary of ``method``; ``scenario`` may be omitted when unambiguous.

        Raises
        ------
        KeyError
            If no or several summaries match.
        """
        matches = [
            summary for (s, m), summary in self.summaries.items()
            if m == method and (scenario is None or s == scenario)
        ]
        if len(matches) != 1:
            raise KeyError(f"Expected one summary for method={method!r} scenario={scenario!r}, found {len(matches)}")
        return matches[0]

    def failure_table(self) -> pd.DataFrame:
        rows = []
        for summary in self.summaries.values():
            rows.append({
                "scenario": summary.scenario,
                "method": summary.method,
                "n_runs": summary.n_runs,
                "failure_rate": summary.failure_rate,
                "failure_stderr": summary.failure_stderr,
                "cost_q1": summary.cost_quartiles[0],
                "cost_median": summary.cost_quartiles[1],
                "cost_q3": summary.cost_quartiles[2],
            })
        return pd.DataFrame(rows, columns=[
            "scenario", "method", "n_runs", "failure_rate", "failure_stderr", "cost_q1", "cost_median", "cost_q3",
        ])

    def belief_difference(self, passive: str, active: str, sensor, scenario: Optional[str] = None) -> pd.Series:
        """Mean belief of ``passive`` minus that of ``active`` for one sensor over time."""
        label = SensorId.parse(sensor).label
        return self.get(passive, scenario).belief_trace[label] - self.get(active, scenario).belief_trace[label]

    def belief_drop_time(self, method: str, sensor, after_s: float, level: float = 0.5, scenario: Optional[str] = None) -> Optional[float]:
        """First time at or after ``after_s`` the mean belief of ``sensor`` is below ``level``."""
        trace = self.get(method, scenario).belief_trace[SensorId.parse(sensor).label]
        below = trace[(trace.index >= after_s - 1e-9) & (trace < level)]
        return float(below.index[0]) if len(below) else None

    def to_dict(self) -> Dict[str, Any]:
        return {"summaries": [summary.to_dict() for summary in self.summaries.values()]}


@dataclass
class BatchResult:
    records: List[RunRecord]
    report: SummaryReport

    def combined_frame(self) -> pd.DataFrame:
        return combined_frame(self.records)


def combined_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    """All run logs stacked with method, scenario and seed columns."""
    frames = []
    for record in sorted(records, key=lambda r: (r.scenario, r.method, r.seed)):
        frame = record.frame.copy()
        frame.insert(0, "seed", record.seed)
        frame.insert(0, "scenario", record.scenario)
        frame.insert(0, "method", record.method)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=BATCH_COLUMNS)
    return pd.concat(frames, ignore_index=True)[BATCH_COLUMNS]


def export(records: Sequence[RunRecord], report: SummaryReport, output_dir: str) -> Dict[str, str]:
    """
    Write ``runs.csv``, ``runs_summary.csv`` and ``summary.json`` to ``output_dir``.

    Returns
    -------
    dict
        Written paths by artifact name.

    Raises
    ------
    OSError
        With the offending path in the message.
    """
    try:
        os.makedirs(output_dir, exist_ok=True)
    except OSError as e:
        raise OSError(f"Could not create output directory {output_dir}: {e}") from e
    paths = {
        "runs": os.path.join(output_dir, "runs.csv"),
        "runs_summary": os.path.join(output_dir, "runs_summary.csv"),
        "summary": os.path.join(output_dir, "summary.json"),
    }
    SensorTrustPersistence.export_frame(combined_frame(records), paths["runs"])
    outcomes = pd.DataFrame(
        [record.summary() for record in sorted(records, key=lambda r: (r.scenario, r.method, r.seed))],
        columns=["method", "scenario", "seed", "failed", "cost", "failure_time", "fault"],
    )
    SensorTrustPersistence.export_frame(outcomes, paths["runs_summary"])
    SensorTrustPersistence.export(report, paths["summary"])
    return paths


def run_batch(config: ScenarioConfig, workers: Optional[int] = None) -> BatchResult:
    """
    Run every seed of ``config`` and aggregate.

    Results do not depend on the worker count: each run's streams derive
    from its seed, and records are aggregated in seed order.

    Parameters
    ----------
    config : ScenarioConfig
    workers : int, optional
        Process-pool size; defaults to ``SENSORTRUST_WORKERS`` or 1.

    Returns
    -------
    BatchResult

    Raises
    ------
    ValueError
        If the configuration is invalid; the message lists every problem.
    """
    validation = config.validate()
    if not validation.is_valid:
        raise ValueError(validation.summary())
    for warning in validation.warnings:
        logger.warning(warning)
    workers = resolve_workers(workers)
    logger.info(f"Running {config.method} on {config.scenario_label()}: {len(config.seeds)} seeds, {workers} worker(s)")
    records = _run_seeds(config, workers)
    report = SummaryReport.from_records(records)
    summary = report.get(config.method)
    logger.info(f"{config.method} on {config.scenario_label()}: failure rate {summary.failure_rate:.2f}")
    if config.output_dir:
        export(records, report, config.output_dir)
    return BatchResult(records=records, report=report)


def calibrate_detector(
    config: Optional[ScenarioConfig] = None,
    n_runs: int = 50,
    budget: float = DEFAULT_BUDGET,
    tau_grid: Optional[Iterable[float]] = None,
    workers: Optional[int] = None,
) -> DetectorCalibration:
    """
    Calibrate the detector on benign runs of the plain filter.

    Innovations of the all-sensor pipeline are collected over ``n_runs``
    attack-free runs; drifts and thresholds come from :func:`calibrate`,
    alert-transition probabilities from the calibrated detector's alerts on
    the same runs.

    Parameters
    ----------
    config : ScenarioConfig, optional
        Source of plant, noise and horizon; scenario, method and seeds are
        overridden.
    n_runs : int
        Number of benign runs (seeds ``0 .. n_runs - 1``).

    Returns
    -------
    DetectorCalibration
    """
    base = config or ScenarioConfig()
    benign = replace(base, scenario="NoAttack", schedule=None, method="normal", seeds=tuple(range(n_runs)), output_dir=None)
    records = _run_seeds(benign, resolve_workers(workers), calibration=_placeholder_calibration())
    runs = [record.normalized for record in records]
    calibration = calibrate(runs, tau_grid=tau_grid, budget=budget)
    alerts = [run_detector(run, calibration.tau, calibration.b) for run in runs]
    eta0, eta1 = estimate_eta(alerts)
    logger.info(f"Calibrated detector on {n_runs} benign runs: tau={calibration.tau.tolist()}")
    return calibration.with_eta(eta0, eta1)


def _score(records: Sequence[RunRecord], failure_penalty: float) -> float:
    costs = np.array([record.cost for record in records])
    failure_rate = np.mean([record.failed for record in records])
    return float(np.mean(costs) + failure_penalty * failure_rate)


def tune_thresholds(
    config: ScenarioConfig,
    mode: str = STOCHASTIC,
    grid: Optional[Iterable[Tuple[float, float]]] = None,
    failure_penalty: float = FAILURE_PENALTY,
    workers: Optional[int] = None,
) -> Tuple[float, float]:
    """
    Grid search for the probing window.

    ``stochastic`` mode scores LASE-AD-S against the Markov attacker,
    ``benign`` mode scores LASE-AD-B without attacks. The score is the mean
    control cost plus ``failure_penalty`` times the failure rate; the first
    best pair in grid order wins.

    Raises
    ------
    ValueError
        If the grid is empty, a pair is not a valid window, or the mode is
        unknown.
    ConvergenceError
        If every window scores NaN.
    """
    pairs = list(DEFAULT_WINDOW_GRID if grid is None else grid)
    if not pairs:
        raise ValueError("Threshold grid must not be empty")
    if mode == STOCHASTIC:
        base = replace(config, scenario=STOCHASTIC, schedule=None, method="lase-ad-s", output_dir=None)
        preset = LASE_AD_S
    elif mode == "benign":
        base = replace(config, scenario="NoAttack", schedule=None, method="lase-ad-b", output_dir=None)
        preset = LASE_AD_B
    else:
        raise ValueError(f"Unknown tuning mode '{mode}'. Use 'stochastic' or 'benign'")
    template = config.thresholds or preset
    policies = [template.with_window(float(low), float(high)) for low, high in pairs]

    workers = resolve_workers(workers)
    best, best_score = None, np.inf
    for policy in policies:
        candidate = replace(base, thresholds=policy)
        validation = candidate.validate()
        if not validation.is_valid:
            raise ValueError(validation.summary())
        score = _score(_run_seeds(candidate, workers), failure_penalty)
        logger.info(f"window ({policy.window_low}, {policy.window_high}): score {score:.4f}")
        if score < best_score:
            best, best_score = policy, score
    if best is None:
        raise ConvergenceError(f"Threshold tuning found no finite score over {len(policies)} window(s)")
    return best.window_low, best.window_high


def tune_wolf(
    config: ScenarioConfig,
    grid: Optional[Iterable[float]] = None,
    failure_penalty: float = FAILURE_PENALTY,
    workers: Optional[int] = None,
) -> float:
    """
    Grid search for the WoLF hyperparameter of ``config.method`` on ``config``'s scenario.

    Raises
    ------
    ValueError
        If the method is not a WoLF variant or the grid is empty.
    ConvergenceError
        If every value scores NaN.
    """
    if not config.method.startswith("wolf-"):
        raise ValueError(f"tune_wolf needs a WoLF method, got '{config.method}'")
    values = [float(c) for c in (DEFAULT_WOLF_GRID if grid is None else grid)]
    if not values:
        raise ValueError("WoLF grid must not be empty")
    workers = resolve_workers(workers)
    best, best_score = None, np.inf
    for c in values:
        candidate = replace(config, wolf_c=c, output_dir=None)
        validation = candidate.validate()
        if not validation.is_valid:
            raise ValueError(validation.summary())
        score = _score(_run_seeds(candidate, workers), failure_penalty)
        logger.info(f"{config.method} c={c:.4g}: score {score:.4f}")
        if score < best_score:
            best, best_score = c, score
    if best is None:
        raise ConvergenceError(f"{config.method} tuning found no finite score over {len(values)} value(s)")
    return best
