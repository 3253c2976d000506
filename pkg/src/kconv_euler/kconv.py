"""Refinement studies: Cesàro means over dyadic levels, Young measures and classification.

Every level is restricted to the coarsest grid; accumulation happens in
level order so results do not depend on which worker finished first.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import cases
from .eos import ConfigurationError, GasLaw
from .mesh import Mesh, build_mesh, restrict
from .solver import SchemeParams, SolverError, run
from .young import EmpiricalYoungMeasure, ObservableBank, defects

LABELS = ("strong-K", "oscillatory", "inconclusive")
EPS_MEAS_REL = 1e-2
TAU_DIRAC_REL = 1e-3
TAU_OSC_REL = 1e-2
# keeps the in-measure threshold above roundoff when the data range vanishes
EPS_FLOOR_REL = 64 * np.finfo(float).eps


class StudyError(RuntimeError):
    def __init__(self, message: str, level: int | None = None):
        super().__init__(message)
        self.level = level


@dataclass(frozen=True)
class Thresholds:
    eps_meas: float
    tau_osc: float
    tau_dirac: float


@dataclass(frozen=True)
class StudyConfig:
    case_id: str
    base_n: int = 32
    levels: int = 4
    dim: int = 1
    snapshot_times: tuple[float, ...] = (0.25,)
    T: float | None = None
    case_params: dict = field(default_factory=dict)
    gas: GasLaw = field(default_factory=GasLaw)
    scheme: SchemeParams = field(default_factory=SchemeParams)
    probes: tuple[int, ...] | None = None
    eps_meas: float | None = None
    tau_osc: float | None = None
    tau_dirac: float | None = None
    bank_centers: int = 3
    bank_radius: float = 1.0
    window: float | None = None
    workers: int = 1
    # two_state_synthetic only
    state_a: tuple[float, ...] | None = None
    state_b: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.levels < 2:
            raise ConfigurationError("a study needs at least 2 levels")
        if self.base_n < 2:
            raise ConfigurationError("base resolution must be at least 2 cells per axis")
        for name in ("eps_meas", "tau_osc", "tau_dirac"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigurationError(f"threshold {name} must be positive")
        if not self.snapshot_times:
            raise ConfigurationError("at least one snapshot time is required")
        if self.case_id not in cases.CASE_IDS:
            raise ConfigurationError(f"unknown case id {self.case_id!r}")
        if self.case_id != "two_state_synthetic":
            self.scheme.validated(self.gas)

    @property
    def synthetic(self) -> bool:
        return self.case_id == "two_state_synthetic"

    @property
    def final_time(self) -> float:
        return float(self.T) if self.T is not None else max(self.snapshot_times)

    def resolutions(self) -> list[int]:
        return [self.base_n * 2**k for k in range(self.levels)]


@dataclass
class LevelResult:
    level: int
    n: int
    snapshots: list[np.ndarray]  # phase fields (N, d + 1) on the level's own mesh
    restricted: list[np.ndarray]  # the same, on the common grid
    ledger_rows: list[tuple] = field(default_factory=list)
    audit_pass: bool = True
    steps: int = 0
    E0: float = float("nan")


def _run_level(task):
    level, n, config = task
    mesh = build_mesh(tuple([n] * config.dim))
    data, _ = cases.build_case(config.case_id, config.dim, config.gas, **config.case_params)
    try:
        traj, ledger = run(data, mesh, config.gas, config.scheme, config.final_time, config.snapshot_times)
    except SolverError as exc:
        raise StudyError(f"level {level} ({n} cells per axis) failed: {exc}", level) from exc
    snaps = [s.phase() for s in traj.snapshots]
    return LevelResult(level, n, snaps, [], list(ledger.rows()), ledger.all_pass(), len(traj.reports), ledger.E0)


def _synthetic_levels(config: StudyConfig, common: Mesh) -> list[LevelResult]:
    A = np.asarray(config.state_a if config.state_a is not None else (1.0,) + (0.0,) * config.dim, float)
    B = np.asarray(config.state_b if config.state_b is not None else (2.0,) + (0.5,) * config.dim, float)
    if A.size != config.dim + 1 or B.size != config.dim + 1:
        raise ConfigurationError(f"synthetic states need {config.dim + 1} components (rho, m)")
    out = []
    for k, U in enumerate(cases.two_state_synthetic(A, B, config.levels)):
        field_ = np.broadcast_to(U, (common.n_cells, U.size)).copy()
        snaps = [field_.copy() for _ in config.snapshot_times]
        out.append(LevelResult(k, common.spec.cells_per_axis[0], snaps, [s.copy() for s in snaps]))
    return out


def run_levels(config: StudyConfig, common: Mesh) -> list[LevelResult]:
    if config.synthetic:
        return _synthetic_levels(config, common)
    tasks = [(k, n, config) for k, n in enumerate(config.resolutions())]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_level, tasks))
    else:
        results = [_run_level(t) for t in tasks]
    results.sort(key=lambda r: r.level)
    for r in results:
        fine = build_mesh(tuple([r.n] * config.dim))
        r.restricted = [restrict(s, fine, common) for s in r.snapshots]
    return results


def cesaro_mean(fields) -> np.ndarray:
    """(1/N) sum_k U_k over a sequence of equally shaped arrays."""
    fields = [np.asarray(f, dtype=float) for f in fields]
    if not fields:
        raise ValueError("cannot average an empty sequence")
    total = np.zeros_like(fields[0])
    for f in fields:
        total = total + f
    return total / len(fields)


def prefix_means(fields) -> list[np.ndarray]:
    total = None
    out = []
    for k, f in enumerate(fields, start=1):
        f = np.asarray(f, dtype=float)
        total = f.copy() if total is None else total + f
        out.append(total / k)
    return out


class CesaroAccumulator:
    """Running sums of U, of every bank observable g(U) and of the convex
    energy functionals, over fields sharing a common shape (..., d + 1)."""

    def __init__(self, bank: ObservableBank, gas: GasLaw | None = None):
        self.bank = bank
        self.gas = gas
        self.count = 0
        self.sum_U = None
        self.sum_g = None
        self.sum_kin = None
        self.sum_int = None
        self.prefix_delta_max: list[float] = []

    def add(self, U) -> None:
        U = np.asarray(U, dtype=float)
        g = self.bank.evaluate(U)
        if self.count == 0:
            self.sum_U = np.zeros_like(U)
            self.sum_g = np.zeros_like(g)
            if self.gas is not None:
                self.sum_kin = np.zeros(U.shape[:-1])
                self.sum_int = np.zeros(U.shape[:-1])
        self.sum_U = self.sum_U + U
        self.sum_g = self.sum_g + g
        if self.gas is not None:
            rho, m = U[..., 0], U[..., 1:]
            with np.errstate(divide="ignore", invalid="ignore"):
                kin = np.where(rho > 0, 0.5 * np.sum(m * m, axis=-1) / np.where(rho > 0, rho, 1.0), np.inf)
            self.sum_kin = self.sum_kin + kin
            self.sum_int = self.sum_int + self.gas.potential(rho)
        self.count += 1
        self.prefix_delta_max.append(float(np.max(self.delta_g())))

    @property
    def mean_U(self) -> np.ndarray:
        return self.sum_U / self.count

    @property
    def mean_g(self) -> np.ndarray:
        return self.sum_g / self.count

    def delta_g(self) -> np.ndarray:
        """|mean of g(U_k) - g(mean of U_k)| for every observable, shape (..., G)."""
        return np.abs(self.mean_g - self.bank.evaluate(self.mean_U))


def in_measure_indicator(fields, mean, eps: float, weights=None) -> np.ndarray:
    """Volume fraction where |U_n - mean| > eps, one value per field.

    ``weights`` are per-point volumes (uniform if omitted); the phase-space
    distance is Euclidean over the last axis.
    """
    mean = np.asarray(mean, dtype=float)
    pts = mean.shape[:-1]
    w = np.ones(pts) if weights is None else np.broadcast_to(np.asarray(weights, dtype=float), pts)
    total = math.fsum(w.ravel())
    out = []
    for U in fields:
        dist = np.linalg.norm(np.asarray(U, dtype=float) - mean, axis=-1)
        out.append(math.fsum(w[dist > eps].ravel()) / total)
    return np.array(out)


def oscillation_indicator(acc: CesaroAccumulator) -> np.ndarray:
    return acc.delta_g()


def classify(delta_max: float, mu, thresholds: Thresholds, prefix_delta_max=None) -> str:
    """strong-K if the Jensen gap is below tau_dirac and the in-measure
    indicator falls by at least 2 from the first to the last level;
    oscillatory if the gap stays above tau_osc over the last two prefixes."""
    mu = np.asarray(mu, dtype=float)
    if delta_max <= thresholds.tau_dirac and mu[-1] <= 0.5 * mu[0]:
        return "strong-K"
    recent = list(prefix_delta_max)[-2:] if prefix_delta_max is not None else [delta_max]
    if len(recent) >= 2 and min(recent) >= thresholds.tau_osc:
        return "oscillatory"
    return "inconclusive"


def default_thresholds(data_range: float, scale: float, bank: ObservableBank, config: StudyConfig) -> Thresholds:
    eps = config.eps_meas
    if eps is None:
        eps = max(EPS_MEAS_REL * data_range, EPS_FLOOR_REL * max(scale, 1.0))
    g_max = bank.max_sup
    return Thresholds(
        eps_meas=eps,
        tau_osc=config.tau_osc if config.tau_osc is not None else TAU_OSC_REL * g_max,
        tau_dirac=config.tau_dirac if config.tau_dirac is not None else TAU_DIRAC_REL * g_max,
    )


@dataclass
class StudyResult:
    config: StudyConfig
    common: Mesh
    levels: list[LevelResult]
    bank: ObservableBank
    thresholds: Thresholds
    mask: np.ndarray  # common-grid cells entering the diagnostics
    probes: np.ndarray
    cesaro: np.ndarray  # (S, Nc, d + 1)
    delta_g: np.ndarray  # (S, Nc, G)
    prefix_delta_max: list[float]
    mu: np.ndarray  # per level
    classification: str
    E0_scale: float
    young: dict = field(default_factory=dict)  # (snapshot index, probe) -> measure
    defect_table: dict = field(default_factory=dict)

    @property
    def delta_max(self) -> float:
        return float(np.max(self.delta_g[:, self.mask, :]))

    def max_defects(self) -> tuple[float, float]:
        if not self.defect_table:
            return 0.0, 0.0
        return (
            max(d.D_int for d in self.defect_table.values()),
            max(d.D_kin for d in self.defect_table.values()),
        )


def _diagnostic_mask(config: StudyConfig, common: Mesh) -> np.ndarray:
    if config.window is None:
        return np.ones(common.n_cells, dtype=bool)
    return np.all(np.abs(common.centers) < config.window, axis=1)


def analyse(config: StudyConfig, common: Mesh, levels: list[LevelResult]) -> StudyResult:
    """Accumulate restricted fields in level order and compute all diagnostics."""
    mask = _diagnostic_mask(config, common)
    seq = [np.stack(r.restricted) for r in levels]  # each (S, Nc, d + 1)
    stacked = np.stack(seq)
    lo = stacked.reshape(-1, stacked.shape[-1]).min(axis=0)
    hi = stacked.reshape(-1, stacked.shape[-1]).max(axis=0)
    bank = ObservableBank.from_range(lo, hi, config.bank_centers, radius_factor=config.bank_radius)
    data_range = float(np.linalg.norm(hi - lo))
    scale = float(np.max(np.abs(stacked)))
    thresholds = default_thresholds(data_range, scale, bank, config)

    gas = None if config.synthetic else config.gas
    acc = CesaroAccumulator(bank, gas)
    mask_acc = CesaroAccumulator(bank)
    for U in seq:
        acc.add(U)
        mask_acc.add(U[:, mask, :])
    cesaro = acc.mean_U
    delta = acc.delta_g()

    weights = np.broadcast_to(common.volumes[mask], (len(config.snapshot_times), int(mask.sum())))
    mu = in_measure_indicator([U[:, mask, :] for U in seq], cesaro[:, mask, :], thresholds.eps_meas, weights)
    label = classify(float(np.max(delta[:, mask, :])), mu, thresholds, mask_acc.prefix_delta_max)

    probes = np.arange(common.n_cells) if config.probes is None else np.asarray(config.probes, dtype=int)
    if np.any((probes < 0) | (probes >= common.n_cells)):
        raise ConfigurationError(f"probe indices must lie in [0, {common.n_cells})")
    young, table = {}, {}
    for s in range(len(config.snapshot_times)):
        for p in probes:
            V = EmpiricalYoungMeasure(np.stack([U[s, p] for U in seq]), probe=(float(config.snapshot_times[s]), int(p)))
            young[(s, int(p))] = V
            if gas is not None and np.all(V.atoms[:, 0] > 0):
                table[(s, int(p))] = defects(V, gas)

    E0 = np.array([r.E0 for r in levels])
    E0_scale = float(np.nanmax(E0)) / common.total_volume if np.any(np.isfinite(E0)) else float("nan")
    return StudyResult(
        config, common, levels, bank, thresholds, mask, probes, cesaro, delta,
        mask_acc.prefix_delta_max, mu, label, E0_scale, young, table,
    )


def run_study(config: StudyConfig) -> StudyResult:
    common = build_mesh(tuple([config.base_n] * config.dim))
    return analyse(config, common, run_levels(config, common))


def _diagnostic_rows(result: StudyResult):
    """Per probe, snapshot and observable; probe ``global`` rows carry the maxima
    over the diagnostic region and the global in-measure sequence."""
    names = [g.name for g in result.bank]
    label = result.classification
    for s, t in enumerate(result.config.snapshot_times):
        region = result.delta_g[s, result.mask, :].max(axis=0)
        for j, name in enumerate(names):
            yield ["global", t, name, region[j], *result.mu, label]
    mean = result.cesaro
    eps = result.thresholds.eps_meas
    for p in result.probes:
        for s, t in enumerate(result.config.snapshot_times):
            mu_p = [float(np.linalg.norm(np.stack(lv.restricted)[s, p] - mean[s, p]) > eps) for lv in result.levels]
            for j, name in enumerate(names):
                yield [int(p), t, name, result.delta_g[s, p, j], *mu_p, label]


def write_study(result: StudyResult, directory, config_text: str = "") -> None:
    """Serialise a study: resolved config, per-level fields and ledgers,
    Cesàro means, diagnostics, Young-measure atoms and defect estimates."""
    from pathlib import Path

    from .io import csv_text, field_csv, ledger_csv, phase_to_primitive, write_text
    from .young import psd_check

    out = Path(directory)
    cfg = result.config
    d = cfg.dim
    write_text(out / "config.ini", config_text)
    for lv in result.levels:
        sub = out / f"level_{lv.level}_n{lv.n}"
        mesh = result.common if cfg.synthetic else build_mesh(tuple([lv.n] * d))
        for s, t in enumerate(cfg.snapshot_times):
            rho, u = phase_to_primitive(lv.snapshots[s])
            write_text(sub / f"fields_{s}.csv", field_csv(t, mesh, rho, u))
        if lv.ledger_rows:
            write_text(sub / "ledger.csv", ledger_csv(lv.ledger_rows))
    for s, t in enumerate(cfg.snapshot_times):
        rho, u = phase_to_primitive(result.cesaro[s])
        write_text(out / f"cesaro_{s}.csv", field_csv(t, result.common, rho, u))

    mu_cols = [f"mu_eps_level{k}" for k in range(len(result.levels))]
    write_text(
        out / "diagnostics.csv",
        csv_text(["probe", "t", "g_id", "delta_g", *mu_cols, "classification"], _diagnostic_rows(result)),
    )
    atom_rows = []
    for (s, p), V in sorted(result.young.items()):
        for k, atom in enumerate(V.atoms):
            atom_rows.append([p, cfg.snapshot_times[s], k, *atom])
    write_text(
        out / "young_atoms.csv",
        csv_text(["probe", "t", "level", "rho", *[f"m{i}" for i in range(d)]], atom_rows),
    )
    if result.defect_table:
        rows = []
        for (s, p), D in sorted(result.defect_table.items()):
            ok, worst = psd_check(D.D_conv)
            rows.append([p, cfg.snapshot_times[s], D.D_int, D.D_kin, *D.D_conv.ravel(), worst, ok])
        conv_cols = [f"D_conv_{i}{j}" for i in range(d) for j in range(d)]
        write_text(
            out / "defects.csv",
            csv_text(["probe", "t", "D_int", "D_kin", *conv_cols, "psd_worst", "psd_pass"], rows),
        )
    th = result.thresholds
    summary = [
        ["classification", result.classification],
        ["delta_max", result.delta_max],
        ["eps_meas", th.eps_meas],
        ["tau_osc", th.tau_osc],
        ["tau_dirac", th.tau_dirac],
        ["E0_scale", result.E0_scale],
    ]
    write_text(out / "summary.csv", csv_text(["key", "value"], summary))
