"""Experiment harness: deletion benchmarks over synthetic streams.

The single-deletion protocol trains on a prefix, selects a deletion set,
builds the counterfactual reference by replaying the edited prefix from
the global initial state, applies each configured intervention, then
propagates every repaired state and the reference over one shared future
segment while recording per-step discrepancies. A grid runner crosses
configuration axes with derived per-point seeds, and an aggregator
reduces rows to per-method summaries.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import certify, metrics
from .errors import EmptyResults, InvalidAxis, InvalidConfig
from .interventions import (
    DEFAULT_METHOD_IDS,
    InterventionContext,
    InterventionCost,
    apply as apply_intervention,
    parse_intervention,
)
from .metrics import MetricTrace, ProbeSet, make_probes
from .olbfgs import OptimizerState, StepConfig, advance, initial_state, replay, two_loop
from .stream import (
    DeletionMode,
    DeletionSet,
    Event,
    LogisticSample,
    QuadraticSample,
    Regime,
    StreamConfig,
    edit_history,
    generate_stream,
    select_deletion_set,
)

EXACT_RECOVERY_EPS = 1e-12

CSV_COLUMNS = (
    "seed",
    "regime",
    "kappa",
    "tau",
    "deletion_mode",
    "deletion_size",
    "t_del",
    "horizon",
    "method",
    "initial_param_err",
    "initial_mem_err",
    "initial_state_err",
    "final_state_err",
    "future_state_auc",
    "future_param_auc",
    "upd_dir_auc",
    "direct_mass_at_del",
    "clearance_time",
    "exact_recovery",
    "avg_future_loss",
    "auc_ratio_vs_noop",
    "rho_p1",
    "rho_p2",
    "rho_p3",
    "replayed_events",
    "extra_grad_evals",
    "wall_clock_s",
    "alpha_bound",
    "sigma_cert",
)

TIMING_COLUMNS = ("wall_clock_s",)

TRACE_COLUMNS = ("k", "E_w", "E_Z", "E_theta", "D_upd", "M_direct", "loss")


@dataclass
class ExperimentConfig:
    """One benchmark run: a stream, an update rule, and measurement knobs.

    The optimizer's ridge is always synced to the stream's ridge before
    running, so the replayed loss matches the generating loss.
    """

    stream: StreamConfig = field(default_factory=StreamConfig)
    optimizer: StepConfig = field(default_factory=StepConfig)
    interventions: tuple[str, ...] = DEFAULT_METHOD_IDS
    probe_count: int = 32
    memory_weight: float = 1.0
    phase_policy: str = "auto"
    seeds: tuple[int, ...] = (0,)
    contraction_trials: int = 25
    privacy_epsilon: float = 1.0
    privacy_delta: float = 0.05
    exact_recovery_eps: float = EXACT_RECOVERY_EPS

    def validate(self) -> None:
        self.stream.validate()
        if self.probe_count < 1:
            raise InvalidConfig("probe_count must be >= 1")
        if self.memory_weight < 0:
            raise InvalidConfig("memory_weight must be >= 0")
        if self.phase_policy not in ("auto", "nominal"):
            raise InvalidConfig("phase_policy must be 'auto' or 'nominal'")
        if not self.seeds:
            raise InvalidConfig("at least one seed is required")
        if self.contraction_trials < 0:
            raise InvalidConfig("contraction_trials must be >= 0")
        for method_id in self.interventions:
            parse_intervention(method_id, self.optimizer.tau)


def experiment1_defaults() -> ExperimentConfig:
    """Small-horizon decay study: d=25, T=700, t_del=300, H=250."""
    return ExperimentConfig(
        stream=StreamConfig(length=700, deletion_time=300, horizon=250),
        interventions=("noop",),
    )


def experiment2_defaults() -> ExperimentConfig:
    """Full intervention comparison: d=25, T=5000, t_del=500, H=4500."""
    return ExperimentConfig(
        stream=StreamConfig(length=5000, deletion_time=500, horizon=4500)
    )


@dataclass
class MethodResult:
    method: str
    initial_param_err: float
    initial_mem_err: float
    initial_state_err: float
    final_state_err: float
    future_state_auc: float
    future_param_auc: float
    upd_dir_auc: float
    direct_mass_at_del: int
    clearance_time: int | None
    exact_recovery: bool
    avg_future_loss: float
    auc_ratio_vs_noop: float
    rho_p1: float
    rho_p2: float
    rho_p3: float
    replayed_events: int
    extra_grad_evals: int
    wall_clock_s: float
    alpha_bound: float
    sigma_cert: float


@dataclass
class RunResult:
    seed: int
    regime: str
    kappa: float
    tau: int
    deletion_mode: str
    deletion_size: int
    t_del: int
    horizon: int
    methods: list[MethodResult]
    rho_emp: float
    future_hash: str
    probe_hash: str
    assumption_violations: list[str] = field(default_factory=list)
    traces: dict[str, MetricTrace] = field(default_factory=dict)

    def method_row(self, method: str) -> MethodResult:
        for row in self.methods:
            if row.method == method:
                return row
        raise KeyError(method)


@dataclass
class _Reference:
    """Counterfactual trajectory unrolled over the shared future."""

    ws: list[np.ndarray]
    actions: list[np.ndarray]
    directions: list[np.ndarray]


def _hash_events(events: list[Event]) -> str:
    h = hashlib.sha256()
    for e in events:
        h.update(f"{e.time},{e.op.value},{e.index};".encode("ascii"))
        p = e.payload
        if isinstance(p, QuadraticSample):
            h.update(p.hessian.tobytes())
            h.update(p.minimizer.tobytes())
        elif isinstance(p, LogisticSample):
            h.update(p.features.tobytes())
            h.update(str(p.label).encode("ascii"))
    return h.hexdigest()[:16]


def _hash_probes(probes: ProbeSet) -> str:
    return hashlib.sha256(probes.vectors.tobytes()).hexdigest()[:16]


def _reference_trajectory(
    state0: OptimizerState, future: list[Event], cfg: StepConfig, probes: ProbeSet
) -> _Reference:
    h = len(future)
    ws: list[np.ndarray] = [None] * (h + 1)
    actions: list[np.ndarray] = [None] * (h + 1)
    directions: list[np.ndarray] = [None] * h
    st = state0.clone()
    for k in range(h + 1):
        ws[k] = st.w
        actions[k] = two_loop(st.memory, probes.vectors)
        if k < h:
            st, info = advance(st, future[k], cfg)
            directions[k] = info.direction
    return _Reference(ws=ws, actions=actions, directions=directions)


def _propagate_and_measure(
    state0: OptimizerState,
    ref: _Reference,
    future: list[Event],
    cfg: StepConfig,
    probes: ProbeSet,
    memory_weight: float,
    deletions: DeletionSet,
) -> MetricTrace:
    h = len(future)
    param = np.empty(h + 1)
    memory = np.empty(h + 1)
    state = np.empty(h + 1)
    direction = np.full(h + 1, np.nan)
    mass = np.zeros(h + 1, dtype=np.int64)
    loss = np.full(h + 1, np.nan)
    banned = deletions.indices

    st = state0.clone()
    for k in range(h + 1):
        actions = two_loop(st.memory, probes.vectors)
        diff = actions - ref.actions[k]
        e_w = float(np.linalg.norm(st.w - ref.ws[k]))
        e_z = math.sqrt(float(np.mean(np.sum(diff * diff, axis=0))))
        param[k] = e_w
        memory[k] = e_z
        state[k] = e_w + memory_weight * e_z
        if banned:
            mass[k] = sum(1 for p in st.memory.pairs if p.sources & banned)
        if k < h:
            st, info = advance(st, future[k], cfg)
            try:
                direction[k] = metrics.direction_gap(info.direction, ref.directions[k])
            except metrics.DegenerateDirection:
                pass
            loss[k] = info.loss
    return MetricTrace(
        param_err=param,
        memory_err=memory,
        state_err=state,
        direction_err=direction,
        direct_mass=mass,
        loss=loss,
        memory_weight=memory_weight,
    )


def _phase_fit(trace: np.ndarray, k_lo: int, k_hi: int) -> float:
    try:
        return metrics.fit_decay_rate(trace, k_lo, k_hi).rho_hat
    except Exception:
        return float("nan")


def _summarize_method(
    label: str,
    trace: MetricTrace,
    cost: InterventionCost,
    tau: int,
    horizon: int,
    phase_policy: str,
    exact_eps: float,
) -> MethodResult:
    state_auc = trace.state_auc()
    clearance = trace.clearance_time()
    with np.errstate(all="ignore"):
        finite_losses = trace.loss[~np.isnan(trace.loss)]
    avg_loss = float(np.mean(finite_losses)) if finite_losses.size else float("nan")

    boundary = tau
    if phase_policy == "auto" and clearance is not None and clearance <= 2 * tau:
        boundary = clearance
    rho_p1 = _phase_fit(trace.state_err, 0, boundary - 1) if boundary >= 3 else float("nan")
    rho_p2 = (
        _phase_fit(trace.state_err, boundary, 2 * tau - 1)
        if 2 * tau - 1 - boundary >= 2
        else float("nan")
    )
    rho_p3 = _phase_fit(trace.state_err, 2 * tau, horizon) if horizon - 2 * tau >= 2 else float("nan")

    return MethodResult(
        method=label,
        initial_param_err=float(trace.param_err[0]),
        initial_mem_err=float(trace.memory_err[0]),
        initial_state_err=float(trace.state_err[0]),
        final_state_err=float(trace.state_err[-1]),
        future_state_auc=state_auc,
        future_param_auc=trace.param_auc(),
        upd_dir_auc=trace.direction_auc(),
        direct_mass_at_del=int(trace.direct_mass[0]),
        clearance_time=clearance,
        exact_recovery=bool(state_auc <= exact_eps),
        avg_future_loss=avg_loss,
        auc_ratio_vs_noop=float("nan"),
        rho_p1=rho_p1,
        rho_p2=rho_p2,
        rho_p3=rho_p3,
        replayed_events=cost.replayed_events,
        extra_grad_evals=cost.extra_grad_evals,
        wall_clock_s=cost.wall_clock_seconds,
        alpha_bound=float("nan"),
        sigma_cert=float("nan"),
    )


def _run_single(
    cfg: ExperimentConfig, seed: int, method_ids: tuple[str, ...], keep_traces: bool
) -> RunResult:
    cfg.validate()
    scfg = cfg.stream
    step_cfg = replace(cfg.optimizer, ridge=scfg.ridge)
    tau = step_cfg.tau
    t_del = scfg.deletion_time
    horizon = scfg.horizon

    strm = generate_stream(scfg, seed)
    theta0 = initial_state(scfg.dimension, step_cfg)
    prefix = strm.prefix(t_del)
    actual = replay(theta0, prefix, step_cfg)
    deletions = select_deletion_set(
        strm, t_del, scfg.deletion_mode, scfg.deletion_size, grad_state=actual.w
    )
    edited = edit_history(prefix, deletions)
    oracle0 = replay(theta0, edited, step_cfg)

    future = [e for e in strm.future(t_del, horizon) if e.index not in deletions.indices]
    probes = make_probes(scfg.dimension, cfg.probe_count, seed)
    ref = _reference_trajectory(oracle0, future, step_cfg, probes)

    ctx = InterventionContext(
        actual=actual,
        deletions=deletions,
        step_cfg=step_cfg,
        theta0=theta0,
        full_prefix=prefix,
        window_buffer=prefix,
    )

    rows: list[MethodResult] = []
    traces: dict[str, MetricTrace] = {}
    noop_trace: MetricTrace | None = None
    for method_id in method_ids:
        spec = parse_intervention(method_id, tau)
        intervened = apply_intervention(spec, ctx)
        trace = _propagate_and_measure(
            intervened.state, ref, future, step_cfg, probes, cfg.memory_weight, deletions
        )
        rows.append(
            _summarize_method(
                intervened.label,
                trace,
                intervened.cost,
                tau,
                len(future),
                cfg.phase_policy,
                cfg.exact_recovery_eps,
            )
        )
        if method_id == "noop":
            noop_trace = trace
        if keep_traces:
            traces[intervened.label] = trace

    noop_auc = next((r.future_state_auc for r in rows if r.method == "noop"), float("nan"))
    for row in rows:
        if noop_auc > 0:
            row.auc_ratio_vs_noop = row.future_state_auc / noop_auc

    violations: list[str] = []
    rho_emp = float("nan")
    if cfg.contraction_trials > 0:
        history = strm.events[: t_del + horizon]
        rho_emp = certify.empirical_contraction(
            history,
            step_cfg,
            cfg.contraction_trials,
            seed,
            probes=probes,
            memory_weight=cfg.memory_weight,
        )
        if rho_emp < 1.0:
            for row in rows:
                row.alpha_bound = certify.deviation_bound(
                    certify.BoundInputs(
                        rho=rho_emp,
                        delta0=row.initial_state_err,
                        perturbations=(0.0,) * len(future),
                    ),
                    len(future),
                )
                row.sigma_cert = certify.calibrate_sigma(
                    row.alpha_bound, cfg.privacy_epsilon, cfg.privacy_delta
                )
            if noop_trace is not None:
                bound = noop_trace.state_err[0]
                for k in range(1, len(noop_trace)):
                    bound *= rho_emp
                    if noop_trace.state_err[k] > bound * (1.0 + 1e-9) + 1e-15:
                        violations.append(
                            f"contractive-updates: NoOp trace exceeds bound at k={k}"
                        )
                        break
        else:
            violations.append(f"contractive-updates: rho_emp={rho_emp!r} >= 1")

    return RunResult(
        seed=seed,
        regime=scfg.regime.value,
        kappa=scfg.condition_number,
        tau=tau,
        deletion_mode=scfg.deletion_mode.value,
        deletion_size=scfg.deletion_size,
        t_del=t_del,
        horizon=horizon,
        methods=rows,
        rho_emp=rho_emp,
        future_hash=_hash_events(future),
        probe_hash=_hash_probes(probes),
        assumption_violations=violations,
        traces=traces,
    )


def run_experiment1(cfg: ExperimentConfig, keep_traces: bool = True) -> RunResult:
    """Actual-versus-counterfactual decay study; no intervention applied."""
    return _run_single(cfg, cfg.seeds[0], ("noop",), keep_traces)


def run_experiment2(cfg: ExperimentConfig, keep_traces: bool = True) -> RunResult:
    """Full intervention comparison on one seed."""
    return _run_single(cfg, cfg.seeds[0], tuple(cfg.interventions), keep_traces)


# ---------------------------------------------------------------------------
# Grid running
# ---------------------------------------------------------------------------

_STREAM_AXIS_FIELDS = {
    "kappa": "condition_number",
    "t_del": "deletion_time",
    "regime": "regime",
    "deletion_mode": "deletion_mode",
}
_OPT_AXIS_FIELDS = {"tau": "tau", "eta": "eta"}


def _apply_axis(cfg: ExperimentConfig, name: str, value) -> ExperimentConfig:
    stream_fields = {f.name for f in StreamConfig.__dataclass_fields__.values()}
    opt_fields = {f.name for f in StepConfig.__dataclass_fields__.values()}
    if name == "seed":
        return replace(cfg, seeds=(int(value),))
    if name in _STREAM_AXIS_FIELDS or name in stream_fields:
        field_name = _STREAM_AXIS_FIELDS.get(name, name)
        if field_name == "regime":
            value = Regime(value) if not isinstance(value, Regime) else value
        if field_name == "deletion_mode":
            value = DeletionMode(value) if not isinstance(value, DeletionMode) else value
        return replace(cfg, stream=replace(cfg.stream, **{field_name: value}))
    if name in _OPT_AXIS_FIELDS or name in opt_fields:
        field_name = _OPT_AXIS_FIELDS.get(name, name)
        return replace(cfg, optimizer=replace(cfg.optimizer, **{field_name: value}))
    raise InvalidAxis(f"unknown grid axis {name!r}")


def derive_point_seed(base_seed: int, point: dict) -> int:
    """Stable per-point seed from the base seed and non-seed axis values.

    A point with no non-seed axes keeps the base seed, so a degenerate
    grid reproduces the direct single run exactly.
    """
    if "seed" in point:
        base_seed = int(point["seed"])
    items = sorted((k, str(v)) for k, v in point.items() if k != "seed")
    if not items:
        return base_seed
    payload = json.dumps([base_seed, items], sort_keys=True)
    digest = hashlib.sha256(payload.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def grid_points(axes: dict[str, list]) -> list[dict]:
    """Cartesian product in canonical (alphabetical axis name) order."""
    if not axes:
        return [{}]
    names = sorted(axes)
    out = []
    for combo in itertools.product(*(axes[n] for n in names)):
        out.append(dict(zip(names, combo)))
    return out


def _grid_worker(args: tuple[ExperimentConfig, dict, int]) -> RunResult:
    base, point, seed = args
    cfg = base
    for name, value in point.items():
        cfg = _apply_axis(cfg, name, value)
    return _run_single(cfg, seed, tuple(cfg.interventions), keep_traces=False)


def run_grid(
    base: ExperimentConfig, axes: dict[str, list], workers: int = 1
) -> list[RunResult]:
    """Run every point of the axis product; results follow point order.

    Each point gets its own derived seed so results are independent of
    worker count and completion order.
    """
    for name, values in axes.items():
        if not values:
            raise InvalidAxis(f"grid axis {name!r} has no values")
        _apply_axis(base, name, values[0])
    points = grid_points(axes)
    jobs = [(base, p, derive_point_seed(base.seeds[0], p)) for p in points]
    if workers <= 1 or len(jobs) == 1:
        return [_grid_worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_grid_worker, jobs))


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

SUMMARY_COLUMNS = (
    "method",
    "runs",
    "median_future_state_auc",
    "mean_future_state_auc",
    "median_initial_state_err",
    "median_final_state_err",
    "median_auc_ratio_vs_noop",
    "share_better_than_noop",
    "exact_recovery_rate",
    "best_non_oracle_share",
    "median_avg_future_loss",
    "mean_replayed_events",
)


def aggregate(results: list[RunResult]) -> list[dict]:
    """Per-method summary over matched configurations."""
    if not results:
        raise EmptyResults("no results to aggregate")
    methods: list[str] = []
    for res in results:
        for row in res.methods:
            if row.method not in methods:
                methods.append(row.method)

    best_counts = {m: 0 for m in methods}
    comparable = 0
    for res in results:
        non_oracle = [r for r in res.methods if r.method != "oracle"]
        if not non_oracle:
            continue
        comparable += 1
        best = min(r.future_state_auc for r in non_oracle)
        for r in non_oracle:
            if r.future_state_auc == best:
                best_counts[r.method] += 1

    out = []
    for m in methods:
        rows = [res.method_row(m) for res in results if any(r.method == m for r in res.methods)]
        aucs = np.array([r.future_state_auc for r in rows])
        ratios = np.array([r.auc_ratio_vs_noop for r in rows])
        noop_pairs = [
            (res.method_row(m).future_state_auc, res.method_row("noop").future_state_auc)
            for res in results
            if any(r.method == m for r in res.methods)
            and any(r.method == "noop" for r in res.methods)
        ]
        share_better = (
            sum(1 for a, b in noop_pairs if a < b) / len(noop_pairs) if noop_pairs else float("nan")
        )
        with np.errstate(all="ignore"):
            median_ratio = float(np.nanmedian(ratios)) if ratios.size else float("nan")
        out.append(
            {
                "method": m,
                "runs": len(rows),
                "median_future_state_auc": float(np.median(aucs)),
                "mean_future_state_auc": float(np.mean(aucs)),
                "median_initial_state_err": float(np.median([r.initial_state_err for r in rows])),
                "median_final_state_err": float(np.median([r.final_state_err for r in rows])),
                "median_auc_ratio_vs_noop": median_ratio,
                "share_better_than_noop": share_better,
                "exact_recovery_rate": sum(r.exact_recovery for r in rows) / len(rows),
                "best_non_oracle_share": (
                    best_counts[m] / comparable if comparable and m != "oracle" else float("nan")
                ),
                "median_avg_future_loss": float(np.nanmedian([r.avg_future_loss for r in rows])),
                "mean_replayed_events": float(np.mean([r.replayed_events for r in rows])),
            }
        )
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "-1"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def result_rows(result: RunResult) -> list[dict]:
    rows = []
    for m in result.methods:
        rows.append(
            {
                "seed": result.seed,
                "regime": result.regime,
                "kappa": result.kappa,
                "tau": result.tau,
                "deletion_mode": result.deletion_mode,
                "deletion_size": result.deletion_size,
                "t_del": result.t_del,
                "horizon": result.horizon,
                "method": m.method,
                "initial_param_err": m.initial_param_err,
                "initial_mem_err": m.initial_mem_err,
                "initial_state_err": m.initial_state_err,
                "final_state_err": m.final_state_err,
                "future_state_auc": m.future_state_auc,
                "future_param_auc": m.future_param_auc,
                "upd_dir_auc": m.upd_dir_auc,
                "direct_mass_at_del": m.direct_mass_at_del,
                "clearance_time": m.clearance_time,
                "exact_recovery": m.exact_recovery,
                "avg_future_loss": m.avg_future_loss,
                "auc_ratio_vs_noop": m.auc_ratio_vs_noop,
                "rho_p1": m.rho_p1,
                "rho_p2": m.rho_p2,
                "rho_p3": m.rho_p3,
                "replayed_events": m.replayed_events,
                "extra_grad_evals": m.extra_grad_evals,
                "wall_clock_s": m.wall_clock_s,
                "alpha_bound": m.alpha_bound,
                "sigma_cert": m.sigma_cert,
            }
        )
    return rows


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_results_csv(results: list[RunResult], path: str) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for res in results:
        for row in result_rows(res):
            lines.append(",".join(_format_cell(row[c]) for c in CSV_COLUMNS))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_results_json(results: list[RunResult], path: str) -> None:
    docs = []
    for res in results:
        docs.append(
            {
                "rows": result_rows(res),
                "rho_emp": res.rho_emp,
                "future_hash": res.future_hash,
                "probe_hash": res.probe_hash,
                "assumption_violations": res.assumption_violations,
            }
        )
    _atomic_write(path, json.dumps(docs, indent=2, sort_keys=True, allow_nan=True) + "\n")


def write_trace_csv(trace: MetricTrace, path: str) -> None:
    lines = [",".join(TRACE_COLUMNS)]
    for k in range(len(trace)):
        cells = (
            str(k),
            repr(float(trace.param_err[k])),
            repr(float(trace.memory_err[k])),
            repr(float(trace.state_err[k])),
            repr(float(trace.direction_err[k])),
            str(int(trace.direct_mass[k])),
            repr(float(trace.loss[k])),
        )
        lines.append(",".join(cells))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_summary_csv(summary: list[dict], path: str) -> None:
    lines = [",".join(SUMMARY_COLUMNS)]
    for row in summary:
        lines.append(",".join(_format_cell(row[c]) for c in SUMMARY_COLUMNS))
    _atomic_write(path, "\n".join(lines) + "\n")
