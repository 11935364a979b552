"""Distances between optimizer states and summaries of their traces.

State discrepancy combines a parameter term ||w_a - w_b|| with a memory
term measured through the action of each memory's two-loop operator on a
fixed set of unit probes. Traces of the combined error over a
post-deletion horizon are summarized by their area (plain sum) and by a
log-linear decay fit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateDirection,
    DimensionMismatch,
    EmptyTrace,
    IntervalTooShort,
    InvalidConfig,
)
from .olbfgs import MemoryState, OptimizerState, two_loop
from .stream import Event, loss_and_grad

DIRECTION_EPS = 1e-14
FIT_FLOOR = 1e-15


@dataclass(frozen=True)
class ProbeSet:
    """Fixed unit probe vectors, one per column; shared across methods."""

    vectors: np.ndarray
    seed: int

    @property
    def count(self) -> int:
        return self.vectors.shape[1]

    @property
    def dimension(self) -> int:
        return self.vectors.shape[0]


def make_probes(dimension: int, count: int, seed: int) -> ProbeSet:
    if dimension < 1 or count < 1:
        raise InvalidConfig("probe dimension and count must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x70726F62)))
    vecs = rng.standard_normal((dimension, count))
    vecs /= np.linalg.norm(vecs, axis=0, keepdims=True)
    vecs.flags.writeable = False
    return ProbeSet(vectors=vecs, seed=seed)


def param_error(w_a: np.ndarray, w_b: np.ndarray) -> float:
    if w_a.shape != w_b.shape:
        raise DimensionMismatch("parameter vectors differ in shape")
    return float(np.linalg.norm(w_a - w_b))


def operator_action_error(action_a: np.ndarray, action_b: np.ndarray) -> float:
    """RMS over probe columns of the Euclidean action gap."""
    diff = action_a - action_b
    return math.sqrt(float(np.mean(np.sum(diff * diff, axis=0))))


def memory_operator_error(mem_a: MemoryState, mem_b: MemoryState, probes: ProbeSet) -> float:
    return operator_action_error(
        two_loop(mem_a, probes.vectors), two_loop(mem_b, probes.vectors)
    )


def state_error(param_err: float, memory_err: float, memory_weight: float = 1.0) -> float:
    return param_err + memory_weight * memory_err


def direction_gap(d_a: np.ndarray, d_b: np.ndarray) -> float:
    """1 - cos(d_a, d_b); raises when either direction is degenerate."""
    n_a = float(np.linalg.norm(d_a))
    n_b = float(np.linalg.norm(d_b))
    if n_a < DIRECTION_EPS or n_b < DIRECTION_EPS:
        raise DegenerateDirection("update direction norm below 1e-14")
    if np.array_equal(d_a, d_b):
        return 0.0
    return 1.0 - float(d_a @ d_b) / (n_a * n_b)


def update_direction_error(
    theta_a: OptimizerState, theta_b: OptimizerState, event: Event, ridge: float = 0.0
) -> float:
    """Angle gap between the two states' update directions on one event."""
    _, g_a = loss_and_grad(event.payload, theta_a.w, ridge)
    _, g_b = loss_and_grad(event.payload, theta_b.w, ridge)
    d_a = -two_loop(theta_a.memory, g_a)
    d_b = -two_loop(theta_b.memory, g_b)
    return direction_gap(d_a, d_b)


def auc(values: np.ndarray | list[float]) -> float:
    """Plain sum of a non-negative trace; missing entries are skipped."""
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise EmptyTrace("cannot integrate an empty trace")
    return float(np.nansum(arr))


def direct_clearance_time(mass_trace: np.ndarray | list[int]) -> int | None:
    """First post-deletion step with zero direct memory mass, else None."""
    arr = np.asarray(mass_trace)
    if arr.size == 0:
        raise EmptyTrace("cannot scan an empty mass trace")
    hits = np.flatnonzero(arr == 0)
    return int(hits[0]) if hits.size else None


@dataclass(frozen=True)
class DecayFit:
    """Least-squares fit of log(error) over one phase of the horizon."""

    rho_hat: float
    c_hat: float
    k_lo: int
    k_hi: int
    r_squared: float


def fit_decay_rate(
    trace: np.ndarray | list[float], k_lo: int, k_hi: int, floor: float = FIT_FLOOR
) -> DecayFit:
    """Fit trace[k] ~ C * rho^k on k in [k_lo, k_hi] (inclusive).

    Values are floored at `floor` before taking logs. rho_hat is
    deliberately unclamped: amplifying phases report rho_hat > 1. The
    r-squared is computed over the unfloored points only; with fewer than
    two of them it is reported as nan.
    """
    arr = np.asarray(trace, dtype=float)
    if not 0 <= k_lo <= k_hi < arr.size:
        raise IntervalTooShort(f"interval [{k_lo}, {k_hi}] outside trace of length {arr.size}")
    if k_hi - k_lo < 2:
        raise IntervalTooShort("decay fit needs k_hi - k_lo >= 2")
    ks = np.arange(k_lo, k_hi + 1, dtype=float)
    vals = arr[k_lo : k_hi + 1]
    logs = np.log(np.maximum(vals, floor))
    slope, intercept = np.polyfit(ks, logs, 1)

    live = vals > floor
    if int(live.sum()) >= 2:
        resid = logs[live] - (slope * ks[live] + intercept)
        total = logs[live] - float(np.mean(logs[live]))
        ss_res = float(resid @ resid)
        ss_tot = float(total @ total)
        if ss_tot > 0.0:
            r2 = 1.0 - ss_res / ss_tot
        else:
            r2 = 1.0 if ss_res == 0.0 else 0.0
    else:
        r2 = float("nan")
    return DecayFit(
        rho_hat=float(np.exp(slope)),
        c_hat=float(np.exp(intercept)),
        k_lo=k_lo,
        k_hi=k_hi,
        r_squared=r2,
    )


@dataclass
class MetricTrace:
    """Per-step discrepancies over a shared post-deletion horizon.

    Entry k describes the state after k future events. direction_err and
    loss refer to the event consumed between k and k+1, so their final
    entry is nan; direction_err is also nan where a direction was
    degenerate. Those entries are excluded from sums.
    """

    param_err: np.ndarray
    memory_err: np.ndarray
    state_err: np.ndarray
    direction_err: np.ndarray
    direct_mass: np.ndarray
    loss: np.ndarray
    memory_weight: float = 1.0

    def __len__(self) -> int:
        return int(self.state_err.size)

    def state_auc(self) -> float:
        return auc(self.state_err)

    def param_auc(self) -> float:
        return auc(self.param_err)

    def direction_auc(self) -> float:
        return auc(self.direction_err)

    def clearance_time(self) -> int | None:
        return direct_clearance_time(self.direct_mass)
