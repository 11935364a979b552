"""Deviation bounds and noise calibration for deletion certificates.

Under a rho-contractive update map, the gap between two optimizer states
driven by the same events obeys a one-step recursion
Delta_{t+1} <= rho Delta_t + eta_t eps_t, whose closed form this module
evaluates. Calibrating Gaussian noise to a deviation level alpha gives an
(eps, delta)-style indistinguishability certificate; the contraction
factor itself is estimated empirically from perturbed replays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InvalidConfig,
    InvalidPrivacyParams,
    InvalidRho,
    LengthMismatch,
    NegativeSigma,
)
from .metrics import ProbeSet, make_probes, memory_operator_error, param_error, state_error
from .olbfgs import CurvaturePair, MemoryState, OptimizerState, StepConfig, initial_state, step
from .stream import Event, EventOp


@dataclass(frozen=True)
class BoundInputs:
    """Ingredients of the deviation recursion.

    perturbations[s] is the product eta_s * eps_s injected at step s; pass
    zeros for a pure deletion gap with no later edits.
    """

    rho: float
    delta0: float
    perturbations: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise InvalidRho(f"rho must lie in (0, 1), got {self.rho}")
        if self.delta0 < 0:
            raise InvalidConfig("delta0 must be >= 0")
        if any(p < 0 for p in self.perturbations):
            raise InvalidConfig("perturbations must be >= 0")


@dataclass(frozen=True)
class Certificate:
    """Noise level sigma achieving (epsilon, delta + beta) at deviation alpha.

    beta is the probability mass on which the deviation bound itself may
    fail; exact (alpha = 0) certificates need no noise.
    """

    alpha: float
    sigma: float
    epsilon: float
    delta: float
    beta: float = 0.0

    @property
    def exact(self) -> bool:
        return self.alpha == 0.0

    @property
    def total_delta(self) -> float:
        return self.delta + self.beta


def deviation_bound(inputs: BoundInputs, steps: int) -> float:
    """Closed-form gap bound after `steps` shared events.

    Delta_k <= rho^k Delta_0 + sum_{s<k} rho^{k-1-s} perturbations[s].
    """
    if steps < 0:
        raise InvalidConfig("steps must be >= 0")
    if len(inputs.perturbations) != steps:
        raise LengthMismatch(
            f"need {steps} perturbation entries, got {len(inputs.perturbations)}"
        )
    total = inputs.delta0 * inputs.rho**steps
    for s, p in enumerate(inputs.perturbations):
        total += inputs.rho ** (steps - 1 - s) * p
    return total


def deviation_bound_trace(inputs: BoundInputs) -> list[float]:
    """One-step recursion iterate: [Delta_0, Delta_1, ..., Delta_n]."""
    out = [inputs.delta0]
    for p in inputs.perturbations:
        out.append(inputs.rho * out[-1] + p)
    return out


def calibrate_sigma(alpha: float, epsilon: float, delta: float) -> float:
    """Smallest Gaussian noise scale masking a deviation of size alpha.

    sigma = alpha * sqrt(2 ln(1.25 / delta)) / epsilon; zero deviation
    needs zero noise.
    """
    if alpha < 0:
        raise InvalidPrivacyParams("alpha must be >= 0")
    if epsilon <= 0:
        raise InvalidPrivacyParams("epsilon must be > 0")
    if not 0.0 < delta < 1.0:
        raise InvalidPrivacyParams("delta must lie in (0, 1)")
    if alpha == 0.0:
        return 0.0
    return alpha * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def certificate(alpha: float, epsilon: float, delta: float, beta: float = 0.0) -> Certificate:
    if beta < 0:
        raise InvalidPrivacyParams("beta must be >= 0")
    return Certificate(
        alpha=alpha,
        sigma=calibrate_sigma(alpha, epsilon, delta),
        epsilon=epsilon,
        delta=delta,
        beta=beta,
    )


def inject_noise(state: OptimizerState, sigma: float, seed: int) -> OptimizerState:
    """Add seeded isotropic Gaussian noise to the parameters only."""
    if sigma < 0:
        raise NegativeSigma("sigma must be >= 0")
    out = state.clone()
    if sigma == 0.0:
        return out
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x6E6F6973)))
    out.w = out.w + sigma * rng.standard_normal(out.w.shape[0])
    return out


def _perturbed_copy(
    state: OptimizerState, rng: np.random.Generator, scale: float, perturb_memory: bool
) -> OptimizerState:
    out = state.clone()
    d = out.w.shape[0]
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    delta = scale * max(1.0, float(np.linalg.norm(out.w)))
    out.w = out.w + delta * u
    if perturb_memory and len(out.memory):
        jittered = []
        for p in out.memory.pairs:
            js = p.s + delta * 1e-2 * rng.standard_normal(d)
            jy = p.y + delta * 1e-2 * rng.standard_normal(d)
            if float(js @ jy) > 0.0:
                jittered.append(CurvaturePair(s=js, y=jy, sources=p.sources, created_at=p.created_at))
            else:
                jittered.append(p)
        out.memory.clear()
        for p in jittered:
            out.memory.push(p)
    return out


def contraction_ratios(
    history: list[Event],
    cfg: StepConfig,
    trials: int,
    seed: int,
    probes: ProbeSet | None = None,
    memory_weight: float = 1.0,
    perturb_memory: bool = True,
    perturb_scale: float = 1e-4,
) -> list[float]:
    """One-step expansion ratios of the update map along a replayed history.

    Each trial perturbs the state reached after a sampled number of events
    and steps both copies with the next event; the ratio is the combined
    state error after over before. Insert-only histories are required.
    """
    inserts = [e for e in history if e.op is EventOp.INSERT]
    if not inserts:
        raise InvalidConfig("contraction estimation needs at least one insert event")
    if trials < 1:
        raise InvalidConfig("trials must be >= 1")
    d = inserts[0].payload.features.shape[0] if hasattr(inserts[0].payload, "features") else (
        inserts[0].payload.minimizer.shape[0]
    )
    if probes is None:
        probes = make_probes(d, 32, seed)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x636F6E74)))
    positions = sorted(int(p) for p in rng.integers(0, len(inserts), size=trials))

    ratios: list[float] = []
    state = initial_state(d, cfg)
    consumed = 0
    for pos in positions:
        while consumed < pos:
            state = step(state, inserts[consumed], cfg)
            consumed += 1
        probe_event = inserts[pos]
        base = state.clone()
        pert = _perturbed_copy(state, rng, perturb_scale, perturb_memory)
        before = state_error(
            param_error(base.w, pert.w),
            memory_operator_error(base.memory, pert.memory, probes),
            memory_weight,
        )
        if before == 0.0:
            continue
        base_next = step(base, probe_event, cfg)
        pert_next = step(pert, probe_event, cfg)
        after = state_error(
            param_error(base_next.w, pert_next.w),
            memory_operator_error(base_next.memory, pert_next.memory, probes),
            memory_weight,
        )
        ratios.append(after / before)
    if not ratios:
        raise InvalidConfig("all contraction trials were degenerate")
    return ratios


def empirical_contraction(
    history: list[Event],
    cfg: StepConfig,
    trials: int,
    seed: int,
    probes: ProbeSet | None = None,
    memory_weight: float = 1.0,
    perturb_memory: bool = True,
    perturb_scale: float = 1e-4,
) -> float:
    """Worst observed one-step expansion ratio; >= 1 flags non-contraction."""
    return max(
        contraction_ratios(
            history,
            cfg,
            trials,
            seed,
            probes=probes,
            memory_weight=memory_weight,
            perturb_memory=perturb_memory,
            perturb_scale=perturb_scale,
        )
    )
