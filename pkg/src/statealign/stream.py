"""Synthetic event streams for online learning with deletions.

Two regimes are supported. The quadratic regime emits per-event losses
l(w) = 0.5 (w - a_t)' H_t (w - a_t) with a slowly rotating minimizer a_t
and optional curvature drift. The logistic regime emits ridge-regularized
logistic losses on Gaussian features with a drifting teacher vector.

Streams are insert-only; deletions are requested afterwards through a
DeletionSet and applied by editing history. Generation is deterministic:
the same (config, seed) produces bit-identical events.
"""
from __future__ import annotations

import base64
import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum

import numpy as np
from scipy.special import expit

from .errors import (
    DimensionMismatch,
    InsufficientHistory,
    InvalidConfig,
    MissingGradState,
)

STREAM_FILE_VERSION = 1

# Salt mixed into the sub-seed for the random deletion mode so the draw is
# independent of the generator's own stream of draws.
_DELETION_SEED_TAG = 0x64656C


class EventOp(Enum):
    INSERT = "insert"
    DELETE = "delete"


class Regime(Enum):
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"


class DeletionMode(Enum):
    RECENT = "recent"
    OLD = "old"
    RANDOM = "random"
    HIGH_GRADIENT = "high_gradient"


@dataclass(frozen=True, slots=True)
class QuadraticSample:
    """One quadratic loss event: hessian H_t and minimizer a_t."""

    hessian: np.ndarray
    minimizer: np.ndarray


@dataclass(frozen=True, slots=True)
class LogisticSample:
    """One logistic loss event: feature vector and a +1/-1 label."""

    features: np.ndarray
    label: int


SamplePayload = QuadraticSample | LogisticSample


@dataclass(frozen=True, slots=True)
class Event:
    op: EventOp
    index: int
    time: int
    payload: SamplePayload | None = None

    def __post_init__(self) -> None:
        if self.op is EventOp.INSERT and self.payload is None:
            raise InvalidConfig("insert events carry a payload")
        if self.op is EventOp.DELETE and self.payload is not None:
            raise InvalidConfig("delete events carry no payload")
        if self.index < 0:
            raise InvalidConfig("event index must be non-negative")


@dataclass(frozen=True)
class DeletionSet:
    """Indices requested for removal at a given stream time."""

    indices: frozenset[int]
    requested_at: int
    mode: DeletionMode

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class StreamConfig:
    """Generator knobs for both regimes.

    Drift follows a_t = a_0 + delta_a sin(2 pi t / P_a) u1
    + delta_a cos(2 pi t / P_a) u2 + sigma_a xi_t, with u1, u2 random
    orthonormal directions fixed per stream. Curvature interpolates
    H_t = (1 - alpha_t) H_0 + alpha_t H_1 with
    alpha_t = (curvature_drift / 2) (1 + sin(2 pi t / P_H)); the logistic
    feature covariance interpolates the same way. The logistic teacher is
    beta_t = beta_0 + label_drift * sin(2 pi t / P_beta) v.

    center_scale scales the random draw of a_0 (quadratic) and beta_0
    (logistic); zero pins both at the origin.
    """

    regime: Regime = Regime.QUADRATIC
    dimension: int = 25
    length: int = 5000
    condition_number: float = 10.0
    mu: float = 1.0
    drift_amplitude: float = 0.5
    drift_period: float = 200.0
    drift_noise: float = 0.01
    curvature_drift: float = 0.0
    curvature_period: float = 500.0
    ridge: float = 0.05
    label_drift: float = 0.5
    label_period: float = 500.0
    center_scale: float = 1.0
    deletion_mode: DeletionMode = DeletionMode.RECENT
    deletion_size: int = 5
    deletion_time: int = 500
    horizon: int = 4500

    def validate(self) -> None:
        if self.dimension < 1:
            raise InvalidConfig("dimension must be >= 1")
        if self.length < 1:
            raise InvalidConfig("length must be >= 1")
        if self.mu <= 0:
            raise InvalidConfig("mu must be > 0")
        if self.condition_number < 1:
            raise InvalidConfig("condition_number must be >= 1")
        if self.drift_period <= 0 or self.curvature_period <= 0 or self.label_period <= 0:
            raise InvalidConfig("drift periods must be > 0")
        if self.drift_amplitude < 0 or self.drift_noise < 0 or self.label_drift < 0:
            raise InvalidConfig("drift amplitudes must be >= 0")
        if not 0.0 <= self.curvature_drift <= 1.0:
            raise InvalidConfig("curvature_drift must lie in [0, 1]")
        if self.regime is Regime.LOGISTIC and self.ridge <= 0:
            raise InvalidConfig("logistic ridge must be > 0")
        if self.deletion_size < 0:
            raise InvalidConfig("deletion_size must be >= 0")
        if not 1 <= self.deletion_time <= self.length:
            raise InvalidConfig("deletion_time must lie in [1, length]")
        if self.deletion_time + self.horizon > self.length:
            raise InvalidConfig("deletion_time + horizon must not exceed length")
        if self.deletion_size > self.deletion_time:
            raise InvalidConfig("deletion_size exceeds events before deletion_time")


@dataclass
class EventStream:
    events: list[Event]
    dimension: int
    regime: Regime
    config: StreamConfig
    seed: int

    def prefix(self, t: int) -> list[Event]:
        """Events with time <= t (generated streams are one event per time)."""
        return self.events[:t]

    def future(self, t: int, horizon: int) -> list[Event]:
        return self.events[t : t + horizon]


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _random_basis(rng: np.random.Generator, d: int, cols: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((d, max(cols, 1))))
    if q.shape[1] < cols:  # more directions than dimensions: pad with zeros
        q = np.hstack([q, np.zeros((d, cols - q.shape[1]))])
    return q[:, :cols]


def _spd_from_spectrum(rng: np.random.Generator, d: int, mu: float, kappa: float) -> np.ndarray:
    """Random SPD matrix with eigenvalues log-uniform on [mu, kappa*mu].

    Both interval endpoints are forced into the spectrum so the condition
    number is exact rather than approximate.
    """
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    eigs = np.exp(rng.uniform(math.log(mu), math.log(kappa * mu), size=d))
    eigs[0] = mu
    if d > 1:
        eigs[1] = kappa * mu
    m = (basis * eigs) @ basis.T
    return 0.5 * (m + m.T)


def _clamp_spectrum(m: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Project eigenvalues onto [lo, hi]; cheap no-op when already inside."""
    vals, vecs = np.linalg.eigh(m)
    tol = 1e-12 * hi
    if vals[0] >= lo - tol and vals[-1] <= hi + tol:
        return m
    clipped = np.clip(vals, lo, hi)
    out = (vecs * clipped) @ vecs.T
    return 0.5 * (out + out.T)


def _curvature_alpha(cfg: StreamConfig, t: int) -> float:
    return 0.5 * cfg.curvature_drift * (1.0 + math.sin(2.0 * math.pi * t / cfg.curvature_period))


def gen_quadratic_stream(config: StreamConfig, seed: int) -> EventStream:
    """Insert-only quadratic stream of `length` events at times 1..T."""
    config.validate()
    d = config.dimension
    rng = np.random.default_rng(seed)

    h0 = _spd_from_spectrum(rng, d, config.mu, config.condition_number)
    h1 = _spd_from_spectrum(rng, d, config.mu, config.condition_number)
    dirs = _random_basis(rng, d, 2)
    u1, u2 = dirs[:, 0], dirs[:, 1]
    a0 = config.center_scale * rng.standard_normal(d)

    drifting = config.curvature_drift > 0.0
    h_static = _freeze(h0.copy())
    lo, hi = config.mu, config.condition_number * config.mu

    events: list[Event] = []
    for t in range(1, config.length + 1):
        phase = 2.0 * math.pi * t / config.drift_period
        xi = rng.standard_normal(d)
        a_t = (
            a0
            + config.drift_amplitude * math.sin(phase) * u1
            + config.drift_amplitude * math.cos(phase) * u2
            + config.drift_noise * xi
        )
        if drifting:
            alpha = _curvature_alpha(config, t)
            h_t = _freeze(_clamp_spectrum((1.0 - alpha) * h0 + alpha * h1, lo, hi))
        else:
            h_t = h_static
        payload = QuadraticSample(hessian=h_t, minimizer=_freeze(a_t))
        events.append(Event(op=EventOp.INSERT, index=t, time=t, payload=payload))

    return EventStream(events=events, dimension=d, regime=Regime.QUADRATIC, config=config, seed=seed)


def gen_logistic_stream(config: StreamConfig, seed: int) -> EventStream:
    """Insert-only logistic stream; labels are +1/-1 drawn from the teacher."""
    config.validate()
    d = config.dimension
    rng = np.random.default_rng(seed)

    sigma0 = _spd_from_spectrum(rng, d, config.mu, config.condition_number)
    sigma1 = _spd_from_spectrum(rng, d, config.mu, config.condition_number)
    v = _random_basis(rng, d, 1)[:, 0]
    beta0 = config.center_scale * rng.standard_normal(d)

    drifting = config.curvature_drift > 0.0
    chol_static = np.linalg.cholesky(sigma0)

    events: list[Event] = []
    for t in range(1, config.length + 1):
        if drifting:
            alpha = _curvature_alpha(config, t)
            chol = np.linalg.cholesky((1.0 - alpha) * sigma0 + alpha * sigma1)
        else:
            chol = chol_static
        x_t = chol @ rng.standard_normal(d)
        beta_t = beta0 + config.label_drift * math.sin(2.0 * math.pi * t / config.label_period) * v
        p_plus = expit(float(x_t @ beta_t))
        label = 1 if rng.uniform() < p_plus else -1
        payload = LogisticSample(features=_freeze(x_t), label=label)
        events.append(Event(op=EventOp.INSERT, index=t, time=t, payload=payload))

    return EventStream(events=events, dimension=d, regime=Regime.LOGISTIC, config=config, seed=seed)


def generate_stream(config: StreamConfig, seed: int) -> EventStream:
    if config.regime is Regime.QUADRATIC:
        return gen_quadratic_stream(config, seed)
    return gen_logistic_stream(config, seed)


def loss_and_grad(payload: SamplePayload, w: np.ndarray, ridge: float = 0.0) -> tuple[float, np.ndarray]:
    """Per-event loss and gradient at w.

    The ridge term applies to logistic payloads only; quadratic losses
    ignore it.
    """
    if isinstance(payload, QuadraticSample):
        if w.shape != payload.minimizer.shape:
            raise DimensionMismatch("parameter/minimizer shapes differ")
        r = w - payload.minimizer
        hr = payload.hessian @ r
        return 0.5 * float(r @ hr), hr
    x, y = payload.features, payload.label
    if w.shape != x.shape:
        raise DimensionMismatch("parameter/feature shapes differ")
    z = float(x @ w)
    loss = float(np.logaddexp(0.0, -y * z)) + 0.5 * ridge * float(w @ w)
    grad = (-y * expit(-y * z)) * x + ridge * w
    return loss, grad


def loss_hessian(payload: SamplePayload, w: np.ndarray, ridge: float = 0.0) -> np.ndarray:
    """Per-event loss Hessian at w (used by the Newton-style intervention)."""
    if isinstance(payload, QuadraticSample):
        return payload.hessian
    x = payload.features
    z = float(x @ w)
    p = expit(z)
    return p * (1.0 - p) * np.outer(x, x) + ridge * np.eye(x.shape[0])


def _insert_events(events: list[Event], t_del: int) -> list[Event]:
    return [e for e in events if e.op is EventOp.INSERT and e.time <= t_del]


def select_deletion_set(
    stream: EventStream,
    t_del: int,
    mode: DeletionMode,
    size: int,
    grad_state: np.ndarray | None = None,
) -> DeletionSet:
    """Pick `size` insert indices from the prefix at time t_del.

    Recent/Old take the largest/smallest insert times. Random draws
    uniformly without replacement from a sub-seed derived from
    (stream seed, t_del), so it does not disturb the generator draws.
    HighGradient ranks events by gradient norm at the supplied parameter
    vector, breaking ties toward smaller time.
    """
    candidates = _insert_events(stream.events, t_del)
    if size > len(candidates):
        raise InsufficientHistory(
            f"requested {size} deletions but only {len(candidates)} inserts exist"
        )
    if mode is DeletionMode.RECENT:
        chosen = candidates[-size:] if size else []
    elif mode is DeletionMode.OLD:
        chosen = candidates[:size]
    elif mode is DeletionMode.RANDOM:
        sub = np.random.default_rng(
            np.random.SeedSequence((stream.seed, t_del, _DELETION_SEED_TAG))
        )
        picks = sub.choice(len(candidates), size=size, replace=False) if size else []
        chosen = [candidates[int(i)] for i in picks]
    elif mode is DeletionMode.HIGH_GRADIENT:
        if grad_state is None:
            raise MissingGradState("high_gradient mode needs the parameter vector at t_del")
        ridge = stream.config.ridge
        ranked = sorted(
            candidates,
            key=lambda e: (-float(np.linalg.norm(loss_and_grad(e.payload, grad_state, ridge)[1])), e.time),
        )
        chosen = ranked[:size]
    else:  # pragma: no cover - exhaustive enum
        raise InvalidConfig(f"unknown deletion mode {mode}")
    return DeletionSet(indices=frozenset(e.index for e in chosen), requested_at=t_del, mode=mode)


def edit_history(prefix: list[Event], deletions: DeletionSet) -> list[Event]:
    """Order-preserving copy of prefix without events whose index is deleted."""
    if not deletions.indices:
        return list(prefix)
    banned = deletions.indices
    return [e for e in prefix if e.index not in banned]


# ---------------------------------------------------------------------------
# Line-record serialization: one event per line as
#   time,op,index,payload-blob(base64)
# preceded by '#' header lines carrying the config needed to decode blobs.
# Blobs are little-endian float64: quadratic events pack H (row-major) then
# a; logistic events pack x then the label.
# ---------------------------------------------------------------------------

_CONFIG_ENUMS = {"regime": Regime, "deletion_mode": DeletionMode}


def _config_to_pairs(config: StreamConfig) -> list[tuple[str, str]]:
    out = []
    for f in fields(StreamConfig):
        value = getattr(config, f.name)
        if isinstance(value, Enum):
            value = value.value
        out.append((f.name, str(value)))
    return out


def _config_from_pairs(pairs: dict[str, str]) -> StreamConfig:
    kwargs = {}
    for f in fields(StreamConfig):
        if f.name not in pairs:
            continue
        raw = pairs[f.name]
        if f.name in _CONFIG_ENUMS:
            kwargs[f.name] = _CONFIG_ENUMS[f.name](raw)
        elif f.type == "int":
            kwargs[f.name] = int(raw)
        elif f.type == "float":
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = raw
    return StreamConfig(**kwargs)


def _payload_blob(payload: SamplePayload) -> str:
    if isinstance(payload, QuadraticSample):
        flat = np.concatenate([payload.hessian.ravel(), payload.minimizer])
    else:
        flat = np.concatenate([payload.features, [float(payload.label)]])
    return base64.b64encode(flat.astype("<f8").tobytes()).decode("ascii")


def _payload_from_blob(blob: str, regime: Regime, d: int) -> SamplePayload:
    flat = np.frombuffer(base64.b64decode(blob), dtype="<f8")
    if regime is Regime.QUADRATIC:
        if flat.size != d * d + d:
            raise DimensionMismatch("quadratic blob has wrong size")
        h = _freeze(flat[: d * d].reshape(d, d).copy())
        a = _freeze(flat[d * d :].copy())
        return QuadraticSample(hessian=h, minimizer=a)
    if flat.size != d + 1:
        raise DimensionMismatch("logistic blob has wrong size")
    x = _freeze(flat[:d].copy())
    return LogisticSample(features=x, label=int(flat[d]))


def write_stream(stream: EventStream, path: str) -> None:
    lines = [f"# statealign-stream v{STREAM_FILE_VERSION} seed={stream.seed}"]
    lines.append("# " + " ".join(f"{k}={v}" for k, v in _config_to_pairs(stream.config)))
    for e in stream.events:
        blob = _payload_blob(e.payload) if e.payload is not None else ""
        lines.append(f"{e.time},{e.op.value},{e.index},{blob}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_stream(path: str) -> EventStream:
    with open(path, "r", encoding="ascii") as fh:
        raw = fh.read().splitlines()
    if not raw or not raw[0].startswith("# statealign-stream"):
        raise InvalidConfig(f"{path} is not a stream file")
    seed = int(raw[0].rsplit("seed=", 1)[1])
    header = dict(item.split("=", 1) for item in raw[1][2:].split())
    config = _config_from_pairs(header)
    events: list[Event] = []
    for line in raw[2:]:
        if not line or line.startswith("#"):
            continue
        time_s, op_s, index_s, blob = line.split(",", 3)
        op = EventOp(op_s)
        payload = _payload_from_blob(blob, config.regime, config.dimension) if blob else None
        events.append(Event(op=op, index=int(index_s), time=int(time_s), payload=payload))
    return EventStream(
        events=events,
        dimension=config.dimension,
        regime=config.regime,
        config=config,
        seed=seed,
    )
