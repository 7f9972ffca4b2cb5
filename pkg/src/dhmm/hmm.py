"""Finite-state Markov chains observed in Gaussian noise by a set of sensors.

Conventions: ``P[i, j]`` is the probability of moving to state i from state j
(columns sum to one). Sensor k observes an ``N_k``-vector with state-dependent
mean ``means[j]`` and covariance ``covs[j]``.

The unnormalized filter E_t = Lambda_t P E_{t-1} underflows quickly, so it is
carried as a log-scale plus a unit-l1 direction.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ModelValidationError, NumericError, ParameterError, AssumptionWarning
from .seeding import stream

E = math.e


@dataclass(frozen=True)
class SensorModel:
    means: np.ndarray  # (L, N_k)
    covs: np.ndarray   # (L, N_k, N_k)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @cached_property
    def _factors(self):
        chol = np.linalg.cholesky(self.covs)
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)
        return chol, logdet

    @property
    def cholesky(self) -> np.ndarray:
        return self._factors[0]

    @property
    def logdet(self) -> np.ndarray:
        return self._factors[1]

    def quad_forms(self, y: np.ndarray) -> np.ndarray:
        """(y - mu(x_j))' Sigma(x_j)^-1 (y - mu(x_j)) for every state j."""
        resid = y[None, :] - self.means
        z = np.linalg.solve(self.cholesky, resid[..., None])[..., 0]
        return (z * z).sum(axis=-1)


@dataclass(frozen=True)
class HmmModel:
    states: np.ndarray
    P: np.ndarray
    pi_init: np.ndarray
    sensors: tuple[SensorModel, ...]
    name: str = "custom"
    scale: float = 1.0  # observation normalization factor already applied

    @property
    def L(self) -> int:
        return len(self.states)

    @property
    def S(self) -> int:
        return len(self.sensors)

    @property
    def dims(self) -> list[int]:
        return [s.dim for s in self.sensors]

    @property
    def N(self) -> int:
        return sum(self.dims)

    def validate(self, atol: float = 1e-10) -> None:
        problems = []
        L = self.L
        if self.P.shape != (L, L):
            problems.append(f"P must be {L}x{L}, got {self.P.shape}")
        else:
            if np.any(self.P < 0):
                problems.append("P has negative entries")
            if not np.allclose(self.P.sum(axis=0), 1.0, atol=atol, rtol=0):
                problems.append("columns of P must sum to 1")
        if self.pi_init.shape != (L,):
            problems.append(f"pi_init must have length {L}")
        elif np.any(self.pi_init < 0) or not abs(self.pi_init.sum() - 1.0) <= atol:
            problems.append("pi_init must be a probability vector")
        if self.S < 1:
            problems.append("at least one sensor is required")
        for k, s in enumerate(self.sensors):
            if s.means.ndim != 2 or s.means.shape[0] != L:
                problems.append(f"sensor {k}: means must be (L, N_k)")
                continue
            nk = s.dim
            if s.covs.shape != (L, nk, nk):
                problems.append(f"sensor {k}: covariances must be (L, {nk}, {nk})")
                continue
            if not np.allclose(s.covs, np.swapaxes(s.covs, -1, -2), atol=atol):
                problems.append(f"sensor {k}: covariance not symmetric")
            elif np.linalg.eigvalsh(s.covs).min() <= 0:
                problems.append(f"sensor {k}: covariance not positive definite")
        if problems:
            raise ModelValidationError("; ".join(problems))

    @cached_property
    def _cov_eigs(self):
        eigs = [np.linalg.eigvalsh(s.covs) for s in self.sensors]
        return min(e.min() for e in eigs), max(e.max() for e in eigs)

    @property
    def lambda_inf(self) -> float:
        return float(self._cov_eigs[0])

    @property
    def lambda_sup(self) -> float:
        return float(self._cov_eigs[1])

    @property
    def mu_sup(self) -> float:
        stacked = np.concatenate([s.means for s in self.sensors], axis=1)
        return float(np.linalg.norm(stacked, axis=1).max())

    @property
    def satisfies_boundedness(self) -> bool:
        return self.lambda_inf >= E

    def check_assumptions(self) -> list[str]:
        """Warn (never refuse) when the covariance floor is below e."""
        notes = []
        if not self.satisfies_boundedness:
            msg = (f"lambda_inf = {self.lambda_inf:.6g} < e; the stability bounds assume "
                   f"lambda_inf >= e (use normalized() to rescale observations)")
            warnings.warn(msg, AssumptionWarning, stacklevel=2)
            notes.append(msg)
        return notes

    def normalized(self, target: float = E) -> HmmModel:
        """Rescale observations so that lambda_inf >= target.

        y and mu are multiplied by c, Sigma by c^2; a model that already
        satisfies the floor is returned unchanged.
        """
        if self.lambda_inf >= target:
            return self
        c = math.sqrt(target / self.lambda_inf) * (1.0 + 1e-12)
        sensors = tuple(SensorModel(means=s.means * c, covs=s.covs * (c * c)) for s in self.sensors)
        return replace(self, sensors=sensors, scale=self.scale * c)


def make_model(states, P, pi_init, sensors: Sequence[SensorModel], name: str = "custom",
               validate: bool = True) -> HmmModel:
    model = HmmModel(states=np.asarray(states, dtype=float), P=np.asarray(P, dtype=float),
                     pi_init=np.asarray(pi_init, dtype=float), sensors=tuple(sensors), name=name)
    if validate:
        model.validate()
    return model


@dataclass(frozen=True)
class SimulationRun:
    states: np.ndarray        # state indices for t = -1..T (length T+2)
    observations: list[np.ndarray]  # observations[t][k] is y_t^k, t = 0..T

    @property
    def T(self) -> int:
        return len(self.observations) - 1

    def stacked(self, t: int) -> np.ndarray:
        return np.concatenate(self.observations[t])


def simulate(model: HmmModel, T: int, seed: int) -> SimulationRun:
    model.validate()
    if T < 0:
        raise ParameterError(f"horizon must be >= 0, got {T}")
    chain_rng = stream(seed, "trajectory")
    obs_rng = stream(seed, "observations")
    idx = np.empty(T + 2, dtype=int)
    idx[0] = chain_rng.choice(model.L, p=model.pi_init)
    cum = np.cumsum(model.P, axis=0)
    for t in range(1, T + 2):
        u = chain_rng.random()
        idx[t] = min(int(np.searchsorted(cum[:, idx[t - 1]], u, side="right")), model.L - 1)
    observations = []
    for t in range(T + 1):
        j = idx[t + 1]
        ys = []
        for s in model.sensors:
            z = obs_rng.standard_normal(s.dim)
            ys.append(s.means[j] + s.cholesky[j] @ z)
        observations.append(ys)
    return SimulationRun(states=idx, observations=observations)


def local_statistic(model: HmmModel, y: np.ndarray, k: int, x: int) -> float:
    """S * [(y - mu(x))' Sigma(x)^-1 (y - mu(x)) + log det Sigma(x)] at sensor k, state index x."""
    s = model.sensors[k]
    y = np.asarray(y, dtype=float)
    if y.shape != (s.dim,):
        raise ParameterError(f"sensor {k} expects a length-{s.dim} observation, got {y.shape}")
    return float(model.S * (s.quad_forms(y)[x] + s.logdet[x]))


def local_statistics(model: HmmModel, ys: Sequence[np.ndarray]) -> np.ndarray:
    """(S, L) array of every sensor's statistic for every state."""
    if len(ys) != model.S:
        raise ParameterError(f"expected observations from {model.S} sensors, got {len(ys)}")
    out = np.empty((model.S, model.L))
    for k, (s, y) in enumerate(zip(model.sensors, ys)):
        y = np.asarray(y, dtype=float)
        if y.shape != (s.dim,):
            raise ParameterError(f"sensor {k} expects a length-{s.dim} observation, got {y.shape}")
        out[k] = model.S * (s.quad_forms(y) + s.logdet)
    return out


def average_statistic(thetas: np.ndarray) -> np.ndarray:
    """Network average of the local statistics, one value per state."""
    return thetas.mean(axis=0)


def log_likelihoods(model: HmmModel, ys: Sequence[np.ndarray], t: int | None = None) -> np.ndarray:
    """log of the diagonal of Lambda_t; ``t`` is accepted for time-varying models."""
    theta = average_statistic(local_statistics(model, ys))
    if not np.all(np.isfinite(theta)):
        raise NumericError(f"non-finite log-likelihood at t={t}")
    return -0.5 * theta


def likelihood_matrix(model: HmmModel, ys: Sequence[np.ndarray], t: int | None = None) -> np.ndarray:
    return np.diag(np.exp(log_likelihoods(model, ys, t)))


@dataclass(frozen=True)
class FilterState:
    """E = exp(log_scale) * direction with direction >= 0 summing to one."""
    log_scale: float
    direction: np.ndarray

    @property
    def pi(self) -> np.ndarray:
        return self.direction

    @property
    def E(self) -> np.ndarray:
        return math.exp(self.log_scale) * self.direction


CentralizedFilterState = FilterState


def initial_state(pi_init) -> FilterState:
    pi_init = np.asarray(pi_init, dtype=float)
    total = pi_init.sum()
    return FilterState(log_scale=math.log(total), direction=pi_init / total)


def scaled_step(state: FilterState, log_lambda: np.ndarray, P: np.ndarray) -> FilterState:
    """One step E' = diag(exp(log_lambda)) P E in scaled form."""
    pred = P @ state.direction
    shift = float(np.max(log_lambda))
    v = np.exp(log_lambda - shift) * pred
    total = v.sum()
    if not total > 0 or not np.isfinite(total):
        raise NumericError("unnormalized filter vanished or overflowed")
    return FilterState(log_scale=state.log_scale + shift + math.log(total), direction=v / total)


def centralized_step(state: FilterState, Lambda, P: np.ndarray) -> FilterState:
    """Accepts the likelihood matrix (or its diagonal) directly."""
    diag = np.diagonal(Lambda) if np.ndim(Lambda) == 2 else np.asarray(Lambda, dtype=float)
    if np.any(diag <= 0):
        raise NumericError("likelihoods must be positive")
    return scaled_step(state, np.log(diag), P)


@dataclass(frozen=True)
class FilterTrace:
    log_scale: np.ndarray  # (T+1,)
    pi: np.ndarray         # (T+1, L)

    @property
    def T(self) -> int:
        return len(self.log_scale) - 1


def run_centralized(model: HmmModel, run: SimulationRun) -> FilterTrace:
    state = initial_state(model.pi_init)
    scales, pis = [], []
    for t, ys in enumerate(run.observations):
        state = scaled_step(state, log_likelihoods(model, ys, t), model.P)
        scales.append(state.log_scale)
        pis.append(state.direction)
    return FilterTrace(log_scale=np.array(scales), pi=np.array(pis))


def mmse_estimate(pi, states) -> float:
    return float(np.dot(np.asarray(states, dtype=float), np.asarray(pi, dtype=float)))


# ---------------------------------------------------------------------------
# Configuration

ASILOMAR_V_P = np.array([
    [0.4, 0.25, 0.2, 0.3],
    [0.3, 0.25, 0.3, 0.3],
    [0.2, 0.25, 0.3, 0.2],
    [0.1, 0.25, 0.2, 0.2],
])
ASILOMAR_V_STATES = np.array([0.7, 0.5, 1.0, 1.0 / 3.0])


def exp_decay_cov(dim: int, amplitude: float = 2.0, rate: float = 2.0) -> np.ndarray:
    i = np.arange(dim)
    return amplitude * np.exp(-rate * np.abs(i[:, None] - i[None, :]))


def asilomar_v(S: int = 60) -> HmmModel:
    """Four-state chain, two observations per sensor with mean -[sin x, sin x]."""
    states = ASILOMAR_V_STATES
    means = -np.sin(states)[:, None] * np.ones((1, 2))
    covs = np.broadcast_to(exp_decay_cov(2), (len(states), 2, 2)).copy()
    sensor = SensorModel(means=means, covs=covs)
    return make_model(states, ASILOMAR_V_P, [1.0, 0.0, 0.0, 0.0], [sensor] * S, name="asilomar-v")


def small_model(S: int = 8) -> HmmModel:
    """Three-state chain with heterogeneous sensors (N_k = 2); used by the stability suites."""
    states = np.array([-1.0, 0.0, 1.0])
    P = np.array([
        [0.6, 0.2, 0.1],
        [0.3, 0.6, 0.3],
        [0.1, 0.2, 0.6],
    ])
    sensors = []
    for k in range(S):
        phase = 2.0 * math.pi * k / S
        gain = np.array([math.cos(phase), math.sin(phase)])
        means = states[:, None] * gain[None, :] + 0.25 * np.sin(states)[:, None]
        cov = exp_decay_cov(2, amplitude=1.0 + 0.1 * (k % 3), rate=1.0)
        sensors.append(SensorModel(means=means, covs=np.broadcast_to(cov, (3, 2, 2)).copy()))
    return make_model(states, P, [1.0 / 3.0] * 3, sensors, name="small")


PRESETS = {
    "asilomar-v": asilomar_v,
    "small": small_model,
}


def preset(name: str, S: int | None = None) -> HmmModel:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ParameterError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory() if S is None else factory(S)


def _mean_table(spec, states: np.ndarray) -> np.ndarray:
    if "per_state" in spec:
        return np.asarray(spec["per_state"], dtype=float)
    expr = spec.get("expr", "affine")
    scale = np.asarray(spec.get("scale", [1.0]), dtype=float)
    offset = np.asarray(spec.get("offset", np.zeros_like(scale)), dtype=float)
    if expr == "affine":
        base = states
    elif expr == "sin":
        base = np.sin(states)
    else:
        raise ModelValidationError(f"unsupported mean expression {expr!r} (affine or sin)")
    return base[:, None] * scale[None, :] + offset[None, :]


def model_from_dict(doc: dict, S: int | None = None) -> HmmModel:
    """Build a model from a config document.

    Either ``{"preset": name}`` or an explicit model with ``states``, ``P``
    (given column-major: ``P[j]`` is the distribution of the next state
    from state j), ``pi_init`` and ``sensors``. A sensor entry may carry
    ``"repeat": n`` to stand for n identical sensors.
    """
    if "preset" in doc:
        model = preset(doc["preset"], S if S is not None else doc.get("S"))
    else:
        states = np.asarray(doc["states"], dtype=float)
        P = np.asarray(doc["P"], dtype=float).T
        sensors = []
        for spec in doc["sensors"]:
            means = _mean_table(spec["mean"], states)
            cov = np.asarray(spec["covariance"], dtype=float)
            covs = cov if cov.ndim == 3 else np.broadcast_to(cov, (len(states),) + cov.shape).copy()
            sensors.extend([SensorModel(means=means, covs=covs)] * int(spec.get("repeat", 1)))
        model = make_model(states, P, doc["pi_init"], sensors, name=doc.get("name", "custom"))
    if doc.get("normalize", False):
        model = model.normalized()
    return model


def model_to_dict(model: HmmModel) -> dict:
    return {
        "name": model.name,
        "states": model.states.tolist(),
        "P": model.P.T.tolist(),
        "pi_init": model.pi_init.tolist(),
        "scale": model.scale,
        "sensors": [{"mean": {"per_state": s.means.tolist()}, "covariance": s.covs.tolist()}
                    for s in model.sensors],
    }
