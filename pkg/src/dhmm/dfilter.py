"""Two-time-scale distributed filter.

At each measurement epoch t the sensors run L independent consensus
instances (one per state) on their local statistics for n rounds, turn the
resulting estimates into local likelihoods, and advance their own copy of
the unnormalized filter. All consensus instances of a run depend only on the
observations, so they are batched into one (S, (T+1)*L) iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import consensus
from .errors import NumericError, ParameterError
from .hmm import FilterState, FilterTrace, HmmModel, SimulationRun, initial_state, local_statistics, scaled_step
from .mixing import MixingMatrix


@dataclass(frozen=True)
class DistributedFilterState:
    """Per-sensor scaled filters; row k belongs to sensor k."""
    log_scale: np.ndarray  # (S,)
    pi: np.ndarray         # (S, L)
    n: int

    @property
    def S(self) -> int:
        return len(self.log_scale)

    def sensor(self, k: int) -> FilterState:
        return FilterState(log_scale=float(self.log_scale[k]), direction=self.pi[k])


def initial_distributed(model: HmmModel, n: int) -> DistributedFilterState:
    base = initial_state(model.pi_init)
    return DistributedFilterState(log_scale=np.full(model.S, base.log_scale),
                                  pi=np.tile(base.direction, (model.S, 1)), n=n)


def _check_n(n: int) -> None:
    if n < 1:
        raise ParameterError(f"consensus iterations per step must be >= 1, got {n}")


def consensus_statistics(thetas: np.ndarray, W, eps: float, n: int | None) -> np.ndarray:
    """Per-sensor estimates of the network average of ``thetas`` (S, ...).

    ``n=None`` returns the exact average at every sensor. A single sensor
    already holds the average, so no iterations are run.
    """
    S = thetas.shape[0]
    if n is None or S == 1:
        return np.broadcast_to(thetas.mean(axis=0), thetas.shape)
    _check_n(n)
    return consensus.iterate(W, eps, thetas, n)


def _log_lik(estimates: np.ndarray, t: int) -> np.ndarray:
    out = -0.5 * estimates
    if not np.all(np.isfinite(out)):
        k, j = map(int, np.argwhere(~np.isfinite(out))[0])
        raise NumericError(f"non-finite local likelihood at t={t}, sensor {k}, state {j}")
    return out


def distributed_step(state: DistributedFilterState, model: HmmModel, ys, W, eps: float,
                     n: int | None = None, t: int | None = None) -> DistributedFilterState:
    """One slow-time step; ``n`` defaults to the state's iteration count."""
    n = state.n if n is None else n
    thetas = local_statistics(model, ys)
    log_lam = _log_lik(consensus_statistics(thetas, W, eps, n), t)
    return _advance_all(state, log_lam, model.P)


def _advance_all(state: DistributedFilterState, log_lam: np.ndarray, P: np.ndarray) -> DistributedFilterState:
    scales = np.empty_like(state.log_scale)
    pis = np.empty_like(state.pi)
    for k in range(state.S):
        nxt = scaled_step(state.sensor(k), log_lam[k], P)
        scales[k] = nxt.log_scale
        pis[k] = nxt.direction
    return DistributedFilterState(log_scale=scales, pi=pis, n=state.n)


@dataclass(frozen=True)
class DistributedTrace:
    log_scale: np.ndarray  # (T+1, S)
    pi: np.ndarray         # (T+1, S, L)
    n: int | None          # None for the exact-average filter
    eps: float
    estimates: np.ndarray  # (T+1, S, L) consensus outputs fed to the likelihoods
    thetas: np.ndarray     # (T+1, S, L) local statistics
    consensus_errors: np.ndarray | None = None  # (n, T+1, L) l2 error per round, if retained

    @property
    def T(self) -> int:
        return self.log_scale.shape[0] - 1


def run_distributed(model: HmmModel, run: SimulationRun, W, eps: float, n: int | None,
                    keep_traces: bool = False) -> DistributedTrace:
    """Distributed filter over the whole horizon.

    ``n=None`` replaces consensus with the exact average (the consensus limit).
    ``keep_traces`` retains the l2 consensus error of every (t, j) instance
    for rounds 1..n.
    """
    W = W.W if isinstance(W, MixingMatrix) else np.asarray(W, dtype=float)
    S, L, T1 = model.S, model.L, run.T + 1
    if W.shape != (S, S):
        raise ParameterError(f"mixing matrix is {W.shape}, model has {S} sensors")
    thetas = np.stack([local_statistics(model, ys) for ys in run.observations])  # (T+1, S, L)
    batch = np.moveaxis(thetas, 1, 0).reshape(S, T1 * L)
    traces = None
    if n is not None and S > 1 and keep_traces:
        _check_n(n)
        traces = consensus.error_trace(consensus.init(W, eps, batch), n).reshape(n, T1, L)
    est = consensus_statistics(batch, W, eps, n)
    estimates = np.moveaxis(np.asarray(est).reshape(S, T1, L), 0, 1)

    state = initial_distributed(model, 0 if n is None else n)
    scales = np.empty((T1, S))
    pis = np.empty((T1, S, L))
    for t in range(T1):
        state = _advance_all(state, _log_lik(estimates[t], t), model.P)
        scales[t] = state.log_scale
        pis[t] = state.pi
    return DistributedTrace(log_scale=scales, pi=pis, n=n, eps=float(eps), estimates=estimates,
                            thetas=thetas, consensus_errors=traces)


def log_l1_distance(s1, d1, s2, d2) -> np.ndarray:
    """log ||exp(s1) d1 - exp(s2) d2||_1 along the last axis of d, aligned to the larger scale."""
    s1, s2 = np.asarray(s1, dtype=float), np.asarray(s2, dtype=float)
    top = np.maximum(s1, s2)
    diff = np.abs(np.exp(s1 - top)[..., None] * d1 - np.exp(s2 - top)[..., None] * d2).sum(axis=-1)
    with np.errstate(divide="ignore"):
        return top + np.log(diff)


@dataclass(frozen=True)
class Disagreement:
    posterior: np.ndarray        # (T+1, S) ||pi_t - pi_t^k||_1
    log_unnormalized: np.ndarray  # (T+1, S) log ||E_t - E_t^k||_1 (-inf when equal)
    log_norm_E: np.ndarray       # (T+1,) log ||E_t||_1

    @property
    def unnormalized(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_unnormalized)

    @property
    def relative_bound(self) -> np.ndarray:
        """2 ||E - E^k||_1 / ||E||_1, which dominates the posterior disagreement."""
        with np.errstate(over="ignore"):
            return 2.0 * np.exp(self.log_unnormalized - self.log_norm_E[:, None])

    def running_sup(self, sensors=None) -> np.ndarray:
        """sup over s <= t and the chosen sensors of the posterior disagreement."""
        cols = self.posterior if sensors is None else self.posterior[:, list(sensors)]
        return np.maximum.accumulate(cols.max(axis=1))

    def sup(self, sensors=None) -> float:
        return float(self.running_sup(sensors)[-1])

    def sup_unnormalized(self) -> float:
        return float(np.exp(self.log_unnormalized.max()))

    def rows(self) -> list[dict]:
        out = []
        for t in range(self.posterior.shape[0]):
            for k in range(self.posterior.shape[1]):
                out.append({"t": t, "k": k, "posterior_l1": float(self.posterior[t, k]),
                            "log_unnormalized_l1": float(self.log_unnormalized[t, k])})
        return out


def l1_disagreement(central: FilterTrace, dist: DistributedTrace) -> Disagreement:
    if central.T != dist.T:
        raise ParameterError(f"horizon mismatch: centralized T={central.T}, distributed T={dist.T}")
    if central.pi.shape[1] != dist.pi.shape[2]:
        raise ParameterError("state-space size mismatch between runs")
    post = np.abs(central.pi[:, None, :] - dist.pi).sum(axis=-1)
    log_un = log_l1_distance(central.log_scale[:, None], central.pi[:, None, :], dist.log_scale, dist.pi)
    return Disagreement(posterior=post, log_unnormalized=log_un, log_norm_E=central.log_scale.copy())


def mmse_traces(model: HmmModel, central: FilterTrace, dist: DistributedTrace) -> tuple[np.ndarray, np.ndarray]:
    """(T+1,) centralized and (T+1, S) per-sensor MMSE state estimates."""
    return central.pi @ model.states, dist.pi @ model.states


def to_db(err, power: bool = False) -> np.ndarray:
    """20 log10 of an error magnitude, or 10 log10 when ``power`` is set."""
    factor = 10.0 if power else 20.0
    with np.errstate(divide="ignore"):
        return factor * np.log10(np.asarray(err, dtype=float))


def loglinear_fit(err, start: int, floor: float = 0.0) -> dict:
    """Least-squares line through log(err[start:]) over the span where err stays above floor.

    Returns slope, r2, the fitted span and whether the trace is nonincreasing there.
    """
    err = np.asarray(err, dtype=float)
    idx = np.arange(len(err))
    keep = (idx >= start) & (err > floor)
    # stop at the first round that hits the floor
    if np.any((idx >= start) & ~keep):
        stop = int(np.argmax((idx >= start) & ~keep))
        keep &= idx < stop
    x, y = idx[keep].astype(float), np.log(err[keep])
    if len(x) < 3:
        return {"slope": math.nan, "r2": math.nan, "span": (start, start + len(x)), "monotone": True,
                "points": int(len(x))}
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    fitted = A @ coef
    ss_res = float(((y - fitted) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {"slope": float(coef[0]), "r2": r2, "span": (int(x[0]), int(x[-1]) + 1),
            "monotone": bool(np.all(np.diff(err[keep]) <= 0)), "points": int(len(x))}
