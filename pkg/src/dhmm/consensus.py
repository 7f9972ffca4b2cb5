"""ADMM-based average consensus.

Every sensor k holds a scalar ``theta[k]``; after n synchronous rounds the
primal iterate ``primal[k]`` approximates the network average. The recursion,
with a = eps/(1+eps) and b = eps/(2(1+eps)), is

    primal(n+1) = theta/(1+eps) + dual(n) + a * W primal(n)
    dual(n+1)   = dual(n) + b * (W primal(n) - primal(n))

started from primal(1) = theta/(1+eps), dual(1) = 0. Values may carry a
trailing batch axis: column j of an (S, m) array is an independent instance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .errors import ParameterError
from .mixing import MixingMatrix


def _weights(w) -> np.ndarray:
    return w.W if isinstance(w, MixingMatrix) else np.asarray(w, dtype=float)


@dataclass(frozen=True)
class ConsensusInstance:
    W: np.ndarray
    eps: float
    values: np.ndarray
    primal: np.ndarray
    dual: np.ndarray
    n: int = 1

    @property
    def S(self) -> int:
        return self.W.shape[0]

    @property
    def limit(self) -> np.ndarray:
        return np.broadcast_to(self.values.mean(axis=0), self.values.shape)


def init(w, eps: float, values) -> ConsensusInstance:
    W = _weights(w)
    values = np.asarray(values, dtype=float)
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps!r}")
    if values.shape[:1] != (W.shape[0],):
        raise ParameterError(f"expected {W.shape[0]} sensor values, got shape {values.shape}")
    return ConsensusInstance(W=W, eps=float(eps), values=values,
                             primal=values / (1.0 + eps), dual=np.zeros_like(values), n=1)


def _advance(W, eps, values, primal, dual):
    a = eps / (1.0 + eps)
    b = eps / (2.0 * (1.0 + eps))
    mixed = W @ primal
    return values / (1.0 + eps) + dual + a * mixed, dual + b * (mixed - primal)


def step(inst: ConsensusInstance) -> ConsensusInstance:
    primal, dual = _advance(inst.W, inst.eps, inst.values, inst.primal, inst.dual)
    return replace(inst, primal=primal, dual=dual, n=inst.n + 1)


def run(inst: ConsensusInstance, n: int) -> ConsensusInstance:
    """Advance until the iteration counter reads ``n``."""
    if n < inst.n:
        raise ParameterError(f"cannot run backwards from n={inst.n} to n={n}")
    primal, dual = inst.primal, inst.dual
    for _ in range(n - inst.n):
        primal, dual = _advance(inst.W, inst.eps, inst.values, primal, dual)
    return replace(inst, primal=primal, dual=dual, n=n)


POWER_THRESHOLD = 2048


def transition_matrix(w, eps: float) -> np.ndarray:
    """The 3S x 3S linear map (primal, dual, theta) -> next round."""
    W = _weights(w)
    S = W.shape[0]
    a = eps / (1.0 + eps)
    b = eps / (2.0 * (1.0 + eps))
    I = np.eye(S)
    Z = np.zeros((S, S))
    return np.block([[a * W, I, I / (1.0 + eps)],
                     [b * (W - I), I, Z],
                     [Z, Z, I]])


def iterate_power(w, eps: float, values, n: int) -> np.ndarray:
    """Same as ``iterate`` but through repeated squaring of the round map."""
    inst = init(w, eps, values)
    S = inst.S
    G = np.linalg.matrix_power(transition_matrix(inst.W, eps), n - 1)
    state = np.concatenate([inst.primal, inst.dual, inst.values], axis=0)
    return (G @ state)[:S]


def iterate(w, eps: float, values, n: int) -> np.ndarray:
    """Primal iterate after ``n`` rounds (n >= 1).

    Very long runs go through matrix powers; both routes agree to rounding.
    """
    if n < 1:
        raise ParameterError(f"iteration count must be >= 1, got {n}")
    if n > POWER_THRESHOLD:
        return iterate_power(w, eps, values, n)
    return run(init(w, eps, values), n).primal


def history(w, eps: float, values, n_max: int) -> np.ndarray:
    """Primal iterates for n = 1..n_max stacked on a new leading axis."""
    inst = init(w, eps, values)
    out = np.empty((n_max,) + inst.values.shape)
    primal, dual = inst.primal, inst.dual
    out[0] = primal
    for i in range(1, n_max):
        primal, dual = _advance(inst.W, inst.eps, inst.values, primal, dual)
        out[i] = primal
    return out


def sensor_update(k: int, theta_k: float, dual_k: float, w_row: Mapping[int, float],
                  received: Mapping[int, float], eps: float) -> tuple[float, float]:
    """One round at sensor k from the messages it received.

    ``received`` maps each l in the neighborhood of k (k included) to the
    neighbor's current primal value; nothing outside the neighborhood is read.
    """
    a = eps / (1.0 + eps)
    b = eps / (2.0 * (1.0 + eps))
    mixed = sum(w_row[l] * received[l] for l in w_row)
    return theta_k / (1.0 + eps) + dual_k + a * mixed, dual_k + b * (mixed - received[k])


def error_trace(inst: ConsensusInstance, n_max: int) -> np.ndarray:
    """l2 distance to the exact average for n = inst.n .. n_max (one column per instance)."""
    target = inst.values.mean(axis=0)
    primal, dual = inst.primal, inst.dual
    errs = [np.linalg.norm(primal - target, axis=0)]
    for _ in range(n_max - inst.n):
        primal, dual = _advance(inst.W, inst.eps, inst.values, primal, dual)
        errs.append(np.linalg.norm(primal - target, axis=0))
    return np.array(errs)


def run_with_trace(inst: ConsensusInstance, n_max: int) -> np.ndarray:
    return error_trace(inst, n_max)


# Error bounds. ``theta_norm`` is the l2 norm of the initial vector.

def fixed_eps_bound(theta_norm, eps: float, rho: float, n):
    n = np.asarray(n, dtype=float)
    return theta_norm * n * rho ** (n - 1.0) / (1.0 + eps)


def fixed_eps_domain(eps: float, n) -> np.ndarray:
    n = np.asarray(n)
    return n >= max(2, math.floor(eps + 1.0))


def optimal_bound(theta_norm, gamma: float, rho_opt: float, n):
    """gamma * ||theta|| * n * rho*^n; also bounds every single sensor's error."""
    n = np.asarray(n, dtype=float)
    return gamma * theta_norm * n * rho_opt ** n


def optimal_domain(eps_max: float, n) -> np.ndarray:
    return np.asarray(n) > 2.0 * eps_max + 1.0


def iterate_domain(eps_max: float, n) -> np.ndarray:
    return np.asarray(n) >= math.floor(2.0 * eps_max + 2.0)


def loose_bound(theta_norm, rho_opt: float, n):
    n = np.asarray(n, dtype=float)
    return theta_norm * n * rho_opt ** (n - 1.0)


def loose_domain(eps_max: float, n) -> np.ndarray:
    return np.asarray(n) > max(2.0, eps_max)


def roundoff_floor(values, S: int | None = None) -> np.ndarray:
    """Size of the error floor reached by the iterates in double precision."""
    values = np.asarray(values, dtype=float)
    S = values.shape[0] if S is None else S
    scale = np.linalg.norm(values, axis=0) + math.sqrt(S) * np.abs(values.mean(axis=0))
    return 256.0 * np.finfo(float).eps * math.sqrt(S) * scale


def trace_table(inst: ConsensusInstance, n_max: int, rho: float, gamma: float,
                rho_opt: float) -> list[dict]:
    """Rows for CSV export of a single-column instance."""
    if inst.values.ndim != 1:
        raise ParameterError("trace export takes a single instance")
    target = inst.values.mean()
    theta_norm = float(np.linalg.norm(inst.values))
    rows = []
    primal, dual = inst.primal, inst.dual
    for n in range(inst.n, n_max + 1):
        row = {"n": n}
        for k, v in enumerate(primal):
            row[f"sensor_{k}"] = float(v)
        row["l2_error"] = float(np.linalg.norm(primal - target))
        row["fixed_eps_bound"] = float(fixed_eps_bound(theta_norm, inst.eps, rho, n))
        row["optimal_bound"] = float(optimal_bound(theta_norm, gamma, rho_opt, n))
        rows.append(row)
        primal, dual = _advance(inst.W, inst.eps, inst.values, primal, dual)
    return rows
