"""Stability constants, minimal iteration counts and their Monte-Carlo verification.

All guarantees here hold on the event that every stacked observation stays
under a logarithmic energy envelope,

    sup_{t <= T} ||y_t||^2 < beta C N (1 + log(T+1)),

which has probability at least 1 - (T+1)^(1-CN) e^(-CN). The verifiers
check each bound only on runs where that event holds. Logs are natural.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import dfilter, hmm
from .errors import AssumptionError, ParameterError
from .mixing import MixingMatrix, SpectrumReport


def probability_floor(C: float, N: int, T: int) -> float:
    """1 - (T+1)^(1-CN) exp(-CN)."""
    return 1.0 - math.exp((1.0 - C * N) * math.log(T + 1) - C * N)


def energy_envelope(beta: float, C: float, N: int, T: int) -> float:
    return beta * C * N * (1.0 + math.log(T + 1))


def observation_energies(observations) -> np.ndarray:
    """||y_t||^2 of the stacked observation vector for every t."""
    return np.array([sum(float(np.dot(y, y)) for y in ys) for ys in observations])


@dataclass(frozen=True)
class EventCheck:
    holds: bool
    margin: float  # envelope minus the largest observed energy
    sup_energy: float
    envelope: float


def trajectory_event_check(observations, C: float, beta: float, T: int, N: int) -> EventCheck:
    if C < 1:
        raise ParameterError(f"C must be >= 1, got {C}")
    if not beta > 1:
        raise ParameterError(f"beta must exceed 1, got {beta}")
    energies = observation_energies(observations[:T + 1])
    sup = float(energies.max()) if len(energies) else 0.0
    bound = energy_envelope(beta, C, N, T)
    return EventCheck(holds=sup < bound, margin=bound - sup, sup_energy=sup, envelope=bound)


def delta_const(beta: float, mu_sup: float, lambda_inf: float, lambda_sup: float) -> float:
    return beta * ((1.0 + mu_sup) ** 2 * lambda_inf + math.log(lambda_sup))


def delta_variant(beta: float, mu_sup: float, lambda_inf: float, lambda_sup: float) -> float:
    """Same as delta_const with the covariance floor dividing instead of multiplying."""
    return beta * ((1.0 + mu_sup) ** 2 / lambda_inf + math.log(lambda_sup))


def eta_const(delta: float, lambda_inf: float) -> float:
    if not lambda_inf > 1:
        raise AssumptionError(f"eta needs lambda_inf > 1, got {lambda_inf}")
    return delta * max(2.0 / math.log(lambda_inf), 3.0)


def log_e_lower_bound(beta, C, N, T, mu_sup, lambda_inf, lambda_sup) -> float:
    root = math.sqrt(beta * C * N * (1.0 + math.log(T + 1))) + mu_sup
    return -0.5 * N * (T + 1) * math.log(lambda_sup) - root * root * (T + 1) / (2.0 * lambda_inf)


def _pow2_ceil(x: float) -> float:
    """Smallest power of two (>= 1) that is >= x."""
    if x <= 1.0:
        return 1.0
    p = 2.0 ** math.ceil(math.log2(x))
    return p if p >= x else 2.0 * p


@dataclass(frozen=True)
class StabilityConstants:
    C: float
    beta: float
    delta: float
    eta: float
    lambda_inf: float
    lambda_sup: float
    mu_sup: float
    gamma: float
    rho: float
    tau: float
    T: int
    N: int
    S: int
    m: float = 0.0
    eps_max: float = 1.0
    delta_alt: float = math.nan
    log_B: float = math.nan

    @property
    def B_lower_bound(self) -> float:
        return math.exp(self.log_B)

    @property
    def n_floor(self) -> int:
        return max(2, math.floor(2.0 * self.eps_max + 2.0))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_floor"] = self.n_floor
        out["probability_floor"] = probability_floor(self.C, self.N, self.T)
        return out


def make_constants(model: hmm.HmmModel, report: SpectrumReport, C: float, beta: float, T: int,
                   m: float = 0.0) -> StabilityConstants:
    """Assemble the constants for a model and a mixing-matrix spectrum report.

    gamma and rho are taken at the optimal eps, which is also eps_max.
    """
    if C < 1:
        raise ParameterError(f"C must be >= 1, got {C}")
    if not beta > 1:
        raise ParameterError(f"beta must exceed 1, got {beta}")
    if T < 0:
        raise ParameterError(f"T must be >= 0, got {T}")
    li, ls, mu = model.lambda_inf, model.lambda_sup, model.mu_sup
    delta = delta_const(beta, mu, li, ls)
    return StabilityConstants(
        C=float(C), beta=float(beta), delta=delta, eta=eta_const(delta, li) if li > 1 else math.nan,
        lambda_inf=li, lambda_sup=ls, mu_sup=mu, gamma=report.gamma, rho=report.rho_star,
        tau=report.tau, T=int(T), N=model.N, S=model.S, m=float(m), eps_max=report.eps_star,
        delta_alt=delta_variant(beta, mu, li, ls),
        log_B=log_e_lower_bound(beta, C, model.N, T, mu, li, ls),
    )


def log_growth_bound(k: StabilityConstants, delta: float | None = None) -> float:
    d = k.delta if delta is None else delta
    return math.log(d) + 1.5 * math.log(k.S) + math.log(k.C * k.N) + math.log1p(math.log(k.T + 1))


def growth_bound(k: StabilityConstants, delta: float | None = None) -> float:
    """delta S^1.5 C N (1 + log(T+1))."""
    return math.exp(log_growth_bound(k, delta))


def e_lower_bound(k: StabilityConstants) -> float:
    return math.exp(k.log_B)


def min_n_lhs(n, tau: float, gamma: float):
    return n - tau * np.log(gamma * np.asarray(n, dtype=float))


def solve_min_n(tau: float, gamma: float, B: float, n_floor: int) -> int:
    """Smallest integer n >= n_floor with n - tau log(gamma n) >= B."""
    if not tau > 0 or not gamma > 0:
        raise ParameterError(f"tau and gamma must be positive, got {tau}, {gamma}")
    if n_floor < 2:
        raise ParameterError(f"n_floor must be >= 2, got {n_floor}")

    def ok(n: int) -> bool:
        return n - tau * math.log(gamma * n) >= B

    if ok(n_floor):
        return n_floor
    # below tau the left side decreases, so nothing in [n_floor, tau] qualifies
    lo = max(n_floor, math.floor(tau))
    hi = lo + 1
    while not ok(hi):
        lo, hi = hi, lo + 2 * (hi - lo)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def rhs_iterate_floor(k: StabilityConstants) -> float:
    if not k.lambda_inf > 1:
        raise AssumptionError(f"the iterate floor needs lambda_inf > 1, got {k.lambda_inf}")
    log_arg = (math.log(2.0 * k.delta) + 1.5 * math.log(k.S) + math.log(k.C)
               + math.log1p(math.log(k.T + 1)) - math.log(math.log(k.lambda_inf)))
    return k.tau * log_arg


def required_n_iterate_floor(k: StabilityConstants) -> int:
    return solve_min_n(k.tau, k.gamma, rhs_iterate_floor(k), k.n_floor)


def _check_accuracy(eps_acc: float, closed: bool) -> None:
    ok = 0 < eps_acc <= 1 if closed else 0 < eps_acc < 1
    if not ok:
        raise ParameterError(f"accuracy must lie in (0, 1{']' if closed else ')'}, got {eps_acc}")


def rhs_unnormalized(k: StabilityConstants, eps_acc: float) -> float:
    _check_accuracy(eps_acc, closed=False)
    log_arg = (math.log(k.eta) + 1.5 * math.log(k.S) + math.log(k.C)
               + math.log1p(math.log(k.T + 1)) - math.log(eps_acc))
    return k.tau * log_arg


def required_n_unnormalized(k: StabilityConstants, eps_acc: float) -> int:
    return solve_min_n(k.tau, k.gamma, rhs_unnormalized(k, eps_acc), k.n_floor)


@dataclass(frozen=True)
class PosteriorConstants:
    c1: float
    c2: float
    c0: float
    c0_tilde: float
    c2_tilde: float
    c: float

    def to_dict(self) -> dict:
        return asdict(self)


def posterior_constants(k: StabilityConstants) -> PosteriorConstants:
    """The constant c of the posterior condition, assembled link by link.

    c1 = 1/2 + beta (mu_sup + 1)^2 / (2 lambda_inf)
    c2 = smallest power of two with (T+1)(1 + log(T+1)) <= c2 T log T
    c0 = c1 c2, c0~ = c0 log lambda_sup
    c2~ = smallest power of two with log(2 c2 eta S^1.5 C log T / e) <= c2~ log(CST / e)
          for every e in (0, 1]; the worst case is e = 1
    c = c0~ + c2~
    """
    if k.S < 2:
        raise ParameterError("the posterior condition needs S >= 2")
    if k.T < 1:
        raise ParameterError("the posterior condition needs T >= 1")
    if k.T == 1:
        raise AssumptionError("the constant chain divides by log T, which vanishes at T = 1")
    T = k.T
    c1 = 0.5 + k.beta * (k.mu_sup + 1.0) ** 2 / (2.0 * k.lambda_inf)
    c2 = _pow2_ceil((T + 1) * (1.0 + math.log(T + 1)) / (T * math.log(T)))
    c0 = c1 * c2
    c0_tilde = c0 * math.log(k.lambda_sup)
    num = math.log(2.0 * c2 * k.eta * k.S ** 1.5 * k.C * math.log(T))
    den = math.log(k.C * k.S * T)
    # (num + x) / (den + x) over x = log(1/e) >= 0 peaks at x = 0 when num > den
    c2_tilde = _pow2_ceil(num / den)
    return PosteriorConstants(c1=c1, c2=c2, c0=c0, c0_tilde=c0_tilde, c2_tilde=c2_tilde,
                              c=c0_tilde + c2_tilde)


def rhs_posterior(k: StabilityConstants, eps_acc: float, m: float | None = None) -> float:
    _check_accuracy(eps_acc, closed=True)
    m = k.m if m is None else m
    if m < 0:
        raise ParameterError(f"m must be >= 0, got {m}")
    c = posterior_constants(k).c
    return c * k.tau * k.C * k.N * k.T * math.log(k.C * k.S * k.T / eps_acc) + k.tau * m


def required_n_posterior(k: StabilityConstants, eps_acc: float, m: float | None = None) -> int:
    return solve_min_n(k.tau, k.gamma, rhs_posterior(k, eps_acc, m), k.n_floor)


def telescoping_sides(A_list: Sequence[np.ndarray], B_list: Sequence[np.ndarray]) -> tuple[float, float]:
    """(||prod A - prod B||, sum_i prod_{j<i}||A_j|| prod_{j>i}||B_j|| ||A_i - B_i||), l1-induced norm."""
    if len(A_list) != len(B_list) or not A_list:
        raise ParameterError("telescoping check needs two non-empty lists of equal length")
    A_list = [np.asarray(a, dtype=float) for a in A_list]
    B_list = [np.asarray(b, dtype=float) for b in B_list]
    d = A_list[0].shape
    if any(x.ndim != 2 or x.shape != d or d[0] != d[1] for x in A_list + B_list):
        raise ParameterError("telescoping check needs square matrices of one size")

    def norm(x):
        return float(np.linalg.norm(x, 1))

    prod_a, prod_b = A_list[0], B_list[0]
    for a, b in zip(A_list[1:], B_list[1:]):
        prod_a, prod_b = prod_a @ a, prod_b @ b
    na = [norm(a) for a in A_list]
    nb = [norm(b) for b in B_list]
    rhs = 0.0
    for i in range(len(A_list)):
        rhs += math.prod(na[:i]) * math.prod(nb[i + 1:]) * norm(A_list[i] - B_list[i])
    return norm(prod_a - prod_b), rhs


def telescoping_check(A_list, B_list, rtol: float = 1e-12) -> bool:
    """Telescoping inequality for matrix products; ``rtol`` absorbs rounding in the products."""
    lhs, rhs = telescoping_sides(A_list, B_list)
    scale = math.prod(float(np.linalg.norm(a, 1)) for a in A_list) + \
        math.prod(float(np.linalg.norm(b, 1)) for b in B_list)
    return lhs <= rhs + rtol * scale


# ---------------------------------------------------------------------------
# Monte Carlo

BETA_GRID = tuple(round(1.1 + 0.1 * i, 1) for i in range(70))


def sup_energies(model: hmm.HmmModel, T: int, seeds: Iterable[int]) -> np.ndarray:
    return np.array([observation_energies(hmm.simulate(model, T, s).observations).max() for s in seeds])


def calibrate_beta(model: hmm.HmmModel, T: int, C: float, seeds: Iterable[int],
                   grid: Sequence[float] = BETA_GRID) -> dict:
    """Smallest beta on the grid whose event frequency over ``seeds`` reaches the floor."""
    sups = sup_energies(model, T, seeds)
    floor = probability_floor(C, model.N, T)
    base = C * model.N * (1.0 + math.log(T + 1))
    for beta in grid:
        freq = float(np.mean(sups < beta * base))
        if freq >= floor:
            return {"beta": float(beta), "frequency": freq, "floor": floor, "seeds": len(sups)}
    raise AssumptionError(f"no beta on the grid up to {grid[-1]} reaches the event floor {floor:.6g}")


@dataclass
class BoundCheck:
    name: str
    bound: float
    observed_max: float = -math.inf
    violations: int = 0
    checked: int = 0
    n: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def satisfied(self) -> bool:
        return self.violations == 0

    def record(self, observed: float, ok: bool) -> None:
        self.checked += 1
        self.observed_max = max(self.observed_max, observed)
        if not ok:
            self.violations += 1

    def to_dict(self) -> dict:
        out = {"name": self.name, "bound": self.bound, "observed_max": self.observed_max,
               "satisfied": self.satisfied, "violations": self.violations, "checked": self.checked}
        if self.n is not None:
            out["n"] = self.n
        out.update(self.extra)
        return out


def verify_bounds(model: hmm.HmmModel, w: MixingMatrix, k: StabilityConstants, seeds: Sequence[int],
                  eps_acc: float = 0.01, eps_post: float = 1.0, ms: Sequence[float] = (0.0, 2.0)) -> dict:
    """Check every bound on the seeds where the energy event holds.

    The posterior condition is evaluated at accuracy ``eps_post`` for each m.
    Violations are counted, never raised, so a report always comes back.
    """
    eps = k.eps_max
    n31 = required_n_iterate_floor(k)
    n33 = required_n_unnormalized(k, eps_acc)
    n40 = {m: required_n_posterior(k, eps_post, m) for m in ms}
    floor_value = 0.5 * k.N * math.log(k.lambda_inf)
    log_growth = log_growth_bound(k)

    growth = BoundCheck("growth", growth_bound(k), extra={"bound_variant": growth_bound(k, k.delta_alt),
                                                          "variant_violations": 0})
    lower = BoundCheck("iterate_floor", floor_value, n=n31)
    lower.observed_max = math.inf  # tracks the minimum iterate instead
    unnorm = BoundCheck("unnormalized", eps_acc, n=n33)
    post = {m: BoundCheck(f"posterior_m{m:g}", eps_post * math.exp(-m), n=n40[m]) for m in ms}
    e_low = BoundCheck("e_lower_bound", k.log_B, extra={"log_domain": True})
    e_low.observed_max = math.inf

    in_event = 0
    for seed in seeds:
        run = hmm.simulate(model, k.T, seed)
        ev = trajectory_event_check(run.observations, k.C, k.beta, k.T, k.N)
        if not ev.holds:
            continue
        in_event += 1
        central = hmm.run_centralized(model, run)

        d31 = dfilter.run_distributed(model, run, w, eps, n31)
        thetas = d31.thetas  # (T+1, S, L), identical for every n
        norms = np.linalg.norm(thetas, axis=1)
        gmax = float(norms.max())
        growth.record(gmax, math.log(gmax) <= log_growth)
        if gmax > growth.extra["bound_variant"]:
            growth.extra["variant_violations"] += 1
        lo = float(d31.estimates.min())
        lower.checked += 1
        lower.observed_max = min(lower.observed_max, lo)
        if lo < floor_value:
            lower.violations += 1

        e_min = float(central.log_scale.min())
        e_low.checked += 1
        e_low.observed_max = min(e_low.observed_max, e_min)
        if e_min < k.log_B:
            e_low.violations += 1

        d33 = dfilter.run_distributed(model, run, w, eps, n33)
        dis = dfilter.l1_disagreement(central, d33)
        sup_un = dis.sup_unnormalized()
        unnorm.record(sup_un, sup_un <= eps_acc)

        for m in ms:
            d40 = d33 if n40[m] == n33 else dfilter.run_distributed(model, run, w, eps, n40[m])
            sup_post = dfilter.l1_disagreement(central, d40).sup()
            post[m].record(sup_post, sup_post <= post[m].bound)

    n_seeds = len(seeds)
    floor = probability_floor(k.C, k.N, k.T)
    rate = in_event / n_seeds if n_seeds else math.nan
    sigma = math.sqrt(max(floor * (1.0 - floor), 0.0) / n_seeds) if n_seeds else math.nan
    checks = [growth, lower, e_low, unnorm] + [post[m] for m in ms]
    report = {
        "constants": k.to_dict(),
        "posterior_constants": posterior_constants(k).to_dict() if k.T >= 2 and k.S >= 2 else None,
        "seeds": n_seeds,
        "event": {"rate": rate, "floor": floor, "sigma": sigma,
                  "satisfied": bool(rate >= floor - 3.0 * sigma), "count": in_event},
        "bounds": {c.name: dict(c.to_dict(), event_rate=rate, floor=floor) for c in checks},
    }
    report["bounds"]["iterate_floor"]["observed_min"] = report["bounds"]["iterate_floor"].pop("observed_max")
    report["bounds"]["e_lower_bound"]["observed_min"] = report["bounds"]["e_lower_bound"].pop("observed_max")
    return report
