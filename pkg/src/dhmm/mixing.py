"""Doubly stochastic mixing matrices and the spectrum of the ADMM consensus operator.

The consensus iterations are driven by the 2S x 2S matrix

    M = [[eps/(1+eps) W + I,  -eps/(2(1+eps)) (W + I)],
         [I,                   0                     ]]

whose eigenvalues come in closed-form pairs, one pair per eigenvalue of W.
Everything downstream (optimal eps, SLEM, mixing time) is a function of the
second largest eigenvalue of W, taken by value rather than modulus.
"""
from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, TopologyError
from .graph import GraphTopology, is_connected


@dataclass(frozen=True)
class MixingMatrix:
    W: np.ndarray
    support: np.ndarray  # adjacency | I; entries of W outside it must vanish
    construction: str = "custom"

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        support = np.array(self.support, dtype=bool)
        if W.ndim != 2 or W.shape[0] != W.shape[1] or W.shape != support.shape:
            raise ParameterError("W and support must be matching square matrices")
        W.setflags(write=False)
        support.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "support", support)

    @property
    def S(self) -> int:
        return self.W.shape[0]

    def check(self, atol: float = 1e-12) -> None:
        W = self.W
        if not np.allclose(W, W.T, atol=atol, rtol=0):
            raise ParameterError("mixing matrix is not symmetric")
        if not np.allclose(W.sum(axis=1), 1.0, atol=atol, rtol=0):
            raise ParameterError("mixing matrix rows do not sum to one")
        if np.any(W[~self.support] != 0.0):
            raise ParameterError("mixing matrix has weight outside the graph neighborhoods")

    @classmethod
    def from_array(cls, W, g: GraphTopology | None = None) -> MixingMatrix:
        W = np.asarray(W, dtype=float)
        if g is None:
            support = np.ones_like(W, dtype=bool)
        else:
            support = g.adjacency | np.eye(g.S, dtype=bool)
        return cls(W=W, support=support)


def _require_connected(g: GraphTopology) -> None:
    if g.S < 2:
        raise ParameterError("mixing constructions need at least two sensors")
    if not is_connected(g):
        raise TopologyError("mixing constructions need a connected graph")


def max_degree_chain(g: GraphTopology) -> MixingMatrix:
    _require_connected(g)
    deg = g.degrees.astype(float)
    d_max = deg.max()
    W = g.adjacency / d_max
    np.fill_diagonal(W, 1.0 - deg / d_max)
    return MixingMatrix(W=W, support=g.adjacency | np.eye(g.S, dtype=bool),
                        construction="max-degree")


def metropolis_weights(g: GraphTopology) -> MixingMatrix:
    _require_connected(g)
    deg = g.degrees.astype(float)
    W = np.where(g.adjacency, 1.0 / (1.0 + np.maximum(deg[:, None], deg[None, :])), 0.0)
    np.fill_diagonal(W, 1.0 - W.sum(axis=1))
    return MixingMatrix(W=W, support=g.adjacency | np.eye(g.S, dtype=bool),
                        construction="metropolis")


CONSTRUCTIONS = {
    "max-degree": max_degree_chain,
    "metropolis": metropolis_weights,
}


def build_mixing(g: GraphTopology, construction: str) -> MixingMatrix:
    try:
        return CONSTRUCTIONS[construction](g)
    except KeyError:
        raise ParameterError(
            f"unknown construction {construction!r}; choose from {sorted(CONSTRUCTIONS)}") from None


def _as_array(w) -> np.ndarray:
    return w.W if isinstance(w, MixingMatrix) else np.asarray(w, dtype=float)


def w_spectrum(w) -> np.ndarray:
    """Eigenvalues of the symmetric W, ascending."""
    return np.linalg.eigvalsh(_as_array(w))


def lambda2(w) -> float:
    W = _as_array(w)
    if W.shape[0] < 2:
        raise ParameterError("second eigenvalue undefined for a single sensor")
    return float(w_spectrum(W)[-2])


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps!r}")


def build_m(w, eps: float) -> np.ndarray:
    _check_eps(eps)
    W = _as_array(w)
    S = W.shape[0]
    I = np.eye(S)
    a = eps / (1.0 + eps)
    b = eps / (2.0 * (1.0 + eps))
    return np.block([[a * W + I, -b * (W + I)],
                     [I, np.zeros((S, S))]])


def sort_eigs(values) -> np.ndarray:
    """Modulus descending, then real part descending, then imaginary part descending."""
    values = np.asarray(values, dtype=complex)
    order = np.lexsort((-values.imag, -values.real, -np.round(np.abs(values), 12)))
    return values[order]


CLUSTER_TOL = 1e-6
PARALLEL_TOL = 1e-4


def has_defective_cluster(values: np.ndarray, vectors: np.ndarray) -> bool:
    """True if two computed eigenvalues nearly coincide with nearly parallel eigenvectors.

    Repeated but non-defective eigenvalues (e.g. on regular graphs) have
    independent eigenvectors and are left alone.
    """
    d = np.abs(values[:, None] - values[None, :])
    np.fill_diagonal(d, np.inf)
    unit = vectors / np.linalg.norm(vectors, axis=0)
    for i, j in zip(*np.nonzero(d < CLUSTER_TOL)):
        if i < j and abs(np.vdot(unit[:, i], unit[:, j])) > 1.0 - PARALLEL_TOL:
            return True
    return False


class _Prec:
    def __init__(self, prec: int):
        import flint
        self.flint, self.prec = flint, prec

    def __enter__(self):
        self.old = self.flint.ctx.prec
        self.flint.ctx.prec = self.prec
        return self.flint

    def __exit__(self, *exc):
        self.flint.ctx.prec = self.old


def _acb_to_complex(z) -> complex:
    return complex(float(z.real.mid()), float(z.imag.mid()))


def m_eigenvalues_extended(w, eps: float, prec: int = 128) -> np.ndarray:
    """Eigenvalues of M assembled and solved in ``prec``-bit arithmetic.

    W and eps are taken as exact binary values, so the block structure of M
    holds exactly and a defective pair is not split by rounding of aW + I.
    """
    _check_eps(eps)
    W = _as_array(w)
    S = W.shape[0]
    with _Prec(prec) as flint:
        e = flint.arb(float(eps))
        a = e / (1 + e)
        b = e / (2 * (1 + e))
        rows = []
        for i in range(S):
            top = [a * flint.arb(float(W[i, j])) + (1 if i == j else 0) for j in range(S)]
            top += [-b * (flint.arb(float(W[i, j])) + (1 if i == j else 0)) for j in range(S)]
            rows.append(top)
        for i in range(S):
            rows.append([flint.arb(1 if i == j else 0) for j in range(S)] + [flint.arb(0)] * S)
        ev = flint.acb_mat(rows).eig(algorithm="approx")
        return np.array([_acb_to_complex(z) for z in ev])


def _matches(a: np.ndarray, b: np.ndarray, tol: float) -> bool:
    return bool(np.abs(a[:, None] - b[None, :]).min(axis=1).max() <= tol
                and np.abs(a[:, None] - b[None, :]).min(axis=0).max() <= tol)


def m_eigenvalues(w, eps: float, refine: bool = True, prec: int = 128) -> np.ndarray:
    """Numeric spectrum of M.

    At eps = eps* (and wherever a W-eigenvalue makes the square root vanish)
    M has a defective double eigenvalue, which double-precision QR only
    resolves to about sqrt(machine eps). With ``refine`` such spectra are
    recomputed in extended precision (needs python-flint); the extended
    result must agree with the double one to within the cluster tolerance.
    """
    values, vectors = np.linalg.eig(build_m(w, eps))
    if refine and has_defective_cluster(values, vectors):
        try:
            ext = m_eigenvalues_extended(w, eps, prec)
        except ImportError:
            warnings.warn("python-flint is not installed; defective eigenvalue pairs of M are only "
                          "resolved to about 1e-8", RuntimeWarning, stacklevel=2)
            return sort_eigs(values)
        if not _matches(ext, values, CLUSTER_TOL):
            raise NumericError("extended-precision eigenvalues disagree with the double-precision ones")
        values = ext
    return sort_eigs(values)


def w_spectrum_refined(w, prec: int = 128) -> list:
    """W-eigenvalues as ``prec``-bit Rayleigh quotients of the double-precision eigenvectors.

    For symmetric W the quotient error is quadratic in the eigenvector error.
    """
    W = _as_array(w)
    _, V = np.linalg.eigh(W)
    with _Prec(prec) as flint:
        Wa = flint.arb_mat(W.tolist())
        Va = flint.arb_mat(V.tolist())
        G = Va.transpose() * Wa * Va
        N = Va.transpose() * Va
        return [G[i, i] / N[i, i] for i in range(W.shape[0])]


def closed_form_spectrum_extended(w, eps: float, prec: int = 128) -> np.ndarray:
    """Closed-form pairs evaluated in ``prec``-bit arithmetic from refined W-eigenvalues."""
    _check_eps(eps)
    lams = w_spectrum_refined(w, prec)
    out = []
    with _Prec(prec) as flint:
        e = flint.arb(float(eps))
        for lam in lams:
            root = flint.acb(1 + e * e * (lam * lam - 1)).sqrt()
            base = 1 + e + e * lam
            denom = 2 * (1 + e)
            out += [_acb_to_complex((base + root) / denom), _acb_to_complex((base - root) / denom)]
    return sort_eigs(out)


RADICAND_TOL = 8.0 * np.finfo(float).eps


def closed_form_eigs(lambda_s: float, eps: float) -> tuple[complex, complex]:
    """The (+, -) pair of M-eigenvalues generated by the W-eigenvalue ``lambda_s``."""
    _check_eps(eps)
    if not -1.0 - 1e-12 <= lambda_s <= 1.0 + 1e-12:
        raise ParameterError(f"W-eigenvalue must lie in [-1, 1], got {lambda_s!r}")
    rad = 1.0 + eps * eps * (lambda_s * lambda_s - 1.0)
    # a radicand inside the rounding band of its terms is a double root
    if abs(rad) <= RADICAND_TOL * (1.0 + eps * eps):
        rad = 0.0
    root = cmath.sqrt(rad)
    base = 1.0 + eps + eps * lambda_s
    denom = 2.0 * (1.0 + eps)
    return (base + root) / denom, (base - root) / denom


def closed_form_spectrum(w_eigs, eps: float) -> np.ndarray:
    pairs = [closed_form_eigs(float(lam), eps) for lam in w_eigs]
    return sort_eigs([z for pair in pairs for z in pair])


def _check_lambda2(lam2: float) -> None:
    if not -1.0 <= lam2 < 1.0:
        raise ParameterError(f"lambda2 must lie in [-1, 1), got {lam2!r}")


def h_threshold(lam2: float) -> float:
    _check_lambda2(lam2)
    if lam2 >= 0.0:
        return (1.0 + lam2) / (1.0 - lam2)
    return 1.0


def slem(eps: float, lam2: float) -> float:
    """SLEM of M as a function of eps and the second eigenvalue of W."""
    _check_eps(eps)
    if eps <= h_threshold(lam2):
        return abs(closed_form_eigs(lam2, eps)[0])
    return eps / (1.0 + eps)


def slem_numeric(M: np.ndarray) -> float:
    mods = np.sort(np.abs(np.linalg.eigvals(M)))[::-1]
    return float(mods[1])


def eps_star(lam2: float) -> float:
    _check_lambda2(lam2)
    if lam2 >= 0.0:
        return 1.0 / math.sqrt(1.0 - lam2 * lam2)
    return 1.0


def rho_star(lam2: float) -> float:
    _check_lambda2(lam2)
    if lam2 >= 0.0:
        s = math.sqrt(1.0 - lam2 * lam2)
        return (lam2 + 1.0 + s) / (2.0 * (1.0 + s))
    return 0.5


def gamma_const(lam2: float) -> float:
    _check_lambda2(lam2)
    if lam2 >= 0.0:
        s = math.sqrt(1.0 - lam2 * lam2)
        return 2.0 * s / (1.0 + lam2 + s)
    return 1.0


def mixing_time(rho: float) -> float:
    if not 0.0 < rho < 1.0:
        raise ParameterError(f"mixing time needs 0 < rho < 1, got {rho!r}")
    return 1.0 / math.log(1.0 / rho)


@dataclass(frozen=True)
class SpectrumReport:
    lambda2: float
    eps_star: float
    rho_star: float
    gamma: float
    tau: float
    eps: float  # the eps actually used for M
    rho: float  # slem(eps, lambda2)
    rho_numeric: float
    w_eigenvalues: np.ndarray
    m_eigenvalues: np.ndarray
    construction: str = "custom"

    def to_dict(self) -> dict:
        return {
            "construction": self.construction,
            "lambda2": self.lambda2,
            "eps_star": self.eps_star,
            "rho_star": self.rho_star,
            "gamma": self.gamma,
            "tau": self.tau,
            "eps": self.eps,
            "rho": self.rho,
            "rho_numeric": self.rho_numeric,
            "tau_at_eps": mixing_time(self.rho),
            "w_eigenvalues": self.w_eigenvalues.tolist(),
            "m_eigenvalues": [[z.real, z.imag] for z in self.m_eigenvalues.tolist()],
        }


def spectrum_report(w: MixingMatrix | np.ndarray, eps: float | None = None) -> SpectrumReport:
    """Analyse W; ``eps=None`` means use the optimal eps."""
    w_eigs = w_spectrum(w)
    lam2 = float(w_eigs[-2])
    e_star = eps_star(lam2)
    eps_used = e_star if eps is None else float(eps)
    r_star = rho_star(lam2)
    M = build_m(w, eps_used)
    return SpectrumReport(
        lambda2=lam2,
        eps_star=e_star,
        rho_star=r_star,
        gamma=gamma_const(lam2),
        tau=mixing_time(r_star),
        eps=eps_used,
        rho=slem(eps_used, lam2),
        rho_numeric=slem_numeric(M),
        w_eigenvalues=w_eigs,
        m_eigenvalues=m_eigenvalues(w, eps_used),
        construction=getattr(w, "construction", "custom"),
    )


def slem_curve(lambda2_grid, eps_grid) -> list[tuple[float, float, float]]:
    """(lambda2, eps, rho) samples for plotting SLEM curves; ``None`` eps means optimal."""
    rows = []
    for lam in lambda2_grid:
        for e in eps_grid:
            e_val = eps_star(lam) if e is None else e
            rows.append((float(lam), float(e_val), slem(e_val, lam)))
    return rows
