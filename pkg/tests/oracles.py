"""Independent reference computations shared by the module and acceptance tests."""
import itertools
import math

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import multivariate_normal

from dhmm import consensus, hmm, mixing


def matched_deviation(a, b):
    cost = np.abs(np.asarray(a)[:, None] - np.asarray(b)[None, :])
    r, c = linear_sum_assignment(cost)
    return cost[r, c].max()


def pareto_dominators(lam2, eps_grid, n_max=400):
    """eps values strictly better than eps* at every tested n with eps < n."""
    e_star = mixing.eps_star(lam2)
    ns = np.arange(math.floor(2 * e_star + 1) + 1, n_max)
    f_star = mixing.slem(e_star, lam2) ** (ns - 1.0) / (1.0 + e_star)
    out = []
    for e in eps_grid:
        sel = ns > e
        if not sel.any():
            continue
        f = mixing.slem(e, lam2) ** (ns[sel] - 1.0) / (1.0 + e)
        if np.all(f < f_star[sel]):
            out.append(float(e))
    return out


def reference_iterates(W, eps, theta, n_max):
    """Plain per-sensor loops over the recursion, no vectorization."""
    S = len(theta)
    primal = [theta[k] / (1 + eps) for k in range(S)]
    dual = [0.0] * S
    out = [list(primal)]
    for _ in range(n_max - 1):
        new_p, new_d = [], []
        for k in range(S):
            mixed = 0.0
            for l in range(S):
                if W[k][l] != 0.0:
                    mixed += W[k][l] * primal[l]
            new_p.append(theta[k] / (1 + eps) + dual[k] + eps / (1 + eps) * mixed)
            new_d.append(dual[k] + eps / (2 * (1 + eps)) * (mixed - primal[k]))
        primal, dual = new_p, new_d
        out.append(list(primal))
    return np.array(out)


def check_all_bounds(w, theta, eps_values=None):
    """Counts of bound violations on each stated domain, with the rounding floor added."""
    rep = mixing.spectrum_report(w)
    lam2, e_star = rep.lambda2, rep.eps_star
    norm = float(np.linalg.norm(theta))
    floor = float(consensus.roundoff_floor(theta))
    n_max = max(60, math.ceil(12 * rep.tau) + 3)
    ns = np.arange(1, n_max + 1)
    bad = {"fixed_eps": 0, "optimal": 0, "loose": 0, "iterate": 0}
    for eps in eps_values or [0.3, 1.0, e_star, 3.0]:
        hist = consensus.history(w, eps, theta, n_max)
        err = np.linalg.norm(hist - theta.mean(), axis=1)
        rho = mixing.slem(eps, lam2)
        dom = consensus.fixed_eps_domain(eps, ns)
        bad["fixed_eps"] += int(np.sum(err[dom] > consensus.fixed_eps_bound(norm, eps, rho, ns[dom]) + floor))
    hist = consensus.history(w, e_star, theta, n_max)
    err = np.linalg.norm(hist - theta.mean(), axis=1)
    dom = consensus.optimal_domain(e_star, ns)
    bound = consensus.optimal_bound(norm, rep.gamma, rep.rho_star, ns)
    bad["optimal"] += int(np.sum(err[dom] > bound[dom] + floor))
    dom = consensus.loose_domain(e_star, ns)
    bound4 = consensus.loose_bound(norm, rep.rho_star, ns)
    bad["loose"] += int(np.sum(err[dom] > bound4[dom] + floor))
    dom = consensus.iterate_domain(e_star, ns)
    per = np.abs(hist - theta.mean()).max(axis=1)
    bad["iterate"] += int(np.sum(per[dom] > bound[dom] + floor))
    return bad


def random_model(rng, L=3, S=3, dims=(1, 2, 3)):
    P = rng.dirichlet(np.ones(L), size=L).T  # columns are distributions
    pi = rng.dirichlet(np.ones(L))
    sensors = []
    for k in range(S):
        nk = dims[k % len(dims)]
        means = rng.normal(size=(L, nk))
        covs = []
        for _ in range(L):
            A = rng.normal(size=(nk, nk))
            covs.append(A @ A.T + nk * np.eye(nk))
        sensors.append(hmm.SensorModel(means=means, covs=np.array(covs)))
    return hmm.make_model(np.arange(L, dtype=float), P, pi, sensors)


def brute_force_posterior(model, obs):
    """Posterior of X_t given y_0..y_t by summing over every state path."""
    L, T1 = model.L, len(obs)
    dens = np.array([[math.prod(multivariate_normal(s.means[j], s.covs[j]).pdf(y)
                                for s, y in zip(model.sensors, ys)) for j in range(L)] for ys in obs])
    out = []
    for t in range(T1):
        post = np.zeros(L)
        for path in itertools.product(range(L), repeat=t + 2):  # X_{-1} .. X_t
            p = model.pi_init[path[0]]
            for s in range(1, t + 2):
                p *= model.P[path[s], path[s - 1]] * dens[s - 1, path[s]]
            post[path[-1]] += p
        out.append(post / post.sum())
    return np.array(out)
