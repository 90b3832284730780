"""rho-bounded adversaries on the sphere-cap domain.

The feasible set for a perturbation of x is B_2(x, rho) intersected with the
domain X.  attack_worst_case approximates the worst-case adversary by
multi-restart projected gradient ascent; identity and random baselines are
rho-bounded by construction.  Per-example randomness is keyed by
(seed, tag, example index, restart) so attacks are reproducible under any
scheduling and larger restart counts extend, not reshuffle, smaller ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataspace import HEAD_RADIUS, validate_domain
from .network import NetworkState, forward_real
from .rng import stream

_PROJECT_ROUNDS = 50
_PROJECT_TOL = 1e-9


@dataclass(frozen=True)
class AttackConfig:
    rho: float
    steps: int = 20
    step_size: float | None = None
    restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    @property
    def resolved_step_size(self) -> float:
        return self.rho / 5.0 if self.step_size is None else self.step_size


def input_gradient(state: NetworkState, x, y, loss) -> np.ndarray:
    """Subgradient of the loss in the input: l'(f(x), y) sum_r a_r W_r 1{active}."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    g = _input_gradient_batch(state, np.atleast_2d(x), np.atleast_1d(y), loss)
    return g[0] if single else g


def _input_gradient_batch(state: NetworkState, X, y, loss) -> np.ndarray:
    lp = np.asarray(loss.slope(forward_real(state, X), y), dtype=float)
    mask = (X @ state.W + state.init.b0) >= 0
    return lp[:, None] * ((mask * state.init.a0) @ state.W.T)


def project_to_cap(z, center, rho: float) -> np.ndarray:
    """Project z onto B_2(center, rho) intersected with the domain X.

    Alternating projection: pin the last coordinate, rescale the head onto
    its sphere, and when the ball constraint is violated rotate the head
    along the geodesic toward the center's head to the angle where the ball
    constraint binds; repeated until both constraints hold within 1e-9 (the
    domain is then enforced exactly).  Falls back to the center if the loop
    fails to converge.
    """
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    out = _project_cap_batch(np.atleast_2d(z).copy(), np.atleast_2d(center), rho)
    return out[0] if single else out


def _rescale_heads(H: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(H, axis=1, keepdims=True)
    degenerate = norms[:, 0] < 1e-12
    if np.any(degenerate):
        H[degenerate] = fallback[degenerate]
        norms = np.linalg.norm(H, axis=1, keepdims=True)
    return H * (HEAD_RADIUS / norms)


def _project_cap_batch(Z: np.ndarray, centers: np.ndarray, rho: float) -> np.ndarray:
    Hc = centers[:, :-1]
    H = _rescale_heads(Z[:, :-1].copy(), Hc)
    # chord rho on the head sphere corresponds to geodesic angle theta_max
    theta_max = 2.0 * math.asin(min(rho / (2.0 * HEAD_RADIUS), 1.0))
    cos_t, sin_t = math.cos(theta_max), math.sin(theta_max)
    for _ in range(_PROJECT_ROUNDS):
        dist = np.linalg.norm(H - Hc, axis=1)
        over = dist > rho + _PROJECT_TOL
        if not np.any(over):
            break
        u = Hc[over] / HEAD_RADIUS
        v = H[over] / HEAD_RADIUS
        w = v - np.sum(u * v, axis=1, keepdims=True) * u
        wn = np.linalg.norm(w, axis=1, keepdims=True)
        # exactly antipodal heads have no preferred tangent; take the basis
        # direction least aligned with the center (never parallel to it)
        flat = wn[:, 0] < 1e-12
        if np.any(flat):
            uf = u[flat]
            pick = np.zeros_like(uf)
            pick[np.arange(len(uf)), np.argmin(np.abs(uf), axis=1)] = 1.0
            w[flat] = pick - np.sum(uf * pick, axis=1, keepdims=True) * uf
            wn[flat] = np.linalg.norm(w[flat], axis=1, keepdims=True)
        w /= wn
        H[over] = HEAD_RADIUS * (cos_t * u + sin_t * w)
    dist = np.linalg.norm(H - Hc, axis=1)
    bad = ~(dist <= rho + _PROJECT_TOL)  # negated so non-finite heads fall back too
    if np.any(bad):
        H[bad] = Hc[bad]
    out = np.empty_like(Z)
    out[:, :-1] = H
    out[:, -1] = 0.5
    return out


def random_cap_point(x: np.ndarray, rho: float, rng) -> np.ndarray:
    """Projection of a uniform-in-ball perturbation of x onto the cap."""
    d = len(x)
    direction = rng.standard_normal(d)
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        return x.copy()
    radius = rho * rng.uniform() ** (1.0 / d)
    return project_to_cap(x + (radius / norm) * direction, x, rho)


def attack_worst_case(state, x, y, loss, cfg: AttackConfig, index: int = 0, tag: int = 0):
    """Multi-restart projected gradient ascent on the per-example loss.

    Returns the feasible iterate with the highest loss among all iterates of
    all restarts and the unperturbed x itself, so the attacked loss never
    falls below the clean loss.
    """
    x = np.asarray(x, dtype=float)
    validate_domain(x[None, :])
    out = attack_batch(state, x[None, :], np.atleast_1d(y), loss, cfg, tag=tag, index_base=index)
    return out[0]


def attack_batch(state, X, y, loss, cfg: AttackConfig, tag: int = 0, index_base: int = 0) -> np.ndarray:
    """Vectorized worst-case attack over a batch, one RNG stream per example."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    n, d = X.shape
    step = cfg.resolved_step_size
    best_x = X.copy()
    best_l = np.asarray(loss.value(forward_real(state, X), y), dtype=float)
    for r in range(cfg.restarts):
        if r == 0:
            cur = X.copy()
        else:
            cur = np.vstack(
                [
                    random_cap_point(X[i], cfg.rho, stream(cfg.seed, "attack", tag, index_base + i, r))
                    for i in range(n)
                ]
            )
            _consider(state, cur, y, loss, best_x, best_l)
        for _ in range(cfg.steps):
            grad = _input_gradient_batch(state, cur, y, loss)
            cur = _project_cap_batch(cur + step * grad, X, cfg.rho)
            _consider(state, cur, y, loss, best_x, best_l)
    return best_x


def _consider(state, cur, y, loss, best_x, best_l):
    l = np.asarray(loss.value(forward_real(state, cur), y), dtype=float)
    upd = l > best_l
    if np.any(upd):
        best_l[upd] = l[upd]
        best_x[upd] = cur[upd]


def attack_random(x, cfg: AttackConfig, index: int = 0, tag: int = 0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return random_cap_point(x, cfg.rho, stream(cfg.seed, "attack-rand", tag, index))


def attack_identity(x) -> np.ndarray:
    return np.asarray(x, dtype=float).copy()


class WorstCaseAdversary:
    """rho-bounded PGA adversary for the training loop."""

    name = "worst"

    def __init__(self, cfg: AttackConfig):
        self.cfg = cfg
        self.rho = cfg.rho

    def perturb(self, state, X, y, loss, tag: int = 0) -> np.ndarray:
        return attack_batch(state, X, y, loss, self.cfg, tag=tag)


class RandomAdversary:
    name = "random"

    def __init__(self, cfg: AttackConfig):
        self.cfg = cfg
        self.rho = cfg.rho

    def perturb(self, state, X, y, loss, tag: int = 0) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.vstack([attack_random(X[i], self.cfg, index=i, tag=tag) for i in range(len(X))])


class IdentityAdversary:
    name = "identity"
    rho = 0.0

    def perturb(self, state, X, y, loss, tag: int = 0) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float)).copy()


def make_adversary(name: str, cfg: AttackConfig):
    table = {"worst": WorstCaseAdversary, "random": RandomAdversary}
    if name == "identity":
        return IdentityAdversary()
    if name not in table:
        raise ValueError(f"unknown adversary {name!r}; expected worst, random or identity")
    return table[name](cfg)
