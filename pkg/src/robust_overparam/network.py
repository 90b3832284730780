"""Two-layer ReLU network, its linearization, and coupling diagnostics.

The network is f_W(x) = sum_r a_r relu(<W_r, x> + b_r) with only the hidden
weights W trained; a and b stay frozen at initialization.  The pseudo-network
g_W freezes every unit's activation pattern at initialization, making it
linear in W - W0.  Operations here compute forwards, loss (sub)gradients in W,
deviation norms, and the empirical gap between network and pseudo-network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .rng import stream

# rows of X are points; W has one column per hidden unit
_CHUNK = 512


@dataclass(frozen=True)
class InitSnapshot:
    """Frozen initialization: W0, b0 entries iid N(0, 1/m), a0 entries +-m^(-1/3)."""

    W0: np.ndarray
    b0: np.ndarray
    a0: np.ndarray
    m: int
    d: int
    seed: int


@dataclass
class NetworkState:
    init: InitSnapshot
    W: np.ndarray

    def __post_init__(self):
        if self.W.shape != (self.init.d, self.init.m):
            raise ValueError("W must be d x m matching the snapshot")

    def with_weights(self, W: np.ndarray) -> "NetworkState":
        return NetworkState(self.init, W)


@dataclass(frozen=True)
class WeightNorms:
    two_inf: float
    two_one: float
    frob: float


def init_network(m: int, d: int, seed: int) -> NetworkState:
    if m < 1 or d < 2:
        raise ValueError("need m >= 1 and d >= 2")
    scale = 1.0 / math.sqrt(m)
    W0 = stream(seed, "init-w").standard_normal((d, m)) * scale
    b0 = stream(seed, "init-b").standard_normal(m) * scale
    signs = stream(seed, "init-a").integers(0, 2, size=m) * 2.0 - 1.0
    a0 = signs * m ** (-1.0 / 3.0)
    snap = InitSnapshot(W0=W0, b0=b0, a0=a0, m=m, d=d, seed=seed)
    return NetworkState(init=snap, W=W0.copy())


def forward_real(state: NetworkState, x) -> float | np.ndarray:
    """f(x) = sum_r a_r relu(<W_r, x> + b_r); accepts one point or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pre = np.atleast_2d(x) @ state.W + state.init.b0
    out = np.maximum(pre, 0.0) @ state.init.a0
    return float(out[0]) if single else out


def forward_pseudo(state: NetworkState, x) -> float | np.ndarray:
    """g(x) = sum_r a_r <W_r - W0_r, x> 1{<W0_r, x> + b0_r >= 0}."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    init = state.init
    mask0 = (X @ init.W0 + init.b0) >= 0
    out = ((X @ (state.W - init.W0)) * mask0) @ init.a0
    return float(out[0]) if single else out


def _loss_slopes(loss, preds: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.asarray(loss.slope(preds, y), dtype=float)


def grad_loss_real(state: NetworkState, X, y, loss) -> np.ndarray:
    """d x m subgradient of the mean loss, with relu'(z) = 1{z >= 0}.

    Each column satisfies ||grad_r||_2 <= |a_r| <= m^(-1/3) for a 1-Lipschitz
    loss since inputs are unit vectors.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if len(X) == 0:
        raise ValueError("empty batch")
    lp = _loss_slopes(loss, forward_real(state, X), y)
    mask = (X @ state.W + state.init.b0) >= 0
    weights = mask * (lp[:, None] * state.init.a0[None, :])
    return (X.T @ weights) / len(X)


def grad_loss_pseudo(state: NetworkState, X, y, loss) -> np.ndarray:
    """Same as grad_loss_real but through g: frozen indicators, slopes at g."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if len(X) == 0:
        raise ValueError("empty batch")
    init = state.init
    lp = _loss_slopes(loss, forward_pseudo(state, X), y)
    mask0 = (X @ init.W0 + init.b0) >= 0
    weights = mask0 * (lp[:, None] * init.a0[None, :])
    return (X.T @ weights) / len(X)


def coupling_gap(state: NetworkState, sample) -> float:
    """max over the sample of |f_W(x) - g_W(x)|; a lower bound on the sup."""
    sample = np.atleast_2d(np.asarray(sample, dtype=float))
    if len(sample) == 0:
        raise ValueError("empty sample")
    init = state.init
    dW = state.W - init.W0
    gap = 0.0
    for lo in range(0, len(sample), _CHUNK):
        X = sample[lo : lo + _CHUNK]
        pre0 = X @ init.W0 + init.b0
        f = np.maximum(pre0 + X @ dW, 0.0) @ init.a0
        g = ((X @ dW) * (pre0 >= 0)) @ init.a0
        gap = max(gap, float(np.max(np.abs(f - g))))
    return gap


def gradient_coupling_norm(g1: np.ndarray, g2: np.ndarray) -> float:
    """(2,1)-norm of the gradient difference: sum over units of column norms."""
    if g1.shape != g2.shape:
        raise ValueError(f"shape mismatch: {g1.shape} vs {g2.shape}")
    return float(np.linalg.norm(g1 - g2, axis=0).sum())


def weight_norms(W: np.ndarray, W0: np.ndarray) -> WeightNorms:
    col = np.linalg.norm(W - W0, axis=0)
    return WeightNorms(
        two_inf=float(col.max()) if col.size else 0.0,
        two_one=float(col.sum()),
        frob=float(np.linalg.norm(W - W0)),
    )


def activation_flip_count(state: NetworkState, points) -> int:
    """Units whose sign pattern differs from initialization on any point."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    init = state.init
    flipped = np.zeros(init.m, dtype=bool)
    for lo in range(0, len(X), _CHUNK):
        chunk = X[lo : lo + _CHUNK]
        now = (chunk @ state.W + init.b0) >= 0
        was = (chunk @ init.W0 + init.b0) >= 0
        flipped |= (now != was).any(axis=0)
    return int(flipped.sum())


def perturbed_state(state: NetworkState, deviation_scale: float, seed: int) -> NetworkState:
    """W0 plus per-unit deviations of norm exactly deviation_scale * m^(-2/3).

    Random directions; sits on the boundary of the deviation ball used by the
    coupling experiments (worst case within the hypothesis).
    """
    init = state.init
    dirs = stream(seed, "coupling-dw").standard_normal((init.d, init.m))
    dirs /= np.linalg.norm(dirs, axis=0, keepdims=True)
    return state.with_weights(init.W0 + deviation_scale * init.m ** (-2.0 / 3.0) * dirs)


def save_state(state: NetworkState, path: str) -> None:
    """Serialize a state: m, d, seed, the a0 sign bits, and W explicitly.

    W0 and b0 are reproducible from (m, d, seed), so only the signs of a0 are
    stored alongside them as a self-check.
    """
    init = state.init
    np.savez(
        path,
        m=init.m,
        d=init.d,
        seed=init.seed,
        a0_signs=(init.a0 > 0).astype(np.uint8),
        W=state.W,
    )


def load_state(path: str) -> NetworkState:
    with np.load(path) as data:
        m, d, seed = int(data["m"]), int(data["d"]), int(data["seed"])
        signs = data["a0_signs"].astype(bool)
        W = np.array(data["W"], dtype=float)
    state = init_network(m, d, seed)
    if not np.array_equal(state.init.a0 > 0, signs):
        raise ValueError("stored sign bits disagree with the seeded initialization")
    return state.with_weights(W)


@dataclass(frozen=True)
class AntiConcentrationRow:
    t: float
    estimate: float
    exact: float
    stderr: float
    envelope: float


def anti_concentration_check(m: int, d: int, t_grid, trials: int, seed: int):
    """Monte-Carlo check that Pr[|<u,x> + beta| <= t] stays O(t).

    With u ~ N(0, I_d), beta ~ N(0,1) and x on the domain, the probe variable
    is exactly N(0, 2), so the estimate must match 2*Phi(t/sqrt(2)) - 1 and
    stay below the density envelope t/sqrt(pi), both up to 5 standard errors.
    Raises CertificationError on violation.  m is recorded for provenance
    only; the scaled probe does not depend on it.
    """
    from .polyapprox import CertificationError

    if trials < 10_000:
        raise ValueError("need at least 1e4 trials")
    rng = stream(seed, "anticonc")
    x = np.zeros(d)
    x[0] = math.sqrt(3.0) / 2.0
    x[-1] = 0.5
    u = rng.standard_normal((trials, d))
    beta = rng.standard_normal(trials)
    probe = np.abs(u @ x + beta)
    rows = []
    for t in t_grid:
        t = float(t)
        est = float(np.mean(probe <= t)) if t > 0 else float(np.mean(probe <= 0.0))
        exact = float(2.0 * ndtr(t / math.sqrt(2.0)) - 1.0)
        se = math.sqrt(max(exact * (1.0 - exact), 1e-300) / trials)
        envelope = t / math.sqrt(math.pi)
        rows.append(AntiConcentrationRow(t, est, exact, se, envelope))
        if abs(est - exact) > 5.0 * se:
            raise CertificationError(
                f"anti-concentration estimate at t={t} off by more than 5 SE: "
                f"{est:.6f} vs exact {exact:.6f} (se {se:.2e})"
            )
        if est > envelope + 5.0 * se:
            raise CertificationError(
                f"anti-concentration estimate at t={t} above the linear envelope: "
                f"{est:.6f} > {envelope:.6f} + 5 SE"
            )
    return rows
