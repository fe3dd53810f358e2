"""States-alignment loss: log-space forward/backward over the clone-state DAG.

Conventions shared with :mod:`exlm.heads`: ``logE`` is ``(L+2, L+2)`` with
BOS at index 0 and EOS at index ``L+1``; ``logP`` is ``(L, V)`` and row ``j``
belongs to lattice node ``j+1``. ``targets`` holds ``y_1..y_M``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


class InfeasibleLattice(ValueError):
    pass


@dataclass(frozen=True)
class AlignmentLattice:
    log_alpha: np.ndarray  # (M+1, L+2)
    log_beta: np.ndarray  # (M+1, L+2)
    logZ: float
    logZ_beta: float
    targets: np.ndarray
    emit: np.ndarray  # (M+1, L+2); row i>0 holds logP[u][y_i], row 0 unused

    @property
    def M(self) -> int:
        return int(self.targets.size)

    def occupancy(self) -> np.ndarray:
        """Posterior probability that target i is emitted by node u, shape (M, L+2)."""
        return np.exp(self.log_alpha[1:] + self.log_beta[1:] - self.logZ)

    def emission_counts(self, vocab_size: int) -> np.ndarray:
        """Expected number of times node u emits token y, shape (L, V).

        This is ``-d loss / d logP``.
        """
        gamma = self.occupancy()[:, 1:-1]
        counts = np.zeros((gamma.shape[1], vocab_size))
        np.add.at(counts.T, self.targets, gamma)
        return counts

    def transition_counts(self, logE: np.ndarray) -> np.ndarray:
        """Expected number of times edge v->u is taken, shape (L+2, L+2).

        This is ``-d loss / d logE``.
        """
        n = logE.shape[0]
        counts = np.zeros((n, n))
        with np.errstate(invalid="ignore"):
            for i in range(1, self.M + 1):
                tail = self.emit[i] + self.log_beta[i] - self.logZ
                counts += _safe_exp(self.log_alpha[i - 1][:, None] + logE + tail[None, :])
            counts[:, -1] += _safe_exp(self.log_alpha[self.M] + logE[:, -1] - self.logZ)
        return counts


def _safe_exp(x: np.ndarray) -> np.ndarray:
    return np.exp(np.where(np.isnan(x), -np.inf, x))


def _lse_cols(x: np.ndarray) -> np.ndarray:
    """logsumexp down axis 0, returning -inf for all -inf columns without warnings."""
    m = x.max(axis=0)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.exp(x - safe).sum(axis=0)) + safe


def _lse(x: np.ndarray) -> float:
    return float(_lse_cols(np.ravel(x)[:, None])[0])


def _emission_rows(logP: np.ndarray, targets: np.ndarray) -> np.ndarray:
    L = logP.shape[0]
    M = targets.size
    emit = np.full((M + 1, L + 2), -np.inf)
    emit[1:, 1:-1] = logP[:, targets].T
    return emit


def _finite_or_raise(logZ: float) -> None:
    if np.isnan(logZ):
        raise FloatingPointError("NaN in lattice scores")
    if not np.isfinite(logZ):
        raise InfeasibleLattice("infeasible lattice")


def _check(logP: np.ndarray, logE: np.ndarray, targets) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.int64)
    L = logP.shape[0]
    if logE.shape != (L + 2, L + 2):
        raise ValueError(f"logE must be {(L + 2, L + 2)}, got {logE.shape}")
    if targets.ndim != 1 or targets.size < 1:
        raise ValueError("at least one target is required")
    if targets.size > L:
        raise InfeasibleLattice("infeasible lattice")
    return targets


def forward_lattice(logP, logE, targets, layout=None) -> tuple[np.ndarray, float]:
    targets = _check(logP, logE, targets)
    emit = _emission_rows(logP, targets)
    alpha = _forward(logE, emit)
    logZ = _lse(alpha[-1] + logE[:, -1])
    _finite_or_raise(logZ)
    return alpha, logZ


def _forward(logE: np.ndarray, emit: np.ndarray) -> np.ndarray:
    M = emit.shape[0] - 1
    alpha = np.full(emit.shape, -np.inf)
    alpha[0, 0] = 0.0
    for i in range(1, M + 1):
        alpha[i] = _lse_cols(alpha[i - 1][:, None] + logE) + emit[i]
    return alpha


def _backward(logE: np.ndarray, emit: np.ndarray) -> np.ndarray:
    M = emit.shape[0] - 1
    beta = np.full(emit.shape, -np.inf)
    beta[M] = logE[:, -1]
    for i in range(M - 1, -1, -1):
        beta[i] = _lse_cols((logE + (emit[i + 1] + beta[i + 1])[None, :]).T)
    return beta


def backward_lattice(logP, logE, targets, layout=None) -> np.ndarray:
    targets = _check(logP, logE, targets)
    beta = _backward(logE, _emission_rows(logP, targets))
    _finite_or_raise(beta[0, 0])
    return beta


def align(logP, logE, targets, layout=None) -> AlignmentLattice:
    """Run both passes and bundle them."""
    targets = _check(logP, logE, targets)
    emit = _emission_rows(logP, targets)
    alpha = _forward(logE, emit)
    beta = _backward(logE, emit)
    logZ = _lse(alpha[-1] + logE[:, -1])
    _finite_or_raise(logZ)
    return AlignmentLattice(alpha, beta, logZ, float(beta[0, 0]), targets, emit)


def sa_loss(logP, logE, targets, layout=None) -> float:
    return -forward_lattice(logP, logE, targets, layout)[1]


def sa_gradients(
    lattice: AlignmentLattice, logP: np.ndarray, logE: np.ndarray, layout=None
) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of ``-logZ`` with respect to the probabilities P and E.

    Entries where the probability is zero (disallowed edges) get gradient 0.
    """
    n_emit = lattice.emission_counts(logP.shape[1])
    n_trans = lattice.transition_counts(logE)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        gradP = np.where(n_emit > 0, -n_emit * np.exp(-logP), 0.0)
        gradE = np.where(np.isfinite(logE) & (n_trans > 0), -n_trans * np.exp(-logE), 0.0)
    return gradP, gradE


def sa_logit_gradients(
    lattice: AlignmentLattice, logP: np.ndarray, logE: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of ``-logZ`` with respect to ``logP`` and ``logE``."""
    return -lattice.emission_counts(logP.shape[1]), -lattice.transition_counts(logE)


def brute_force_loss(logP, logE, targets, layout=None, max_nodes: int = 12, max_targets: int = 5) -> float:
    """Loss by explicit enumeration of every monotone alignment path."""
    targets = np.asarray(targets, dtype=np.int64)
    L, M = logP.shape[0], targets.size
    if L > max_nodes or M > max_targets:
        raise ValueError("oracle size limit")
    scores = [score for _, score in enumerate_paths(logP, logE, targets)]
    if not scores:
        raise InfeasibleLattice("infeasible lattice")
    top = max(scores)
    return -(top + math.log(math.fsum(math.exp(s - top) for s in scores)))


def enumerate_paths(logP, logE, targets):
    """Yield ``(nodes, log score)`` for each path; nodes are emitting indices 0..L-1."""
    L = logP.shape[0]
    eos = L + 1
    for combo in itertools.combinations(range(L), len(targets)):
        lattice_nodes = [0] + [c + 1 for c in combo] + [eos]
        steps = [logE[a, b] for a, b in zip(lattice_nodes, lattice_nodes[1:])]
        if any(s == -np.inf for s in steps):
            continue
        emits = [logP[c, y] for c, y in zip(combo, targets)]
        yield combo, math.fsum(steps) + math.fsum(emits)


@dataclass(frozen=True)
class BestPath:
    nodes: np.ndarray  # emitting node indices 0..L-1, one per target
    tokens: np.ndarray
    score: float


def best_path(logP, logE, targets=None, layout=None, num_targets: int | None = None) -> BestPath:
    """Max-product version of the forward recursion.

    With ``targets`` the path aligning those tokens is returned. Without them
    each node emits its own argmax token and the best path of
    ``num_targets`` nodes doubles as a decoder.
    """
    L = logP.shape[0]
    if targets is not None:
        targets = _check(logP, logE, targets)
        emit = _emission_rows(logP, targets)
        M = targets.size
    else:
        M = int(num_targets)
        if M < 1 or M > L:
            raise InfeasibleLattice("infeasible lattice")
        emit = np.full((M + 1, L + 2), -np.inf)
        emit[1:, 1:-1] = logP.max(axis=1)[None, :]
    delta = np.full(emit.shape, -np.inf)
    back = np.zeros(emit.shape, dtype=np.int64)
    delta[0, 0] = 0.0
    for i in range(1, M + 1):
        cand = delta[i - 1][:, None] + logE
        back[i] = cand.argmax(axis=0)
        delta[i] = cand.max(axis=0) + emit[i]
    final = delta[M] + logE[:, -1]
    u = int(final.argmax())
    score = float(final[u])
    if not np.isfinite(score):
        raise InfeasibleLattice("infeasible lattice")
    path = [u]
    for i in range(M, 1, -1):
        u = int(back[i, u])
        path.append(u)
    nodes = np.array(path[::-1], dtype=np.int64) - 1
    if targets is not None:
        tokens = targets.copy()
    else:
        tokens = logP[nodes].argmax(axis=1)
    return BestPath(nodes, tokens, score)
