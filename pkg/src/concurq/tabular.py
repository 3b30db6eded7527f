"""Finite-state concurrent MDPs and their Bellman operators.

The concurrent process factors one sampling period into two hops: a
latency hop p1(s'|s, a_prev; l) while the previous action keeps running
for the first l fraction of the period, then a remainder hop
p2(s''|s', a; l) once the new action takes over.  Q values are indexed
(s, a_prev, a, l) because the pair (a_prev, l) is part of the decision
state: it determines what the world does before the new action bites.

The backup composes both hops:

    T Q(s, a_prev, a, l) = r(s, a_prev)
        + gamma^l * sum_s' p1 * gamma^(1-l) * sum_s'' p2 * cont(s'', a)

where cont takes the max over the next action, under the next latency
(fixed: same l; iid: uniform over the latency set, max inside the
expectation since the agent observes the drawn latency before acting).
The two discount factors multiply to gamma, so the operator is a
gamma-contraction in sup norm; gamma <= gamma^l gives the per-slice
certificates their margin.  At l = 0 the latency hop is the identity
and the backup reduces exactly to the classical blocking operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ContractViolationError, NumericDivergenceError

STOCH_EPS = 1e-12


def _check_stochastic(kernel: np.ndarray, name: str) -> None:
    if np.any(kernel < -STOCH_EPS):
        raise ContractViolationError(f"{name} has negative entries")
    rows = kernel.sum(axis=-1)
    bad = np.abs(rows - 1.0) > STOCH_EPS
    if np.any(bad):
        worst = np.max(np.abs(rows - 1.0))
        raise ContractViolationError(
            f"{name} rows must sum to 1 within {STOCH_EPS}, worst residual {worst:.3e}"
        )


@dataclass
class FiniteConcurrentMdp:
    """Tabular concurrent MDP with per-latency two-hop kernels.

    reward: (S, A) array, r(s, a_prev), entries in [0, 1].
    kernel_latency: (L, S, A, S), p1(s'|s, a_prev; l_i).
    kernel_remainder: (L, S, A, S), p2(s''|s', a; l_i).
    latencies: L latency values as fractions of the period, in [0, 1).
    mode: "fixed" (latency constant across the episode) or "iid"
          (redrawn uniformly from the set at each period).
    """

    reward: np.ndarray
    kernel_latency: np.ndarray
    kernel_remainder: np.ndarray
    latencies: tuple
    gamma: float
    mode: str = "fixed"

    def __post_init__(self):
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.kernel_latency = np.asarray(self.kernel_latency, dtype=np.float64)
        self.kernel_remainder = np.asarray(self.kernel_remainder, dtype=np.float64)
        self.latencies = tuple(float(l) for l in self.latencies)
        if self.reward.ndim != 2:
            raise ContractViolationError("reward must be (n_states, n_actions)")
        S, A = self.reward.shape
        L = len(self.latencies)
        if self.kernel_latency.shape != (L, S, A, S):
            raise ContractViolationError(
                f"kernel_latency shape {self.kernel_latency.shape}, want {(L, S, A, S)}"
            )
        if self.kernel_remainder.shape != (L, S, A, S):
            raise ContractViolationError(
                f"kernel_remainder shape {self.kernel_remainder.shape}, want {(L, S, A, S)}"
            )
        if self.mode not in ("fixed", "iid"):
            raise ContractViolationError(f"mode must be 'fixed' or 'iid', got {self.mode!r}")
        # gamma = 1.0 is admitted so certificates can probe the
        # non-expansive boundary; fixed-point solvers require < 1.
        if not (0.0 < self.gamma <= 1.0):
            raise ContractViolationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if np.any(self.reward < 0.0) or np.any(self.reward > 1.0):
            raise ContractViolationError("reward entries must lie in [0, 1]")
        for i, l in enumerate(self.latencies):
            if not (0.0 <= l < 1.0):
                raise ContractViolationError(f"latency fraction {l} outside [0, 1)")
            _check_stochastic(self.kernel_latency[i], f"kernel_latency[{i}]")
            _check_stochastic(self.kernel_remainder[i], f"kernel_remainder[{i}]")
            if l == 0.0:
                eye = np.broadcast_to(np.eye(S)[:, None, :], (S, A, S))
                if np.max(np.abs(self.kernel_latency[i] - eye)) > STOCH_EPS:
                    raise ContractViolationError(
                        "latency kernel at l=0 must be the identity: nothing moves "
                        "during a zero-length latency window"
                    )

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def n_latencies(self) -> int:
        return len(self.latencies)


@dataclass
class QTable:
    """Q values indexed (state, prev_action, action, latency_index)."""

    values: np.ndarray

    @classmethod
    def zeros(cls, mdp: FiniteConcurrentMdp) -> "QTable":
        S, A, L = mdp.n_states, mdp.n_actions, mdp.n_latencies
        return cls(np.zeros((S, A, A, L)))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 4:
            raise ContractViolationError("QTable values must be 4-d (s, a_prev, a, l)")
        if not np.all(np.isfinite(self.values)):
            raise ContractViolationError("QTable entries must be finite")


def random_mdp(
    rng: np.random.Generator,
    n_states: int,
    n_actions: int,
    latencies: tuple = (0.0, 0.5),
    gamma: float = 0.9,
    mode: str = "fixed",
) -> FiniteConcurrentMdp:
    """Random concurrent MDP with Dirichlet rows.

    The latency kernel blends identity with a random kernel by the
    latency fraction, so l = 0 is exactly the identity and larger
    latencies move more probability mass off the diagonal.
    """
    S, A, L = n_states, n_actions, len(latencies)
    reward = rng.random((S, A))
    eye = np.broadcast_to(np.eye(S)[:, None, :], (S, A, S))
    p1 = np.empty((L, S, A, S))
    p2 = np.empty((L, S, A, S))
    for i, l in enumerate(latencies):
        base = rng.dirichlet(np.ones(S), size=(S, A))
        p1[i] = (1.0 - l) * eye + l * base
        p2[i] = rng.dirichlet(np.ones(S), size=(S, A))
    return FiniteConcurrentMdp(reward, p1, p2, tuple(latencies), gamma, mode)


def _remainder_hop(p2_slice: np.ndarray, cont: np.ndarray) -> np.ndarray:
    # M[s', a] = sum_s'' p2(s''|s', a) cont(s'', a); shared by both
    # operators so the l=0 reduction is exact to the last bit.
    return np.einsum("sat,ta->sa", p2_slice, cont)


def _continuation(mdp: FiniteConcurrentMdp, q: np.ndarray, slice_idx: int) -> np.ndarray:
    # cont[s'', a] = value of arriving at s'' while a executes.
    v_max = q.max(axis=2)  # (S, A_prev, L)
    if mdp.mode == "fixed":
        return v_max[:, :, slice_idx]
    return v_max.mean(axis=2)


def concurrent_backup(
    mdp: FiniteConcurrentMdp,
    q: np.ndarray,
    discount_override: float | None = None,
) -> np.ndarray:
    """One application of the concurrent Bellman optimality operator.

    discount_override replaces gamma (diagnostics only; the certificate
    uses it to demonstrate that a discount-free operator fails).
    """
    q = np.asarray(q, dtype=np.float64)
    S, A, L = mdp.n_states, mdp.n_actions, mdp.n_latencies
    if q.shape != (S, A, A, L):
        raise ContractViolationError(f"q shape {q.shape}, want {(S, A, A, L)}")
    gamma = mdp.gamma if discount_override is None else float(discount_override)
    out = np.empty_like(q)
    for i, l in enumerate(mdp.latencies):
        cont = _continuation(mdp, q, i)
        hop2 = _remainder_hop(mdp.kernel_remainder[i], cont)  # (S', A)
        hop1 = np.einsum("xps,sa->xpa", mdp.kernel_latency[i], hop2)
        disc = (gamma ** l) * (gamma ** (1.0 - l))
        out[:, :, :, i] = mdp.reward[:, :, None] + disc * hop1
    return out


def blocking_backup(mdp: FiniteConcurrentMdp, q3: np.ndarray) -> np.ndarray:
    """Classical one-hop operator on the l = 0 slice, no latency drift.

    q3 is a (S, A_prev, A) table; returns the same shape.  The MDP must
    contain latency 0 so the remainder kernel at zero latency exists.
    """
    q3 = np.asarray(q3, dtype=np.float64)
    if 0.0 not in mdp.latencies:
        raise ContractViolationError("blocking_backup needs latency 0 in the latency set")
    i0 = mdp.latencies.index(0.0)
    S, A = mdp.n_states, mdp.n_actions
    if q3.shape != (S, A, A):
        raise ContractViolationError(f"q3 shape {q3.shape}, want {(S, A, A)}")
    cont = q3.max(axis=2)  # (S'', a)
    hop2 = _remainder_hop(mdp.kernel_remainder[i0], cont)
    return mdp.reward[:, :, None] + mdp.gamma * hop2[:, None, :]


def value_iteration(
    mdp: FiniteConcurrentMdp, tol: float = 1e-12, max_iter: int = 200_000
) -> tuple[np.ndarray, int]:
    """Iterate the concurrent backup to its fixed point."""
    if mdp.gamma >= 1.0:
        raise ContractViolationError("value iteration needs gamma < 1 to converge")
    q = QTable.zeros(mdp).values
    for it in range(1, max_iter + 1):
        q_next = concurrent_backup(mdp, q)
        gap = np.max(np.abs(q_next - q))
        q = q_next
        if gap <= tol:
            return q, it
    raise NumericDivergenceError(
        f"value iteration did not reach tol={tol} in {max_iter} iterations (gap {gap:.3e})"
    )


def greedy_policy(mdp: FiniteConcurrentMdp, q: np.ndarray) -> np.ndarray:
    """Argmax action table, indexed (state, prev_action, latency_index)."""
    return np.argmax(q, axis=2)


# ---------------------------------------------------------------------------
# Monte Carlo cross-check of the operator's generative semantics.


def _sample_rows(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # cdf_rows: (N, S) inclusive cumsums, u: (N,) uniforms.
    idx = (u[:, None] >= cdf_rows).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def _mc_rollout_batch(
    mdp: FiniteConcurrentMdp,
    policy: np.ndarray,
    s: np.ndarray,
    ap: np.ndarray,
    a: np.ndarray,
    lat: np.ndarray,
    horizon: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Discounted returns for a batch of rollouts with per-row starts.

    Simulates the generative process the backup encodes: charge
    r(s, a_prev) at each capture, hop through p1 then p2, advance the
    executing action, redraw latency when mode is iid, then follow
    policy.  Per-period discount is gamma.
    """
    N = s.shape[0]
    L = mdp.n_latencies
    cdf1 = np.cumsum(mdp.kernel_latency, axis=-1)
    cdf2 = np.cumsum(mdp.kernel_remainder, axis=-1)
    s, ap, a, lat = s.copy(), ap.copy(), a.copy(), lat.copy()
    ret = np.zeros(N)
    disc = 1.0
    for _ in range(horizon):
        ret += disc * mdp.reward[s, ap]
        s1 = _sample_rows(cdf1[lat, s, ap], rng.random(N))
        s2 = _sample_rows(cdf2[lat, s1, a], rng.random(N))
        ap = a
        s = s2
        if mdp.mode == "iid":
            lat = rng.integers(0, L, size=N)
        a = policy[s, ap, lat]
        disc *= mdp.gamma
    return ret


def mc_q_estimate(
    mdp: FiniteConcurrentMdp,
    policy: np.ndarray,
    state: int,
    prev_action: int,
    action: int,
    latency_index: int,
    n_rollouts: int,
    horizon: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Monte Carlo estimate of Q^policy(state, prev_action, action, l).

    Returns (mean, standard error); horizon must make the truncated
    tail negligible relative to the standard error.
    """
    N = int(n_rollouts)
    full = np.full
    ret = _mc_rollout_batch(
        mdp,
        policy,
        full(N, state, dtype=np.int64),
        full(N, prev_action, dtype=np.int64),
        full(N, action, dtype=np.int64),
        full(N, latency_index, dtype=np.int64),
        horizon,
        rng,
    )
    se = float(np.std(ret, ddof=1) / np.sqrt(N)) if N > 1 else 0.0
    return float(np.mean(ret)), se


def mc_q_table(
    mdp: FiniteConcurrentMdp,
    policy: np.ndarray,
    n_rollouts: int,
    horizon: int,
    rng: np.random.Generator,
    max_batch_rows: int = 1_000_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo estimates for every (s, a_prev, a, l) tuple at once.

    Chunks tuples so no batch exceeds max_batch_rows rollouts; returns
    (means, standard errors) with the QTable index layout.
    """
    S, A, L = mdp.n_states, mdp.n_actions, mdp.n_latencies
    tuples = [(s, ap, a, li) for s in range(S) for ap in range(A) for a in range(A) for li in range(L)]
    means = np.zeros((S, A, A, L))
    ses = np.zeros((S, A, A, L))
    N = int(n_rollouts)
    per_chunk = max(1, max_batch_rows // N)
    for start in range(0, len(tuples), per_chunk):
        chunk = tuples[start : start + per_chunk]
        s0 = np.repeat([t[0] for t in chunk], N).astype(np.int64)
        ap0 = np.repeat([t[1] for t in chunk], N).astype(np.int64)
        a0 = np.repeat([t[2] for t in chunk], N).astype(np.int64)
        l0 = np.repeat([t[3] for t in chunk], N).astype(np.int64)
        ret = _mc_rollout_batch(mdp, policy, s0, ap0, a0, l0, horizon, rng).reshape(
            len(chunk), N
        )
        for row, (s, ap, a, li) in enumerate(chunk):
            means[s, ap, a, li] = ret[row].mean()
            ses[s, ap, a, li] = ret[row].std(ddof=1) / np.sqrt(N)
    return means, ses


# ---------------------------------------------------------------------------
# Contraction certificates.


@dataclass(frozen=True)
class SliceReport:
    latency: float
    modulus: float
    bound: float
    ok: bool


@dataclass(frozen=True)
class ContractionReport:
    gamma: float
    mode: str
    n_pairs: int
    slices: tuple
    max_observed_modulus: float
    bound: float
    passed: bool


def certified_bound(gamma: float, latency: float) -> float:
    # The l = 0 slice is the classical operator, whose sharp rate is
    # gamma; positive-latency slices contract at least as fast as
    # gamma^l because the latency hop burns l of the period first.
    return gamma if latency == 0.0 else gamma ** latency


def contraction_certificate(
    mdp: FiniteConcurrentMdp,
    n_pairs: int,
    rng: np.random.Generator,
    tol: float = 1e-12,
    q_scale: float = 10.0,
    discount_override: float | None = None,
) -> ContractionReport:
    """Measure per-slice contraction moduli on random Q pairs.

    modulus_i = max over pairs of ||(T Q1 - T Q2)_i||_inf / ||Q1 - Q2||_inf
    with the denominator taken in the global sup norm (slices couple
    through the continuation when mode is iid).  Pairs with a zero
    denominator are resampled.  The first pair is a constant offset
    Q2 = Q1 + c: the operator maps it to a gap of exactly one period's
    discount, so the measured modulus is sharp and a sabotaged
    (discount-free) operator cannot slip under the bound.
    """
    S, A, L = mdp.n_states, mdp.n_actions, mdp.n_latencies
    moduli = np.zeros(L)
    pairs_done = 0
    while pairs_done < n_pairs:
        q1 = rng.uniform(-q_scale, q_scale, size=(S, A, A, L))
        if pairs_done == 0:
            q2 = q1 + rng.uniform(0.5, q_scale)
        else:
            q2 = rng.uniform(-q_scale, q_scale, size=(S, A, A, L))
        den = np.max(np.abs(q1 - q2))
        if den == 0.0:
            continue
        diff = np.abs(
            concurrent_backup(mdp, q1, discount_override)
            - concurrent_backup(mdp, q2, discount_override)
        )
        moduli = np.maximum(moduli, diff.max(axis=(0, 1, 2)) / den)
        pairs_done += 1
    slices = []
    for i, l in enumerate(mdp.latencies):
        b = certified_bound(mdp.gamma, l)
        slices.append(SliceReport(l, float(moduli[i]), b, bool(moduli[i] <= b + tol)))
    # passed is the authoritative per-slice check; the scalar summary
    # is the loosest certified rate across slices.
    return ContractionReport(
        gamma=mdp.gamma,
        mode=mdp.mode,
        n_pairs=n_pairs,
        slices=tuple(slices),
        max_observed_modulus=float(max(srep.modulus for srep in slices)),
        bound=float(max(srep.bound for srep in slices)),
        passed=all(srep.ok for srep in slices),
    )


# ---------------------------------------------------------------------------
# Refinement family: the same latency window resolved at k sub-steps.
# All levels share the end-of-window kernel, so refining only changes
# the quadrature of the reward integral over the window.


@dataclass
class RefinementFamily:
    """Operators T_k that resolve the latency window at k sub-steps.

    reward: (S, A) with columns indexed by the executing action b.
    m_fine: (A, S, S), one fine-step kernel per executing action.
    k_max: finest level; admissible k are the divisors of k_max.
    t_as_fraction: latency window as a fraction of the period.
    """

    reward: np.ndarray
    m_fine: np.ndarray
    gamma: float
    t_as_fraction: float
    k_max: int
    _powers: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.m_fine = np.asarray(self.m_fine, dtype=np.float64)
        S, A = self.reward.shape
        if self.m_fine.shape != (A, S, S):
            raise ContractViolationError(
                f"m_fine shape {self.m_fine.shape}, want {(A, S, S)}"
            )
        _check_stochastic(self.m_fine, "m_fine")
        if not (0.0 < self.t_as_fraction < 1.0):
            raise ContractViolationError("t_as_fraction must lie in (0, 1)")
        p = [np.broadcast_to(np.eye(S), (A, S, S)).copy()]
        for _ in range(self.k_max):
            p.append(np.einsum("ast,atu->asu", p[-1], self.m_fine))
        self._powers = p

    def levels(self) -> tuple:
        return tuple(k for k in range(1, self.k_max + 1) if self.k_max % k == 0)


def make_refinement_family(
    rng: np.random.Generator,
    n_states: int,
    n_actions: int,
    gamma: float = 0.9,
    t_as_fraction: float = 0.3,
    k_max: int = 8,
    mixing_rate: float = 0.5,
) -> RefinementFamily:
    """Random family whose fine kernel is a short exposure of a CTMC.

    m_fine = I + rate * dt * (P - I) with dt = t_as_fraction / k_max,
    the uniformization of a continuous-time jump process with rate
    `mixing_rate` per unit time.  The fine kernel approaching identity
    as the step shrinks is what makes the window integrand smooth and
    the level-k quadratures Cauchy in k.
    """
    dt = t_as_fraction / k_max
    if not (0.0 <= mixing_rate * dt <= 1.0):
        raise ContractViolationError(
            f"mixing_rate {mixing_rate} too large for fine step {dt}"
        )
    reward = rng.random((n_states, n_actions))
    eye = np.eye(n_states)
    m = np.empty((n_actions, n_states, n_states))
    for b in range(n_actions):
        jump = rng.dirichlet(np.ones(n_states), size=n_states)
        m[b] = eye + mixing_rate * dt * (jump - eye)
    return RefinementFamily(reward, m, gamma, t_as_fraction, k_max)


def refinement_backup(fam: RefinementFamily, k: int, q: np.ndarray) -> np.ndarray:
    """T_k: trapezoid reward quadrature at k+1 nodes, then the full hop.

    Every level bootstraps through the same end-of-window kernel
    m_fine^k_max with discount gamma^t_as_fraction, so the contraction
    modulus is level-independent and refinement only sharpens the
    reward integral (error O(1/k^2)).
    """
    if fam.k_max % k != 0:
        raise ContractViolationError(f"level {k} must divide k_max={fam.k_max}")
    q = np.asarray(q, dtype=np.float64)
    S, A = fam.reward.shape
    if q.shape != (S, A, A):
        raise ContractViolationError(f"q shape {q.shape}, want {(S, A, A)}")
    stride = fam.k_max // k
    tau = fam.t_as_fraction
    r_window = np.zeros((S, A))
    for j in range(k + 1):
        w = (0.5 if j in (0, k) else 1.0) / k
        drift = np.stack(
            [fam._powers[j * stride][b] @ fam.reward[:, b] for b in range(A)], axis=1
        )
        r_window += w * (fam.gamma ** (tau * j / k)) * drift
    r_window *= tau
    v_max = q.max(axis=2)  # (S', A)
    hop = np.stack(
        [fam._powers[fam.k_max][b] @ v_max for b in range(A)], axis=1
    )  # (S, b, A)
    return r_window[:, :, None] + (fam.gamma ** tau) * hop


@dataclass(frozen=True)
class RefinementReport:
    gamma: float
    t_as_fraction: float
    levels: tuple
    moduli: tuple
    bound: float
    gaps: tuple  # sup gap between consecutive levels' fixed points
    cauchy_gap: float  # gap between the last two levels
    passed: bool


def refinement_certificate(
    fam: RefinementFamily,
    n_pairs: int,
    rng: np.random.Generator,
    levels: tuple | None = None,
    modulus_tol: float = 1e-9,
    cauchy_tol: float = 1e-3,
    q_scale: float = 10.0,
) -> RefinementReport:
    """Per-level contraction moduli plus fixed-point Cauchy check.

    Of each level's pairs, the first is a constant offset (sharp
    modulus, see contraction_certificate); the report passes when every
    modulus respects gamma^t_as_fraction and the fixed points of the
    two finest levels agree within cauchy_tol.
    """
    levels = fam.levels() if levels is None else tuple(levels)
    if len(levels) < 2 or list(levels) != sorted(levels):
        raise ContractViolationError("need at least two strictly increasing levels")
    S, A = fam.reward.shape
    bound = fam.gamma ** fam.t_as_fraction
    moduli = []
    for k in levels:
        worst = 0.0
        for pair in range(n_pairs):
            q1 = rng.uniform(-q_scale, q_scale, size=(S, A, A))
            if pair == 0:
                q2 = q1 + rng.uniform(0.5, q_scale)
            else:
                q2 = rng.uniform(-q_scale, q_scale, size=(S, A, A))
            den = np.max(np.abs(q1 - q2))
            if den == 0.0:
                continue
            num = np.max(
                np.abs(refinement_backup(fam, k, q1) - refinement_backup(fam, k, q2))
            )
            worst = max(worst, num / den)
        moduli.append(worst)
    fps = [refinement_fixed_point(fam, k) for k in levels]
    gaps = tuple(
        float(np.max(np.abs(fps[i + 1] - fps[i]))) for i in range(len(fps) - 1)
    )
    cauchy = gaps[-1]
    passed = all(m <= bound + modulus_tol for m in moduli) and cauchy < cauchy_tol
    return RefinementReport(
        gamma=fam.gamma,
        t_as_fraction=fam.t_as_fraction,
        levels=levels,
        moduli=tuple(float(m) for m in moduli),
        bound=bound,
        gaps=gaps,
        cauchy_gap=cauchy,
        passed=passed,
    )


def refinement_fixed_point(
    fam: RefinementFamily, k: int, tol: float = 1e-13, max_iter: int = 200_000
) -> np.ndarray:
    S, A = fam.reward.shape
    q = np.zeros((S, A, A))
    for _ in range(max_iter):
        q_next = refinement_backup(fam, k, q)
        gap = np.max(np.abs(q_next - q))
        q = q_next
        if gap <= tol:
            return q
    raise NumericDivergenceError(f"refinement fixed point stalled at gap {gap:.3e}")
