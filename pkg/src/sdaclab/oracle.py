"""Exact solvers on tabular MDPs.

Everything here enumerates states (and, for gradients and Fisher matrices, state/joint-action
pairs), so it is only used on desk-scale problems: as ground truth in tests and for the
periodic diagnostics of a run.
"""

from __future__ import annotations

import dataclasses
import functools

import numpy as np
from loguru import logger
from scipy import linalg, sparse

from .errors import AssumptionViolation, CapacityError, ConfigurationError, MixingError
from .features import FeatureMap, FeatureSet, OneHotFeatures, Radii, SoftmaxPolicy
from .mamdp import TabularMAMDP
from .topology import WeightMatrix

STATIONARY_TOLERANCE = 1e-12
STATIONARY_MAX_ITER = 10**6
ENUMERATION_CAP = 10**5
FISHER_PARAMETER_CAP = 4096
EIGEN_TOLERANCE = 1e-12


@dataclasses.dataclass(frozen=True)
class PolicyKernel:
    """State chain ``P_theta(s' | s) = sum_a pi_theta(a | s) P(s' | s, a)`` with cached factors."""

    mdp: TabularMAMDP
    policy: SoftmaxPolicy

    @functools.cached_property
    def joint_policy(self) -> np.ndarray:
        """``pi_theta(a | s)`` over flattened joint actions, shape ``(|S|, |A|)``."""
        return self.policy.joint_probs()

    @functools.cached_property
    def mean_rewards(self) -> np.ndarray:
        """Network-mean reward table ``r_bar(s, a)``."""
        return self.mdp.rewards.mean(axis=0)

    @functools.cached_property
    def policy_reward(self) -> np.ndarray:
        """``r_bar_theta(s) = E_{a ~ pi}[r_bar(s, a)]``."""
        return np.sum(self.joint_policy * self.mean_rewards, axis=1)

    @functools.cached_property
    def matrix(self) -> np.ndarray:
        """Dense ``|S| x |S|`` state transition matrix under the policy."""
        n_states, n_joint = self.mdp.n_states, self.mdp.n_joint_actions
        rows = np.repeat(np.arange(n_states), n_joint)
        averaging = sparse.csr_array(
            (self.joint_policy.ravel(), (rows, np.arange(self.mdp.n_pairs))), shape=(n_states, self.mdp.n_pairs)
        )
        chain = averaging @ self.mdp.transition
        return chain.toarray() if sparse.issparse(chain) else np.asarray(chain)

    @functools.cached_property
    def stationary(self) -> np.ndarray:
        """Stationary distribution ``mu_theta``."""
        return stationary_dist(self)

    @functools.cached_property
    def values(self) -> np.ndarray:
        """Exact ``V_theta``."""
        return linalg.solve(np.eye(self.mdp.n_states) - self.mdp.gamma * self.matrix, self.policy_reward)

    @functools.cached_property
    def visitation(self) -> np.ndarray:
        """Discounted visitation ``d_theta`` from ``mu_0``."""
        return discounted_visitation(self.mdp, self.policy, kernel=self)

    @functools.cached_property
    def pair_mass(self) -> np.ndarray:
        """``mu_theta(s) pi_theta(a | s)`` flattened over pairs."""
        return (self.stationary[:, None] * self.joint_policy).ravel()


def _kernel(mdp: TabularMAMDP, policy: SoftmaxPolicy, kernel: PolicyKernel | None) -> PolicyKernel:
    return kernel if kernel is not None else PolicyKernel(mdp, policy)


def stationary_dist(
    kernel: PolicyKernel | np.ndarray,
    tolerance: float = STATIONARY_TOLERANCE,
    max_iter: int = STATIONARY_MAX_ITER,
    start: np.ndarray | None = None,
) -> np.ndarray:
    """Stationary distribution by power iteration from ``start`` (default: the uniform vector).

    Learning runs pass the law of the previous policy as ``start``.

    Examples:
        >>> stationary_dist(np.array([[0.9, 0.1], [0.2, 0.8]])).round(6).tolist()
        [0.666667, 0.333333]

    Raises:
        MixingError: If the residual ``max |mu P - mu|`` stays above ``tolerance``.

    """
    matrix = kernel.matrix if isinstance(kernel, PolicyKernel) else np.asarray(kernel, dtype=float)
    n = matrix.shape[0]
    mu = np.full(n, 1.0 / n) if start is None else np.asarray(start, dtype=float) / np.sum(start)
    for _ in range(max_iter):
        nxt = mu @ matrix
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - mu)) <= tolerance:
            return nxt
        mu = nxt
    raise MixingError(f"power iteration did not reach residual {tolerance} within {max_iter} iterations")


def discounted_visitation(
    mdp: TabularMAMDP,
    policy: SoftmaxPolicy,
    init_dist: np.ndarray | None = None,
    kernel: PolicyKernel | None = None,
) -> np.ndarray:
    """``d_theta = (1 - gamma) mu_0^T (I - gamma P_theta)^{-1}``."""
    kernel = _kernel(mdp, policy, kernel)
    init_dist = mdp.init_dist if init_dist is None else np.asarray(init_dist, dtype=float)
    system = np.eye(mdp.n_states) - mdp.gamma * kernel.matrix
    return (1.0 - mdp.gamma) * linalg.solve(system.T, init_dist)


def exact_value(mdp: TabularMAMDP, policy: SoftmaxPolicy, kernel: PolicyKernel | None = None) -> np.ndarray:
    """``V_theta = (I - gamma P_theta)^{-1} r_bar_theta``."""
    return _kernel(mdp, policy, kernel).values


def objective(mdp: TabularMAMDP, policy: SoftmaxPolicy, kernel: PolicyKernel | None = None) -> float:
    """``J(theta) = E_{s0 ~ mu_0}[V_theta(s0)]``."""
    return float(mdp.init_dist @ _kernel(mdp, policy, kernel).values)


@dataclasses.dataclass(frozen=True)
class CriticSystem:
    """``A = E_mu[phi(s)(gamma phi(s') - phi(s))^T]``, ``b = E_mu[phi(s) r_bar(s, a)]``."""

    matrix: np.ndarray
    b: np.ndarray
    lambda_phi: float


@dataclasses.dataclass(frozen=True)
class RewardSystem:
    """``A = -E[phi_r phi_r^T]`` (kept as the Gram matrix, 1-D when diagonal) and ``b``."""

    gram: np.ndarray
    b: np.ndarray
    lambda_phi_r: float

    @property
    def matrix(self) -> np.ndarray:
        """Dense ``A_{theta, phi_r}``."""
        return -np.diag(self.gram) if self.gram.ndim == 1 else -self.gram


@dataclasses.dataclass(frozen=True)
class FixedPoint:
    """Solution of a linear system together with its curvature and bound check."""

    params: np.ndarray
    curvature: float
    residual: float
    bound: float

    @property
    def within_bound(self) -> bool:
        """Whether ``||params|| <= r_max / curvature``."""
        return float(np.linalg.norm(self.params)) <= self.bound * (1.0 + 1e-9)


def critic_system(
    mdp: TabularMAMDP,
    policy: SoftmaxPolicy,
    features: FeatureSet,
    kernel: PolicyKernel | None = None,
    curvature: bool = True,
) -> CriticSystem:
    """Assemble the TD(0) system under the stationary distribution.

    With ``curvature=False`` the eigenvalue ``lambda_phi`` is skipped and reported as NaN.
    """
    kernel = _kernel(mdp, policy, kernel)
    phi = features.critic.dense()
    mu = kernel.stationary
    matrix = phi.T @ (mu[:, None] * (mdp.gamma * kernel.matrix @ phi - phi))
    b = phi.T @ (mu * kernel.policy_reward)
    lambda_phi = -float(np.max(np.linalg.eigvalsh(0.5 * (matrix + matrix.T)))) if curvature else float("nan")
    return CriticSystem(matrix=matrix, b=b, lambda_phi=lambda_phi)


def reward_system(
    mdp: TabularMAMDP, policy: SoftmaxPolicy, features: FeatureSet, kernel: PolicyKernel | None = None
) -> RewardSystem:
    """Assemble the least-squares system of the reward estimator under ``mu_theta x pi_theta``."""
    kernel = _kernel(mdp, policy, kernel)
    mass = kernel.pair_mass
    gram = features.reward.gram(mass)
    b = features.reward.cross(mass, kernel.mean_rewards.ravel())
    curvature = float(np.min(gram)) if gram.ndim == 1 else float(np.min(np.linalg.eigvalsh(gram)))
    return RewardSystem(gram=gram, b=b, lambda_phi_r=curvature)


def optimal_critic(
    mdp: TabularMAMDP,
    policy: SoftmaxPolicy,
    features: FeatureSet,
    kernel: PolicyKernel | None = None,
    check: bool = True,
) -> FixedPoint:
    """TD fixed point ``omega*(theta) = -A^{-1} b``.

    ``check=False`` skips the definiteness test (and the bound) for periodic diagnostics.

    Raises:
        AssumptionViolation: If ``A`` is not negative definite.

    """
    system = critic_system(mdp, policy, features, kernel, curvature=check)
    if check and system.lambda_phi <= EIGEN_TOLERANCE:
        raise AssumptionViolation(2, f"critic matrix is not negative definite (lambda_phi={system.lambda_phi:.3e})")
    omega = linalg.solve(system.matrix, -system.b)
    residual = float(np.linalg.norm(system.matrix @ omega + system.b))
    return FixedPoint(params=omega, curvature=system.lambda_phi, residual=residual, bound=mdp.r_max / system.lambda_phi)


def optimal_reward_estimator(
    mdp: TabularMAMDP, policy: SoftmaxPolicy, features: FeatureSet, kernel: PolicyKernel | None = None
) -> FixedPoint:
    """Least-squares fit ``lambda*(theta)`` of the mean reward.

    Raises:
        AssumptionViolation: If the reward Gram matrix is singular.

    """
    system = reward_system(mdp, policy, features, kernel)
    if system.lambda_phi_r <= EIGEN_TOLERANCE:
        raise AssumptionViolation(2, f"reward matrix is not negative definite (lambda={system.lambda_phi_r:.3e})")
    if system.gram.ndim == 1:
        lam = system.b / system.gram
        residual = float(np.linalg.norm(system.gram * lam - system.b))
    else:
        lam = linalg.solve(system.gram, system.b, assume_a="pos")
        residual = float(np.linalg.norm(system.gram @ lam - system.b))
    bound = mdp.r_max / system.lambda_phi_r
    return FixedPoint(params=lam, curvature=system.lambda_phi_r, residual=residual, bound=bound)


def _check_enumeration(mdp: TabularMAMDP, cap: int) -> None:
    if mdp.n_pairs > cap:
        raise CapacityError(f"{mdp.n_pairs} state/joint-action pairs exceed the enumeration cap {cap}")


def advantages(mdp: TabularMAMDP, policy: SoftmaxPolicy, kernel: PolicyKernel | None = None) -> np.ndarray:
    """``A_theta(s, a) = r_bar(s, a) + gamma E[V(s')] - V(s)``, shape ``(|S|, |A|)``."""
    kernel = _kernel(mdp, policy, kernel)
    successor = (mdp.transition @ kernel.values).reshape(mdp.n_states, mdp.n_joint_actions)
    return kernel.mean_rewards + mdp.gamma * successor - kernel.values[:, None]


def _agent_marginal(mdp: TabularMAMDP, table: np.ndarray, agent: int) -> np.ndarray:
    """Sum a ``(|S|, |A|)`` table over every action except agent ``agent``'s."""
    shaped = table.reshape((mdp.n_states, *mdp.action_counts))
    others = tuple(1 + j for j in range(mdp.n_agents) if j != agent)
    return shaped.sum(axis=others)


def _score_expectation(policy: SoftmaxPolicy, agent: int, weights: np.ndarray) -> np.ndarray:
    """``sum_{s,b} w[s,b] psi_i(s, b)`` for a ``(|S|, |A^i|)`` weight table."""
    x = policy.feature_matrix(agent)
    probs = policy.all_probs(agent)
    centered = weights - probs * weights.sum(axis=1, keepdims=True)
    return np.asarray(x.T @ centered.ravel()).ravel()


def exact_policy_gradient(
    mdp: TabularMAMDP,
    policy: SoftmaxPolicy,
    agent: int | None = None,
    kernel: PolicyKernel | None = None,
    cap: int = ENUMERATION_CAP,
) -> np.ndarray:
    """``grad_{theta_i} J = E_{s ~ d, a ~ pi}[A_theta(s, a) psi_i(s, a_i)] / (1 - gamma)`` by enumeration.

    Returns the gradient of one agent, or the stacked ``(N, d_theta)`` gradient when ``agent`` is None.

    Raises:
        CapacityError: If the pair count exceeds ``cap``.

    """
    _check_enumeration(mdp, cap)
    kernel = _kernel(mdp, policy, kernel)
    weights = kernel.visitation[:, None] * kernel.joint_policy * advantages(mdp, policy, kernel) / (1.0 - mdp.gamma)
    agents = range(mdp.n_agents) if agent is None else [agent]
    grads = np.stack([_score_expectation(policy, i, _agent_marginal(mdp, weights, i)) for i in agents])
    return grads if agent is None else grads[0]


def fisher_matrix(
    mdp: TabularMAMDP,
    policy: SoftmaxPolicy,
    kernel: PolicyKernel | None = None,
    cap: int = ENUMERATION_CAP,
    parameter_cap: int = FISHER_PARAMETER_CAP,
) -> np.ndarray:
    """``F(theta) = E_{s ~ d, a ~ pi}[psi psi^T]`` over the stacked parameters.

    Scores of distinct agents are uncorrelated given the state, so ``F`` is block diagonal.

    Raises:
        CapacityError: If the pair count or the parameter count exceeds its cap.

    """
    _check_enumeration(mdp, cap)
    n_params = policy.n_agents * policy.d_theta
    if n_params > parameter_cap:
        raise CapacityError(f"Fisher matrix of {n_params} parameters exceeds the cap {parameter_cap}")
    d = _kernel(mdp, policy, kernel).visitation
    blocks = []
    for i in range(policy.n_agents):
        x = policy.feature_matrix(i)
        probs = policy.all_probs(i)
        n_actions = policy.action_counts[i]
        mass = (d[:, None] * probs).ravel()
        second = x.T @ (x.multiply(mass[:, None]) if sparse.issparse(x) else mass[:, None] * x)
        rows = np.repeat(np.arange(policy.n_states), n_actions)
        averaging = sparse.csr_array((probs.ravel(), (rows, np.arange(rows.size))), shape=(policy.n_states, rows.size))
        mean_x = averaging @ x
        mean_x = mean_x.toarray() if sparse.issparse(mean_x) else np.asarray(mean_x)
        second = second.toarray() if sparse.issparse(second) else np.asarray(second)
        blocks.append(second - mean_x.T @ (d[:, None] * mean_x))
    fisher = linalg.block_diag(*blocks)
    return 0.5 * (fisher + fisher.T)


@dataclasses.dataclass(frozen=True)
class NpgDirection:
    """Exact natural gradient direction with conditioning metadata."""

    h: np.ndarray
    residual: float
    lambda_min: float
    regularized: bool


def exact_npg_direction(
    mdp: TabularMAMDP,
    policy: SoftmaxPolicy,
    ridge: float = 0.0,
    tolerance: float = 1e-10,
    kernel: PolicyKernel | None = None,
) -> NpgDirection:
    """``h* = F(theta)^{-1} grad J(theta)``, stacked as ``(N, d_theta)``.

    A singular Fisher matrix (the tabular softmax is invariant to per-state logit shifts) is
    inverted on its range, or regularized with ``ridge`` when that is positive; either case is
    flagged in the result.
    """
    kernel = _kernel(mdp, policy, kernel)
    fisher = fisher_matrix(mdp, policy, kernel)
    grad = exact_policy_gradient(mdp, policy, kernel=kernel).ravel()
    eigvals, eigvecs = np.linalg.eigh(fisher)
    lambda_min = float(eigvals[0])
    if ridge > 0:
        h = linalg.solve(fisher + ridge * np.eye(fisher.shape[0]), grad, assume_a="pos")
        regularized = True
    elif lambda_min > tolerance:
        h = linalg.solve(fisher, grad, assume_a="pos")
        regularized = False
    else:
        keep = eigvals > tolerance
        h = eigvecs[:, keep] @ ((eigvecs[:, keep].T @ grad) / eigvals[keep])
        regularized = True
    if regularized:
        logger.warning(f"Fisher matrix near singular (lambda_min={lambda_min:.3e}); direction regularized")
    residual = float(np.linalg.norm(fisher @ h - grad))
    return NpgDirection(
        h=h.reshape(policy.n_agents, policy.d_theta), residual=residual, lambda_min=lambda_min, regularized=regularized
    )


@dataclasses.dataclass(frozen=True)
class ApproximationError:
    """Approximation errors of the critic and reward classes at one policy."""

    critic: float
    reward_mean: float
    reward_max: float


def app_error(
    mdp: TabularMAMDP, policy: SoftmaxPolicy, features: FeatureSet, kernel: PolicyKernel | None = None
) -> ApproximationError:
    """Squared errors of the best linear critic and reward estimator at ``theta``.

    ``reward_mean`` averages over ``mu_theta x pi_theta``; ``reward_max`` takes the worst joint
    action per state and averages over ``mu_theta``.
    """
    kernel = _kernel(mdp, policy, kernel)
    mu = kernel.stationary
    omega = optimal_critic(mdp, policy, features, kernel).params
    lam = optimal_reward_estimator(mdp, policy, features, kernel).params
    critic = float(mu @ (kernel.values - features.critic.values(omega)) ** 2)
    squared = (kernel.mean_rewards - features.reward.values(lam).reshape(kernel.mean_rewards.shape)) ** 2
    return ApproximationError(
        critic=critic,
        reward_mean=float(kernel.pair_mass @ squared.ravel()),
        reward_max=float(mu @ squared.max(axis=1)),
    )


@dataclasses.dataclass(frozen=True)
class Diagnosis:
    """Oracle quantities logged at the diagnostics cadence; NaN when not computable."""

    critic_gap: float
    grad_norm_sq: float
    objective: float
    app_error_critic: float


def diagnose(mdp: TabularMAMDP, policy: SoftmaxPolicy, features: FeatureSet, omega_bar: np.ndarray) -> Diagnosis:
    """Exact gap ``||omega_bar - omega*(theta)||``, ``sum_i ||grad_i J||^2``, ``J`` and the critic error."""
    kernel = PolicyKernel(mdp, policy)
    nan = float("nan")
    try:
        value = objective(mdp, policy, kernel)
        omega_star = optimal_critic(mdp, policy, features, kernel, check=False).params
    except (MixingError, linalg.LinAlgError) as e:
        logger.warning(f"Skipping oracle diagnostics: {e}")
        return Diagnosis(critic_gap=nan, grad_norm_sq=nan, objective=nan, app_error_critic=nan)
    error = float(kernel.stationary @ (kernel.values - features.critic.values(omega_star)) ** 2)
    try:
        grad_norm_sq = float(np.sum(exact_policy_gradient(mdp, policy, kernel=kernel) ** 2))
    except CapacityError:
        grad_norm_sq = nan
    return Diagnosis(
        critic_gap=float(np.linalg.norm(omega_bar - omega_star)),
        grad_norm_sq=grad_norm_sq,
        objective=value,
        app_error_critic=error,
    )


@dataclasses.dataclass(frozen=True)
class AssumptionCheck:
    """One numerical check of a standing assumption.

    ``gating`` checks decide the validation outcome; the others are reported only.
    """

    assumption: int
    name: str
    value: float
    passed: bool
    gating: bool = True


def _second_eigenvalue_modulus(matrix: np.ndarray) -> float:
    moduli = np.sort(np.abs(np.linalg.eigvals(matrix)))[::-1]
    return float(moduli[1]) if moduli.size > 1 else 0.0


def validate_assumptions(
    mdp: TabularMAMDP,
    policy: SoftmaxPolicy,
    features: FeatureSet,
    weights: WeightMatrix,
    fisher: bool = False,
) -> list[AssumptionCheck]:
    """Evaluate the standing assumptions at one policy.

    Assumption 6 is only gating when ``fisher`` is set (natural actor-critic runs); it is judged
    on the span of the scores, where the natural gradient direction is solved.
    """
    kernel = PolicyKernel(mdp, policy)
    largest_reward = float(np.max(np.abs(mdp.rewards)))
    largest_feature = max(float(np.max(features.critic.norms())), float(np.max(features.reward.norms())))
    checks = [
        AssumptionCheck(1, "reward_bound", largest_reward, largest_reward <= mdp.r_max),
        AssumptionCheck(1, "feature_norm", largest_feature, largest_feature <= 1.0 + 1e-12),
    ]
    try:
        mu = kernel.stationary
        checks.append(AssumptionCheck(4, "stationary_min_mass", float(mu.min()), bool(mu.min() > 0)))
        modulus = _second_eigenvalue_modulus(kernel.matrix)
        checks.append(AssumptionCheck(4, "second_eigenvalue_modulus", modulus, modulus < 1.0 - 1e-12))
    except MixingError as e:
        logger.warning(str(e))
        checks.append(AssumptionCheck(4, "stationary_min_mass", float("nan"), False))
        return checks + [AssumptionCheck(5, "second_singular_value", weights.nu, weights.nu < 1.0)]

    critic = critic_system(mdp, policy, features, kernel)
    reward = reward_system(mdp, policy, features, kernel)
    checks.append(AssumptionCheck(2, "lambda_phi", critic.lambda_phi, critic.lambda_phi > EIGEN_TOLERANCE))
    checks.append(AssumptionCheck(2, "lambda_phi_r", reward.lambda_phi_r, reward.lambda_phi_r > EIGEN_TOLERANCE))
    checks.append(AssumptionCheck(5, "second_singular_value", weights.nu, weights.nu < 1.0))
    try:
        eigvals = np.linalg.eigvalsh(fisher_matrix(mdp, policy, kernel))
    except CapacityError as e:
        logger.warning(f"Skipping Fisher check: {e}")
        return checks
    top = float(eigvals[-1])
    span = eigvals[eigvals > 1e-10 * max(top, 1.0)]
    on_span = float(span.min()) if span.size else 0.0
    smallest = float(eigvals[0])
    checks.append(AssumptionCheck(6, "fisher_min_eigenvalue", smallest, smallest > 1e-10, gating=False))
    checks.append(AssumptionCheck(6, "fisher_min_eigenvalue_on_score_span", on_span, on_span > 0, gating=fisher))
    return checks


def critic_lipschitz_ratio(
    mdp: TabularMAMDP,
    features: FeatureSet,
    policy: SoftmaxPolicy,
    n_pairs: int = 1000,
    scale: float = 1.0,
    step: float = 1e-3,
    seed: int = 0,
) -> float:
    """Largest observed ``||omega*(theta1) - omega*(theta2)|| / ||theta1 - theta2||`` over random nearby pairs."""
    rng = np.random.default_rng(seed)
    ratio = 0.0
    for _ in range(n_pairs):
        theta1 = policy.theta + scale * rng.standard_normal(policy.theta.shape)
        delta = step * rng.standard_normal(policy.theta.shape)
        omega1 = optimal_critic(mdp, policy.with_theta(theta1), features).params
        omega2 = optimal_critic(mdp, policy.with_theta(theta1 + delta), features).params
        ratio = max(ratio, float(np.linalg.norm(omega1 - omega2) / np.linalg.norm(delta)))
    return ratio


def _is_one_hot(fmap: FeatureMap) -> bool:
    return isinstance(fmap, OneHotFeatures)


def default_radii(mdp: TabularMAMDP, features: FeatureSet, policy: SoftmaxPolicy, safety: float = 2.0) -> Radii:
    """Radii ``safety * r_max / lambda`` from the curvature at ``policy``.

    Raises:
        ConfigurationError: If either feature map is not one-hot.

    """
    if not (_is_one_hot(features.critic) and _is_one_hot(features.reward)):
        raise ConfigurationError("Random features need explicit projection radii ([radii] critic and reward)")
    kernel = PolicyKernel(mdp, policy)
    critic = optimal_critic(mdp, policy, features, kernel)
    reward = optimal_reward_estimator(mdp, policy, features, kernel)
    return Radii(critic=safety * critic.bound, reward=safety * reward.bound)
