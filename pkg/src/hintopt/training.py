"""Tabular softmax policy with supervised and group-relative policy-gradient updates."""

from __future__ import annotations

import csv
import os
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_hints, check_positive, check_sql_ids
from .engine import EngineRequest
from .errors import NonFiniteUpdate, SupportMismatch, UnknownHint, UnknownQuery
from .hints import Hint, HintMode
from .reward import GrpoConfig, gradient_coefficient, score_group

PROB_FLOOR = 1e-12


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def kl_divergence(p: Sequence[float], q: Sequence[float], floor: float = PROB_FLOOR) -> float:
    """KL(p || q) = sum p ln(p/q), with both sides floored at ``floor``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise SupportMismatch(f"distributions have different supports: {p.shape} vs {q.shape}")
    pf = np.maximum(p, floor)
    qf = np.maximum(q, floor)
    return float(max(0.0, np.sum(pf * np.log(pf / qf))))


class TabularPolicy:
    """Per-context logits over an enumerated hint space; pi = softmax(logits / temperature)."""

    def __init__(self, spaces: Mapping[str, Sequence[Hint]], temperature: float = 1.0,
                 logits: Mapping[str, np.ndarray] | None = None):
        check_positive(temperature, "temperature")
        self.temperature = float(temperature)
        self.spaces = {ctx: list(space) for ctx, space in spaces.items()}
        for ctx, space in self.spaces.items():
            if not space:
                raise ValueError(f"empty hint space for {ctx!r}")
        self._index = {ctx: {str(h): i for i, h in enumerate(space)} for ctx, space in self.spaces.items()}
        self.logits = {
            ctx: np.array(logits[ctx], dtype=float) if logits is not None else np.zeros(len(space))
            for ctx, space in self.spaces.items()
        }
        for ctx, z in self.logits.items():
            if z.shape != (len(self.spaces[ctx]),):
                raise SupportMismatch(f"logits for {ctx!r} do not match its hint space")

    @classmethod
    def uniform(cls, engine, sql_ids: Sequence[str], mode: HintMode | str = HintMode.JOIN_ORDER,
                temperature: float = 1.0) -> TabularPolicy:
        return cls({sid: engine.enumerate_hint_space(sid, mode) for sid in sql_ids}, temperature)

    @property
    def contexts(self) -> list[str]:
        return list(self.spaces)

    def copy(self) -> TabularPolicy:
        return TabularPolicy(self.spaces, self.temperature, {c: z.copy() for c, z in self.logits.items()})

    def _check(self, ctx: str) -> None:
        if ctx not in self.spaces:
            raise UnknownQuery(f"policy has no context {ctx!r}")

    def probs(self, ctx: str) -> np.ndarray:
        self._check(ctx)
        return softmax(self.logits[ctx] / self.temperature)

    def index(self, ctx: str, hint: Hint) -> int:
        self._check(ctx)
        try:
            return self._index[ctx][str(hint)]
        except KeyError:
            raise UnknownHint(f"{hint} is not in the hint space of {ctx!r}") from None

    def prob(self, ctx: str, hint: Hint) -> float:
        return float(self.probs(ctx)[self.index(ctx, hint)])

    def greedy(self, ctx: str) -> Hint:
        return self.spaces[ctx][int(np.argmax(self.logits[ctx]))]

    def sample(self, ctx: str, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(len(self.spaces[ctx]), size=n, replace=True, p=self.probs(ctx))


def policy_kl(p: TabularPolicy, q: TabularPolicy, contexts: Sequence[str] | None = None) -> float:
    """Mean over contexts of KL(p || q)."""
    contexts = list(contexts) if contexts is not None else p.contexts
    if set(contexts) - set(q.contexts):
        raise SupportMismatch("policies cover different contexts")
    return float(np.mean([kl_divergence(p.probs(c), q.probs(c)) for c in contexts]))


# ---------------------------------------------------------------------------
# supervised step


@dataclass(frozen=True)
class SftPair:
    context: str
    reference_hint: Hint
    prompt: str = ""


def sft_step(policy: TabularPolicy, batch: Sequence[SftPair], learning_rate: float) -> tuple[TabularPolicy, float]:
    """One gradient step on the mean negative log-likelihood of the batch.

    Returns the updated copy of ``policy`` and the pre-step mean NLL.
    """
    if not batch:
        raise ValueError("empty SFT batch")
    targets = [(pair.context, policy.index(pair.context, pair.reference_hint)) for pair in batch]
    new = policy.copy()
    nll = 0.0
    for ctx, idx in targets:
        pi = policy.probs(ctx)
        nll -= np.log(max(pi[idx], PROB_FLOOR))
        grad = -pi
        grad[idx] += 1.0
        new.logits[ctx] += learning_rate * grad / (policy.temperature * len(targets))
    _check_finite(new)
    return new, nll / len(targets)


def _check_finite(policy: TabularPolicy) -> None:
    for ctx, z in policy.logits.items():
        if not np.all(np.isfinite(z)):
            raise NonFiniteUpdate(f"non-finite logits for {ctx!r}")


# ---------------------------------------------------------------------------
# group-relative policy optimization


@dataclass
class TrainingLog:
    step: int
    mean_reward: float
    kl: float
    best_prob: float


@dataclass
class QGrpoResult:
    policy: TabularPolicy
    logs: list[TrainingLog] = field(default_factory=list)


def _oracle_indices(policy: TabularPolicy, engine) -> dict[str, int | None]:
    out: dict[str, int | None] = {}
    for ctx, space in policy.spaces.items():
        if hasattr(engine, "true_latency"):
            out[ctx] = int(np.argmin([engine.true_latency(ctx, h) for h in space]))
        else:
            out[ctx] = None
    return out


def qgrpo_train(
    policy_init: TabularPolicy,
    engine,
    sql_ids: Sequence[str] | None = None,
    config: GrpoConfig | None = None,
    reference: TabularPolicy | None = None,
    timeout_ms: float = 10_000.0,
) -> QGrpoResult:
    """Group-relative policy optimization on a tabular policy.

    Each step snapshots the old policy, samples a batch of contexts, draws
    ``group_size`` hints per context from the snapshot, scores them against
    the hint-less baseline, and ascends the clipped surrogate with a KL pull
    toward ``reference`` (``policy_init`` by default).
    """
    config = config or GrpoConfig()
    contexts = list(sql_ids) if sql_ids is not None else policy_init.contexts
    for ctx in contexts:
        policy_init._check(ctx)
    ref = reference if reference is not None else policy_init.copy()
    theta = policy_init.copy()
    rng = np.random.default_rng(config.seed)
    oracle = _oracle_indices(theta, engine)
    batch_size = len(contexts) if config.batch_size is None else min(config.batch_size, len(contexts))
    logs: list[TrainingLog] = []

    for step in range(1, config.steps + 1):
        old = theta.copy()
        batch = [contexts[i] for i in sorted(rng.choice(len(contexts), size=batch_size, replace=False))]
        groups = {}
        rewards = []
        for ctx in batch:
            baseline = engine.execute(EngineRequest(ctx, hint=None, timeout_ms=timeout_ms)).latency_ms
            picks = old.sample(ctx, config.group_size, rng)
            latencies = [
                engine.execute(EngineRequest(ctx, hint=old.spaces[ctx][i], timeout_ms=timeout_ms)).latency_ms
                for i in picks
            ]
            group = score_group(baseline, latencies, sql_id=ctx, std_floor=config.std_floor)
            groups[ctx] = (picks, group.advantages)
            rewards.extend(group.rewards)

        for _ in range(config.inner_updates):
            grads = {ctx: _context_gradient(theta, old, ref, ctx, *groups[ctx], config) for ctx in batch}
            norm = float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))
            scale = 1.0
            if config.max_grad_norm is not None and norm > config.max_grad_norm:
                scale = config.max_grad_norm / norm
            for ctx, g in grads.items():
                theta.logits[ctx] = theta.logits[ctx] + config.learning_rate * scale * g
            _check_finite(theta)

        best = [theta.probs(c)[oracle[c]] for c in contexts if oracle[c] is not None]
        logs.append(TrainingLog(
            step=step,
            mean_reward=float(np.mean(rewards)),
            kl=policy_kl(theta, ref, contexts),
            best_prob=float(np.mean(best)) if best else float("nan"),
        ))
    return QGrpoResult(theta, logs)


def _context_gradient(theta, old, ref, ctx, picks, advantages, config: GrpoConfig) -> np.ndarray:
    """Mean over the group of c_i * grad log pi(h_i), with c_i from the clipped surrogate and KL term."""
    pi = theta.probs(ctx)
    pi_old = old.probs(ctx)
    pi_ref = ref.probs(ctx)
    grad = np.zeros_like(pi)
    for i, adv in zip(picks, advantages):
        rho = pi[i] / pi_old[i]
        clipped = (adv > 0 and rho > 1 + config.clip_epsilon) or (adv < 0 and rho < 1 - config.clip_epsilon)
        surrogate = 0.0 if clipped else rho * adv
        coef = gradient_coefficient(surrogate, pi_ref[i], pi[i], config.beta)
        score = -pi.copy()
        score[i] += 1.0
        grad += coef * score / theta.temperature
    return grad / len(picks)


def write_training_log(logs: Sequence[TrainingLog], path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["step", "mean_reward", "kl", "best_prob"])
        writer.writeheader()
        for row in logs:
            writer.writerow(asdict(row))


# ---------------------------------------------------------------------------
# estimators


class SftTrainer(BaseEstimator):
    """Fit a tabular policy to (context, reference hint) pairs by NLL descent.

    ``fit(X, y)`` takes sql_ids and their reference hints; hint spaces come
    from ``hint_spaces`` or, failing that, ``engine.enumerate_hint_space``.
    """

    def __init__(self, engine=None, mode: str = "join_order", learning_rate: float = 0.5,
                 n_steps: int = 100, temperature: float = 1.0):
        self.engine = engine
        self.mode = mode
        self.learning_rate = learning_rate
        self.n_steps = n_steps
        self.temperature = temperature

    def fit(self, X, y, hint_spaces: Mapping[str, Sequence[Hint]] | None = None, init_policy: TabularPolicy | None = None):
        ids = check_sql_ids(X)
        hints = check_hints(y, len(ids))
        check_positive(self.learning_rate, "learning_rate", allow_zero=True)
        if init_policy is not None:
            policy = init_policy.copy()
        else:
            if hint_spaces is None:
                if self.engine is None:
                    raise ValueError("SftTrainer needs hint_spaces or an engine")
                hint_spaces = {sid: self.engine.enumerate_hint_space(sid, self.mode) for sid in dict.fromkeys(ids)}
            policy = TabularPolicy(hint_spaces, self.temperature)
        batch = [SftPair(sid, h) for sid, h in zip(ids, hints)]
        history = []
        for _ in range(self.n_steps):
            policy, nll = sft_step(policy, batch, self.learning_rate)
            history.append(nll)
        self.policy_ = policy
        self.nll_history_ = np.array(history)
        return self

    def predict_proba(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "policy_")
        return [self.policy_.probs(sid) for sid in check_sql_ids(X)]

    def predict(self, X) -> list[Hint]:
        check_is_fitted(self, "policy_")
        return [self.policy_.greedy(sid) for sid in check_sql_ids(X)]


class QGrpoTrainer(BaseEstimator):
    """Group-relative policy optimization against an execution engine."""

    def __init__(self, engine=None, mode: str = "join_order", group_size: int = 4, beta: float = 0.04,
                 clip_epsilon: float = 0.2, learning_rate: float = 0.1, steps: int = 200,
                 batch_size: int | None = None, inner_updates: int = 1, max_grad_norm: float | None = 1.0,
                 temperature: float = 1.0, timeout_ms: float = 10_000.0, seed: int = 0):
        self.engine = engine
        self.mode = mode
        self.group_size = group_size
        self.beta = beta
        self.clip_epsilon = clip_epsilon
        self.learning_rate = learning_rate
        self.steps = steps
        self.batch_size = batch_size
        self.inner_updates = inner_updates
        self.max_grad_norm = max_grad_norm
        self.temperature = temperature
        self.timeout_ms = timeout_ms
        self.seed = seed

    def config(self) -> GrpoConfig:
        return GrpoConfig(
            group_size=self.group_size, beta=self.beta, clip_epsilon=self.clip_epsilon,
            learning_rate=self.learning_rate, steps=self.steps, batch_size=self.batch_size,
            inner_updates=self.inner_updates, max_grad_norm=self.max_grad_norm, seed=self.seed,
        )

    def fit(self, X, y=None, init_policy: TabularPolicy | None = None):
        if self.engine is None:
            raise ValueError("QGrpoTrainer needs an engine")
        ids = check_sql_ids(X)
        policy = init_policy if init_policy is not None else TabularPolicy.uniform(
            self.engine, ids, self.mode, self.temperature)
        result = qgrpo_train(policy, self.engine, ids, self.config(), timeout_ms=self.timeout_ms)
        self.policy_ = result.policy
        self.reference_policy_ = policy
        self.logs_ = result.logs
        return self

    def predict_proba(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "policy_")
        return [self.policy_.probs(sid) for sid in check_sql_ids(X)]

    def predict(self, X) -> list[Hint]:
        check_is_fitted(self, "policy_")
        return [self.policy_.greedy(sid) for sid in check_sql_ids(X)]
