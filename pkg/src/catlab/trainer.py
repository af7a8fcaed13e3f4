"""Bi-level training loop.

Each episode walks T selection steps: encode the response history, pick a
question from the remaining support pool, refit proficiency on everything
selected so far (warm-started), and score the meta set. The outer loop turns
the strategy-shaped final losses into a REINFORCE update of the selection
policy; the response model stays frozen throughout.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import backend, cdm, debias, evaluation, selector
from .dataset import (
    Attribute,
    Corpus,
    EpisodeSplit,
    Interaction,
    attribute_of,
    build_ood_meta,
    group_key,
    resplit_support_meta,
)
from .errors import ConfigError, ContractError, TrainingError
from .util import TAG_BATCH_ORDER, TAG_EVAL_SPLIT, TAG_MIXUP, TAG_SELECT, substream


@dataclass
class TrainConfig:
    t: int = 5
    k_steps: int = 5
    lr_inner: float = 0.1
    lr_outer: float = 0.002
    omega: float = 0.6
    mixup_alpha: float = 0.6
    strategy: str = "ERM"
    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    patience: int = 5
    meta_frac: float = 0.5
    groupdro_eta: float = 0.01
    irm_lambda: float = 1.0
    per_step_updates: bool = False

    def __post_init__(self):
        if self.t < 1:
            raise ConfigError(f"t must be >= 1, got {self.t}")
        if self.k_steps < 1:
            raise ConfigError(f"k_steps must be >= 1, got {self.k_steps}")
        if self.strategy not in debias.ALL_STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError(f"omega must lie in [0, 1], got {self.omega}")
        if self.mixup_alpha <= 0.0:
            raise ConfigError(f"mixup_alpha must be positive, got {self.mixup_alpha}")
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1, patience >= 1 required")
        if not 0.0 < self.meta_frac < 1.0:
            raise ConfigError(f"meta_frac must lie in (0, 1), got {self.meta_frac}")
        if self.lr_inner <= 0.0 or self.lr_outer <= 0.0:
            raise ConfigError("learning rates must be positive")


@dataclass
class EpisodeTrace:
    """One rolled-out episode.

    ``selected`` holds (question_id, label, log_prob) in selection order;
    ``theta_star`` the proficiency state after each step's inner fit (raw
    parameterization inside); ``meta_loss`` the empirical meta loss at each
    step. ``support_ids`` is the full candidate pool, kept so the policy
    gradient can replay the state/mask sequence at update time.
    """

    examinee_id: int
    selected: list[tuple[int, int, float]]
    theta_star: list[cdm.ProficiencyState]
    meta_loss: list[float]
    support_ids: list[int]


def meta_predictions(bundle: cdm.CdmBundle, state: cdm.ProficiencyState,
                     meta: list[Interaction]) -> np.ndarray:
    """Response probability for each meta interaction under the given state."""
    packed = cdm.pack_items(bundle, [bundle.item(it.question_id) for it in meta])
    return cdm.predict_packed(bundle, state, packed)


def meta_loss(bundle: cdm.CdmBundle, state: cdm.ProficiencyState,
              meta: list[Interaction]) -> tuple[float, np.ndarray]:
    """Mean cross-entropy on the meta set plus the per-interaction losses."""
    if not meta:
        raise ContractError("empty meta set")
    probs = meta_predictions(bundle, state, meta)
    ys = np.array([it.label for it in meta], dtype=np.float64)
    losses = backend.bce(ys, probs)
    return float(losses.mean()), losses


def run_episode(bundle: cdm.CdmBundle, policy: selector.Policy, split: EpisodeSplit,
                config: TrainConfig, mode: str = "train",
                rng: np.random.Generator | None = None) -> EpisodeTrace | None:
    """Roll out one T-step episode; None when the split cannot support one."""
    if mode not in ("train", "eval"):
        raise ContractError(f"unknown episode mode {mode!r}")
    if len(split.support) < config.t:
        warnings.warn(
            f"examinee {split.examinee_id}: support size {len(split.support)}"
            f" < T={config.t}, episode skipped")
        return None
    if not split.usable or not split.meta:
        warnings.warn(f"examinee {split.examinee_id}: empty meta set, episode skipped")
        return None
    if mode == "train" and rng is None:
        raise ContractError("train mode requires an rng")

    label_of = {it.question_id: it.label for it in split.support}
    support_ids = [it.question_id for it in split.support]
    mask = np.zeros(policy.n_questions, dtype=bool)
    mask[support_ids] = True
    meta_packed = cdm.pack_items(bundle, [bundle.item(it.question_id) for it in split.meta])
    meta_ys = np.array([it.label for it in split.meta], dtype=np.float64)

    history: list[tuple[int, int]] = []
    responses: list[tuple[object, int]] = []
    state = bundle.init_state()
    selected, thetas, losses = [], [], []
    for _ in range(config.t):
        state_vec = selector.encode_state(history, policy.n_questions)
        if mode == "train":
            qid = selector.select_question(policy, state_vec, mask, "sample", rng)
        else:
            qid = selector.select_question(policy, state_vec, mask, "greedy")
        logp = selector.log_prob(policy, state_vec, mask, qid)
        label = label_of[qid]
        selected.append((qid, label, logp))
        history.append((qid, label))
        mask[qid] = False
        responses.append((bundle.item(qid), label))
        state = cdm.inner_optimize(bundle, state, responses, config.k_steps, config.lr_inner)
        p = cdm.predict_packed(bundle, state, meta_packed)
        thetas.append(state.copy())
        losses.append(float(np.mean(backend.bce(meta_ys, p))))
    return EpisodeTrace(split.examinee_id, selected, thetas, losses, support_ids)


# -- strategy shaping -----------------------------------------------------------

def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, backend.PROB_EPS, 1.0 - backend.PROB_EPS)
    return np.log(p) - np.log1p(-p)


def shape_batch_losses(
    bundle: cdm.CdmBundle,
    traces: dict[int, EpisodeTrace],
    splits: dict[int, EpisodeSplit],
    attrs: dict[int, Attribute],
    ctx: debias.StrategyContext,
    rng_for,
) -> dict[int, float]:
    """Per-episode final loss under the configured strategy.

    The per-episode values are chosen so their batch mean reproduces the
    batch-level objective: Mixup adds omega times the episode's raw synthetic
    loss sum (the batch objective divides by batch size once), IRM adds the
    squared environment gradient of the episode's own attribute, and the
    weighting baselines rescale per-interaction losses so uniform weights
    collapse to plain ERM.
    """
    eids = sorted(traces)
    l_emp = {eid: traces[eid].meta_loss[-1] for eid in eids}

    if ctx.strategy == "ERM":
        return l_emp

    if ctx.strategy in debias.MIXUP_STRATEGIES:
        metas = {eid: splits[eid].meta for eid in eids}
        thetas = {eid: traces[eid].theta_star[-1].theta for eid in eids}
        batch_attrs = {eid: attrs[eid] for eid in eids}
        samples, _ = debias.synthesize(
            ctx.strategy, bundle, metas, thetas, batch_attrs, rng_for, ctx.mixup_alpha)
        syn_sum = {eid: 0.0 for eid in eids}
        for s in samples:
            syn_sum[s.examinee_id] += debias.synthetic_sample_loss(
                bundle, traces[s.examinee_id].theta_star[-1], s)
        return {eid: debias.final_loss(l_emp[eid], syn_sum[eid], ctx.omega)
                for eid in eids}

    if ctx.strategy == "IRM":
        env_parts: dict[Attribute, list[tuple[np.ndarray, np.ndarray]]] = {}
        for eid in eids:
            probs = meta_predictions(bundle, traces[eid].theta_star[-1], splits[eid].meta)
            ys = np.array([it.label for it in splits[eid].meta], dtype=np.float64)
            env_parts.setdefault(attrs[eid], []).append((probs, ys))
        env_grads = {}
        for env, parts in env_parts.items():
            probs = np.concatenate([p for p, _ in parts])
            ys = np.concatenate([y for _, y in parts])
            env_grads[env] = debias.irm_env_grad(_logit(probs), probs, ys)
        if len(env_grads) < 2:
            return l_emp
        return {eid: l_emp[eid] + ctx.irm_lambda * env_grads[attrs[eid]] ** 2
                for eid in eids}

    if ctx.strategy in ("GroupDRO", "Reweight"):
        per_losses = {eid: meta_loss(bundle, traces[eid].theta_star[-1],
                                     splits[eid].meta)[1] for eid in eids}
        keyed = {eid: [group_key(attrs[eid], it.label) for it in splits[eid].meta]
                 for eid in eids}
        weights = ctx.group_weights
        if ctx.strategy == "GroupDRO":
            sums: dict = {}
            counts: dict = {}
            for eid in eids:
                for k, l in zip(keyed[eid], per_losses[eid]):
                    sums[k] = sums.get(k, 0.0) + float(l)
                    counts[k] = counts.get(k, 0) + 1
            group_losses = {k: sums[k] / counts[k] for k in sums}
            _, weights = debias.groupdro_step(group_losses, ctx.group_weights,
                                              ctx.groupdro_eta)
            ctx.group_weights = weights
            scale = {k: 6.0 * weights[k] for k in weights}
        else:
            scale = weights
        out = {}
        for eid in eids:
            w = np.array([scale[k] for k in keyed[eid]])
            out[eid] = float(np.mean(w * per_losses[eid]))
        return out

    raise ConfigError(f"unknown strategy {ctx.strategy!r}")


# -- outer update ---------------------------------------------------------------

def _replay_steps(policy: selector.Policy, trace: EpisodeTrace):
    """Regenerate (state, mask, question) for each step of a recorded episode."""
    mask = np.zeros(policy.n_questions, dtype=bool)
    mask[trace.support_ids] = True
    history: list[tuple[int, int]] = []
    for qid, label, _ in trace.selected:
        yield selector.encode_state(history, policy.n_questions), mask, qid
        mask[qid] = False
        history.append((qid, label))


def _grad_is_finite(grad: selector.PolicyGrad) -> bool:
    return all(np.isfinite(a).all() for a in (grad.w1, grad.b1, grad.w2, grad.b2))


def outer_update(policy: selector.Policy, batch: list[tuple[EpisodeTrace, float]],
                 lr_outer: float) -> float:
    """One REINFORCE ascent step from a batch of (trace, final loss) pairs.

    Reward is the negated final loss; the baseline is the batch mean, so a
    batch of identical losses contributes exactly nothing. Returns the baseline.
    """
    if not batch:
        raise ContractError("empty batch")
    rewards = np.array([-l for _, l in batch], dtype=np.float64)
    baseline = float(rewards.mean())
    grad = selector.PolicyGrad.zeros(policy)
    for (trace, _), reward in zip(batch, rewards):
        adv = float(reward - baseline)
        if not np.isfinite(adv):
            raise TrainingError(
                f"non-finite loss in episode for examinee {trace.examinee_id}")
        if adv == 0.0:
            continue
        for state, mask, qid in _replay_steps(policy, trace):
            grad.add_log_prob_grad(policy, state, mask, qid, scale=adv)
    if not _grad_is_finite(grad):
        for trace, _ in batch:
            probe = selector.PolicyGrad.zeros(policy)
            for state, mask, qid in _replay_steps(policy, trace):
                probe.add_log_prob_grad(policy, state, mask, qid)
            if not _grad_is_finite(probe):
                raise TrainingError(
                    f"non-finite gradient from episode for examinee {trace.examinee_id}")
        raise TrainingError("non-finite accumulated policy gradient")
    selector.apply_update(policy, grad, lr_outer)
    return baseline


def outer_update_per_step(policy: selector.Policy,
                          batch: list[tuple[EpisodeTrace, float]],
                          t_steps: int, lr_outer: float) -> None:
    """Update after every step instead of once per episode.

    Steps before the last are rewarded by their own empirical meta loss; the
    final step carries the strategy-shaped loss. Gradients are recomputed
    under the current parameters, so later steps are slightly off-policy.
    """
    if not batch:
        raise ContractError("empty batch")
    for t in range(t_steps):
        rewards = np.array(
            [-(l_final if t == t_steps - 1 else trace.meta_loss[t])
             for trace, l_final in batch])
        baseline = float(rewards.mean())
        grad = selector.PolicyGrad.zeros(policy)
        for (trace, _), reward in zip(batch, rewards):
            adv = float(reward - baseline)
            if not np.isfinite(adv):
                raise TrainingError(
                    f"non-finite loss in episode for examinee {trace.examinee_id}")
            if adv == 0.0:
                continue
            for step, (state, mask, qid) in enumerate(_replay_steps(policy, trace)):
                if step == t:
                    grad.add_log_prob_grad(policy, state, mask, qid, scale=adv)
                    break
        if not _grad_is_finite(grad):
            raise TrainingError("non-finite accumulated policy gradient")
        selector.apply_update(policy, grad, lr_outer)


# -- training loop ----------------------------------------------------------------

def _strategy_context(corpus: Corpus, config: TrainConfig,
                      train_ids: set[int]) -> debias.StrategyContext:
    ctx = debias.StrategyContext(
        strategy=config.strategy, omega=config.omega, mixup_alpha=config.mixup_alpha,
        groupdro_eta=config.groupdro_eta, irm_lambda=config.irm_lambda)
    if config.strategy == "GroupDRO":
        ctx.group_weights = debias.uniform_group_weights()
    elif config.strategy == "Reweight":
        ctx.group_weights = debias.reweight_weights(corpus, sorted(train_ids))
    return ctx


def train(corpus: Corpus, bundle: cdm.CdmBundle, config: TrainConfig,
          train_ids: set[int], valid_ids: set[int],
          on_epoch=None) -> tuple[selector.Policy, list[dict]]:
    """Train a selection policy; returns the best checkpoint and the epoch log.

    Early-stops when validation average accuracy fails to improve for
    ``config.patience`` consecutive epochs. The response model is read-only:
    its fingerprint is checked before and after. ``on_epoch(epoch, policy, log)``
    runs after each epoch so callers can checkpoint incrementally.
    """
    fp_before = cdm.bundle_fingerprint(bundle)
    policy = selector.init_policy(bundle.n_questions, config.seed)
    attrs = {eid: attribute_of(corpus.examinee_logs[eid]) for eid in corpus.examinee_logs}
    ctx = _strategy_context(corpus, config, train_ids)
    train_list = sorted(train_ids)

    best = policy.copy()
    # the untrained policy is checkpoint candidate zero, so the returned
    # policy never validates worse than it
    best_avg = -np.inf
    if config.epochs > 0:
        rep0, _ = evaluate_policy(corpus, valid_ids, bundle, policy, config, ood=False)
        best_avg = rep0.avg
    bad_epochs = 0
    log: list[dict] = []
    for epoch in range(config.epochs):
        order = substream(config.seed, TAG_BATCH_ORDER, epoch).permutation(len(train_list))
        shuffled = [train_list[i] for i in order]
        epoch_losses: list[float] = []
        for start in range(0, len(shuffled), config.batch_size):
            batch_ids = shuffled[start:start + config.batch_size]
            splits, traces = {}, {}
            for eid in batch_ids:
                split = resplit_support_meta(
                    corpus.examinee_logs[eid], config.meta_frac, config.seed, epoch)
                trace = run_episode(bundle, policy, split, config, "train",
                                    substream(config.seed, TAG_SELECT, epoch, eid))
                if trace is not None:
                    splits[eid] = split
                    traces[eid] = trace
            if not traces:
                continue
            l_finals = shape_batch_losses(
                bundle, traces, splits, attrs, ctx,
                lambda eid, _e=epoch: substream(config.seed, TAG_MIXUP, _e, eid))
            batch = [(traces[eid], l_finals[eid]) for eid in sorted(traces)]
            if config.per_step_updates:
                outer_update_per_step(policy, batch, config.t, config.lr_outer)
            else:
                outer_update(policy, batch, config.lr_outer)
            epoch_losses.extend(l_finals[eid] for eid in sorted(traces))

        rep, _ = evaluate_policy(corpus, valid_ids, bundle, policy, config, ood=False)
        record = {
            "epoch": epoch,
            "strategy": config.strategy,
            "train_loss": float(np.mean(epoch_losses)) if epoch_losses else None,
            "valid_worst": rep.worst,
            "valid_avg": rep.avg,
        }
        log.append(record)
        if on_epoch is not None:
            on_epoch(epoch, policy, log)
        if rep.avg > best_avg:
            best_avg = rep.avg
            best = policy.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break

    if cdm.bundle_fingerprint(bundle) != fp_before:
        raise TrainingError("response model changed during policy training")
    return best, log


def evaluate_policy(corpus: Corpus, examinee_ids, bundle: cdm.CdmBundle,
                    policy: selector.Policy, config: TrainConfig,
                    ood: bool) -> tuple[evaluation.EvalReport, list]:
    """Greedy episodes for every evaluable examinee; aggregate meta predictions.

    IID mode draws each examinee's support/meta split from a fixed stream
    (stable across epochs); OOD mode uses the label-balanced meta protocol and
    silently drops examinees it excludes.
    """
    predictions = []
    traces_out = []
    meta_records = []
    for eid in sorted(examinee_ids):
        elog = corpus.examinee_logs[eid]
        if ood:
            split = build_ood_meta(elog)
        else:
            split = resplit_support_meta(elog, config.meta_frac, config.seed, 0,
                                         tag=TAG_EVAL_SPLIT)
        if split is None or not split.usable or len(split.support) < config.t:
            continue
        trace = run_episode(bundle, policy, split, config, "eval")
        if trace is None:
            continue
        attr = attribute_of(elog)
        probs = meta_predictions(bundle, trace.theta_star[-1], split.meta)
        for it, p in zip(split.meta, probs):
            predictions.append((group_key(attr, it.label),
                                evaluation.classify(float(p)), it.label))
        traces_out.append((trace, attr))
        meta_records.append((eid, attr,
                             sum(it.label for it in split.meta) / len(split.meta)))
    rep = evaluation.report(predictions, config.t, ood)
    rep.selected_ratios = evaluation.selected_ratio_records(traces_out)
    rep.meta_ratios = meta_records
    return rep, traces_out
