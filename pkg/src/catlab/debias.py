"""Debiasing strategies for the outer objective.

The selective-Mixup family synthesizes label-preserving pseudo-questions by
interpolating question parameters between a biased examinee's meta interaction
and a partner interaction with the same label; the partner source is what
distinguishes the variants (neutral-attribute partner, the examinee's own meta
set, or the nearest partner within the same attribute). The classic robust
baselines (IRM penalty, GroupDRO reweighting, inverse-frequency Reweight)
operate on per-group losses instead of synthesis.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import cdm
from .dataset import ALL_GROUP_KEYS, Attribute, GroupKey, Interaction, group_key
from .errors import ContractError

MIXUP_STRATEGIES = ("MixupB", "MixupSelf", "MixupInner")
ALL_STRATEGIES = ("ERM", "IRM", "GroupDRO", "Reweight") + MIXUP_STRATEGIES


@dataclass
class SyntheticSample:
    examinee_id: int
    item: object                # mixed item params, same kind as the bundle
    label: int
    source_i: Interaction
    source_j: Interaction
    lam: float


@dataclass
class StrategyContext:
    """Per-run strategy state threaded through the trainer."""
    strategy: str
    omega: float = 0.6
    mixup_alpha: float = 0.6
    groupdro_eta: float = 0.01
    irm_lambda: float = 1.0
    group_weights: dict | None = None     # GroupDRO state / Reweight constants

    def __post_init__(self):
        if self.strategy not in ALL_STRATEGIES:
            raise ContractError(f"unknown strategy {self.strategy!r}")


def similarity(theta_i: np.ndarray, theta_j: np.ndarray) -> float:
    """L2 distance between proficiency vectors in (0,1)^K space."""
    theta_i = np.asarray(theta_i, dtype=np.float64)
    theta_j = np.asarray(theta_j, dtype=np.float64)
    if theta_i.shape != theta_j.shape:
        raise ContractError(f"shape mismatch {theta_i.shape} vs {theta_j.shape}")
    return float(np.linalg.norm(theta_i - theta_j))


def ranked_partners(eid: int, pool: Sequence[int], thetas: dict) -> list[int]:
    """Pool ids by ascending distance to eid's proficiency, ties by lowest id."""
    me = thetas[eid]
    return sorted((p for p in pool if p != eid),
                  key=lambda p: (similarity(me, thetas[p]), p))


def retrieve_partner(eid: int, pool: Sequence[int], thetas: dict) -> int:
    ranked = ranked_partners(eid, pool, thetas)
    if not ranked:
        raise ContractError(f"empty partner pool for examinee {eid}")
    return ranked[0]


def draw_partner_interaction(ranked: Sequence[int], metas: dict, label: int,
                             rng: np.random.Generator) -> tuple[int, Interaction] | None:
    """First ranked partner holding a same-label meta interaction; uniform
    draw among that partner's eligible interactions. None when nobody has one."""
    for pid in ranked:
        eligible = [it for it in metas.get(pid, []) if it.label == label]
        if eligible:
            return pid, eligible[int(rng.integers(len(eligible)))]
    return None


def mixup_item(item_i, item_j, lam: float):
    """Convex interpolation of question parameters; lam weights item_i."""
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"lambda {lam} outside [0,1]")
    if isinstance(item_i, cdm.IrtItemParams) and isinstance(item_j, cdm.IrtItemParams):
        return cdm.IrtItemParams(lam * item_i.difficulty + (1.0 - lam) * item_j.difficulty)
    if isinstance(item_i, cdm.NcdmItemParams) and isinstance(item_j, cdm.NcdmItemParams):
        if item_i.concepts.shape != item_j.concepts.shape:
            raise ContractError("concept dimension mismatch")
        return cdm.NcdmItemParams(
            concepts=lam * item_i.concepts + (1.0 - lam) * item_j.concepts,
            h_diff=lam * item_i.h_diff + (1.0 - lam) * item_j.h_diff,
            h_disc=lam * item_i.h_disc + (1.0 - lam) * item_j.h_disc,
        )
    raise ContractError(
        f"cannot mix {type(item_i).__name__} with {type(item_j).__name__}")


def synthesize(strategy: str, bundle: cdm.CdmBundle,
               metas: dict[int, list[Interaction]],
               thetas: dict[int, np.ndarray],
               attrs: dict[int, Attribute],
               rng_for: Callable[[int], np.random.Generator],
               alpha: float) -> tuple[list[SyntheticSample], int]:
    """One synthetic sample per meta interaction of every biased-attribute
    examinee; returns (samples, skip count). Examinees are processed in id
    order and each consumes only its own rng stream."""
    if strategy not in MIXUP_STRATEGIES:
        raise ContractError(f"{strategy!r} is not a mixup strategy")
    out: list[SyntheticSample] = []
    skipped = 0
    b_pool = [e for e in sorted(metas) if attrs[e] is Attribute.B]
    for eid in sorted(metas):
        attr = attrs[eid]
        if attr is Attribute.B:
            continue
        if strategy == "MixupB":
            ranked = ranked_partners(eid, b_pool, thetas)
        elif strategy == "MixupInner":
            same = [e for e in sorted(metas) if attrs[e] is attr]
            ranked = ranked_partners(eid, same, thetas)
        rng = rng_for(eid)
        for q_i in metas[eid]:
            if strategy == "MixupSelf":
                eligible = [it for it in metas[eid] if it.label == q_i.label]
                drawn = (eid, eligible[int(rng.integers(len(eligible)))])
            else:
                drawn = draw_partner_interaction(ranked, metas, q_i.label, rng)
            if drawn is None:
                skipped += 1
                continue
            _, q_j = drawn
            lam = float(rng.beta(alpha, alpha))
            item = mixup_item(bundle.item(q_i.question_id),
                              bundle.item(q_j.question_id), lam)
            out.append(SyntheticSample(examinee_id=eid, item=item, label=q_i.label,
                                       source_i=q_i, source_j=q_j, lam=lam))
    return out, skipped


def synthetic_sample_loss(bundle: cdm.CdmBundle, state: cdm.ProficiencyState,
                          sample: SyntheticSample) -> float:
    return cdm.bce_loss(sample.label, cdm.predict(bundle, state, sample.item))


def synthetic_loss(bundle: cdm.CdmBundle, states: dict[int, cdm.ProficiencyState],
                   synth: Sequence[SyntheticSample]) -> float:
    """Sum of sample losses per examinee, averaged over all batch examinees."""
    if not states:
        raise ContractError("empty batch")
    total = 0.0
    for s in synth:
        total += synthetic_sample_loss(bundle, states[s.examinee_id], s)
    return total / len(states)


def final_loss(l_emp: float, l_syn: float, omega: float) -> float:
    if omega < 0:
        raise ContractError(f"omega must be nonnegative, got {omega}")
    return l_emp + omega * l_syn


# -- invariance baseline --------------------------------------------------------


def irm_env_grad(logits: np.ndarray, probs: np.ndarray, ys: np.ndarray) -> float:
    """d/dw of the environment's mean loss with predictions sigmoid(w*logit),
    evaluated at w = 1."""
    return float(np.mean((probs - ys) * logits))


def irm_penalty(env_grads: dict) -> float:
    if len(env_grads) < 2:
        return 0.0
    return float(sum(g * g for g in env_grads.values()))


# -- group reweighting baselines -------------------------------------------------


def uniform_group_weights() -> dict[GroupKey, float]:
    return {k: 1.0 / len(ALL_GROUP_KEYS) for k in ALL_GROUP_KEYS}


def groupdro_step(group_losses: dict[GroupKey, float],
                  weights: dict[GroupKey, float], eta: float
                  ) -> tuple[float, dict[GroupKey, float]]:
    """Exponentiated-gradient step toward the worst group; absent groups keep
    their weight. Returns (loss under the updated weights, updated weights)."""
    new = {}
    for k in ALL_GROUP_KEYS:
        if k in group_losses:
            new[k] = weights[k] * float(np.exp(eta * group_losses[k]))
        else:
            new[k] = weights[k]
    total = sum(new.values())
    new = {k: v / total for k, v in new.items()}
    loss = sum(new[k] * group_losses[k] for k in group_losses)
    return float(loss), new


def reweight_weights(corpus, train_ids=None) -> dict[GroupKey, float]:
    """Inverse-frequency weights from the training examinees' full logs:
    w_k = N_total / (6 * N_k)."""
    from .dataset import attribute_of

    counts = {k: 0 for k in ALL_GROUP_KEYS}
    ids = sorted(train_ids) if train_ids is not None else sorted(corpus.examinee_logs)
    for eid in ids:
        log = corpus.examinee_logs[eid]
        attr = attribute_of(log)
        for it in log:
            counts[group_key(attr, it.label)] += 1
    total = sum(counts.values())
    weights = {}
    for k, n_k in counts.items():
        if n_k == 0:
            warnings.warn(f"group {k.name()} absent from training logs; weight 0")
            weights[k] = 0.0
        else:
            weights[k] = total / (len(ALL_GROUP_KEYS) * n_k)
    return weights
