"""Question-selection policy over a fixed question pool.

State is a {-1, 0, +1} vector over all questions (incorrect / unattempted /
correct so far this episode). A single hidden tanh layer maps it to one logit
per question; candidates outside the mask get a -1e9 additive penalty and are
excluded from normalization.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ContractError, NoCandidateError
from .util import TAG_POLICY_INIT, atomic_write_json, substream

HIDDEN = 256
MASK_PENALTY = -1e9


@dataclass
class Policy:
    w1: np.ndarray  # (256, n_q)
    b1: np.ndarray  # (256,)
    w2: np.ndarray  # (n_q, 256)
    b2: np.ndarray  # (n_q,)

    @property
    def n_questions(self) -> int:
        return self.w1.shape[1]

    def copy(self) -> "Policy":
        return Policy(*(a.copy() for a in (self.w1, self.b1, self.w2, self.b2)))


def init_policy(n_questions: int, seed: int) -> Policy:
    rng = substream(seed, TAG_POLICY_INIT)
    bound1 = 1.0 / np.sqrt(n_questions)
    bound2 = 1.0 / np.sqrt(HIDDEN)
    return Policy(
        w1=rng.uniform(-bound1, bound1, (HIDDEN, n_questions)),
        b1=np.zeros(HIDDEN),
        w2=rng.uniform(-bound2, bound2, (n_questions, HIDDEN)),
        b2=np.zeros(n_questions),
    )


def encode_state(history: Iterable[tuple[int, int]], n_questions: int) -> np.ndarray:
    state = np.zeros(n_questions, dtype=np.float64)
    seen = set()
    for qid, label in history:
        if qid in seen:
            raise ContractError(f"question {qid} appears twice in the episode history")
        seen.add(qid)
        state[qid] = 1.0 if label == 1 else -1.0
    return state


def _hidden(policy: Policy, state: np.ndarray) -> np.ndarray:
    return np.tanh(policy.w1 @ state + policy.b1)


def policy_logits(policy: Policy, state: np.ndarray, mask: np.ndarray) -> np.ndarray:
    if not mask.any():
        raise NoCandidateError("no selectable question under the mask")
    logits = policy.w2 @ _hidden(policy, state) + policy.b2
    return np.where(mask, logits, logits + MASK_PENALTY)


def masked_log_probs(policy: Policy, state: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log-softmax over allowed questions; disallowed entries are -inf."""
    logits = policy_logits(policy, state, mask)
    allowed = logits[mask]
    m = allowed.max()
    lse = m + np.log(np.sum(np.exp(allowed - m)))
    out = np.full_like(logits, -np.inf)
    out[mask] = logits[mask] - lse
    return out


def select_question(policy: Policy, state: np.ndarray, mask: np.ndarray,
                    mode: str, rng: np.random.Generator | None = None) -> int:
    if mode == "greedy":
        logits = policy_logits(policy, state, mask)
        return int(np.argmax(logits))  # first max wins: lowest-index tie-break
    if mode != "sample":
        raise ContractError(f"unknown selection mode {mode!r}")
    if rng is None:
        raise ContractError("sample mode requires an rng")
    log_p = masked_log_probs(policy, state, mask)
    probs = np.exp(log_p)
    probs = probs / probs.sum()
    return int(rng.choice(len(probs), p=probs))


def log_prob(policy: Policy, state: np.ndarray, mask: np.ndarray, question_id: int) -> float:
    if not mask[question_id]:
        raise ContractError(f"question {question_id} is masked out")
    return float(masked_log_probs(policy, state, mask)[question_id])


@dataclass
class PolicyGrad:
    """Accumulator matching Policy's shapes."""
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def zeros(cls, policy: Policy) -> "PolicyGrad":
        return cls(np.zeros_like(policy.w1), np.zeros_like(policy.b1),
                   np.zeros_like(policy.w2), np.zeros_like(policy.b2))

    def add_log_prob_grad(self, policy: Policy, state: np.ndarray, mask: np.ndarray,
                          question_id: int, scale: float = 1.0) -> None:
        """Accumulate scale * d log pi(question_id | state) / d params."""
        if not mask[question_id]:
            raise ContractError(f"question {question_id} is masked out")
        h = _hidden(policy, state)
        probs = np.exp(masked_log_probs(policy, state, mask))
        dz = -probs
        dz[question_id] += 1.0
        dz *= scale
        self.w2 += np.outer(dz, h)
        self.b2 += dz
        dpre = (policy.w2.T @ dz) * (1.0 - h * h)
        self.w1 += np.outer(dpre, state)
        self.b1 += dpre


def apply_update(policy: Policy, grad: PolicyGrad, step: float) -> None:
    """Gradient-ascent step: params += step * grad."""
    policy.w1 += step * grad.w1
    policy.b1 += step * grad.b1
    policy.w2 += step * grad.w2
    policy.b2 += step * grad.b2


def save_policy(policy: Policy, path) -> None:
    doc = {name: {"shape": list(getattr(policy, name).shape),
                  "data": getattr(policy, name).ravel().tolist()}
           for name in ("w1", "b1", "w2", "b2")}
    atomic_write_json(path, doc)


def load_policy(path) -> Policy:
    import json

    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    arrays = {name: np.array(doc[name]["data"], dtype=np.float64).reshape(doc[name]["shape"])
              for name in ("w1", "b1", "w2", "b2")}
    return Policy(**arrays)
