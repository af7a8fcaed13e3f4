"""Response models: a 1PL logistic model and a monotone neural diagnosis net.

Both models map an examinee proficiency vector theta in (0,1)^K and frozen
question parameters to a correctness probability. Proficiency is stored as an
unconstrained ``raw`` vector and squashed by a sigmoid, so gradient descent can
never push theta out of range. After pre-training the question/net parameters
are frozen; adaptive-testing episodes only ever update ``raw``.
"""
from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import backend
from .dataset import Corpus
from .errors import ConfigError, ContractError, TrainingError
from .util import (
    TAG_PRETRAIN_HOLDOUT,
    TAG_PRETRAIN_INIT,
    TAG_PRETRAIN_ORDER,
    atomic_write_json,
    round_half_up,
    substream,
)

HIDDEN1 = 128
HIDDEN2 = 64


@dataclass
class ProficiencyState:
    raw: np.ndarray  # (K,), unconstrained

    @property
    def theta(self) -> np.ndarray:
        return backend.sigmoid(self.raw)

    def copy(self) -> "ProficiencyState":
        return ProficiencyState(self.raw.copy())


@dataclass(frozen=True)
class IrtItemParams:
    difficulty: float


@dataclass(frozen=True)
class NcdmItemParams:
    concepts: np.ndarray  # (K,) in [0,1], binary for authentic questions
    h_diff: np.ndarray    # (K,) in (0,1)
    h_disc: float         # in (0,1)


@dataclass
class NcdmNet:
    w1: np.ndarray  # (128, K)
    b1: np.ndarray  # (128,)
    w2: np.ndarray  # (64, 128)
    b2: np.ndarray  # (64,)
    w3: np.ndarray  # (1, 64)
    b3: np.ndarray  # (1,)

    def copy(self) -> "NcdmNet":
        return NcdmNet(*(a.copy() for a in (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)))


@dataclass
class CdmBundle:
    """Frozen question parameters plus, for the neural model, the frozen net.

    Question parameters are stored as dense arrays indexed by question id;
    ``item(qid)`` materializes a per-question view. ``raw_theta_init`` is the
    episode starting point for raw proficiency (zeros unless a learned
    initialization was requested at pre-training time).
    """
    kind: str  # "irt" | "ncdm"
    n_concepts: int
    n_questions: int
    raw_theta_init: np.ndarray          # (K,)
    b: np.ndarray | None = None         # irt: (n_q,)
    q_matrix: np.ndarray | None = None  # ncdm: (n_q, K)
    h_diff: np.ndarray | None = None    # ncdm: (n_q, K)
    h_disc: np.ndarray | None = None    # ncdm: (n_q,)
    net: NcdmNet | None = None

    def item(self, qid: int) -> IrtItemParams | NcdmItemParams:
        if not 0 <= qid < self.n_questions:
            raise ContractError(f"question id {qid} outside [0, {self.n_questions})")
        if self.kind == "irt":
            return IrtItemParams(float(self.b[qid]))
        return NcdmItemParams(self.q_matrix[qid], self.h_diff[qid], float(self.h_disc[qid]))

    def init_state(self) -> ProficiencyState:
        return ProficiencyState(self.raw_theta_init.copy())


def _check_item(bundle: CdmBundle, item) -> None:
    if bundle.kind == "irt":
        if not isinstance(item, IrtItemParams):
            raise ContractError(f"irt bundle got {type(item).__name__}")
    else:
        if not isinstance(item, NcdmItemParams):
            raise ContractError(f"ncdm bundle got {type(item).__name__}")
        if item.concepts.shape != (bundle.n_concepts,) or item.h_diff.shape != (bundle.n_concepts,):
            raise ContractError(
                f"item dimensions {item.concepts.shape}/{item.h_diff.shape} "
                f"do not match K={bundle.n_concepts}"
            )


def pack_items(bundle: CdmBundle, items: Sequence) -> tuple[np.ndarray, ...]:
    """Stack per-item parameters into the dense arrays the kernels expect."""
    if bundle.kind == "irt":
        return (np.array([it.difficulty for it in items], dtype=np.float64),)
    q = np.stack([np.asarray(it.concepts, dtype=np.float64) for it in items])
    hd = np.stack([np.asarray(it.h_diff, dtype=np.float64) for it in items])
    hdisc = np.array([it.h_disc for it in items], dtype=np.float64)
    return q, hd, hdisc


def predict_packed(bundle: CdmBundle, state: ProficiencyState, packed: tuple[np.ndarray, ...]) -> np.ndarray:
    if bundle.kind == "irt":
        return backend.irt_predict(float(state.raw[0]), packed[0])
    net = bundle.net
    return backend.ncdm_predict(state.raw, *packed, net.w1, net.b1, net.w2, net.b2, net.w3, net.b3)


def predict(bundle: CdmBundle, state: ProficiencyState, item) -> float:
    """Probability of a correct response to a single question."""
    if state.raw.shape != (bundle.n_concepts,):
        raise ContractError(f"raw shape {state.raw.shape} does not match K={bundle.n_concepts}")
    _check_item(bundle, item)
    return float(predict_packed(bundle, state, pack_items(bundle, [item]))[0])


def bce_loss(y: int, p: float) -> float:
    return float(backend.bce(np.float64(y), np.float64(p)))


def grad_theta(bundle: CdmBundle, state: ProficiencyState, item, y: int) -> np.ndarray:
    """Gradient of the response loss w.r.t. the raw proficiency vector."""
    if state.raw.shape != (bundle.n_concepts,):
        raise ContractError(f"raw shape {state.raw.shape} does not match K={bundle.n_concepts}")
    _check_item(bundle, item)
    ys = np.array([y], dtype=np.float64)
    if bundle.kind == "irt":
        _, g = backend.irt_loss_grad(float(state.raw[0]), np.array([item.difficulty]), ys)
        return np.array([g], dtype=np.float64)
    net = bundle.net
    _, g = backend.ncdm_loss_grad(state.raw, *pack_items(bundle, [item]),
                                  net.w1, net.b1, net.w2, net.b2, net.w3, net.b3, ys)
    return np.asarray(g, dtype=np.float64)


def loss_packed(bundle: CdmBundle, state: ProficiencyState, packed, ys: np.ndarray) -> float:
    """Mean response loss over a packed batch of (item, y) pairs."""
    p = predict_packed(bundle, state, packed)
    return float(np.mean(backend.bce(ys, p)))


def inner_optimize(bundle: CdmBundle, theta0: ProficiencyState,
                   responses: Sequence[tuple[object, int]],
                   k_steps: int, lr_inner: float) -> ProficiencyState:
    """Fit proficiency to a response set by k_steps of full-batch descent."""
    if k_steps < 1:
        raise ContractError(f"k_steps must be >= 1, got {k_steps}")
    if not responses:
        warnings.warn("inner_optimize called with no responses; proficiency unchanged")
        return theta0.copy()
    items = [it for it, _ in responses]
    ys = np.array([y for _, y in responses], dtype=np.float64)
    packed = pack_items(bundle, items)
    if bundle.kind == "irt":
        raw = backend.irt_inner(float(theta0.raw[0]), packed[0], ys, k_steps, lr_inner)
        return ProficiencyState(np.array([raw], dtype=np.float64))
    net = bundle.net
    raw = backend.ncdm_inner(theta0.raw, *packed, net.w1, net.b1, net.w2, net.b2,
                             net.w3, net.b3, ys, k_steps, lr_inner)
    return ProficiencyState(np.asarray(raw, dtype=np.float64))


def enforce_monotonicity(net: NcdmNet) -> NcdmNet:
    """Clamp negative interaction weights to zero; biases stay untouched."""
    np.maximum(net.w1, 0.0, out=net.w1)
    np.maximum(net.w2, 0.0, out=net.w2)
    np.maximum(net.w3, 0.0, out=net.w3)
    return net


# -- pre-training --------------------------------------------------------------


@dataclass
class PretrainConfig:
    kind: str = "ncdm"
    batch_size: int = 256
    lr: float = 0.002
    max_epochs: int = 50
    patience: int = 5
    valid_frac: float = 0.1
    seed: int = 0
    learn_theta_init: bool = False

    def __post_init__(self):
        if self.kind not in ("irt", "ncdm"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be positive")


def _flatten(corpus: Corpus) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    e_ids, q_ids, ys = [], [], []
    for eid in sorted(corpus.examinee_logs):
        for inter in corpus.examinee_logs[eid]:
            e_ids.append(eid)
            q_ids.append(inter.question_id)
            ys.append(inter.label)
    return (np.array(e_ids, dtype=np.int64),
            np.array(q_ids, dtype=np.int64),
            np.array(ys, dtype=np.float64))


def _question_matrix(corpus: Corpus) -> np.ndarray:
    n_q = max(corpus.questions) + 1
    q = np.zeros((n_q, corpus.n_concepts), dtype=np.float64)
    for qid, meta in corpus.questions.items():
        for c in meta.concept_ids:
            q[qid, c] = 1.0
    return q


class _Params:
    """Mutable pre-training parameters; snapshot() deep-copies for checkpoints."""

    def __init__(self, kind: str, n_examinees: int, n_q: int, k: int, rng: np.random.Generator):
        self.kind = kind
        self.raw_theta = np.zeros((n_examinees, max(k, 1)), dtype=np.float64)
        if kind == "irt":
            self.b = np.zeros(n_q, dtype=np.float64)
        else:
            self.raw_hdiff = np.zeros((n_q, k), dtype=np.float64)
            self.raw_hdisc = np.zeros(n_q, dtype=np.float64)
            # mixed-sign uniform init keeps the initial output near 0.5; the
            # monotonicity clamp takes over from the first update onward
            def unif(fan_in, shape):
                bound = 1.0 / np.sqrt(fan_in)
                return rng.uniform(-bound, bound, shape)

            self.net = NcdmNet(
                w1=unif(k, (HIDDEN1, k)),
                b1=np.zeros(HIDDEN1, dtype=np.float64),
                w2=unif(HIDDEN1, (HIDDEN2, HIDDEN1)),
                b2=np.zeros(HIDDEN2, dtype=np.float64),
                w3=unif(HIDDEN2, (1, HIDDEN2)),
                b3=np.zeros(1, dtype=np.float64),
            )

    def snapshot(self) -> "_Params":
        return copy.deepcopy(self)


def _forward(params: _Params, qmat: np.ndarray, e_idx, q_idx):
    """Batch forward pass; returns p plus the activations backprop needs."""
    theta = backend.sigmoid(params.raw_theta[e_idx])
    if params.kind == "irt":
        p = backend.sigmoid(theta[:, 0] - params.b[q_idx])
        return p, (theta,)
    hdiff = backend.sigmoid(params.raw_hdiff[q_idx])
    hdisc = backend.sigmoid(params.raw_hdisc[q_idx])
    net = params.net
    x = qmat[q_idx] * (theta - hdiff) * hdisc[:, None]
    f1 = backend.sigmoid(x @ net.w1.T + net.b1)
    f2 = backend.sigmoid(f1 @ net.w2.T + net.b2)
    p = backend.sigmoid(f2 @ net.w3.T + net.b3)[:, 0]
    return p, (theta, hdiff, hdisc, x, f1, f2)


def _sgd_step(params: _Params, qmat: np.ndarray, e_idx, q_idx, ys, lr: float) -> float:
    p, acts = _forward(params, qmat, e_idx, q_idx)
    n = len(ys)
    loss = float(np.mean(backend.bce(ys, p)))
    d_out = (p - ys) / n

    if params.kind == "irt":
        (theta,) = acts
        d_theta0 = d_out * theta[:, 0] * (1.0 - theta[:, 0])
        g_theta = np.zeros_like(params.raw_theta[:, 0])
        np.add.at(g_theta, e_idx, d_theta0)
        g_b = np.zeros_like(params.b)
        np.add.at(g_b, q_idx, -d_out)
        params.raw_theta[:, 0] -= lr * g_theta
        params.b -= lr * g_b
        return loss

    theta, hdiff, hdisc, x, f1, f2 = acts
    net = params.net
    d3 = d_out[:, None]                                   # (B,1)
    g_w3 = d3.T @ f2
    g_b3 = d3.sum(axis=0)
    d2 = (d3 @ net.w3) * f2 * (1.0 - f2)                  # (B,64)
    g_w2 = d2.T @ f1
    g_b2 = d2.sum(axis=0)
    d1 = (d2 @ net.w2) * f1 * (1.0 - f1)                  # (B,128)
    g_w1 = d1.T @ x
    g_b1 = d1.sum(axis=0)
    dx = d1 @ net.w1                                      # (B,K)
    qh = qmat[q_idx] * hdisc[:, None]
    d_theta = dx * qh * theta * (1.0 - theta)
    d_hdiff = -dx * qh * hdiff * (1.0 - hdiff)
    d_hdisc = (dx * qmat[q_idx] * (theta - hdiff)).sum(axis=1) * hdisc * (1.0 - hdisc)

    g_theta = np.zeros_like(params.raw_theta)
    np.add.at(g_theta, e_idx, d_theta)
    g_hdiff = np.zeros_like(params.raw_hdiff)
    np.add.at(g_hdiff, q_idx, d_hdiff)
    g_hdisc = np.zeros_like(params.raw_hdisc)
    np.add.at(g_hdisc, q_idx, d_hdisc)

    params.raw_theta -= lr * g_theta
    params.raw_hdiff -= lr * g_hdiff
    params.raw_hdisc -= lr * g_hdisc
    net.w1 -= lr * g_w1
    net.b1 -= lr * g_b1
    net.w2 -= lr * g_w2
    net.b2 -= lr * g_b2
    net.w3 -= lr * g_w3
    net.b3 -= lr * g_b3
    enforce_monotonicity(net)
    return loss


def _accuracy(params: _Params, qmat, e_idx, q_idx, ys) -> float:
    p, _ = _forward(params, qmat, e_idx, q_idx)
    return float(np.mean((p >= 0.5).astype(np.float64) == ys))


def _to_bundle(params: _Params, qmat: np.ndarray, k: int, n_q: int, learn_init: bool) -> CdmBundle:
    if learn_init:
        raw_init = params.raw_theta.mean(axis=0).copy()
    else:
        raw_init = np.zeros(max(k, 1), dtype=np.float64)
    if params.kind == "irt":
        return CdmBundle(kind="irt", n_concepts=1, n_questions=n_q,
                         raw_theta_init=raw_init, b=params.b.copy())
    return CdmBundle(
        kind="ncdm", n_concepts=k, n_questions=n_q, raw_theta_init=raw_init,
        q_matrix=qmat.copy(),
        h_diff=backend.sigmoid(params.raw_hdiff),
        h_disc=backend.sigmoid(params.raw_hdisc),
        net=params.net.copy(),
    )


def pretrain(corpus_train: Corpus, config: PretrainConfig) -> tuple[CdmBundle, list[dict]]:
    """Fit question/net parameters on the training split.

    Returns the bundle whose held-out interaction accuracy was best, plus a
    per-epoch history of {epoch, train_loss, valid_acc}. Examinee proficiency
    fitted here is discarded (unless it feeds the learned initialization).
    """
    if corpus_train.counts[3] == 0:
        raise ConfigError("pre-training corpus has no interactions")
    e_ids, q_ids, ys = _flatten(corpus_train)
    n = len(ys)
    n_examinees = int(e_ids.max()) + 1
    qmat = _question_matrix(corpus_train)
    n_q = qmat.shape[0]
    k = corpus_train.n_concepts if config.kind == "ncdm" else 1

    holdout_rng = substream(config.seed, TAG_PRETRAIN_HOLDOUT)
    order = holdout_rng.permutation(n)
    if config.valid_frac <= 0.0 or n < 2:
        n_valid = 0
    else:
        n_valid = min(n - 1, max(1, round_half_up(config.valid_frac * n)))
    valid_sel, train_sel = order[:n_valid], order[n_valid:]

    init_rng = substream(config.seed, TAG_PRETRAIN_INIT)
    params = _Params(config.kind, n_examinees, n_q, k, init_rng)

    best = params.snapshot()
    best_acc = -1.0
    stale = 0
    history: list[dict] = []
    for epoch in range(config.max_epochs):
        perm = substream(config.seed, TAG_PRETRAIN_ORDER, epoch).permutation(train_sel)
        losses = []
        for start in range(0, len(perm), config.batch_size):
            sel = perm[start:start + config.batch_size]
            loss = _sgd_step(params, qmat, e_ids[sel], q_ids[sel], ys[sel], config.lr)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            losses.append(loss)
        if n_valid:
            sel = valid_sel
        else:
            sel = train_sel
        valid_acc = _accuracy(params, qmat, e_ids[sel], q_ids[sel], ys[sel])
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                        "valid_acc": valid_acc})
        if valid_acc > best_acc:
            best_acc = valid_acc
            best = params.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return _to_bundle(best, qmat, k, n_q, config.learn_theta_init), history


# -- serialization --------------------------------------------------------------


def _arr_out(a: np.ndarray) -> dict:
    return {"shape": list(a.shape), "data": a.ravel().tolist()}


def _arr_in(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def _bundle_doc(bundle: CdmBundle) -> dict:
    doc: dict = {
        "kind": bundle.kind,
        "n_concepts": bundle.n_concepts,
        "n_questions": bundle.n_questions,
        "raw_theta_init": _arr_out(bundle.raw_theta_init),
    }
    if bundle.kind == "irt":
        doc["b"] = _arr_out(bundle.b)
    else:
        doc["q_matrix"] = _arr_out(bundle.q_matrix)
        doc["h_diff"] = _arr_out(bundle.h_diff)
        doc["h_disc"] = _arr_out(bundle.h_disc)
        net = bundle.net
        doc["net"] = {name: _arr_out(getattr(net, name))
                      for name in ("w1", "b1", "w2", "b2", "w3", "b3")}
    return doc


def save_bundle(bundle: CdmBundle, path) -> None:
    atomic_write_json(path, _bundle_doc(bundle))


def bundle_fingerprint(bundle: CdmBundle) -> str:
    """Content hash over every parameter; training must leave it unchanged."""
    import hashlib
    import json

    text = json.dumps(_bundle_doc(bundle), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def load_bundle(path) -> CdmBundle:
    import json

    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    kind = doc["kind"]
    common = dict(kind=kind, n_concepts=doc["n_concepts"], n_questions=doc["n_questions"],
                  raw_theta_init=_arr_in(doc["raw_theta_init"]))
    if kind == "irt":
        return CdmBundle(**common, b=_arr_in(doc["b"]))
    net = NcdmNet(**{name: _arr_in(doc["net"][name])
                     for name in ("w1", "b1", "w2", "b2", "w3", "b3")})
    return CdmBundle(**common, q_matrix=_arr_in(doc["q_matrix"]),
                     h_diff=_arr_in(doc["h_diff"]), h_disc=_arr_in(doc["h_disc"]), net=net)
