"""Response models: forward values, gradient oracles, inner descent, pre-training."""
import math

import numpy as np
import pytest

from catlab import cdm
from catlab.errors import ContractError, TrainingError
from catlab.dataset import Interaction

from .synth import random_corpus, random_irt_bundle, random_ncdm_bundle, toy_separable_corpus


def logit(p):
    return math.log(p / (1.0 - p))


def fd_grad(bundle, state, item, y, h=1e-5):
    g = np.zeros_like(state.raw)
    for k in range(len(g)):
        rp, rm = state.raw.copy(), state.raw.copy()
        rp[k] += h
        rm[k] -= h
        lp = cdm.bce_loss(y, cdm.predict(bundle, cdm.ProficiencyState(rp), item))
        lm = cdm.bce_loss(y, cdm.predict(bundle, cdm.ProficiencyState(rm), item))
        g[k] = (lp - lm) / (2 * h)
    return g


def straight_line_ncdm(raw, q, hdiff, hdisc, w1, b1, w2, b2, w3, b3):
    """Index-by-index scalar evaluation, independent of the array kernels."""
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    kk = len(raw)
    theta = [sig(r) for r in raw]
    x = [q[k] * (theta[k] - hdiff[k]) * hdisc for k in range(kk)]
    f1 = [sig(sum(w1[j][k] * x[k] for k in range(kk)) + b1[j]) for j in range(len(b1))]
    f2 = [sig(sum(w2[m][j] * f1[j] for j in range(len(b1))) + b2[m]) for m in range(len(b2))]
    return sig(sum(w3[0][m] * f2[m] for m in range(len(b2))) + b3[0])


# -- predict ------------------------------------------------------------------


def test_irt_predict_symmetric_point():
    bundle = random_irt_bundle(0)
    bundle.b[3] = 0.7
    state = cdm.ProficiencyState(np.array([logit(0.7)]))
    assert cdm.predict(bundle, state, bundle.item(3)) == pytest.approx(0.5, abs=1e-12)


def test_ncdm_zero_input_forcing():
    # theta == h_diff makes x vanish, so Q and h_disc cannot matter
    bundle = random_ncdm_bundle(1)
    qid = 4
    raw = np.array([logit(v) for v in bundle.h_diff[qid]])
    state = cdm.ProficiencyState(raw)
    p0 = cdm.predict(bundle, state, bundle.item(qid))
    altered = cdm.NcdmItemParams(concepts=1.0 - bundle.q_matrix[qid],
                                 h_diff=bundle.h_diff[qid],
                                 h_disc=0.123)
    assert cdm.predict(bundle, state, altered) == pytest.approx(p0, abs=1e-15)


def test_ncdm_matches_straight_line():
    for seed in range(5):
        bundle = random_ncdm_bundle(seed, k=4, n_questions=6)
        rng = np.random.default_rng(100 + seed)
        state = cdm.ProficiencyState(rng.normal(0.0, 1.5, 4))
        for qid in range(6):
            p = cdm.predict(bundle, state, bundle.item(qid))
            net = bundle.net
            ref = straight_line_ncdm(
                state.raw.tolist(), bundle.q_matrix[qid].tolist(),
                bundle.h_diff[qid].tolist(), float(bundle.h_disc[qid]),
                net.w1.tolist(), net.b1.tolist(), net.w2.tolist(),
                net.b2.tolist(), net.w3.tolist(), net.b3.tolist())
            assert p == pytest.approx(ref, abs=1e-12)


def test_predict_dimension_mismatch():
    bundle = random_ncdm_bundle(2, k=5)
    with pytest.raises(ContractError):
        cdm.predict(bundle, cdm.ProficiencyState(np.zeros(4)), bundle.item(0))
    bad_item = cdm.NcdmItemParams(np.ones(3), np.full(3, 0.5), 0.5)
    with pytest.raises(ContractError):
        cdm.predict(bundle, cdm.ProficiencyState(np.zeros(5)), bad_item)
    irt = random_irt_bundle(0)
    with pytest.raises(ContractError):
        cdm.predict(irt, cdm.ProficiencyState(np.zeros(1)), bad_item)


def test_predict_in_open_interval():
    for seed in range(3):
        bundle = random_ncdm_bundle(seed)
        rng = np.random.default_rng(seed)
        for _ in range(20):
            state = cdm.ProficiencyState(rng.normal(0, 3, bundle.n_concepts))
            p = cdm.predict(bundle, state, bundle.item(int(rng.integers(bundle.n_questions))))
            assert 0.0 < p < 1.0


# -- loss ---------------------------------------------------------------------


def test_bce_values():
    assert cdm.bce_loss(1, 0.5) == pytest.approx(math.log(2), abs=1e-12)
    assert cdm.bce_loss(0, 0.5) == pytest.approx(math.log(2), abs=1e-12)
    assert cdm.bce_loss(1, 0.8) == pytest.approx(-math.log(0.8), abs=1e-12)


def test_bce_clamped_finite():
    assert math.isfinite(cdm.bce_loss(1, 0.0))
    assert math.isfinite(cdm.bce_loss(0, 1.0))
    assert cdm.bce_loss(1, 0.0) == pytest.approx(-math.log(1e-7), rel=1e-9)


# -- gradients ----------------------------------------------------------------


def test_irt_grad_symmetric_point():
    bundle = random_irt_bundle(3)
    bundle.b[0] = 0.6
    raw = logit(0.6)
    state = cdm.ProficiencyState(np.array([raw]))
    g = cdm.grad_theta(bundle, state, bundle.item(0), 1)
    sig_prime = 0.6 * 0.4
    assert g[0] == pytest.approx(-0.5 * sig_prime, abs=1e-12)


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(42)
    for i in range(50):
        if i % 2 == 0:
            bundle = random_irt_bundle(i)
            qid = int(rng.integers(bundle.n_questions))
        else:
            bundle = random_ncdm_bundle(i, k=int(rng.integers(2, 8)))
            qid = int(rng.integers(bundle.n_questions))
        state = cdm.ProficiencyState(rng.normal(0.0, 1.0, bundle.n_concepts))
        y = int(rng.integers(0, 2))
        g = cdm.grad_theta(bundle, state, bundle.item(qid), y)
        fd = fd_grad(bundle, state, bundle.item(qid), y)
        denom = np.maximum(np.abs(fd), 1e-8)
        assert np.max(np.abs(g - fd) / denom) < 1e-4


def test_grad_vanishes_when_saturated():
    bundle = random_irt_bundle(5)
    bundle.b[0] = -30.0
    state = cdm.ProficiencyState(np.array([4.0]))
    assert cdm.predict(bundle, state, bundle.item(0)) > 1.0 - 1e-9
    g = cdm.grad_theta(bundle, state, bundle.item(0), 1)
    assert np.linalg.norm(g) < 1e-5


# -- inner loop ---------------------------------------------------------------


def test_inner_single_response_moves_toward_label():
    bundle = random_irt_bundle(6)
    state = cdm.ProficiencyState(np.zeros(1))
    item = bundle.item(2)
    p0 = cdm.predict(bundle, state, item)
    out = cdm.inner_optimize(bundle, state, [(item, 1)], k_steps=50, lr_inner=0.5)
    assert cdm.predict(bundle, out, item) > p0


def test_inner_rejects_zero_steps():
    bundle = random_irt_bundle(7)
    with pytest.raises(ContractError):
        cdm.inner_optimize(bundle, bundle.init_state(), [(bundle.item(0), 1)], 0, 0.1)


def test_inner_single_step_is_one_gradient_step():
    for seed in range(4):
        bundle = random_ncdm_bundle(seed, k=3, n_questions=5)
        rng = np.random.default_rng(seed)
        state = cdm.ProficiencyState(rng.normal(0, 1, 3))
        responses = [(bundle.item(i), int(rng.integers(0, 2))) for i in range(4)]
        out = cdm.inner_optimize(bundle, state, responses, k_steps=1, lr_inner=0.1)
        # mean loss gradient via central differences, entirely outside the kernels
        fd = np.zeros(3)
        for k in range(3):
            for sign in (1, -1):
                r = state.raw.copy()
                r[k] += sign * 1e-5
                st = cdm.ProficiencyState(r)
                losses = [cdm.bce_loss(y, cdm.predict(bundle, st, it)) for it, y in responses]
                fd[k] += sign * np.mean(losses) / (2 * 1e-5)
        expect = state.raw - 0.1 * fd
        assert np.max(np.abs(out.raw - expect)) < 1e-9


def test_inner_empty_responses_warns():
    bundle = random_irt_bundle(8)
    state = cdm.ProficiencyState(np.array([0.3]))
    with pytest.warns(UserWarning):
        out = cdm.inner_optimize(bundle, state, [], 5, 0.1)
    assert np.array_equal(out.raw, state.raw)


def test_inner_default_config_descends():
    for seed in range(6):
        rng = np.random.default_rng(seed)
        bundle = random_ncdm_bundle(seed) if seed % 2 else random_irt_bundle(seed)
        qids = rng.choice(bundle.n_questions, size=6, replace=False)
        responses = [(bundle.item(int(q)), int(rng.integers(0, 2))) for q in qids]
        state = cdm.ProficiencyState(rng.normal(0, 1, bundle.n_concepts))
        packed = cdm.pack_items(bundle, [it for it, _ in responses])
        ys = np.array([y for _, y in responses], dtype=float)
        before = cdm.loss_packed(bundle, state, packed, ys)
        out = cdm.inner_optimize(bundle, state, responses, k_steps=5, lr_inner=0.1)
        after = cdm.loss_packed(bundle, out, packed, ys)
        assert after <= before + 1e-12


# -- monotonicity -------------------------------------------------------------


def test_enforce_monotonicity_identity_and_clamp():
    bundle = random_ncdm_bundle(9)
    net = bundle.net.copy()
    same = cdm.enforce_monotonicity(net)
    assert np.array_equal(same.w1, bundle.net.w1)

    net2 = bundle.net.copy()
    net2.w2[5, 7] = -0.3
    b2_before = net2.b2.copy()
    cdm.enforce_monotonicity(net2)
    assert net2.w2[5, 7] == 0.0
    net2.w2[5, 7] = bundle.net.w2[5, 7]
    assert np.array_equal(net2.w2, bundle.net.w2)
    assert np.array_equal(net2.b2, b2_before)


def test_monotone_in_every_theta_component():
    # 100 seeded probes, 10 concepts: nudging any raw component up never lowers p
    rng = np.random.default_rng(2024)
    for probe in range(100):
        bundle = random_ncdm_bundle(probe, k=10, n_questions=3)
        state = cdm.ProficiencyState(rng.normal(0.0, 1.5, 10))
        qid = int(rng.integers(3))
        item = bundle.item(qid)
        p0 = cdm.predict(bundle, state, item)
        k = int(rng.integers(10))
        bumped = state.raw.copy()
        bumped[k] += 1e-3
        p1 = cdm.predict(bundle, cdm.ProficiencyState(bumped), item)
        assert p1 - p0 >= -1e-9


# -- pre-training -------------------------------------------------------------


def test_pretrain_toy_separable_irt():
    corpus = toy_separable_corpus()
    cfg = cdm.PretrainConfig(kind="irt", lr=1.0, max_epochs=60, patience=60,
                             batch_size=16, seed=3, valid_frac=0.0)
    bundle, history = cdm.pretrain(corpus, cfg)
    # with no holdout the history's valid_acc is accuracy on the training set
    assert max(h["valid_acc"] for h in history) >= 0.95
    assert bundle.kind == "irt" and bundle.b.shape == (8,)


def test_pretrain_toy_separable_ncdm():
    corpus = toy_separable_corpus()
    cfg = cdm.PretrainConfig(kind="ncdm", lr=5.0, max_epochs=4000, patience=4000,
                             batch_size=16, seed=3, valid_frac=0.0)
    bundle, history = cdm.pretrain(corpus, cfg)
    assert max(h["valid_acc"] for h in history) >= 0.95
    assert np.all(bundle.net.w1 >= 0) and np.all(bundle.net.w2 >= 0) and np.all(bundle.net.w3 >= 0)
    assert np.all(bundle.h_diff > 0) and np.all(bundle.h_diff < 1)
    assert np.all(bundle.h_disc > 0) and np.all(bundle.h_disc < 1)


def test_pretrain_checkpoint_is_best():
    corpus = random_corpus(13, n_examinees=20, n_per_examinee=12, n_questions=40)
    cfg = cdm.PretrainConfig(kind="irt", lr=0.5, max_epochs=30, patience=30,
                             batch_size=32, seed=5)
    _, history = cdm.pretrain(corpus, cfg)
    accs = [h["valid_acc"] for h in history]
    assert max(accs) >= accs[-1]


def test_pretrain_divergence_reports_step(monkeypatch):
    corpus = random_corpus(14, n_examinees=4, n_per_examinee=6)
    monkeypatch.setattr(cdm, "_sgd_step", lambda *a, **k: float("nan"))
    with pytest.raises(TrainingError, match="epoch 0, batch 0"):
        cdm.pretrain(corpus, cdm.PretrainConfig(kind="irt", seed=0))


def test_pretrain_learned_init_flag():
    corpus = toy_separable_corpus()
    cfg = cdm.PretrainConfig(kind="irt", lr=1.0, max_epochs=20, patience=20,
                             batch_size=16, seed=3, valid_frac=0.0, learn_theta_init=True)
    bundle, _ = cdm.pretrain(corpus, cfg)
    assert bundle.raw_theta_init.shape == (1,)
    default_cfg = cdm.PretrainConfig(kind="irt", lr=1.0, max_epochs=20, patience=20,
                                     batch_size=16, seed=3, valid_frac=0.0)
    default_bundle, _ = cdm.pretrain(corpus, default_cfg)
    assert np.array_equal(default_bundle.raw_theta_init, np.zeros(1))


# -- serialization ------------------------------------------------------------


def test_bundle_roundtrip_bit_exact(tmp_path):
    for seed, maker in ((0, random_irt_bundle), (1, random_ncdm_bundle)):
        bundle = maker(seed)
        path = tmp_path / f"bundle_{seed}.json"
        cdm.save_bundle(bundle, str(path))
        loaded = cdm.load_bundle(str(path))
        assert loaded.kind == bundle.kind
        assert loaded.n_concepts == bundle.n_concepts
        assert np.array_equal(loaded.raw_theta_init, bundle.raw_theta_init)
        if bundle.kind == "irt":
            assert np.array_equal(loaded.b, bundle.b)
        else:
            assert np.array_equal(loaded.q_matrix, bundle.q_matrix)
            assert np.array_equal(loaded.h_diff, bundle.h_diff)
            assert np.array_equal(loaded.h_disc, bundle.h_disc)
            for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
                assert np.array_equal(getattr(loaded.net, name), getattr(bundle.net, name))


def test_bundle_save_deterministic(tmp_path):
    bundle = random_ncdm_bundle(4)
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    cdm.save_bundle(bundle, str(p1))
    cdm.save_bundle(bundle, str(p2))
    assert p1.read_bytes() == p2.read_bytes()
