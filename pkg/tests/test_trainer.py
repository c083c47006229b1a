import numpy as np
import pytest

from disgen.augment import make_view_triple
from disgen.autodiff import Tape
from disgen.backbone import BackboneConfig, pretrain_backbone
from disgen.config import RunConfig
from disgen.data import split_by_size
from disgen.errors import ContractError
from disgen.explain import explain_graph
from disgen.synth import generate_size_shift_dataset
from disgen.trainer import (disgen_batch_objective, early_stop_check,
                            evaluate_f1, macro_f1, train_disgen)
from disgen.params import ParameterSet
from disgen.disentangle import init_head_params
from disgen.backbone import init_backbone_params


# ----------------------------------------------------------------------
# early stopping


def test_early_stop_never_fires_on_monotone_history():
    history = list(np.linspace(1.0, 0.1, 40))
    for k in range(1, 41):
        keep, best = early_stop_check(history[:k], patience=3)
        assert keep
        assert best == k - 1


def test_early_stop_trace_from_worked_example():
    history = [1.0, 0.5, 0.6, 0.6, 0.6]
    results = [early_stop_check(history[:k], 3) for k in range(1, 6)]
    assert [r[0] for r in results] == [True, True, True, True, False]
    assert results[-1][1] == 1  # stops at epoch 4, best = 1


def test_early_stop_tie_prefers_earliest():
    keep, best = early_stop_check([0.5, 0.3, 0.3, 0.3], patience=10)
    assert best == 1


def test_early_stop_empty_history_contract():
    with pytest.raises(ContractError):
        early_stop_check([], 5)


# ----------------------------------------------------------------------
# F1


def test_macro_f1_perfect():
    assert macro_f1([0, 1, 0, 1], [0, 1, 0, 1], 2) == 1.0


def test_macro_f1_confusion_matrix_hand_case():
    # TP=1, FP=1, FN=1, TN=1 for class 1 -> both classes F1 = 0.5
    y_true = [1, 0, 1, 0]
    y_pred = [1, 1, 0, 0]
    assert macro_f1(y_true, y_pred, 2) == pytest.approx(0.5)


def test_macro_f1_degenerate_single_class():
    # all ground truth class 0, all predicted class 0: absent class scores 0
    assert macro_f1([0, 0, 0], [0, 0, 0], 2) == pytest.approx(0.5)


# ----------------------------------------------------------------------
# objective wiring


def _mini_setup(seed=0, n_per_class=8):
    records = {r.id: r for r in generate_size_shift_dataset(
        seed=seed, n_small_per_class=n_per_class, n_large_per_class=n_per_class)}
    split = split_by_size(list(records.values()), seed=seed)
    bcfg = BackboneConfig(kind="gcn", layers=2, hidden=8, in_dim=6)
    model = pretrain_backbone([records[i] for i in split.train], bcfg,
                              epochs=10, seed=seed)
    triples = {i: make_view_triple(records[i], explain_graph(records[i], model),
                                   model) for i in split.train}
    return records, split, model, triples


def _mini_config(**overrides):
    base = dict(backbone="gcn", layers=2, hidden=8, d_h=8, d_s=4,
                max_epochs=5, patience=50, batch_size=8, beta3=1.0,
                pretrain_epochs=5, seed=0)
    base.update(overrides)
    return RunConfig(**base)


def test_baseline_weights_reduce_to_supervision():
    records, split, model, triples = _mini_setup()
    cfg = _mini_config(beta1=0.0, beta3=0.0, alpha2=0.0)
    batch = [triples[i] for i in split.train[:4]]
    rng = np.random.default_rng(0)
    params = init_backbone_params(
        BackboneConfig(kind="gcn", layers=2, hidden=8, in_dim=6), 0, rng)
    init_head_params(8, cfg.d_h, cfg.d_s, 2, rng, params=params)
    tape = Tape()
    leaves = params.leaves(tape)
    bcfg = BackboneConfig(kind="gcn", layers=2, hidden=8, in_dim=6)
    total, breakdown = disgen_batch_objective(tape, leaves, bcfg, batch, cfg)
    assert breakdown.total == breakdown.beta2 * breakdown.l_t
    # gradients flow only through supervision: size head gets exact zeros
    grads = tape.backward(total).by_name()
    np.testing.assert_array_equal(grads["size_head.W"],
                                  np.zeros_like(grads["size_head.W"]))
    np.testing.assert_array_equal(grads["enc2.W"],
                                  np.zeros_like(grads["enc2.W"]))


def test_train_disgen_runs_and_is_deterministic():
    records, split, model, triples = _mini_setup()
    cfg = _mini_config()
    p1, r1, rows1 = train_disgen(records, split, triples, cfg)
    p2, r2, rows2 = train_disgen(records, split, triples, cfg)
    assert p1.checksum() == p2.checksum()
    assert r1.to_dict() == r2.to_dict()
    assert [x.total for x in rows1] == [x.total for x in rows2]
    assert 0.0 <= r1.f1_small <= 1.0
    assert 0.0 <= r1.f1_large <= 1.0


def test_train_requires_triples_for_every_train_graph():
    records, split, model, triples = _mini_setup()
    triples.pop(split.train[0])
    with pytest.raises(ContractError, match="no view triple"):
        train_disgen(records, split, triples, _mini_config())


def test_evaluate_f1_pure():
    records, split, model, triples = _mini_setup()
    cfg = _mini_config(max_epochs=2)
    params, report, _ = train_disgen(records, split, triples, cfg)
    checksum = params.checksum()
    bcfg = BackboneConfig(kind="gcn", layers=2, hidden=8, in_dim=6)
    f1 = evaluate_f1(params, bcfg, [records[i] for i in split.small_test], 2)
    assert params.checksum() == checksum
    assert 0.0 <= f1 <= 1.0


def test_warm_start_copies_backbone_weights():
    records, split, model, triples = _mini_setup()
    cfg = _mini_config(max_epochs=1, warm_start=True, lr=1e-12)
    params, _, _ = train_disgen(records, split, triples, cfg,
                                warm_start=model.params)
    # with a negligible lr the conv weights stay at the pretrained values
    np.testing.assert_allclose(params["backbone.conv0.W"],
                               model.params["backbone.conv0.W"], atol=1e-6)


def test_upsampling_changes_batch_statistics():
    records, split, model, triples = _mini_setup()
    cfg = _mini_config(max_epochs=1, upsample_label=0, upsample_ratio=3)
    params, report, rows = train_disgen(records, split, triples, cfg)
    base_cfg = _mini_config(max_epochs=1)
    _, _, base_rows = train_disgen(records, split, triples, base_cfg)
    assert len(rows) > len(base_rows)  # more steps from the expanded id list
