import numpy as np
import pytest

from disgen.autodiff import Tape
from disgen.disentangle import (HiddenBatch, LossBreakdown, contrastive_loss,
                                decoupling_loss, encode_views, init_head_params,
                                optimal_projection, supervision_loss,
                                total_loss)
from disgen.errors import ContractError
from disgen.gradcheck import finite_diff_check
from disgen.params import ParameterSet

WORKED_HT = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
WORKED_HS = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])


def _s_matrix(rows):
    tape = Tape()
    return tape, tape.leaf(np.asarray(rows, dtype=float))


# ----------------------------------------------------------------------
# contrastive loss


def test_contrastive_symmetric_views_give_ln2():
    # s^(1) = s^(2) makes c1 = c2, so the term is ln 2 for any tau
    for tau in (0.1, 0.5, 1.0, 3.0):
        tape, s = _s_matrix([[1.0, 2.0], [0.5, -1.0], [0.5, -1.0]])
        loss = contrastive_loss(tape, s, tau=tau)
        assert loss.item() == pytest.approx(np.log(2.0), abs=1e-12)


def test_contrastive_closed_form_opposite_views():
    # c1 = 1, c2 = -1, tau = 1 -> ln(1 + e^-2)
    tape, s = _s_matrix([[1.0, 0.0], [2.0, 0.0], [-1.0, 0.0]])
    loss = contrastive_loss(tape, s, tau=1.0)
    assert loss.item() == pytest.approx(np.log(1 + np.exp(-2.0)), abs=1e-12)


def test_contrastive_monotone_in_cosine_gap():
    # rotate s^(2) away from s while s^(1) stays aligned: loss must fall
    values = []
    for angle in np.linspace(0.0, np.pi, 12):
        s2 = [np.cos(angle), np.sin(angle)]
        tape, s = _s_matrix([[1.0, 0.0], [1.0, 0.0], s2])
        values.append(contrastive_loss(tape, s, tau=0.5).item())
    assert all(b < a for a, b in zip(values, values[1:]))


def test_contrastive_zero_norm_guard(caplog):
    tape, s = _s_matrix([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    loss = contrastive_loss(tape, s, tau=0.5)
    assert np.isfinite(loss.item())


def test_contrastive_tau_contract():
    tape, s = _s_matrix([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ContractError):
        contrastive_loss(tape, s, tau=0.0)


# ----------------------------------------------------------------------
# supervision loss


def test_supervision_uniform_logits_closed_form():
    tape = Tape()
    logits = tape.leaf(np.zeros((3, 2)))
    loss = supervision_loss(tape, logits, [0], alpha1=1.0, alpha2=1.0)
    assert loss.item() == pytest.approx(2 * np.log(2.0), abs=1e-12)


def test_supervision_confident_logits_vanish():
    tape = Tape()
    row = [20.0, 0.0]
    logits = tape.leaf(np.array([row, row, row]))
    loss = supervision_loss(tape, logits, [0], alpha1=1.0, alpha2=1.0)
    assert loss.item() < 1e-6


def test_supervision_alpha2_zero_kills_view_gradient():
    rng = np.random.default_rng(0)
    tape = Tape()
    logits = tape.leaf(rng.normal(size=(3, 2)), name="logits")
    loss = supervision_loss(tape, logits, [1], alpha1=1.0, alpha2=0.0)
    grad = tape.backward(loss).by_name()["logits"]
    np.testing.assert_array_equal(grad[2], np.zeros(2))  # t^(2) row untouched
    assert np.any(grad[0] != 0.0)
    np.testing.assert_array_equal(grad[1], np.zeros(2))  # t^(1) never supervised


def test_supervision_label_contract():
    tape = Tape()
    logits = tape.leaf(np.zeros((3, 2)))
    with pytest.raises(ContractError):
        supervision_loss(tape, logits, [2])


# ----------------------------------------------------------------------
# projection and decoupling


def _hidden(h_t, h_s):
    tape = Tape()
    return tape, HiddenBatch(h_t=tape.leaf(np.asarray(h_t, float), name="h_t"),
                             h_s=tape.leaf(np.asarray(h_s, float), name="h_s"))


def test_projection_identity_when_equal():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(6, 3))
    tape, batch = _hidden(h, h)
    _, d = optimal_projection(tape, batch, ridge=0.0)
    assert d.item() < 1e-12


def test_projection_worked_instance():
    tape, batch = _hidden(WORKED_HT, WORKED_HS)
    p, d = optimal_projection(tape, batch, ridge=0.0)
    np.testing.assert_allclose(p, np.array([[2, -1], [-1, 2]]) / 3.0, atol=1e-13)
    assert d.item() == pytest.approx(np.sqrt(2.0 / 3.0), abs=1e-13)


def test_projection_invariant_under_row_permutation():
    rng = np.random.default_rng(2)
    h_t = rng.normal(size=(12, 4))
    h_s = rng.normal(size=(12, 4))
    tape, batch = _hidden(h_t, h_s)
    _, d_base = optimal_projection(tape, batch, ridge=0.0)
    for _ in range(5):
        perm = rng.permutation(12)
        tape_p, batch_p = _hidden(h_t[perm], h_s[perm])
        _, d_perm = optimal_projection(tape_p, batch_p, ridge=0.0)
        assert d_perm.item() == pytest.approx(d_base.item(), abs=1e-10)


def test_residual_vanishes_inside_column_space():
    rng = np.random.default_rng(3)
    for _ in range(10):
        h_t = rng.normal(size=(9, 3))
        r = rng.normal(size=(3, 3))
        tape, batch = _hidden(h_t, h_t @ r)
        _, d = optimal_projection(tape, batch, ridge=0.0)
        assert d.item() < 1e-8


def test_decoupling_epsilon_floor():
    tape = Tape()
    d = tape.leaf(np.float64(0.0))
    assert decoupling_loss(tape, d, eps=1e-8).item() == pytest.approx(1e8, rel=1e-9)


def test_decoupling_worked_value():
    tape = Tape()
    d = tape.leaf(np.sqrt(2.0 / 3.0))
    assert decoupling_loss(tape, d, eps=1e-8).item() == pytest.approx(1.5, rel=1e-7)


def test_decoupling_strictly_decreasing_in_d():
    values = []
    for dv in np.linspace(0.1, 5.0, 20):
        tape = Tape()
        values.append(decoupling_loss(tape, tape.leaf(np.float64(dv))).item())
    assert all(b < a for a, b in zip(values, values[1:]))


# ----------------------------------------------------------------------
# total objective


def test_total_loss_weighted_sum_bit_exact():
    tape = Tape()
    l_s = tape.leaf(np.float64(0.37))
    l_t = tape.leaf(np.float64(1.21))
    l_d = tape.leaf(np.float64(0.003))
    d = tape.leaf(np.float64(9.0))
    total, breakdown = total_loss(tape, l_s, l_t, l_d, d, 0.5, 1.0, 5e4)
    assert breakdown.total == (0.5 * 0.37 + 1.0 * 1.21) + 5e4 * 0.003
    assert breakdown.total == total.item()


def test_total_loss_weight_selection_and_linearity():
    tape = Tape()
    l_s = tape.leaf(np.float64(2.0))
    l_t = tape.leaf(np.float64(3.0))
    l_d = tape.leaf(np.float64(5.0))
    d = tape.leaf(np.float64(1.0))
    t1, _ = total_loss(tape, l_s, l_t, l_d, d, 0.0, 1.0, 0.0)
    assert t1.item() == 3.0
    t2, _ = total_loss(tape, l_s, l_t, l_d, d, 0.0, 0.0, 2.0)
    t3, _ = total_loss(tape, l_s, l_t, l_d, d, 0.0, 0.0, 4.0)
    assert t3.item() == pytest.approx(2 * t2.item(), rel=1e-15)


def test_loss_breakdown_csv_row():
    row = LossBreakdown(l_s=0.1, l_t=0.2, l_d=0.3, total=0.6, d=2.0,
                        beta1=1.0, beta2=1.0, beta3=1.0)
    assert LossBreakdown.CSV_HEADER == "step,L_s,L_t,L_d,D,total"
    assert row.csv_row(7).startswith("7,0.1,0.2,0.3,2.0,0.6")


# ----------------------------------------------------------------------
# encoders


def test_encode_views_zero_input_gives_bias_logits():
    rng = np.random.default_rng(4)
    params = init_head_params(d_g=3, d_h=4, d_s=2, n_classes=2, rng=rng)
    params["task_head.b"] = np.array([[0.7, -0.3]])
    tape = Tape()
    leaves = params.leaves(tape)
    pooled = tape.leaf(np.zeros((3, 3)))
    hidden, t_logits, s_vecs = encode_views(tape, leaves, pooled)
    np.testing.assert_array_equal(hidden.h_t.value, np.zeros((3, 4)))
    np.testing.assert_allclose(t_logits.value,
                               np.tile([0.7, -0.3], (3, 1)), atol=1e-15)


def test_encode_views_identical_rows_for_identical_views():
    rng = np.random.default_rng(5)
    params = init_head_params(d_g=3, d_h=4, d_s=2, n_classes=2, rng=rng)
    tape = Tape()
    leaves = params.leaves(tape)
    row = rng.normal(size=3)
    pooled = tape.leaf(np.tile(row, (3, 1)))
    hidden, t_logits, s_vecs = encode_views(tape, leaves, pooled)
    for mat in (hidden.h_t.value, hidden.h_s.value, t_logits.value, s_vecs.value):
        np.testing.assert_array_equal(mat[0], mat[1])
        np.testing.assert_array_equal(mat[0], mat[2])


def test_hidden_batch_contract():
    tape = Tape()
    with pytest.raises(ContractError, match="divisible by 3"):
        HiddenBatch(h_t=tape.leaf(np.zeros((4, 2))),
                    h_s=tape.leaf(np.zeros((4, 2))))


# ----------------------------------------------------------------------
# gradients: the envelope property of the inner minimization


def test_constant_popt_gradient_matches_true_objective():
    # finite differences re-solve P_opt at every probe, so they
    # differentiate the TRUE min-residual objective; the analytic path
    # holds P_opt fixed. The envelope property makes both agree.
    rng = np.random.default_rng(6)
    for trial in range(5):
        params = ParameterSet()
        params.add("h_t", rng.normal(size=(12, 4)))
        params.add("h_s", rng.normal(size=(12, 4)))

        def loss(params, tape):
            leaves = params.leaves(tape)
            batch = HiddenBatch(h_t=leaves["h_t"], h_s=leaves["h_s"])
            _, d = optimal_projection(tape, batch, ridge=0.0)
            return d

        report = finite_diff_check(loss, params, step=1e-5, tolerance=2e-3)
        assert report.max_relative_error < 2e-3, report.per_parameter


def test_row_order_invariance_of_all_losses():
    rng = np.random.default_rng(7)
    b = 4
    s_rows = rng.normal(size=(3 * b, 3))
    t_rows = rng.normal(size=(3 * b, 2))
    h_t = rng.normal(size=(3 * b, 4))
    h_s = rng.normal(size=(3 * b, 4))
    labels = [int(x) for x in rng.integers(0, 2, size=b)]

    def all_losses(order):
        row_perm = np.concatenate([[3 * g, 3 * g + 1, 3 * g + 2] for g in order])
        tape = Tape()
        ls = contrastive_loss(tape, tape.leaf(s_rows[row_perm]), tau=0.5).item()
        lt = supervision_loss(tape, tape.leaf(t_rows[row_perm]),
                              [labels[g] for g in order]).item()
        batch = HiddenBatch(h_t=tape.leaf(h_t[row_perm]),
                            h_s=tape.leaf(h_s[row_perm]))
        _, d = optimal_projection(tape, batch, ridge=0.0)
        ld = decoupling_loss(tape, d).item()
        return ls, lt, ld

    base = all_losses(list(range(b)))
    for _ in range(5):
        perm = [int(x) for x in rng.permutation(b)]
        got = all_losses(perm)
        np.testing.assert_allclose(got, base, atol=1e-10)
