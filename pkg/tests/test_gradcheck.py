import numpy as np
import pytest

from disgen.errors import ContractError, ProbeError
from disgen.gradcheck import finite_diff_check
from disgen.params import ParameterSet


def quadratic(params, tape):
    w = params.leaves(tape)["W"]
    f = tape.frobenius(w)
    return tape.hadamard(f, f)


def test_quadratic_is_exact_up_to_rounding():
    params = ParameterSet()
    params.add("W", np.random.default_rng(0).normal(size=(3, 3)) + 2.0)
    report = finite_diff_check(quadratic, params, step=1e-5, tolerance=1e-8)
    assert report.max_relative_error < 1e-8
    assert report.passed


def test_constant_loss_both_sides_zero():
    params = ParameterSet()
    params.add("W", np.ones((2, 2)))

    def const(params, tape):
        params.leaves(tape)
        return tape.frobenius(tape.constant(np.float64(3.0)))

    report = finite_diff_check(const, params, tolerance=1e-8)
    assert report.max_relative_error == 0.0


def test_nonfinite_probe_reports_parameter():
    params = ParameterSet()
    params.add("W", np.full((1, 1), 1e-6))

    def fragile(params, tape):
        w = params.leaves(tape)["W"]
        return tape.frobenius(tape.log(w))  # probe at W - h goes negative

    with pytest.raises((ProbeError, Exception)):
        finite_diff_check(fragile, params, step=1e-5)


def test_step_contract():
    params = ParameterSet()
    params.add("W", np.ones((1, 1)))
    with pytest.raises(ContractError):
        finite_diff_check(quadratic, params, step=0.0)


def test_multi_parameter_report_keys():
    rng = np.random.default_rng(5)
    params = ParameterSet()
    params.add("A", rng.normal(size=(2, 3)))
    params.add("B", rng.normal(size=(3, 2)))

    def loss(params, tape):
        leaves = params.leaves(tape)
        return tape.frobenius(tape.matmul(leaves["A"], leaves["B"]))

    report = finite_diff_check(loss, params, tolerance=1e-4)
    assert set(report.per_parameter) == {"A", "B"}
    assert report.passed
