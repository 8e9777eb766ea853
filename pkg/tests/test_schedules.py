import json
import math
from decimal import Decimal, getcontext

import numpy as np
import pytest

from lumen.errors import DomainError
from lumen.schedules import (
    DiffusionSchedule, cosine_schedule, linear_schedule, load_schedule, p2_weights, schedule_from_config,
)


def decimal_alpha_bar(T, start, end):
    getcontext().prec = 60
    s, e = Decimal(repr(start)), Decimal(repr(end))
    prod = Decimal(1)
    for i in range(T):
        beta = s + (e - s) * Decimal(i) / Decimal(T - 1)
        prod *= 1 - beta
    return prod


def test_single_step():
    s = linear_schedule(1, 0.5, 0.5)
    assert s.alpha_bar[0] == 0.5
    assert s.snr[0] == 1.0


def test_linear_product_against_high_precision():
    s = linear_schedule(1000, 1e-4, 0.02)
    ref = decimal_alpha_bar(1000, 1e-4, 0.02)
    assert abs(Decimal(s.alpha_bar[-1]) / ref - 1) < Decimal("1e-10")


def test_linear_endpoints():
    s = linear_schedule(1000)
    assert s.beta[0] == 1e-4 and s.beta[-1] == 0.02
    assert s.T == 1000


@pytest.mark.parametrize("args", [(10, 0.02, 1e-4), (10, 0.0, 0.01), (10, 0.1, 1.0), (0, 1e-4, 0.02)])
def test_linear_bad_parameters(args):
    with pytest.raises(DomainError):
        linear_schedule(*args)


def test_cosine_endpoints():
    s = cosine_schedule(1000, 0.008)
    f = lambda t: math.cos((t / 1000 + 0.008) / 1.008 * math.pi / 2) ** 2
    assert s.alpha_bar[-1] < 1e-3
    assert s.alpha_bar[0] < 1.0
    assert s.alpha_bar[0] == pytest.approx(f(1) / f(0), rel=1e-12)
    assert np.all(s.beta <= 0.999)
    with pytest.raises(DomainError):
        cosine_schedule(100, 0.0)


def test_cosine_matches_direct_ratio_before_clipping():
    s = cosine_schedule(1000)
    t = np.arange(0, 1001)
    f = np.cos((t / 1000 + 0.008) / 1.008 * np.pi / 2) ** 2
    direct = f[1:] / f[0]
    unclipped = s.beta < 0.999
    np.testing.assert_allclose(s.alpha_bar[unclipped], direct[unclipped], rtol=1e-10)


@pytest.mark.parametrize("sched", [linear_schedule(1000), cosine_schedule(1000)], ids=["linear", "cosine"])
def test_schedule_invariants(sched):
    assert np.all((sched.beta > 0) & (sched.beta < 1))
    assert np.all(np.diff(sched.alpha_bar) < 0)
    assert np.all((sched.alpha_bar > 0) & (sched.alpha_bar < 1))
    assert np.all(np.diff(sched.snr) < 0)
    assert np.all(sched.lambda_p2 > 0)
    np.testing.assert_allclose(sched.sigma**2, sched.beta, rtol=1e-15)
    # recurrence holds exactly, in the same left-to-right order
    prod = 1.0
    for t in range(sched.T):
        prod = prod * (1.0 - sched.beta[t])
        assert sched.alpha_bar[t] == prod


def test_p2_gamma_zero_is_ones():
    s = linear_schedule(100, p2_gamma=0.0)
    np.testing.assert_array_equal(s.lambda_p2, 1.0)
    np.testing.assert_array_equal(p2_weights(s, 1.0, 0.0), 1.0)


def test_p2_increasing_in_t():
    s = linear_schedule(1000)
    assert np.all(np.diff(s.lambda_p2) > 0)


def test_p2_first_step_direct():
    s = linear_schedule(1000)
    ab1 = 1 - 1e-4
    assert s.lambda_p2[0] == pytest.approx(1 / (1 + ab1 / (1 - ab1)), rel=1e-12)


def test_p2_bad_constants():
    with pytest.raises(DomainError):
        p2_weights(np.ones(3), k=-1.0)
    with pytest.raises(DomainError):
        p2_weights(np.ones(3), gamma=-0.5)


def test_custom_beta_validation():
    with pytest.raises(DomainError):
        DiffusionSchedule(np.array([0.1, 1.0]))
    with pytest.raises(DomainError):
        DiffusionSchedule(np.array([]))


def test_alpha_bar_zero_convention_and_step_check():
    s = linear_schedule(10)
    assert s.alpha_bar_at(0) == 1.0
    assert s.alpha_bar_at(3) == s.alpha_bar[2]
    with pytest.raises(DomainError):
        s.check_step(11)
    with pytest.raises(DomainError):
        s.check_step(0)


def test_float32_views_and_immutability():
    s = cosine_schedule(50)
    views = s.as_float32()
    assert views["alpha_bar"].dtype == np.float32
    with pytest.raises(ValueError):
        s.beta[0] = 0.5


def test_config_round_trip(tmp_path):
    for s in (linear_schedule(200, 1e-4, 0.03, p2_k=0.5, p2_gamma=2.0), cosine_schedule(300, 0.01)):
        cfg = s.to_config()
        (tmp_path / "s.json").write_text(json.dumps(cfg))
        back = load_schedule(tmp_path / "s.json")
        np.testing.assert_array_equal(back.beta, s.beta)
        np.testing.assert_array_equal(back.lambda_p2, s.lambda_p2)
    with pytest.raises(DomainError):
        schedule_from_config({"kind": "sigmoid"})
