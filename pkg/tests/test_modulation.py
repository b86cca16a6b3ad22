import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erfc

from pmse_mimo.errors import DomainError, StructuralError
from pmse_mimo.model import ChannelSet, SystemConfig
from pmse_mimo.modulation import (BerModel, ModulationPlan, ber_bpsk, ber_mpsk, closed_form_ber,
                                  naive_bits, plan_bits, probabilistic_bits, simulate_ber)

# High-precision reference values (30 significant digits).
MPSK_10_2 = 1.09175512233753202639128474342e-3
BPSK_4 = 2.33886749052363291896537181637e-3
MPSK_100 = {4: 6.23924293745372721359876345805e-3, 5: 9.55480578943486917548374843372e-2}
SWITCH_100 = 4.21095841923488505156644076284e-2

gammas = st.floats(0.0, 1e4, allow_nan=False)


def test_ber_model_defaults_and_validation():
    m = BerModel()
    assert (m.c1, m.c2, m.c3, m.c4) == (0.25, 8.0, 1.94, 0.0)
    with pytest.raises(DomainError):
        BerModel(c1=1.5)
    with pytest.raises(DomainError):
        BerModel(c3=0.0)


def test_ber_mpsk_reference_values():
    assert ber_mpsk(0.0, 3) == 0.25
    assert ber_mpsk(10.0, 2) == pytest.approx(MPSK_10_2, rel=1e-13)
    assert ber_mpsk(100.0, 4) == pytest.approx(MPSK_100[4], rel=1e-13)
    with pytest.raises(DomainError, match="ber_bpsk"):
        ber_mpsk(1.0, 1)
    with pytest.raises(DomainError):
        ber_mpsk(-1.0, 2)


def test_ber_bpsk_reference_values():
    assert ber_bpsk(0.0) == 0.5
    assert ber_bpsk(4.0) == pytest.approx(BPSK_4, rel=1e-13)
    assert ber_bpsk(1e4) == 0.0
    assert closed_form_ber(4.0, 1) == ber_bpsk(4.0)


@settings(max_examples=200, deadline=None)
@given(gammas, gammas, st.integers(2, 8))
def test_ber_mpsk_monotone(g1, g2, b):
    lo, hi = sorted((g1, g2))
    if hi - lo > 1e-6 * (1 + hi) and ber_mpsk(hi, b) > 0:
        assert ber_mpsk(hi, b) < ber_mpsk(lo, b)
    if 0 < ber_mpsk(g1, b) < 0.25 * (1 - 1e-12):
        assert ber_mpsk(g1, b + 1) > ber_mpsk(g1, b)
    assert 0 <= ber_mpsk(g1, b) <= 0.25


def test_naive_bits_examples():
    assert naive_bits(100.0, 1e-2) == (4, False)
    assert naive_bits(0.0, 1e-2) == (1, True)
    assert naive_bits(1e12, 1e-2, b_max=8) == (8, False)
    assert naive_bits(3.0, 1e-2) == (1, False)  # BPSK meets 1e-2 above ~2.7
    assert naive_bits(50.0, 1e-2, active=False) == (0, False)
    assert naive_bits(1e12, 1e-2, b_max=1) == (1, False)
    with pytest.raises(DomainError):
        naive_bits(1.0, 0.6)
    with pytest.raises(DomainError):
        naive_bits(-1.0, 0.01)


@settings(max_examples=300, deadline=None)
@given(gammas, st.floats(1e-6, 0.49), st.integers(1, 8))
def test_naive_bits_meets_target_unless_flagged(gamma, beta, b_max):
    b, infeasible = naive_bits(gamma, beta, b_max=b_max)
    assert 1 <= b <= b_max
    if infeasible:
        assert b == 1 and ber_bpsk(gamma) > beta
    else:
        assert closed_form_ber(gamma, b) <= beta
        if b < b_max:
            assert ber_mpsk(gamma, b + 1) > beta


def test_probabilistic_bits_examples():
    b, p = probabilistic_bits(100.0, 1e-2)
    assert b == 4 and p == pytest.approx(SWITCH_100, rel=1e-12)
    assert probabilistic_bits(1e12, 1e-2) == (8, 0.0)
    assert probabilistic_bits(5.0, 1e-2, active=False) == (0, 0.0)
    # Target exactly at the current depth's BER -> never switch.
    beta = float(ber_mpsk(100.0, 4))
    assert probabilistic_bits(100.0, beta) == (4, 0.0)
    # Target exactly at the next depth's BER: naive already picks it.
    gamma = 60.0
    beta = float(ber_mpsk(gamma, 3)) * (1 + 1e-12)
    b, p = probabilistic_bits(gamma, beta)
    assert b == 3 and p == pytest.approx(0.0, abs=1e-9)
    b, p = probabilistic_bits(gamma, float(ber_mpsk(gamma, 3)) * (1 - 1e-12))
    assert b == 2 and p == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(gammas, st.floats(1e-5, 0.2))
def test_probabilistic_expected_ber_equals_target(gamma, beta):
    b, p = probabilistic_bits(gamma, beta)
    assert 0.0 <= p <= 1.0
    if 0 < p < 1:
        mixed = (1 - p) * closed_form_ber(gamma, b) + p * closed_form_ber(gamma, b + 1)
        assert mixed == pytest.approx(beta, abs=1e-12)


def test_plan_bits_schemes():
    plan = plan_bits([100.0, 0.0, 1e12], 1e-2, "probabilistic", active=[True, True, False])
    assert plan.bits.tolist() == [4, 1, 0]
    assert plan.infeasible.tolist() == [False, True, False]
    assert plan.switch_prob[0] == pytest.approx(SWITCH_100, rel=1e-12)
    naive = plan_bits([100.0], 1e-2)
    assert naive.switch_prob.tolist() == [0.0]
    with pytest.raises(ValueError):
        plan_bits([1.0], 1e-2, "qam")
    with pytest.raises(DomainError):
        ModulationPlan(np.array([0]), np.zeros(1), np.full(1, 0.01), np.array([True]),
                       np.array([False]))


# --- symbol simulation -------------------------------------------------------------

def scalar_link(h, noise):
    cfg = SystemConfig(1, 1, (1,), (1,), noise, 1.0)
    return cfg, ChannelSet((np.array([[h]]),)), np.array([[1.0 + 0j]]), (np.array([[1.0 + 0j]]),)


def fixed_plan(bits, prob=None):
    n = len(bits)
    return ModulationPlan(np.array(bits), np.zeros(n) if prob is None else np.array(prob),
                          np.full(n, 1e-2), np.array(bits) > 0, np.zeros(n, bool))


@pytest.mark.parametrize("b", [1, 2, 3, 5, 8])
def test_noiseless_link_is_error_free(b):
    cfg, ch, U, V = scalar_link(0.6 - 0.8j, 1e-14)
    res = simulate_ber(cfg, ch, U, V, [1.0], fixed_plan([b]), 4000, seed=1)
    assert res.bit_errors.tolist() == [0] and res.bits_sent.tolist() == [4000 * b]
    assert res.bits_per_symbol.tolist() == [b]


def test_bpsk_calibration():
    gamma = 4.0
    cfg, ch, U, V = scalar_link(1.0, 1.0 / gamma)
    n = 1_000_000
    res = simulate_ber(cfg, ch, U, V, [1.0], fixed_plan([1]), n, seed=2024)
    ref = 0.5 * erfc(2.0)
    se = np.sqrt(ref * (1 - ref) / n)
    assert abs(res.ber[0] - ref) <= 3 * se


def test_interference_free_two_streams_match_closed_form():
    # Two users on orthogonal antennas with different SNRs.
    cfg = SystemConfig(2, 2, (1, 1), (1, 1), 0.5, 1.0)
    ch = ChannelSet((np.array([[1.0], [0.0]]), np.array([[0.0], [1j]])))
    U = np.eye(2, dtype=complex)
    V = (np.array([[1.0 + 0j]]), np.array([[1.0 + 0j]]))
    p = np.array([0.7, 0.3])
    n = 400_000
    res = simulate_ber(cfg, ch, U, V, p, fixed_plan([1, 1]), n, seed=5)
    for i, gamma in enumerate(p / 0.5):
        ref = ber_bpsk(gamma)
        assert abs(res.ber[i] - ref) <= 3 * np.sqrt(ref * (1 - ref) / n)


@pytest.mark.parametrize("b, gamma", [(2, 8.0), (3, 30.0), (4, 120.0)])
def test_mpsk_gray_ber_matches_nearest_neighbour_approximation(b, gamma):
    # Gray-coded M-PSK at high SNR: BER ~ (2 / b) Q(sqrt(2 gamma) sin(pi / M)).
    cfg, ch, U, V = scalar_link(1.0, 1.0 / gamma)
    res = simulate_ber(cfg, ch, U, V, [1.0], fixed_plan([b]), 300_000, seed=9)
    x = np.sqrt(2 * gamma) * np.sin(np.pi / 2 ** b)
    ref = (2 / b) * 0.5 * erfc(x / np.sqrt(2))
    assert res.ber[0] == pytest.approx(ref, rel=0.1)


def test_simulation_is_reproducible_and_mixes_depths():
    cfg, ch, U, V = scalar_link(1.0, 0.01)
    plan = fixed_plan([3], [0.25])
    a = simulate_ber(cfg, ch, U, V, [1.0], plan, 20_000, seed=42)
    b = simulate_ber(cfg, ch, U, V, [1.0], plan, 20_000, seed=42)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert a.bits_per_symbol[0] == pytest.approx(3.25, abs=0.02)
    c = simulate_ber(cfg, ch, U, V, [1.0], plan, 20_000, seed=43)
    assert c.bits_sent[0] != a.bits_sent[0] or c.bit_errors[0] != a.bit_errors[0]


def test_inactive_stream_sends_nothing():
    cfg = SystemConfig(1, 2, (2,), (2,), 0.1, 1.0)
    ch = ChannelSet((np.eye(2, dtype=complex),))
    res = simulate_ber(cfg, ch, np.eye(2, dtype=complex), (np.eye(2, dtype=complex),),
                       [1.0, 0.0], fixed_plan([2, 0]), 1000, seed=0)
    assert res.bits_sent.tolist()[1] == 0 and res.ber[1] == 0.0
    assert res.user_bits(cfg).tolist() == [2.0]


def test_simulation_shape_checks():
    cfg, ch, U, V = scalar_link(1.0, 0.1)
    with pytest.raises(StructuralError):
        simulate_ber(cfg, ch, U, V, [1.0], fixed_plan([1, 1]), 10, seed=0)
    with pytest.raises(DomainError):
        simulate_ber(cfg, ch, U, V, [1.0], fixed_plan([1]), 0, seed=0)
