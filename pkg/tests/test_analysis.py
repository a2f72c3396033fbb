import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from surfpart.analysis import (
    Channel, ExtrapolationWarning, PurcellParams, SweepResult, compare_designs, fit_log,
    log_extrapolate, loss_budget, purcell_limit, q_from_t1, t1_from_q, tan_delta_bound, trench_sweep,
)
from surfpart.errors import DivergentRate, FitError, InvalidArgument, SweepError
from surfpart.mesh import MeshControls

from conftest import COARSE, SWEEP_DEPTHS, small_idc

# 2 pi f T1 and friends, evaluated exactly (mpmath, 30 digits)
Q_50US_4_8GHZ = 1507964.4737
Q_100US_4_8GHZ = 3015928.9474
TAN_BOUND_2E6 = 5.434783e-7
TAN_BOUND_1_5E6 = 7.246377e-7
PURCELL_EXAMPLE_US = 1136.82102  # g=50 MHz, f_q=4.5 GHz, f_r=7 GHz, Q_c=2e4

positive = st.floats(1e-3, 1e3)


def test_fit_identity():
    d = np.array([300.0, 400.0, 600.0, 1000.0])
    fit = fit_log(d, 2.0e5 - 3.1e4 * np.log(d), 50.0, "SM")
    assert fit.a == pytest.approx(2.0e5, rel=1e-12)
    assert fit.b == pytest.approx(-3.1e4, rel=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.extrapolated_value == pytest.approx(2.0e5 - 3.1e4 * math.log(50.0), rel=1e-12)
    assert fit.tag == "SM" and not fit.clamped


def test_fit_noise_monte_carlo():
    rng = np.random.default_rng(20240101)
    d = np.array(SWEEP_DEPTHS)
    a, b = 4.8e5, -3.9e4
    truth = a + b * np.log(d)
    slopes = [fit_log(d, truth * (1 + 0.01 * rng.standard_normal(len(d))), 50.0).b for _ in range(100)]
    assert np.mean(slopes) == pytest.approx(b, rel=0.05)


@given(scale=st.floats(1e-3, 1e3), a=st.floats(-1e6, 1e6), b=st.floats(-1e5, 1e5))
def test_extrapolation_independent_of_length_unit(scale, a, b):
    d = np.array([300.0, 450.0, 700.0, 1000.0])
    v = a + b * np.log(d) + np.array([1.0, -2.0, 0.5, 0.3]) * 10
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtrapolationWarning)
        ref = fit_log(d, v, 50.0)
        other = fit_log(d * scale, v, 50.0 * scale)
    assert other.b == pytest.approx(ref.b, rel=1e-7, abs=1e-6)
    assert other.extrapolated_value == pytest.approx(ref.extrapolated_value, rel=1e-7, abs=1e-5)
    assert other.r_squared == pytest.approx(ref.r_squared, abs=1e-9)


@settings(max_examples=30)
@given(noise=st.lists(st.floats(-0.05, 0.05), min_size=5, max_size=5))
def test_fit_residuals_match_r_squared(noise):
    d = np.array([300.0, 400.0, 550.0, 750.0, 1000.0])
    v = 2e5 - 2e4 * np.log(d) * (1 + np.array(noise))
    fit = fit_log(d, v, 350.0)
    model = fit.evaluate(d)
    r2 = 1 - ((v - model) ** 2).sum() / ((v - v.mean()) ** 2).sum()
    assert fit.r_squared == pytest.approx(min(1.0, max(0.0, r2)), abs=1e-9)
    assert fit.extrapolated_value == pytest.approx(float(fit.evaluate(350.0)), rel=1e-12)
    assert 0.0 <= fit.r_squared <= 1.0


def test_fit_degenerate_inputs():
    with pytest.raises(FitError):
        fit_log([500.0, 500.0, 500.0, 500.0], [1.0, 2.0, 3.0, 4.0], 50.0)
    with pytest.raises(FitError):
        fit_log([300.0, 400.0], [1.0], 50.0)
    with pytest.raises(FitError):
        fit_log([300.0, 400.0], [1.0, 2.0], 0.0)


def test_negative_extrapolation_clamped():
    d = np.array(SWEEP_DEPTHS)
    with pytest.warns(ExtrapolationWarning):
        fit = fit_log(d, 1e3 * np.log(d) - 5e3, 50.0)
    assert fit.extrapolated_value == 0.0 and fit.clamped


def _fake_sweep(depths, values):
    from surfpart.participation import ParticipationReport

    reports = tuple(ParticipationReport({"SM": v, "SA": v / 2, "MA": v / 10}, {"substrate": 0.9, "vacuum": 0.1}, 1.0)
                    for v in values)
    return SweepResult("custom", tuple(depths), reports)


def test_log_extrapolate_needs_four_points():
    with pytest.raises(FitError):
        log_extrapolate(_fake_sweep([300.0, 400.0, 600.0], [3.0, 2.0, 1.0]))
    fits = log_extrapolate(_fake_sweep(SWEEP_DEPTHS, 10 - np.log(SWEEP_DEPTHS)), 50.0)
    assert set(fits) == {"SM", "SA", "MA"}
    assert fits["SM"].extrapolated_value == pytest.approx(10 - math.log(50.0), rel=1e-12)
    assert fits["SA"].extrapolated_value == pytest.approx((10 - math.log(50.0)) / 2, rel=1e-12)


def test_sweep_result_requires_increasing_depths():
    with pytest.raises(InvalidArgument):
        _fake_sweep([400.0, 300.0], [1.0, 2.0])


def test_sweep_rejects_bad_depths():
    with pytest.raises(InvalidArgument):
        trench_sweep(small_idc(), [100.0, 400.0, 600.0, 1000.0], COARSE)
    with pytest.raises(InvalidArgument):
        trench_sweep(small_idc(), [300.0, 300.0, 600.0, 1000.0], COARSE)
    with pytest.raises(InvalidArgument):
        trench_sweep(small_idc(), [], COARSE)


def test_sweep_failure_names_depth():
    infeasible = MeshControls(h_max=100.0, corner_h_min=150.0)  # coarser than the 100 nm metal film
    with pytest.raises(SweepError) as info:
        trench_sweep(small_idc(metal_thickness=100.0), [300.0, 400.0], infeasible)
    assert info.value.depth_nm == 300.0


def test_sweep_small_design_and_jobs_invariance():
    serial = trench_sweep(small_idc(), SWEEP_DEPTHS, COARSE)
    assert serial.design == "custom" and serial.depths == SWEEP_DEPTHS
    assert [r.trench_nm for r in serial.reports] == list(SWEEP_DEPTHS)
    parallel = trench_sweep(small_idc(), SWEEP_DEPTHS[::-1], COARSE, jobs=2)
    assert [r.row() for r in parallel.reports] == [r.row() for r in serial.reports]


def test_mod_c_sweep(preset_sweeps):
    sweep = preset_sweeps("C")
    assert sweep.design == "mod_c" and len(sweep.reports) == 4
    for tag in ("SM", "SA", "MA"):
        assert np.isfinite(sweep.series(tag)).all() and (sweep.series(tag) > 0).all()
    sm = sweep.series("SM")
    assert sm[-1] < sm[0]


def test_budget_single_channel():
    budget = loss_budget([Channel("SA", 1.24e6, 2e-3, 3.0)])
    assert budget.inverse_q == pytest.approx(7.44e-6, rel=1e-12)
    assert budget.Q_total == pytest.approx(1.344086e5, rel=1e-6)
    assert budget.T1 == pytest.approx(t1_from_q(budget.Q_total, 4.8), rel=1e-12)


def test_budget_substrate_channel():
    budget = loss_budget([Channel("substrate", 0.92, 5e-7)])
    assert budget.Q_total == pytest.approx(2.1739130e6, rel=1e-7)


def test_budget_without_loss():
    budget = loss_budget([Channel("SM", 1e5, 0.0, 3.0), Channel("substrate", 0.9, 0.0)])
    assert budget.infinite_q and math.isinf(budget.Q_total) and math.isnan(budget.T1)


def test_budget_rejects_negatives():
    with pytest.raises(InvalidArgument):
        Channel("SM", -1.0, 1e-3, 3.0)
    with pytest.raises(InvalidArgument):
        loss_budget([], other_loss=-1e-9)


channels = st.lists(st.tuples(st.floats(0, 1e7), st.floats(0, 1e-2), st.floats(0.1, 10)), min_size=1, max_size=6)


@given(chs=channels, other=st.floats(0, 1e-5))
def test_budget_additivity(chs, other):
    items = [Channel(f"c{k}", p, tan, t) for k, (p, tan, t) in enumerate(chs)]
    budget = loss_budget(items, other)
    assume(not budget.infinite_q)
    per_q = [1 / c.loss for c in items if c.loss > 0] + ([1 / other] if other > 0 else [])
    assert budget.inverse_q == pytest.approx(math.fsum(1 / q for q in per_q), rel=1e-12)
    assert budget.contributions()["other"] == other


@given(ps=st.lists(st.floats(1e3, 1e7), min_size=2, max_size=5, unique=True), tan=st.floats(1e-4, 1e-2))
def test_dominant_channel_sets_ranking(ps, tan):
    qs = [loss_budget([Channel("SA", p, tan, 3.0), Channel("SM", p * 1e-3, tan, 3.0)]).Q_total for p in ps]
    assert np.argsort(qs).tolist() == np.argsort(ps)[::-1].tolist()


def test_q_t1_conversions():
    assert q_from_t1(50.0, 4.8) == pytest.approx(Q_50US_4_8GHZ, rel=1e-10)
    assert q_from_t1(100.0, 4.8) == pytest.approx(Q_100US_4_8GHZ, rel=1e-10)
    with pytest.raises(InvalidArgument):
        q_from_t1(0.0, 4.8)
    with pytest.raises(InvalidArgument):
        t1_from_q(1e6, -1.0)


@given(t1=positive, f=st.floats(0.1, 20))
def test_q_t1_round_trip(t1, f):
    assert t1_from_q(q_from_t1(t1, f), f) == pytest.approx(t1, rel=1e-12)


def test_tan_delta_bounds():
    assert tan_delta_bound(2e6, 0.92) == pytest.approx(TAN_BOUND_2E6, rel=1e-6)
    assert tan_delta_bound(1e6, 1.0) == pytest.approx(1e-6, rel=1e-15)
    assert tan_delta_bound(1.5e6, 0.92) == pytest.approx(TAN_BOUND_1_5E6, rel=1e-6)
    for q, p in ((0.0, 0.9), (1e6, 0.0), (1e6, 1.5)):
        with pytest.raises(InvalidArgument):
            tan_delta_bound(q, p)


def test_purcell_example():
    t1 = purcell_limit(PurcellParams(g=50.0, f_qubit=4.5, f_res=7.0, Q_c=2e4))
    assert t1 == pytest.approx(PURCELL_EXAMPLE_US, rel=1e-8)
    assert t1 > 50.0


def test_purcell_edges():
    assert math.isinf(purcell_limit(PurcellParams(0.0, 4.5, 7.0, 2e4)))
    with pytest.raises(DivergentRate):
        purcell_limit(PurcellParams(50.0, 5.0, 5.0, 2e4))
    with pytest.raises(InvalidArgument):
        PurcellParams(50.0, 5.0, 7.0, 0.0)


@given(g=st.floats(1, 100), fq=st.floats(3, 6), delta=st.floats(0.5, 4), qc=st.floats(1e3, 1e5))
def test_purcell_monotone(g, fq, delta, qc):
    base = purcell_limit(PurcellParams(g, fq, fq + delta, qc))
    assert purcell_limit(PurcellParams(g, fq, fq + delta, 2 * qc)) > base
    assert purcell_limit(PurcellParams(2 * g, fq, fq + delta, qc)) == pytest.approx(base / 4, rel=1e-12)
    assert purcell_limit(PurcellParams(g, fq - 0.1, fq + delta, qc)) > base


def test_purcell_half_detuning_quarter_t1():
    # hold the resonator linewidth fixed by moving the qubit, not the resonator
    far = purcell_limit(PurcellParams(50.0, 4.0, 7.0, 2e4))
    near = purcell_limit(PurcellParams(50.0, 5.5, 7.0, 2e4))
    assert near == pytest.approx(far / 4, rel=1e-12)


def test_compare_rejects_single_design():
    with pytest.raises(InvalidArgument):
        compare_designs([small_idc()])


def test_compare_small_designs():
    wide = small_idc(conductor_width=6.0, gap=6.0)
    from surfpart.field_solver import MaterialStack

    materials = MaterialStack(loss_tangents={"SM": 1e-3, "SA": 2e-3, "MA": 1e-3, "substrate": 5e-7})
    cmp = compare_designs([small_idc(), wide], 50.0, materials, COARSE, other_loss=1e-7)
    assert len(cmp.rows) == 2 and cmp.trench == 50.0
    narrow_row, wide_row = cmp.rows
    assert narrow_row.p_over_t["SA"] > wide_row.p_over_t["SA"]
    assert narrow_row.Q_combined < wide_row.Q_combined
    for row in cmp.rows:
        assert row.inverse_p_sa == pytest.approx(1 / row.p_over_t["SA"])
        for q in row.Q_by_interface.values():
            assert q >= row.Q_combined
        assert 1 / row.Q_combined < 1 / row.Q_by_interface["SA"] + 1 / row.Q_by_interface["SM"] + \
            1 / row.Q_by_interface["MA"]
