from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinlab.engine import NoiseDraw, ReadoutModel, SimConfig, propagate_shot, run_experiment
from spinlab.hamiltonian import DriveParams
from spinlab.noise import vb_ensemble
from spinlab.sequence import (
    XY8_PHASES,
    Delay,
    LaserInit,
    LaserReadout,
    MwPulse,
    RfSignal,
    Sequence,
    SequenceError,
    TimingError,
    build_casr,
    build_cpmg,
    build_odmr,
    build_rabi,
    build_spin_echo,
    build_spinlock,
    build_t1,
    build_xy8,
    casr_grid,
    elements_equal,
    from_text,
    to_text,
    validate_sequence,
    xy8_phases,
)

GOLDEN = Path(__file__).parent / "golden"
X, Y = 0.0, np.pi / 2
CLEAN = SimConfig(dt=1e-11, n_traj=1, t1=1e9)


def p_minus(seq, dt=1e-11):
    rho = propagate_shot(seq, None, NoiseDraw(), SimConfig(dt=dt, n_traj=1, t1=1e9))
    return rho.population(1)


def test_rabi_pi_pulse_inverts():
    seq = build_rabi([7.5e-9], DriveParams(67e6))[0]
    assert p_minus(seq) > 0.999


def test_rabi_zero_length_has_no_mw():
    seq = build_rabi([0.0], DriveParams(67e6))[0]
    assert seq.mw_time == 0.0
    assert p_minus(seq) == 0.0


def test_rabi_two_pi_returns():
    seq = build_rabi([1 / 67e6], DriveParams(67e6))[0]
    assert p_minus(seq) < 1e-12


def test_rabi_errors():
    with pytest.raises(SequenceError):
        build_rabi([], DriveParams(67e6))
    with pytest.raises(SequenceError):
        build_rabi([2e-9, 1e-9], DriveParams(67e6))


def test_echo_phases_and_lower_bound():
    seq = build_spin_echo([10e-9], DriveParams(62.5e6))[0]
    mw = [e for e in seq.elements if isinstance(e, MwPulse)]
    assert [m.phase for m in mw] == [X, Y, X]
    assert np.allclose([m.angle for m in mw], [np.pi / 2, np.pi, np.pi / 2])
    assert seq.meta["t_s"] == 2 * 10e-9


def test_echo_zero_tau_is_net_pi():
    seq = build_spin_echo([0.0], DriveParams(62.5e6))[0]
    assert p_minus(seq) > 1 - 1e-9


@pytest.mark.parametrize("tau", [0.0, 7e-9, 31e-9])
def test_echo_reference_mirrors(tau):
    # free-evolution detuning only, so the closing pulses differ by an exact pi
    d = DriveParams(62.5e6)
    a = replace(build_spin_echo([tau], d)[0], detuning=3e6)
    b = replace(build_spin_echo([tau], d, 3 * np.pi / 2)[0], detuning=3e6)
    assert abs(p_minus(a) + p_minus(b) - 1) < 1e-9


def test_cpmg_one_equals_echo():
    d = DriveParams(62.5e6)
    grid = [5e-9, 20e-9]
    for a, b in zip(build_cpmg(1, grid, d), build_spin_echo(grid, d)):
        assert elements_equal(a, b)


def test_cpmg_thousand_pulses_timescale():
    seq = build_cpmg(1000, [2.1e-9], DriveParams(1e9))[0]
    assert np.isclose(seq.meta["t_s"], 4.2e-6)


@pytest.mark.parametrize("N", [1, 2, 7])
def test_cpmg_element_count(N):
    body = build_cpmg(N, [5e-9], DriveParams(62.5e6))[0].body
    n_mw = sum(isinstance(e, MwPulse) for e in body)
    n_delay = sum(isinstance(e, Delay) for e in body)
    assert n_mw == N + 2
    assert n_delay == 2 * N


def test_cpmg_invalid_n():
    with pytest.raises(SequenceError):
        build_cpmg(0, [1e-9], DriveParams(62.5e6))


def test_xy8_m2():
    seq = build_xy8(2, 13e-9, DriveParams(71.43e6))
    pis = [e for e in seq.elements if isinstance(e, MwPulse) and np.isclose(e.angle, np.pi)]
    assert len(pis) == 16
    assert np.isclose(1 / (4 * seq.meta["tau"]), 19.23e6, rtol=1e-3)


def test_xy8_phase_list():
    assert xy8_phases(1) == [X, Y, X, Y, Y, X, Y, X]
    assert xy8_phases(2) == xy8_phases(1) * 2


@given(st.integers(1, 8))
def test_xy8_pattern_exact(M):
    seq = build_xy8(M, 20e-9, DriveParams(71.43e6))
    pis = [e.phase for e in seq.elements if isinstance(e, MwPulse) and np.isclose(e.angle, np.pi)]
    assert pis == list(XY8_PHASES) * M
    assert "".join("xy"[int(p > 0)] for p in pis) == "xyxyyxyx" * M


def test_xy8_pi_centres_on_two_tau_grid():
    tau = 13e-9
    seq = build_xy8(2, tau, DriveParams(71.43e6))
    starts = seq.start_times()
    centres = [s + e.duration / 2 for s, e in zip(starts, seq.body) if isinstance(e, MwPulse) and np.isclose(e.angle, np.pi)]
    first = seq.body[0].duration
    assert np.allclose(np.array(centres) - first, (2 * np.arange(16) + 1) * tau, atol=1e-15)


def test_spinlock_structure():
    d = DriveParams(71.43e6)
    seq = build_spinlock(0.5e-6, 0.1, d, "sensing")
    mw = [e for e in seq.elements if isinstance(e, MwPulse)]
    assert len(mw) == 3
    assert mw[1].spinlock and np.isclose(mw[1].rabi, 0.1 * d.rabi)
    assert np.isclose(mw[1].phase - mw[0].phase, np.pi / 2)
    assert [e.duration for e in seq.body if isinstance(e, Delay)] == [2e-9, 2e-9]


def test_spinlock_zero_length_is_net_pi():
    seq = build_spinlock(0.0, 0.1, DriveParams(71.43e6), "t1rho")
    assert p_minus(seq) > 1 - 1e-9


def test_dressed_variant_drops_closing_pulse():
    seq = build_spinlock(1e-7, 0.25, DriveParams(71.43e6), "dressed_rabi")
    assert isinstance(seq.body[-1], MwPulse) and seq.body[-1].spinlock


@pytest.mark.parametrize("args", [(-1e-9, 0.1, "t1rho"), (1e-7, 0.0, "t1rho"), (1e-7, 1.2, "t1rho"), (1e-7, 0.1, "bogus")])
def test_spinlock_errors(args):
    t, a, v = args
    with pytest.raises(SequenceError):
        build_spinlock(t, a, DriveParams(71.43e6), v)


def test_casr_downmix_frequency():
    # nu_DD = 1/(4 tau) = 18 MHz (tau = 13.9 ns) with nu_RF = 18.001 MHz
    dt, _ = casr_grid(18e6, 4e-10)
    sch = build_casr(18e6, -1000.0, 0.01, DriveParams(62.5e6), dt=dt)
    assert np.isclose(sch.nu_rf, 18.001e6)
    assert abs(sch.delta_nu) == 1000.0
    assert np.isclose(sch.block.meta["tau"], 1 / (4 * 18e6))


def test_casr_block_count_arithmetic():
    dt, _ = casr_grid(18e6, 4e-10)
    sch = build_casr(18e6, 1000.0, 2.0, DriveParams(62.5e6), dt=dt)
    body = sch.block.duration
    period = 1 / 18e6
    assert sch.lead + body <= sch.block_period < sch.lead + body + period
    assert sch.n_blocks == int(2.0 // sch.block_period)
    assert 3.0e5 < sch.n_blocks < 4.0e5


def test_casr_block_starts_on_dd_clock():
    dt, ticks = casr_grid(18e6, 4e-10)
    sch = build_casr(18e6, 1000.0, 0.01, DriveParams(62.5e6), dt=dt)
    k = sch.block_starts() / dt
    assert np.allclose(k, np.round(k), atol=1e-6)
    assert np.all(np.round(k).astype(np.int64) % ticks == 0)


def test_casr_rejects_off_grid_dt():
    with pytest.raises(TimingError) as info:
        build_casr(18e6, 1000.0, 0.01, DriveParams(62.5e6), dt=4.1e-10)
    good = info.value.nearest["dt"]
    assert np.isclose(good, casr_grid(18e6, 4.1e-10)[0])


def test_casr_zero_offset_gives_constant_trace():
    from spinlab.engine import run_casr

    dt, _ = casr_grid(18e6, 4e-10)
    sch = build_casr(18e6, 0.0, 1e-3, DriveParams(62.5e6), dt=dt)
    tr = run_casr(sch, RfSignal(5e-6, sch.nu_rf), None, SimConfig(dt=dt, n_traj=1), ReadoutModel(), n_phase=8)
    assert np.ptp(tr.contrast) < 1e-12


def test_odmr_off_resonance_no_contrast():
    seqs = build_odmr([3.25e9 + 400e6], 1e-6, DriveParams(1e6), 3.25e9)
    r = run_experiment(seqs, None, None, None, SimConfig(dt=1e-8, n_traj=1), ReadoutModel(mode="mw_on_off"))
    assert abs(r.contrast[0] - 1) < 1e-4


def test_odmr_seven_dips():
    # narrowed lines so the seven dips are resolved; 5 MHz grid
    f = np.linspace(3.25e9 - 150e6, 3.25e9 + 150e6, 61)
    seqs = build_odmr(f, 100e-9, DriveParams(5e6), 3.25e9)
    ens = vb_ensemble(hwhm=6e6)
    r = run_experiment(seqs, None, None, ens, SimConfig(dt=5e-9, n_traj=6000), ReadoutModel(mode="mw_on_off"))
    y = 1 - r.contrast
    peaks = [k for k in range(1, len(y) - 1) if y[k] > y[k - 1] and y[k] >= y[k + 1] and y[k] > 0.05 * y.max()]
    assert len(peaks) == 7
    assert np.allclose(f[peaks], 3.25e9 + 44e6 * np.arange(-3, 4), atol=5e6)


def test_t1_sweep_and_reference():
    seqs = build_t1(np.geomspace(10e-9, 30e-6, 5), DriveParams(62.5e6))
    assert np.isclose(seqs[0].meta["value"], 10e-9) and np.isclose(seqs[-1].meta["value"], 30e-6)
    assert np.isclose(seqs[0].body[0].angle, np.pi)
    assert not any(isinstance(e, MwPulse) for e in build_t1([1e-6], DriveParams(62.5e6), False)[0].body)


def test_validator_rejects_bad_shots():
    with pytest.raises(SequenceError):
        validate_sequence(Sequence((Delay(1e-9), LaserReadout())))
    with pytest.raises(SequenceError):
        validate_sequence(Sequence((LaserInit(), Delay(1e-9))))
    with pytest.raises(SequenceError):
        validate_sequence(Sequence((LaserInit(), Delay(-1e-9), LaserReadout())))
    with pytest.raises(SequenceError):
        validate_sequence(Sequence((LaserInit(), LaserReadout(), LaserReadout())))


def _all_builders():
    d = DriveParams(62.5e6)
    out = build_rabi([0.0, 4e-9], d) + build_cpmg(3, [5e-9, 9e-9], d) + build_t1([1e-6], d)
    out += build_odmr([3.2e9], 1e-6, DriveParams(1e6), 3.25e9)
    out += [build_xy8(2, 13e-9, d)]
    out += [build_spinlock(1e-7, 0.2, d, v) for v in ("t1rho", "sensing", "dressed_rabi", "amp_sweep")]
    dt, _ = casr_grid(18e6, 4e-10)
    out.append(build_casr(18e6, 1e3, 1e-3, d, dt=dt).block)
    return out


def test_every_builder_passes_validator():
    for seq in _all_builders():
        validate_sequence(seq)


def test_text_round_trip():
    for seq in _all_builders():
        back = from_text(to_text(seq))
        assert elements_equal(back, seq)
        assert to_text(back) == to_text(seq)


@pytest.mark.parametrize("path", sorted(GOLDEN.glob("*.txt")), ids=lambda p: p.stem)
def test_golden_sequences(path):
    d62, d71 = DriveParams(62.5e6), DriveParams(71.43e6)
    build = {
        "echo_tau20ns": lambda: build_spin_echo([20e-9], d62)[0],
        "cpmg_N2_tau10ns_3pi2": lambda: build_cpmg(2, [10e-9], d62, 3 * np.pi / 2)[0],
        "xy8_M1_tau13ns": lambda: build_xy8(1, 13e-9, d71),
        "spinlock_sensing": lambda: build_spinlock(0.5e-6, 0.252, d71, "sensing"),
        "dressed_rabi": lambda: build_spinlock(1e-6, 0.25, d71, "dressed_rabi"),
        "t1_tau1us": lambda: build_t1([1e-6], d62)[0],
    }[path.stem]
    assert to_text(build()) == path.read_text()


def test_from_text_reports_line():
    with pytest.raises(SequenceError, match="line 3"):
        from_text("init 5e-06\nmw 1e-9 1e6 0 0\nwobble 3\nreadout 5e-06\n")


def test_rf_signal_validation():
    with pytest.raises(ValueError):
        RfSignal(-1.0, 1e6)
    with pytest.raises(ValueError):
        RfSignal(1e-6, 0.0)
    rf = RfSignal(1e-6, 1e6)
    with pytest.raises(AttributeError):
        rf.b_rf = 2.0
