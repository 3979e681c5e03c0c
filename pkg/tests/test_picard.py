"""Picard nonlinear null control and exact-control gluing tests."""

import numpy as np
import pytest

from torusctrl.hum import ControlSetup
from torusctrl.model import Nonlinearity
from torusctrl.picard import (ControlError, IterationLedger, IterationRecord,
                              exact_control, null_control)
from torusctrl.spectral import SpectralField, TorusGrid, sobolev_norm

from test_hum import strip_setup
from test_model import small_pair

NL = Nonlinearity(g1=(1.0,), g2=(1.0,))


def test_null_control_zero_datum():
    grid = TorusGrid(2, 16)
    st = strip_setup(grid, steps=16, cg_tol=1e-9)
    res = null_control(SpectralField.zero(grid), NL, st, max_iter=5, tol=1e-10)
    assert res.iterations == 1
    assert all(np.max(np.abs(f)) == 0.0 for f in res.F_mids)
    assert res.terminal_ratio == 0.0 or np.isnan(res.terminal_ratio) or res.terminal_ratio < 1e-12


def test_null_control_linear_equation_two_iterations():
    # g1 = g2 = 0: the frozen operator is U-independent, so the second
    # iterate reproduces the first control exactly
    rng = np.random.default_rng(80)
    grid = TorusGrid(2, 16)
    st = strip_setup(grid, steps=24, cg_tol=1e-9, tol_terminal=1e-4)
    lin = Nonlinearity(g1=(0.0,), g2=(0.0,))
    u0 = small_pair(grid, rng, amp=1e-2, kmax=1).u
    res = null_control(u0, lin, st, max_iter=6, tol=1e-11)
    assert res.iterations == 2
    assert res.ledger.records[1].du_norm <= 1e-11 * sobolev_norm(u0, 1.5)
    assert res.terminal_ratio <= 1e-4


def test_null_control_quasilinear_converges():
    rng = np.random.default_rng(81)
    grid = TorusGrid(2, 16)
    st = strip_setup(grid, steps=24, cg_tol=1e-9, tol_terminal=1e-4)
    u0 = small_pair(grid, rng, amp=1e-2, kmax=1).u
    res = null_control(u0, NL, st, max_iter=10, tol=1e-10)
    assert res.iterations < 10
    # geometric decay of the Picard differences
    for r in res.ledger.ratios:
        assert r <= 0.5
    # nonlinear replay hits the target
    assert res.terminal_ratio <= 1e-4
    # control vanishes outside the region at every midpoint
    dead = st.phi == 0.0
    for f in res.F_mids[:: max(st.steps // 4, 1)]:
        vals = grid.values_from_coeffs(f)
        assert np.max(np.abs(vals[dead])) <= 1e-13 * max(np.max(np.abs(vals)), 1e-300)


def test_ledger_csv(tmp_path):
    led = IterationLedger(s=3.5)
    led.add(IterationRecord(1, 1.0, 0.5, np.nan, 1e-8, 12))
    led.add(IterationRecord(2, 0.1, 0.05, 0.1, 1e-9, 4))
    led.add(IterationRecord(3, 0.01, 0.005, 0.1, 1e-9, 3))
    path = tmp_path / "ledger.csv"
    led.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].split(",") == IterationLedger.HEADER
    assert len(lines) == 4
    assert led.geometric_decay


def test_exact_control_zero_data():
    grid = TorusGrid(2, 16)
    st = strip_setup(grid, steps=16, cg_tol=1e-9)
    res = exact_control(SpectralField.zero(grid), SpectralField.zero(grid), NL, st,
                        max_iter=4, tol=1e-10)
    assert all(np.max(np.abs(f)) == 0.0 for f in res.F_mids)
    assert res.terminal_error == 0.0 or np.isnan(res.terminal_error)


def test_exact_control_null_target_reduces_to_half():
    # each half needs its own adequate horizon: low filtered modes travel at
    # group speed 2|k|, so the half window must let them reach the strips
    rng = np.random.default_rng(82)
    grid = TorusGrid(2, 16)
    st = strip_setup(grid, T=2.0, steps=32, cg_tol=1e-9, tol_terminal=1e-4)
    u0 = small_pair(grid, rng, amp=5e-3, kmax=1).u
    res = exact_control(u0, SpectralField.zero(grid), NL, st, max_iter=8, tol=1e-10)
    # the second half controls 0 to 0: zero control there
    for f in res.F_mids[st.steps // 2:]:
        assert np.max(np.abs(f)) == 0.0
    assert res.terminal_error <= 2e-4


def test_exact_control_generic_pair():
    rng = np.random.default_rng(83)
    grid = TorusGrid(2, 16)
    st = strip_setup(grid, T=2.0, steps=32, cg_tol=1e-9, tol_terminal=1e-4)
    u0 = small_pair(grid, rng, amp=5e-3, kmax=1).u
    u1 = small_pair(grid, rng, amp=5e-3, kmax=1).u
    res = exact_control(u0, u1, NL, st, max_iter=8, tol=1e-10)
    # control is continuous at T/2 because both windows vanish near the
    # junction: every midpoint in [3T/8, 5T/8] carries an exact zero
    tmid = st.timegrid.midpoints
    for n, f in enumerate(res.F_mids):
        if 0.375 * st.T <= tmid[n] <= 0.625 * st.T:
            assert np.max(np.abs(f)) == 0.0
    assert res.terminal_error <= 2e-4
    assert max(res.junction_norms) <= 2 * st.tol_terminal
