import csv

import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from freqhom.errors import InvalidParameterError
from freqhom.phasematch import (DispersionProfile, ProcessPlacement, delta_beta,
                                mirrored_delta_beta, placement_for_source,
                                pump_separation_from_fsr, sideband_suppression,
                                write_design_csv)
from freqhom.spectral import TWO_PI
from helpers import brute_delta_beta

W0 = TWO_PI * 212.7e12
THZ = TWO_PI * 1e12


def profile(b2=0.0, b3=1e-40, b4=0.0):
    return DispersionProfile(W0, b2, b3, b4)


@settings(max_examples=200, deadline=None)
@given(b3=st.floats(-1e-39, 1e-39), d_thz=st.floats(0.1, 30), om_thz=st.floats(0.01, 5))
def test_symmetric_placement_is_phase_matched(b3, d_thz, om_thz):
    # D = Omega/2 puts the blue photon on the lower pump
    assume(abs(2 * d_thz - om_thz) > 1e-6)
    pl = ProcessPlacement.symmetric(d_thz * THZ, om_thz * THZ)
    assert delta_beta(profile(0.0, b3), pl) == 0.0


@pytest.mark.parametrize("b2", [-2e-26, 5e-27])
def test_quadratic_term_gives_2_b2_d_omega(b2):
    d, om = 12 * THZ, TWO_PI * 805.1e9
    pl = ProcessPlacement.symmetric(d, om)
    db = delta_beta(profile(b2, 1e-40), pl)
    assert db == pytest.approx(2 * b2 * d * om, rel=1e-9)
    freqs = (pl.red, pl.pump1, pl.blue, pl.pump2)
    assert db == pytest.approx(brute_delta_beta(b2, 1e-40, 0.0, freqs), rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(b2=st.floats(-3e-26, 3e-26), b3=st.floats(-1e-39, 1e-39), b4=st.floats(-1e-53, 1e-53),
       q=st.floats(-20, 20), p=st.floats(-20, 20), om=st.floats(0.05, 3))
def test_matches_exact_rational_evaluation(b2, b3, b4, q, p, om):
    pl = ProcessPlacement(q * THZ, p * THZ + 1.0, om * THZ)
    freqs = (pl.red, pl.pump1, pl.blue, pl.pump2)
    ref = brute_delta_beta(b2, b3, b4, freqs)
    got = delta_beta(profile(b2, b3, b4), pl)
    scale = max(abs(b2) * 1e28, abs(b3) * 1e42, abs(b4) * 1e56) * 1e-12 + 1e-300
    assert abs(got - ref) <= 1e-9 * abs(ref) + scale


def test_degenerate_separation():
    pl = ProcessPlacement(-3 * THZ, 5 * THZ, 0.0)
    assert delta_beta(profile(1e-26, 1e-40, 1e-55), pl) == 0.0


@settings(max_examples=50, deadline=None)
@given(q=st.floats(-20, 20), p=st.floats(-20, 20), om=st.floats(0.05, 3))
def test_reflection_flips_cubic_contribution(q, p, om):
    pl = ProcessPlacement(q * THZ, p * THZ + 1.0, om * THZ)
    cubic = profile(0.0, 1e-40)
    even = profile(2e-27, 0.0, 1e-55)
    assert mirrored_delta_beta(cubic, pl) == pytest.approx(-delta_beta(cubic, pl), rel=1e-9,
                                                           abs=1e-20)
    assert mirrored_delta_beta(even, pl) == pytest.approx(delta_beta(even, pl), rel=1e-9,
                                                          abs=1e-20)


def test_mismatch_linear_in_band_asymmetry():
    d, om = 12 * THZ, TWO_PI * 805.1e9
    prof = profile(0.0, 1e-40)

    def db(e):
        return delta_beta(prof, ProcessPlacement(-d, d + e, om))

    e = 1e-4 * THZ
    slope = (db(e) - db(-e)) / (2 * e)
    assert slope != 0
    # derivative of b3/6 [(d+e+om/2)^3 - (d+e-om/2)^3] at e = 0
    assert slope == pytest.approx(1e-40 * 2 * d * om, rel=1e-6)
    assert abs(db(2 * e)) == pytest.approx(2 * abs(db(e)), rel=1e-4)
    assert abs(db(4 * e)) > abs(db(2 * e)) > abs(db(e)) > 0


def test_energy_conservation_is_structural():
    pl = ProcessPlacement(-3.3 * THZ, 4.1 * THZ, 0.7 * THZ)
    assert pl.red + pl.pump1 == pytest.approx(pl.blue + pl.pump2, abs=1e-3)
    for r in sideband_suppression(profile(), pl):
        assert r.w_in + r.p_in == pytest.approx(r.w_out + r.p_out, rel=1e-15)


def test_sidebands_are_mismatched_for_cubic_dispersion():
    d, om = 12 * THZ, TWO_PI * 805.1e9
    rows = sideband_suppression(profile(0.0, 1e-40), ProcessPlacement.symmetric(d, om))
    target, side_r, side_b = rows[:3]
    assert target.matched and target.delta_beta == 0.0
    assert target.efficiency == pytest.approx(0.5, rel=1e-12)
    assert not side_r.matched and not side_b.matched
    # leading term b3 D Omega^2
    for s in (side_r, side_b):
        assert abs(s.delta_beta) == pytest.approx(1e-40 * d * om * om, rel=0.2)
        assert s.suppression < 1
    assert all(not r.matched for r in rows[1:])


def test_dispersionless_fibre_has_no_selectivity():
    rows = sideband_suppression(profile(0.0, 0.0), ProcessPlacement.symmetric(5 * THZ, THZ))
    assert all(r.matched for r in rows)
    assert all(r.suppression == pytest.approx(1.0) for r in rows)


def test_sideband_at_first_sinc_null():
    prof = profile(0.0, 1e-40)
    pl = ProcessPlacement.symmetric(12 * THZ, TWO_PI * 805.1e9)
    db_s = abs(sideband_suppression(prof, pl)[1].delta_beta)
    length = TWO_PI / db_s
    pl = ProcessPlacement.symmetric(12 * THZ, TWO_PI * 805.1e9, length=length,
                                    gamma_p=1e-4 * db_s)
    side = sideband_suppression(prof, pl)[1]
    assert side.efficiency < 1e-6
    assert sideband_suppression(prof, pl)[0].efficiency > 0


@pytest.mark.parametrize("fsr,m,ghz", [(201.275e9, 2, 805.100), (201.275e9, 1, 402.550),
                                       (100e9, 1, 200.0)])
def test_pump_separation_from_fsr(fsr, m, ghz):
    assert pump_separation_from_fsr(fsr, m) / TWO_PI / 1e9 == pytest.approx(ghz, rel=1e-15)


@pytest.mark.parametrize("fsr,m", [(0.0, 2), (-1e9, 2), (1e11, 0), (1e11, 1.5)])
def test_pump_separation_invalid(fsr, m):
    with pytest.raises(InvalidParameterError):
        pump_separation_from_fsr(fsr, m)


def test_placement_validation():
    with pytest.raises(InvalidParameterError):
        ProcessPlacement(0.0, 1.0, -1.0)
    with pytest.raises(InvalidParameterError):
        ProcessPlacement(0.0, 0.0, 1.0)  # red coincides with pump2
    with pytest.raises(InvalidParameterError):
        ProcessPlacement(-1.0, 1.0, 1.0, length=0.0)
    with pytest.raises(InvalidParameterError):
        DispersionProfile(W0, float("nan"))


def test_illustrative_source_placement_is_matched():
    prof = DispersionProfile.illustrative_default()
    pl = placement_for_source(prof)
    assert pl.separation / TWO_PI == pytest.approx(805.1e9, rel=1e-12)
    assert pl.quantum_center == -pl.pump_center
    rows = sideband_suppression(prof, pl)
    assert rows[0].matched
    assert all(r.suppression < 0.5 for r in rows[1:])
    shifted = placement_for_source(prof, band_offset=TWO_PI * 50e9)
    assert abs(delta_beta(prof, shifted)) > 0


def test_band_offset_with_b2_matches_formula():
    prof = profile(-2e-27, 0.0)
    d = 10 * THZ
    om = pump_separation_from_fsr(201.275e9, 2)
    pl = ProcessPlacement(-d, d, om)
    assert delta_beta(prof, pl) == pytest.approx(2 * -2e-27 * d * om, rel=1e-12)


def test_design_csv(tmp_path):
    prof = DispersionProfile.illustrative_default()
    pl = placement_for_source(prof)
    rows = sideband_suppression(prof, pl)
    path = tmp_path / "design.csv"
    write_design_csv(prof, pl, rows, path, "cafe")
    lines = path.read_text().splitlines()
    assert lines[0] == "# manifest_sha256=cafe"
    assert "illustrative" in lines[1]
    table = list(csv.DictReader(lines[2:]))
    assert len(table) == len(rows)
    assert float(table[0]["delta_beta_rad_m"]) == 0.0
    assert float(table[0]["pump_separation_hz"]) == pytest.approx(805.1e9)
