import numpy as np
import pytest

from pairsource.fitting import (
    FitError,
    FitResult,
    ScanData,
    chsh_from_fits,
    dip_model,
    fit_dip,
    fit_fringe,
    fringe_model,
    net_correct,
)

FOUR_LN2 = 4 * np.log(2)


def make_dip(r0=27000.0, v=0.83, tau0=0.4, w=7.11, n=40, span=15.0, t=60.0):
    tau = np.linspace(-span, span, n)
    return ScanData(tuple(tau), tuple(dip_model(tau, r0, v, tau0, w)), t)


def make_fringe(r0=540.0, v=0.71, theta0=10.0, n=40, t=60.0):
    theta = np.linspace(0.0, 90.0, n)
    return ScanData(tuple(theta), tuple(fringe_model(theta, r0, v, theta0)), t)


# --- noiseless recovery ---------------------------------------------------

def test_dip_exact_recovery():
    fit = fit_dip(make_dip())
    assert fit.params["R0"] == pytest.approx(27000.0, rel=1e-6)
    assert fit.params["V"] == pytest.approx(0.83, abs=1e-6)
    assert fit.params["tau0"] == pytest.approx(0.4, abs=1e-6)
    assert fit.params["w"] == pytest.approx(7.11, abs=1e-6)
    assert fit.reduced_chi2 < 1e-12


def test_fringe_exact_recovery():
    fit = fit_fringe(make_fringe())
    assert fit.params["R0"] == pytest.approx(540.0, rel=1e-6)
    assert fit.params["V"] == pytest.approx(0.71, abs=1e-6)
    assert fit.params["theta0"] == pytest.approx(10.0, abs=1e-6)
    assert fit.reduced_chi2 < 1e-12


def test_dip_width_tracks_coherence_time():
    tau_coh = 5.03
    fit = fit_dip(make_dip(w=np.sqrt(2) * tau_coh))
    assert fit.params["w"] / tau_coh == pytest.approx(np.sqrt(2), rel=1e-6)


def test_fringe_phase_shift_recovery():
    for theta0 in (-15.0, 0.0, 31.7):
        fit = fit_fringe(make_fringe(theta0=theta0))
        # theta0 is only defined modulo the 90 deg fringe period
        diff = (fit.params["theta0"] - theta0) % 90.0
        assert min(diff, 90.0 - diff) < 1e-6


def test_fringe_visibility_convention():
    # the reported visibility is (Rmax - Rmin)/Rmax = 2V/(1+V)
    fit = fit_fringe(make_fringe(v=0.71))
    assert fit.params["visibility"] == pytest.approx(2 * 0.71 / 1.71, abs=1e-6)
    dip = fit_dip(make_dip(v=0.83))
    assert dip.params["visibility"] == pytest.approx(0.83, abs=1e-6)


def test_fit_input_validation():
    with pytest.raises(ValueError):
        fit_dip(ScanData((0, 1, 2), (5, 3, 5), 1.0))
    flat = ScanData(tuple(range(10)), (100.0,) * 10, 1.0)
    with pytest.raises(FitError):
        fit_dip(flat)
    with pytest.raises(FitError):
        fit_fringe(flat)
    with pytest.raises(ValueError):
        ScanData((0, 1), (1.0, -2.0), 1.0)
    with pytest.raises(ValueError):
        ScanData((0, 1), (1.0, 2.0), 0.0)


# --- error bars -----------------------------------------------------------

def test_fringe_error_calibration():
    """Asymptotic standard errors track the resampling scatter."""
    truth = dict(r0=540.0, v=0.71, theta0=10.0)
    theta = np.linspace(0.0, 90.0, 40)
    mean_rate = fringe_model(theta, **{"r0": truth["r0"], "v": truth["v"],
                                       "theta0": truth["theta0"]})
    rng = np.random.default_rng(101)
    vs, sigmas = [], []
    for _ in range(120):
        counts = rng.poisson(mean_rate)
        fit = fit_fringe(ScanData(tuple(theta), tuple(float(c) for c in counts), 1.0))
        vs.append(fit.params["V"])
        sigmas.append(fit.std_errors["V"])
    empirical = np.std(vs, ddof=1)
    asymptotic = np.mean(sigmas)
    assert empirical == pytest.approx(asymptotic, rel=0.3)
    assert np.mean(vs) == pytest.approx(truth["v"], abs=3 * empirical / np.sqrt(len(vs)))


def test_dip_error_calibration():
    tau = np.linspace(-15, 15, 40)
    mean_rate = dip_model(tau, 450.0, 0.83, 0.0, 7.11)
    rng = np.random.default_rng(202)
    vs, sigmas = [], []
    for _ in range(120):
        counts = rng.poisson(mean_rate)
        fit = fit_dip(ScanData(tuple(tau), tuple(float(c) for c in counts), 1.0))
        vs.append(fit.params["V"])
        sigmas.append(fit.std_errors["V"])
    assert np.std(vs, ddof=1) == pytest.approx(np.mean(sigmas), rel=0.3)


def test_visibility_error_magnitude_at_short_integration():
    # coincidence-level fringe with tens of counts per point: the error
    # bar lands in the few-percent band typical of quoted visibilities
    theta = np.linspace(0.0, 90.0, 40)
    t = 0.1
    rate = fringe_model(theta, 2 * 450.0 / 1.71, 0.71, 10.0)  # peaks at 450 cps
    fit = fit_fringe(ScanData(tuple(theta), tuple(rate * t), t))
    assert 0.01 < fit.std_errors["visibility"] < 0.05


def test_error_scales_with_integration_time():
    theta = np.linspace(0.0, 90.0, 40)
    fits = []
    for t in (15.0, 60.0):
        counts = fringe_model(theta, 9.0 * t, 0.71, 10.0)
        fits.append(fit_fringe(ScanData(tuple(theta), tuple(counts), t)))
    ratio = fits[0].std_errors["V"] / fits[1].std_errors["V"]
    assert ratio == pytest.approx(2.0, rel=0.2)


# --- net correction -------------------------------------------------------

def test_net_correct_identity_without_accidentals():
    data = make_fringe()
    out = net_correct(data, 0.0)
    assert out.counts == data.counts
    assert out.net


def test_net_correct_floors_at_zero():
    data = ScanData((0.0, 1.0), (5.0, 100.0), 1.0)
    out = net_correct(data, 10.0)
    assert out.counts == (0.0, 90.0)
    with pytest.raises(ValueError):
        net_correct(data, -1.0)


def test_net_correct_keeps_raw_count_variance():
    data = ScanData((0.0, 1.0), (100.0, 400.0), 1.0)
    out = net_correct(data, 50.0)
    assert out.sigma() == pytest.approx(np.sqrt([100.0, 400.0]))


def test_net_correction_lifts_raw_visibility():
    # raw fringe riding on a flat accidental floor: 0.83 raw -> 1.00 net
    r_max, frac = 450.0, 0.17
    r_acc = frac * r_max
    theta = np.linspace(0.0, 90.0, 40)
    prob = 0.5 * (1 - np.cos(np.deg2rad(4 * theta)))
    rate = r_acc + (r_max - r_acc) * prob
    t = 60.0
    raw = ScanData(tuple(theta), tuple(rate * t), t)
    fit_raw = fit_fringe(raw)
    assert fit_raw.params["visibility"] == pytest.approx(1 - frac, abs=1e-6)
    assert fit_raw.params["visibility"] == pytest.approx(0.83, abs=1e-6)
    fit_net = fit_fringe(net_correct(raw, r_acc))
    assert fit_net.params["visibility"] == pytest.approx(1.0, abs=1e-6)


# --- analytic gradient cross-check ----------------------------------------

def test_fringe_gradient_matches_hand_derivation():
    k = np.deg2rad(4.0)
    rng = np.random.default_rng(17)
    for _ in range(10):
        theta = rng.uniform(0, 90)
        r0, v, theta0 = rng.uniform(100, 1000), rng.uniform(0.1, 0.99), rng.uniform(-30, 30)
        u = k * (theta - theta0)
        expected = np.array([
            0.5 * (1 - v * np.cos(u)),          # d/dR0
            -0.5 * r0 * np.cos(u),              # d/dV
            -0.5 * r0 * v * k * np.sin(u),      # d/dtheta0
        ])
        h = 1e-6
        numeric = []
        for i, p in enumerate((r0, v, theta0)):
            args_p, args_m = [r0, v, theta0], [r0, v, theta0]
            args_p[i] += h
            args_m[i] -= h
            numeric.append((fringe_model(theta, *args_p) - fringe_model(theta, *args_m)) / (2 * h))
        assert np.allclose(expected, numeric, atol=1e-4)


# --- CHSH from fitted fringes ---------------------------------------------

def _fringe_fits_for_coherence(c, t=60.0, r0=540.0):
    """Noiseless fringe scans at the four Alice settings, then fit each.

    H/V-basis fringes keep full contrast; the D/A fringes carry the
    coherence, phased per the closed-form correlation.
    """
    theta = np.linspace(0.0, 90.0, 40)
    plan = {0.0: (1.0, 0.0), 45.0: (1.0, 45.0), 22.5: (c, -22.5), 67.5: (c, 22.5)}
    fits = {}
    for alice, (v, theta0) in plan.items():
        counts = fringe_model(theta, r0, v, theta0) * (t / 60.0)
        fits[alice] = fit_fringe(ScanData(tuple(theta), tuple(counts), t))
    return fits


def test_chsh_from_fits_perfect_state():
    res = chsh_from_fits(_fringe_fits_for_coherence(1.0))
    assert res.S == pytest.approx(2 * np.sqrt(2), abs=1e-6)


def test_chsh_from_fits_net_coherence():
    res = chsh_from_fits(_fringe_fits_for_coherence(0.99))
    assert res.S == pytest.approx(np.sqrt(2) * 1.99, abs=1e-6)
    assert res.S == pytest.approx(2.80, abs=0.02)
    assert res.S > 2.0


def test_chsh_from_fits_error_propagation():
    theta = np.linspace(0.0, 90.0, 40)
    rng = np.random.default_rng(55)
    plan = {0.0: (1.0, 0.0), 45.0: (1.0, 45.0), 22.5: (0.99, -22.5), 67.5: (0.99, 22.5)}
    s_values = []
    errors = []
    for _ in range(60):
        fits = {}
        for alice, (v, theta0) in plan.items():
            counts = rng.poisson(fringe_model(theta, 540.0, v, theta0))
            fits[alice] = fit_fringe(ScanData(tuple(theta), tuple(float(x) for x in counts), 60.0))
        res = chsh_from_fits(fits)
        s_values.append(res.S)
        errors.append(res.std_error)
    assert np.std(s_values, ddof=1) == pytest.approx(np.mean(errors), rel=0.35)
    assert np.mean(s_values) == pytest.approx(np.sqrt(2) * 1.99, abs=0.02)


def test_chsh_from_fits_requires_all_angles():
    fits = _fringe_fits_for_coherence(1.0)
    fits.pop(45.0)
    with pytest.raises(ValueError):
        chsh_from_fits(fits)


def test_fit_result_is_self_consistent():
    fit = fit_fringe(make_fringe())
    assert isinstance(fit, FitResult)
    assert set(fit.param_order) == {"R0", "V", "theta0"}
    assert fit.covariance.shape == (3, 3)
