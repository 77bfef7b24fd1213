"""Classical design layer of the source.

Quasi-phase-matching solver for the periodically poled waveguide, the
two-branch emission spectrum, Bragg-filter action and coherence times.

Units at module boundaries: wavelengths in nm, poling period in um,
temperature in degC, times in ps. delta_k is returned in rad/um.

The dispersion backend is a Sellmeier coefficient table (congruent
LiNbO3 by default, Edwards & Lawrence 1984 form) loaded from a config
file; a single scalar index offset per polarization absorbs the
waveguide effective-index shift and is calibrated against the known
operating point of the device.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.constants import c as C_LIGHT
from scipy.optimize import brentq

from . import config as cfgmod

LAMBDA_MIN_NM = 400.0
LAMBDA_MAX_NM = 2000.0


class NoPhaseMatchingError(RuntimeError):
    """No sign change of delta_k in the search bracket."""


class FilterOverlapError(ValueError):
    """Filter passband does not overlap the emission spectrum."""


class CalibrationError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Dispersion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _SellmeierSet:
    """One polarization's coefficients for
    n^2 = a + (b + bt*f)/(lam^2 - (c - ct*f)^2) + dt*f - e*lam^2
    with lam in um and f = (T - 24.5)(T + 570.82), T in degC.
    """

    a: float
    b: float
    c: float
    e: float
    bt: float
    ct: float
    dt: float

    def index(self, lam_um: float, temp_c: float) -> float:
        f = (temp_c - 24.5) * (temp_c + 570.82)
        n2 = (
            self.a
            + (self.b + self.bt * f) / (lam_um**2 - (self.c - self.ct * f) ** 2)
            + self.dt * f
            - self.e * lam_um**2
        )
        return float(np.sqrt(n2))


@dataclass(frozen=True)
class DispersionModel:
    """Per-polarization Sellmeier sets plus calibration offsets.

    H is mapped to the ordinary axis and V to the extraordinary axis of the
    default coefficient file; the mapping itself lives in the file, not here.
    """

    sellmeier: dict[str, _SellmeierSet]
    offsets: dict[str, float] = field(default_factory=lambda: {"H": 0.0, "V": 0.0})
    calibrated: bool = False

    @classmethod
    def from_file(cls, path: str | Path) -> "DispersionModel":
        raw = cfgmod.load_config(path)
        sets = {}
        for pol in ("h", "v"):
            sets[pol.upper()] = _SellmeierSet(
                a=cfgmod.get_float(raw, f"sellmeier.{pol}.a"),
                b=cfgmod.get_float(raw, f"sellmeier.{pol}.b"),
                c=cfgmod.get_float(raw, f"sellmeier.{pol}.c"),
                e=cfgmod.get_float(raw, f"sellmeier.{pol}.e"),
                bt=cfgmod.get_float(raw, f"thermo.{pol}.bt"),
                ct=cfgmod.get_float(raw, f"thermo.{pol}.ct"),
                dt=cfgmod.get_float(raw, f"thermo.{pol}.dt"),
            )
        offsets = {
            "H": cfgmod.get_float(raw, "offset.h", 0.0),
            "V": cfgmod.get_float(raw, "offset.v", 0.0),
        }
        return cls(sellmeier=sets, offsets=offsets)

    @classmethod
    def default(cls) -> "DispersionModel":
        ref = importlib.resources.files("pairsource").joinpath("data/lithium_niobate.cfg")
        with importlib.resources.as_file(ref) as path:
            return cls.from_file(path)

    def with_offset(self, pol: str, offset: float, calibrated: bool = True) -> "DispersionModel":
        new = dict(self.offsets)
        new[pol] = offset
        return replace(self, offsets=new, calibrated=calibrated)


def refractive_index(model: DispersionModel, lam_nm: float, temp_c: float, pol: str) -> float:
    """n(lambda, T) for polarization 'H' or 'V', including the calibration offset."""
    if not LAMBDA_MIN_NM <= lam_nm <= LAMBDA_MAX_NM:
        raise ValueError(f"wavelength {lam_nm} nm outside [{LAMBDA_MIN_NM}, {LAMBDA_MAX_NM}] nm")
    pol = pol.upper()
    if pol not in ("H", "V"):
        raise ValueError(f"polarization must be 'H' or 'V', got {pol!r}")
    return model.sellmeier[pol].index(lam_nm / 1000.0, temp_c) + model.offsets[pol]


# ---------------------------------------------------------------------------
# Quasi-phase matching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QpmConfig:
    """Poling/operating point. Type-II assignment: pump H -> signal H + idler V."""

    poling_period_um: float
    temperature_c: float
    pump_wavelength_nm: float
    interaction_length_mm: float = 40.0
    pump_pol: str = "H"
    signal_pol: str = "H"
    idler_pol: str = "V"

    def __post_init__(self):
        if self.poling_period_um <= 0:
            raise ValueError("poling period must be positive")
        if self.interaction_length_mm <= 0:
            raise ValueError("interaction length must be positive")


def idler_wavelength(pump_nm: float, signal_nm: float) -> float:
    """Energy conservation: 1/lam_i = 1/lam_p - 1/lam_s."""
    if signal_nm <= pump_nm:
        raise ValueError(f"signal ({signal_nm} nm) must be longer than pump ({pump_nm} nm)")
    return 1.0 / (1.0 / pump_nm - 1.0 / signal_nm)


def delta_k(cfg: QpmConfig, model: DispersionModel, signal_nm: float) -> float:
    """Phase mismatch 2*pi*[n_p/l_p - n_s/l_s - n_i/l_i - 1/Lambda] in rad/um."""
    lam_i = idler_wavelength(cfg.pump_wavelength_nm, signal_nm)
    n_p = refractive_index(model, cfg.pump_wavelength_nm, cfg.temperature_c, cfg.pump_pol)
    n_s = refractive_index(model, signal_nm, cfg.temperature_c, cfg.signal_pol)
    n_i = refractive_index(model, lam_i, cfg.temperature_c, cfg.idler_pol)
    lp, ls, li = (x / 1000.0 for x in (cfg.pump_wavelength_nm, signal_nm, lam_i))
    return 2.0 * np.pi * (n_p / lp - n_s / ls - n_i / li - 1.0 / cfg.poling_period_um)


def find_degenerate_period(
    model: DispersionModel,
    pump_nm: float,
    temp_c: float,
    bracket: tuple[float, float] = (4.0, 20.0),
    tol: float = 1e-9,
) -> float:
    """Poling period (um) with delta_k = 0 at degeneracy lam_s = lam_i = 2*lam_p.

    Bisection on Lambda; delta_k is monotone in 1/Lambda so the root is
    unique inside a sign-changing bracket. Residual |delta_k| < tol rad/um.
    """
    lam_deg = 2.0 * pump_nm

    def mismatch(period):
        cfg = QpmConfig(period, temp_c, pump_nm)
        return delta_k(cfg, model, lam_deg)

    lo, hi = bracket
    f_lo, f_hi = mismatch(lo), mismatch(hi)
    if f_lo * f_hi > 0:
        raise NoPhaseMatchingError(
            f"no phase-matching solution for pump {pump_nm} nm at {temp_c} degC "
            f"in Lambda bracket {bracket} um"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = mismatch(mid)
        if abs(f_mid) < tol:
            return mid
        if f_lo * f_mid <= 0:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
    raise NoPhaseMatchingError(f"bisection did not reach |delta_k| < {tol} rad/um")


@dataclass(frozen=True)
class QpmAnchor:
    """Known operating point used to calibrate the waveguide index offset."""

    poling_period_um: float = 6.6
    temperature_c: float = 96.8
    pump_wavelength_nm: float = 655.0

    @property
    def degenerate_nm(self) -> float:
        return 2.0 * self.pump_wavelength_nm


def calibrate_offsets(
    model: DispersionModel,
    anchor: QpmAnchor = QpmAnchor(),
    pol: str = "V",
) -> DispersionModel:
    """Adjust one polarization's index offset so the anchor is an exact QPM root.

    The offset enters n linearly, so the correction is solved in closed form
    and verified; idempotent on an already-consistent model.
    """
    cfg = QpmConfig(anchor.poling_period_um, anchor.temperature_c, anchor.pump_wavelength_nm)
    dk0 = delta_k(cfg, model, anchor.degenerate_nm)
    lam_um = anchor.degenerate_nm / 1000.0
    pol = pol.upper()
    if pol == "V":
        # V enters the idler only: d(delta_k)/d(offset) = -2*pi/lam_i
        d = dk0 * lam_um / (2.0 * np.pi)
    elif pol == "H":
        # H enters pump and signal: d(delta_k)/d(offset) = 2*pi*(1/lam_p - 1/lam_s)
        d = -dk0 / (2.0 * np.pi * (1.0 / (anchor.pump_wavelength_nm / 1000.0) - 1.0 / lam_um))
    else:
        raise ValueError(f"polarization must be 'H' or 'V', got {pol!r}")
    calibrated = model.with_offset(pol, model.offsets[pol] + d)
    residual = delta_k(cfg, calibrated, anchor.degenerate_nm)
    if abs(residual) > 1e-9:
        raise CalibrationError(f"calibration residual {residual:.3e} rad/um")
    return calibrated


def tuning_curve(
    cfg: QpmConfig,
    model: DispersionModel,
    temperatures: np.ndarray | list[float],
    scan_halfwidth_nm: float = 200.0,
    grid_step_nm: float = 0.25,
) -> list[tuple[float, float, float, bool]]:
    """Signal/idler solutions of delta_k = 0 versus temperature.

    Returns rows (T, lam_s, lam_i, degenerate_flag); temperatures without a
    solution simply contribute no rows.
    """
    lam_deg = 2.0 * cfg.pump_wavelength_nm
    lo = max(lam_deg - scan_halfwidth_nm, cfg.pump_wavelength_nm + 1.0, LAMBDA_MIN_NM)
    hi = lam_deg + scan_halfwidth_nm
    # keep the idler inside the model's validity range
    while idler_wavelength(cfg.pump_wavelength_nm, hi) < LAMBDA_MIN_NM:
        hi -= grid_step_nm
    hi = min(hi, LAMBDA_MAX_NM)
    grid = np.arange(lo, hi, grid_step_nm)

    rows = []
    for temp in np.atleast_1d(temperatures):
        tcfg = replace(cfg, temperature_c=float(temp))
        vals = np.array([delta_k(tcfg, model, ls) for ls in grid])
        sign_change = np.nonzero(np.diff(np.sign(vals)) != 0)[0]
        for i in sign_change:
            root = brentq(lambda ls: delta_k(tcfg, model, ls), grid[i], grid[i + 1])
            lam_i = idler_wavelength(cfg.pump_wavelength_nm, root)
            rows.append((float(temp), float(root), float(lam_i), abs(root - lam_i) < 0.5))
    return rows


# ---------------------------------------------------------------------------
# Emission spectrum and filtering
# ---------------------------------------------------------------------------

_FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


@dataclass(frozen=True)
class SpectralBranch:
    """One QPM solution: centers of the H and V photons, common FWHM, weight."""

    center_h_nm: float
    center_v_nm: float
    fwhm_nm: float
    weight: float

    def __post_init__(self):
        if self.fwhm_nm <= 0:
            raise ValueError("branch FWHM must be positive")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError("branch weight must be in [0, 1]")

    @property
    def degenerate(self) -> bool:
        return abs(self.center_h_nm - self.center_v_nm) < 1e-6


@dataclass(frozen=True)
class FilterSpec:
    """Spectral filter: 'gaussian' or 'flat-top' passband."""

    center_nm: float
    fwhm_nm: float
    shape: str = "gaussian"

    def __post_init__(self):
        if self.fwhm_nm <= 0:
            raise ValueError("filter FWHM must be positive")
        if self.shape not in ("gaussian", "flat-top"):
            raise ValueError(f"unknown filter shape {self.shape!r}")

    def transmission(self, lam_nm: np.ndarray) -> np.ndarray:
        lam_nm = np.asarray(lam_nm, dtype=float)
        if self.shape == "gaussian":
            return np.exp(-4.0 * np.log(2.0) * (lam_nm - self.center_nm) ** 2 / self.fwhm_nm**2)
        return ((lam_nm >= self.center_nm - self.fwhm_nm / 2)
                & (lam_nm <= self.center_nm + self.fwhm_nm / 2)).astype(float)


@dataclass(frozen=True)
class EmissionSpectrum:
    branches: tuple[SpectralBranch, ...]
    pump_wavelength_nm: float
    applied_filters: tuple[FilterSpec, ...] = ()

    def __post_init__(self):
        total = sum(b.weight for b in self.branches)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"branch weights sum to {total}, expected 1")
        for b in self.branches:
            resid = 1.0 / b.center_h_nm + 1.0 / b.center_v_nm - 1.0 / self.pump_wavelength_nm
            if abs(resid) > 1e-6:
                raise ValueError(
                    f"branch ({b.center_h_nm}, {b.center_v_nm}) violates energy "
                    f"conservation by {resid:.2e} 1/nm"
                )

    def sideband_fraction(self) -> float:
        return sum(b.weight for b in self.branches if not b.degenerate)


def build_spectrum(
    primary_fwhm_nm: float = 0.7,
    sideband_fraction: float = 0.15,
    branch2_centers_nm: tuple[float, float] = (1308.7, 1310.9),
    degenerate_center_nm: float = 1309.8,
) -> EmissionSpectrum:
    """Two-branch emission spectrum: a degenerate main peak plus a weaker
    non-degenerate branch with the H photon on the short-wavelength side."""
    if not 0.0 <= sideband_fraction <= 1.0:
        raise ValueError("sideband fraction must be in [0, 1]")
    if primary_fwhm_nm <= 0:
        raise ValueError("FWHM must be positive")
    pump = degenerate_center_nm / 2.0
    branches = [
        SpectralBranch(degenerate_center_nm, degenerate_center_nm, primary_fwhm_nm,
                       1.0 - sideband_fraction),
    ]
    if sideband_fraction > 0:
        ch, cv = branch2_centers_nm
        branches.append(SpectralBranch(ch, cv, primary_fwhm_nm, sideband_fraction))
    return EmissionSpectrum(tuple(branches), pump)


def _photon_density(branch: SpectralBranch, pol: str, lam: np.ndarray,
                    filters: tuple[FilterSpec, ...]) -> np.ndarray:
    center = branch.center_h_nm if pol == "H" else branch.center_v_nm
    sigma = branch.fwhm_nm * _FWHM_TO_SIGMA
    dens = np.exp(-0.5 * ((lam - center) / sigma) ** 2)
    for f in filters:
        dens = dens * f.transmission(lam)
    return dens


def marginal_intensity(spectrum: EmissionSpectrum, pol: str, lam: np.ndarray) -> np.ndarray:
    """Weighted per-polarization spectral intensity (arbitrary units)."""
    lam = np.asarray(lam, dtype=float)
    out = np.zeros_like(lam)
    for b in spectrum.branches:
        out += b.weight * _photon_density(b, pol.upper(), lam, spectrum.applied_filters)
    return out


def _branch_transmission(branch: SpectralBranch, pol: str,
                         applied: tuple[FilterSpec, ...], new: FilterSpec) -> float:
    center = branch.center_h_nm if pol == "H" else branch.center_v_nm
    half = max(6.0 * branch.fwhm_nm, abs(center - new.center_nm) + 3.0 * new.fwhm_nm)
    lam = np.linspace(center - half, center + half, 8001)
    before = _photon_density(branch, pol, lam, applied)
    norm = np.trapezoid(before, lam)
    if norm <= 0:
        return 0.0
    after = np.trapezoid(before * new.transmission(lam), lam)
    return float(after / norm)


def apply_filter(
    spectrum: EmissionSpectrum, filt: FilterSpec
) -> tuple[EmissionSpectrum, float, float]:
    """Filter the spectrum; a pair survives only if BOTH photons pass.

    Returns (filtered spectrum with renormalized weights, transmitted pair
    fraction, post-filter sideband fraction).
    """
    min_dist = min(
        min(abs(b.center_h_nm - filt.center_nm), abs(b.center_v_nm - filt.center_nm))
        for b in spectrum.branches
    )
    if min_dist > 10.0:
        raise FilterOverlapError(
            f"filter center {filt.center_nm} nm is more than 10 nm from every branch"
        )
    pair_t = []
    for b in spectrum.branches:
        t_h = _branch_transmission(b, "H", spectrum.applied_filters, filt)
        t_v = _branch_transmission(b, "V", spectrum.applied_filters, filt)
        pair_t.append(t_h * t_v)
    transmitted = sum(b.weight * t for b, t in zip(spectrum.branches, pair_t))
    if transmitted < 1e-15:
        raise FilterOverlapError("filter does not overlap spectrum (zero transmission)")
    new_branches = tuple(
        replace(b, weight=b.weight * t / transmitted)
        for b, t in zip(spectrum.branches, pair_t)
        if b.weight * t / transmitted > 0.0
    )
    filtered = EmissionSpectrum(new_branches, spectrum.pump_wavelength_nm,
                                spectrum.applied_filters + (filt,))
    return filtered, float(transmitted), filtered.sideband_fraction()


# ---------------------------------------------------------------------------
# Coherence time
# ---------------------------------------------------------------------------

def coherence_time(lam_nm: float, delta_lambda_fwhm_nm: float) -> float:
    """Gaussian time-bandwidth product: tau = 0.44 * lam^2 / (c * dlam), in ps."""
    if lam_nm <= 0 or delta_lambda_fwhm_nm <= 0:
        raise ValueError("wavelength and bandwidth must be positive")
    tau_s = 0.44 * (lam_nm * 1e-9) ** 2 / (C_LIGHT * delta_lambda_fwhm_nm * 1e-9)
    return tau_s * 1e12
