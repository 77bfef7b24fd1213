"""Simulator of a fiber-coupled polarization-entangled photon-pair source.

Classical design layer (quasi-phase-matching, emission spectra, coherence
times) plus quantum measurement layer (HOM dips, Bell fringes, CHSH) with
a detection-chain rate/Monte-Carlo model and least-squares extraction of
visibilities.
"""

__version__ = "0.1.0"
