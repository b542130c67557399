"""Reference models used across demos, diagnostics, and acceptance runs.

Three presets cover the qualitative regimes:

* ``reference_expanding`` -- solenoidal, unit length scale, drift 0.5.
  Exponents (0.5, -1.5): a diffuse statistical equilibrium with
  Kaplan-Yorke dimension 4/3, recurrent distance process.  This is the
  model every closed-form-versus-Monte-Carlo comparison is run on.
* ``default_contracting`` -- potential family at length scale 2, drift 0.5.
  Exponents (-0.75, -1.25): Dirac equilibrium, transient distance process,
  fast collapse.  Used for the attractor diagnostics.
* ``default_expanding`` -- solenoidal at length scale 2, drift 0.15.
  Exponents (0.1, -0.4): weakly expanding counterpart for the diagnostics.

The length-2 diagnostic presets are chosen so that the stability guard
admits dt = 0.02, keeping long-horizon sup statistics affordable, and so
that the unit-time deviation scale sits comfortably below the spatial-
regularity acceptance threshold at radius 50 length scales.
"""

from __future__ import annotations

from ouflow.correlation import (
    CorrelationModel,
    gaussian_potential,
    gaussian_solenoidal,
)

__all__ = [
    "reference_expanding",
    "default_contracting",
    "default_expanding",
    "default_models",
]


def reference_expanding() -> CorrelationModel:
    """Exponents (0.5, -1.5); the closed-form comparison workhorse."""
    return gaussian_solenoidal(dim=2, length_scale=1.0, drift=0.5)


def reference_contracting() -> CorrelationModel:
    """Exponents (-1.5, -3.5); strongly collapsing twin of the reference."""
    return gaussian_potential(dim=2, length_scale=1.0, drift=0.5)


def default_contracting() -> CorrelationModel:
    """Exponents (-0.75, -1.25); diagnostic default, dt = 0.02 admissible."""
    return gaussian_potential(dim=2, length_scale=2.0, drift=0.5)


def default_expanding() -> CorrelationModel:
    """Exponents (0.1, -0.4); diagnostic default, dt = 0.02 admissible."""
    return gaussian_solenoidal(dim=2, length_scale=2.0, drift=0.15)


def default_models() -> dict[str, CorrelationModel]:
    return {"contracting": default_contracting(),
            "expanding": default_expanding()}
