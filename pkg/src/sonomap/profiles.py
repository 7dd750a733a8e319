"""Per-action configuration bundles (chiseling, drilling, sawing)."""

from __future__ import annotations

from dataclasses import dataclass

from .dsp import BandpassSpec


@dataclass(frozen=True)
class FixedCube:
    edge: float

    def __post_init__(self):
        if self.edge <= 0:
            raise ValueError("cube edge must be positive")


@dataclass(frozen=True)
class InstrumentExtents:
    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        if min(self.dx, self.dy, self.dz) <= 0:
            raise ValueError("instrument extents must be positive")

    @property
    def extents(self):
        return (self.dx, self.dy, self.dz)


@dataclass(frozen=True)
class ActionProfile:
    """Everything that changes between surgical actions.

    ``j`` is the relaxed-matching tolerance in 20 ms hop frames and ``k_cv``
    the number of cross-validation folds used for the action.  Instrument
    extents are not published; the values below are plausible power-tool
    dimensions and are meant to be overridden.
    """

    name: str
    band: BandpassSpec | None
    box_rule: FixedCube | InstrumentExtents
    j: int
    trigger_mode: str  # "impulsive" or "continuous"
    k_cv: int = 3
    grid_distance: float = 1.5

    def __post_init__(self):
        if self.trigger_mode not in ("impulsive", "continuous"):
            raise ValueError(f"unknown trigger mode {self.trigger_mode!r}")
        if self.j < 0:
            raise ValueError("j must be >= 0")


CHISELING = ActionProfile("chiseling", None, FixedCube(0.05), j=1, trigger_mode="impulsive", k_cv=3)
SAWING = ActionProfile(
    "sawing", BandpassSpec(1000.0, 5000.0, 4), InstrumentExtents(0.30, 0.10, 0.12),
    j=3, trigger_mode="continuous", k_cv=2,
)
DRILLING = ActionProfile(
    "drilling", BandpassSpec(1000.0, 10000.0, 4), InstrumentExtents(0.25, 0.08, 0.20),
    j=10, trigger_mode="continuous", k_cv=3,
)

PROFILES = {p.name: p for p in (CHISELING, DRILLING, SAWING)}


def get_profile(name):
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown action profile {name!r}; choose from {sorted(PROFILES)}") from None
