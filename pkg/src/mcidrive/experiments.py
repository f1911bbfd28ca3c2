"""Cohort presets shared by the experiment scripts and the acceptance suite."""

from __future__ import annotations

from dataclasses import replace

from mcidrive.synth import CohortSpec, inject_planted_signal

# Balanced classes so a signal-free model sits near 50% accuracy; one
# quarter of driving per participant keeps the sweep fast.
PLANTED_BASE = CohortSpec(n_participants=60, mci_fraction=0.5, weeks=13)


def planted_spec(effect: str, strength: float = 2.0, seed: int = 0,
                 base: CohortSpec = PLANTED_BASE) -> CohortSpec:
    return inject_planted_signal(replace(base, seed=seed), effect, strength)
