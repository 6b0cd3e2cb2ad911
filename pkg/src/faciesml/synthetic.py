"""Seeded generator of contest-shaped well-log data.

Used for tests, demos and timing when the real ``training_data.csv`` is not
at hand. Facies follow a sticky Markov chain down each well; resistivity is
drawn from a per-facies Archie line in ``log10(PHIND)`` so the
resistivity/porosity ratio carries class information.
"""

from __future__ import annotations

import numpy as np

from faciesml.data_model import Dataset, WellLogRecord

# facies -> (GR, DeltaPHI, PE, log10 PHIND centre, log10 C, m)
_FACIES_PROFILE = {
    1: (75.0, 4.0, 3.0, 1.05, 1.30, 1.00),
    2: (70.0, 6.0, 3.1, 1.10, 1.55, 1.35),
    3: (68.0, 7.0, 3.2, 1.15, 1.70, 1.55),
    4: (60.0, 5.0, 3.6, 1.05, 1.10, 0.60),
    5: (55.0, 3.5, 3.9, 1.00, 1.25, 0.75),
    6: (48.0, 2.0, 4.2, 0.95, 1.45, 0.85),
    7: (38.0, 1.0, 4.8, 0.80, 1.60, 0.90),
    8: (42.0, 0.5, 4.4, 0.90, 1.90, 1.25),
    9: (35.0, -1.0, 5.0, 0.85, 2.10, 1.30),
}


def make_synthetic_dataset(
    n_wells: int = 8,
    rows_per_well: int | tuple[int, int] = 400,
    seed: int = 0,
    noise: float = 1.0,
    stay_probability: float = 0.9,
    well_prefix: str = "WELL",
) -> Dataset:
    """Build a :class:`Dataset` with ``n_wells`` wells sampled every 0.5 ft.

    ``rows_per_well`` is either a fixed count or an inclusive ``(low, high)``
    range. ``noise`` scales every measurement's scatter.
    """
    rng = np.random.default_rng(seed)
    records = []
    for w in range(n_wells):
        if isinstance(rows_per_well, tuple):
            n = int(rng.integers(rows_per_well[0], rows_per_well[1] + 1))
        else:
            n = int(rows_per_well)
        name = f"{well_prefix}-{chr(ord('A') + w % 26)}{'' if w < 26 else w // 26}"
        top = 2700.0 + 20.0 * float(rng.integers(0, 20))
        facies = int(rng.integers(1, 10))
        run = 0
        for i in range(n):
            if i and rng.random() > stay_probability:
                step = int(rng.choice([-2, -1, 1, 2]))
                facies = int(np.clip(facies + step, 1, 9))
                run = 0
            run += 1
            gr0, dphi0, pe0, lphi0, logc, m = _FACIES_PROFILE[facies]
            lphi = lphi0 + 0.12 * noise * rng.standard_normal()
            phind = float(10.0 ** lphi)
            ild = logc - m * lphi + 0.06 * noise * rng.standard_normal()
            records.append(
                WellLogRecord(
                    facies=facies,
                    well=name,
                    depth=top + 0.5 * i,
                    gr=round(gr0 + 12.0 * noise * rng.standard_normal(), 3),
                    ild_log10=round(ild, 4),
                    delta_phi=round(dphi0 + 2.5 * noise * rng.standard_normal(), 3),
                    phind=round(max(phind, 0.5), 3),
                    pe=round(pe0 + 0.5 * noise * rng.standard_normal(), 3),
                    nm_m=1 if facies <= 3 else 2,
                    relpos=round(max(0.001, 1.0 - (run % 60) / 60.0), 3),
                )
            )
    return Dataset.from_records(records, source_name=f"synthetic(seed={seed})")
