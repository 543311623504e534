"""Trial summaries in the sorted-trials / mean +- CI / median layout."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Z90 = 1.645


def ci90(samples) -> float:
    """Half-width of the 90% interval, ``1.645 * s / sqrt(n - 1)``.

    ``s`` is the sample standard deviation (``ddof=1``). Returns 0 for
    fewer than two samples.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        return 0.0
    return float(Z90 * np.std(x, ddof=1) / math.sqrt(x.size - 1))


@dataclass(frozen=True)
class TrialSummary:
    trials: tuple[int, ...]
    mean: float
    ci: float
    median: float

    @classmethod
    def from_trials(cls, trials) -> "TrialSummary":
        t = sorted(int(v) for v in trials)
        if not t:
            raise ValueError("need at least one trial")
        return cls(tuple(t), float(np.mean(t)), ci90(t), float(np.median(t)))

    def row(self) -> dict:
        return {
            "trials_sorted": " ".join(str(v) for v in self.trials),
            "average": f"{self.mean:.1f} ± {self.ci:.1f}",
            "median": f"{self.median:.1f}",
        }


TRIALS_HEADER = ("Experiment", "Cons. Success Trials (sorted)", "Average", "Median")
FRAME_HOLD_HEADER = ("Frame Hold (N)", "Cons. Successes")


def format_trials_table(rows: list[tuple[str, TrialSummary]]) -> str:
    """Plain-text table with one summary per row."""
    lines = ["\t".join(TRIALS_HEADER)]
    for label, s in rows:
        r = s.row()
        lines.append("\t".join([label, r["trials_sorted"], r["average"], r["median"]]))
    return "\n".join(lines) + "\n"


def format_frame_hold_table(rows: list[tuple[int, float]]) -> str:
    lines = ["\t".join(FRAME_HOLD_HEADER)]
    lines += [f"{n}\t{avg:.1f}" for n, avg in rows]
    return "\n".join(lines) + "\n"
