"""Per-round transcripts shared by the pilots and the harness."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

PILOT_EXPLORE, BURNIN, COARSE, REFINE = 0, 1, 2, 3
PHASE_NAMES = ("pilot_explore", "burnin", "coarse", "refine")


@dataclass
class RunRecord:
    """One transcript row."""

    t: int
    phase: str
    bin: Optional[int]
    u: float
    u_tilde: float
    price: float
    purchase: int
    inst_regret: float = float("nan")
    cum_regret: float = float("nan")


@dataclass
class Transcript:
    """Column arrays for a whole run; ``bin`` is 0 and ``u_tilde`` nan where undefined."""

    u: np.ndarray
    u_tilde: np.ndarray
    price: np.ndarray
    purchase: np.ndarray
    phase: np.ndarray
    bin: np.ndarray
    pre_projection: Optional[np.ndarray] = None
    inst_regret: Optional[np.ndarray] = None
    meta: Optional[dict] = None

    def __len__(self):
        return self.u.size

    @property
    def cum_regret(self):
        return np.cumsum(self.inst_regret)

    def rows(self):
        cum = self.cum_regret if self.inst_regret is not None else None
        for i in range(len(self)):
            yield RunRecord(
                t=i + 1,
                phase=PHASE_NAMES[int(self.phase[i])],
                bin=int(self.bin[i]) if self.bin[i] > 0 else None,
                u=float(self.u[i]),
                u_tilde=float(self.u_tilde[i]),
                price=float(self.price[i]),
                purchase=int(self.purchase[i]),
                inst_regret=float(self.inst_regret[i]) if cum is not None else float("nan"),
                cum_regret=float(cum[i]) if cum is not None else float("nan"),
            )


def empty_transcript(u):
    T = np.asarray(u).size
    return Transcript(u=np.asarray(u, dtype=float), u_tilde=np.full(T, np.nan), price=np.zeros(T),
                      purchase=np.zeros(T, dtype=np.int8), phase=np.zeros(T, dtype=np.int8),
                      bin=np.zeros(T, dtype=np.int64), pre_projection=np.full(T, np.nan))


def merge_orbit(tr: Transcript, rows, out):
    """Write the output of :meth:`Orbit.run` for ``rows`` into the transcript."""
    tr.price[rows] = out["price"]
    tr.purchase[rows] = out["purchase"]
    tr.phase[rows] = np.where(out["phase"] == 1, REFINE, COARSE)
    tr.bin[rows] = out["bin"]
    tr.pre_projection[rows] = out["pre_projection"]
