"""Static histogram of bias-function values.

SVG output is made reproducible by fixing the hash salt and omitting the
date metadata, so identical bins give identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def histogram_svg(
    bins: Sequence[tuple[float, float, int]],
    path,
    *,
    title: str = "bias function / sd(Y)",
) -> Path:
    path = Path(path)
    lefts = [b[0] for b in bins]
    widths = [b[1] - b[0] for b in bins]
    counts = [b[2] for b in bins]
    with matplotlib.rc_context({"svg.hashsalt": "atekit", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        try:
            ax.bar(lefts, counts, width=widths, align="edge", color="#4c72b0",
                   edgecolor="white", linewidth=0.5)
            ax.axvline(0.0, color="black", linewidth=0.8)
            ax.set_xlabel("b(x) / sd(Y)")
            ax.set_ylabel("units")
            ax.set_title(title)
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return path
