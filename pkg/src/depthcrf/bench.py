"""Operation counting: windowed attention cost against the dense alternative.

The windowed figure is measured by running an instrumented forward pass and
summing the multiply-accumulates recorded inside attention layers. The dense
figure is analytic: for each attention layer seen during that same pass, a
global attention over its ``n`` tokens of width ``c`` would spend ``2 n^2 c``
MACs per image on the score and aggregation products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DepthModel
from .tensor import count_macs, no_grad

DEFAULT_SIZES = (64, 128, 256)
CSV_HEADER = "size,pixels,window_attention_macs,dense_attention_macs,total_macs,params,window_ratio,dense_ratio"


@dataclass(frozen=True)
class BenchRow:
    size: int
    pixels: int
    window_macs: int  # instrumented MACs inside attention layers
    dense_macs: int  # analytic global-attention MACs over the same layers
    total_macs: int  # instrumented MACs of the whole forward pass
    params: int
    window_ratio: float = float("nan")  # relative to the previous row
    dense_ratio: float = float("nan")

    def to_csv_row(self):
        return (
            f"{self.size},{self.pixels},{self.window_macs},{self.dense_macs},{self.total_macs},"
            f"{self.params},{self.window_ratio:.6f},{self.dense_ratio:.6f}"
        )


def dense_attention_macs(events):
    return sum(2 * e["images"] * e["tokens"] ** 2 * e["dim"] for kind, e in events if kind == "attention")


def measure(model, size, batch=1):
    img = np.zeros((batch, 3, size, size), dtype=np.float32)
    with no_grad(), count_macs() as counter:
        model(img)
    return counter.by_tag["attention"], dense_attention_macs(counter.events), counter.total


def run_bench(cfg, sizes=DEFAULT_SIZES, model=None):
    """One row per input size; ratios compare consecutive sizes."""
    model = model or DepthModel(cfg)
    params = model.num_parameters()
    rows = []
    for size in sizes:
        win, dense, total = measure(model, size)
        wr = dr = float("nan")
        if rows:
            wr = win / rows[-1].window_macs
            dr = dense / rows[-1].dense_macs
        rows.append(BenchRow(size, size * size, int(win), int(dense), int(total), params, wr, dr))
    return rows


def format_table(rows):
    return CSV_HEADER + "\n" + "".join(r.to_csv_row() + "\n" for r in rows)
