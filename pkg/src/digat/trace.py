"""Capture attention distributions emitted during a forward pass.

Forward functions accept an optional trace sink and record every softmax
they produce under a stable name. Tests use this to audit normalization
and permutation behaviour without reaching into internals.
"""

from __future__ import annotations

import numpy as np


class AttentionTrace:
    """Named collection of attention arrays, copied at record time."""

    def __init__(self) -> None:
        self.records: dict[str, list[np.ndarray]] = {}

    def record(self, name: str, array) -> None:
        self.records.setdefault(name, []).append(np.array(array, copy=True))

    def names(self) -> list[str]:
        return list(self.records)

    def rows(self):
        """Yield (name, 1-D distribution row) over everything recorded."""
        for name, arrays in self.records.items():
            for arr in arrays:
                flat = arr.reshape(-1, arr.shape[-1])
                for row in flat:
                    yield name, row
