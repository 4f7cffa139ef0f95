"""Word-level accounting of algorithmic state.

A word is ceil(log2(n*d*delta)) bits: enough for one coordinate plus a
weight.  The meter tracks per-component word counts and running peaks; it
counts only state the algorithm itself must hold, never test-harness shadow
structures (ground-truth dictionaries, validation maps, memo caches).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass
class MemoryMeter:
    n: int
    d: int
    delta: int
    components: dict = field(default_factory=dict)
    peak_words: float = 0.0
    phase: str = "default"
    phase_peaks: dict = field(default_factory=dict)

    @property
    def word_bits(self) -> int:
        return max(1, math.ceil(math.log2(max(2, self.n * self.d * self.delta))))

    def set_phase(self, name: str) -> None:
        self.phase = name
        self.phase_peaks.setdefault(name, self.total())

    def set(self, component: str, words: float) -> None:
        self.components[component] = float(words)
        self._bump()

    def add(self, component: str, delta: float) -> None:
        self.components[component] = self.components.get(component, 0.0) + delta
        self._bump()

    def total(self) -> float:
        return sum(self.components.values())

    def _bump(self) -> None:
        t = self.total()
        if t > self.peak_words:
            self.peak_words = t
        if t > self.phase_peaks.get(self.phase, 0.0):
            self.phase_peaks[self.phase] = t

    def snapshot(self) -> dict:
        return {
            "word_bits": self.word_bits,
            "peak_words": self.peak_words,
            "current_words": self.total(),
            "components": dict(self.components),
            "phase_peaks": dict(self.phase_peaks),
        }
