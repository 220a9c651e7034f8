"""Bag-valued query answers and their deltas."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import CorruptionError


class MultisetAnswer:
    """Map from answer tuple to a positive multiplicity.

    A tuple is *in* the answer iff its count is positive; removing the last
    copy deletes the key.
    """

    __slots__ = ("_counts",)

    def __init__(self, counts=None):
        self._counts = {}
        if counts:
            items = counts.items() if hasattr(counts, "items") else ((t, 1) for t in counts)
            for t, c in items:
                if c < 0:
                    raise ValueError(f"negative count for {t!r}")
                if c:
                    self._counts[t] = self._counts.get(t, 0) + c

    @classmethod
    def from_rows(cls, rows):
        ans = cls()
        counts = ans._counts
        for r in rows:
            counts[r] = counts.get(r, 0) + 1
        return ans

    def count(self, t):
        return self._counts.get(t, 0)

    def __getitem__(self, t):
        return self._counts.get(t, 0)

    def __contains__(self, t):
        return t in self._counts

    def __iter__(self):
        return iter(self._counts)

    def __len__(self):
        return len(self._counts)

    def items(self):
        return self._counts.items()

    def total(self):
        return sum(self._counts.values())

    def copy(self):
        new = MultisetAnswer()
        new._counts = dict(self._counts)
        return new

    def as_dict(self):
        return dict(self._counts)

    def add(self, t, c=1):
        if c < 0:
            raise ValueError("use remove() for negative adjustments")
        if c:
            self._counts[t] = self._counts.get(t, 0) + c

    def remove(self, t, c=1):
        have = self._counts.get(t, 0)
        if c > have:
            raise CorruptionError(f"removing {c} copies of {t!r} but only {have} present")
        if c == have:
            self._counts.pop(t, None)
        else:
            self._counts[t] = have - c

    def apply(self, delta: "AnswerDelta"):
        """Subtract removals then add additions, in place."""
        for t, c in delta.removals.items():
            self.remove(t, c)
        for t, c in delta.additions.items():
            self.add(t, c)
        return self

    def __eq__(self, other):
        if isinstance(other, MultisetAnswer):
            return self._counts == other._counts
        if isinstance(other, dict):
            return self._counts == {k: v for k, v in other.items() if v}
        return NotImplemented

    def __repr__(self):
        return f"MultisetAnswer({self._counts!r})"


@dataclass
class AnswerDelta:
    removals: MultisetAnswer = field(default_factory=MultisetAnswer)
    additions: MultisetAnswer = field(default_factory=MultisetAnswer)

    def is_empty(self):
        return not len(self.removals) and not len(self.additions)

    def inverse(self):
        return AnswerDelta(self.additions.copy(), self.removals.copy())


def maintain(answer: MultisetAnswer, delta: AnswerDelta) -> MultisetAnswer:
    """New answer equal to ``answer - removals + additions``."""
    return answer.copy().apply(delta)
