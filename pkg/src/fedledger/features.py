"""Column layout of encoded payment rows.

An encoded row is the concatenation, in attribute order, of one-hot
segments for categorical attributes and single min-max scaled slots for
numerical attributes.  The layout records where each attribute lives so the
loss can treat the two kinds differently.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class FeatureLayout:
    cat_segments: tuple  # (start, stop) column span per categorical attribute
    num_slots: tuple  # column index per numerical attribute
    width: int

    def __post_init__(self):
        covered = sum(stop - start for start, stop in self.cat_segments)
        covered += len(self.num_slots)
        if covered != self.width:
            raise ValueError(
                f"layout covers {covered} columns but declares width {self.width}"
            )

    @property
    def n_categorical(self):
        return len(self.cat_segments)

    @property
    def n_numerical(self):
        return len(self.num_slots)

    def segment_width(self, j):
        start, stop = self.cat_segments[j]
        return stop - start
