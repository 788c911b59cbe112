"""Per-iteration diagnostics shared by all solvers, with CSV round trip."""

import csv
import io

import numpy as np

MRPCA_COLUMNS = ("iter", "objective", "gap", "rel_gap", "dL", "dW", "dU", "lagrangian")
EMRPCA_COLUMNS = MRPCA_COLUMNS + ("residual_x", "residual_z", "e_fraction")
RPCA_COLUMNS = MRPCA_COLUMNS


class IterationTrace:
    """Append-only table of per-iteration records.

    Columns are fixed at construction; ``trace["gap"]`` returns a column as an
    array and ``len(trace)`` is the number of iterations recorded.
    """

    def __init__(self, columns):
        self.columns = tuple(columns)
        self._rows = []

    def append(self, **values):
        missing = set(self.columns) - set(values)
        if missing:
            raise KeyError(f"missing trace fields: {sorted(missing)}")
        self._rows.append(tuple(values[c] for c in self.columns))

    def __len__(self):
        return len(self._rows)

    def __getitem__(self, column):
        idx = self.columns.index(column)
        return np.array([row[idx] for row in self._rows], dtype=float)

    def last(self):
        if not self._rows:
            return None
        return dict(zip(self.columns, self._rows[-1]))

    def to_csv(self, path_or_buf=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self._rows:
            writer.writerow(
                [int(v) if c == "iter" else repr(float(v)) for c, v in zip(self.columns, row)]
            )
        text = buf.getvalue()
        if path_or_buf is None:
            return text
        with open(path_or_buf, "w") as fh:
            fh.write(text)
        return None

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            trace = cls(header)
            for row in reader:
                if not row:
                    continue
                trace._rows.append(
                    tuple(int(v) if c == "iter" else float(v) for c, v in zip(header, row))
                )
        return trace

    def __repr__(self):
        return f"IterationTrace(columns={self.columns}, n={len(self)})"
