"""CSV formats for samples, value/policy tables and tabular MDPs."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .embedding import TransitionSample
from .oracle import TabularMDP

__all__ = [
    "DataFormatError",
    "write_sample_csv",
    "read_sample_csv",
    "write_values_csv",
    "write_policy_csv",
    "read_policy_csv",
    "write_mdp_csv",
    "read_mdp_csv",
]


class DataFormatError(ValueError):
    """A data file does not parse; ``line`` is 1-based and counts the header."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}" if line else f"{path}: {message}")
        self.path = str(path)
        self.line = line


def _fmt(v) -> str:
    return repr(float(v))


def _write_table(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_sample_csv(path, sample: TransitionSample):
    d = sample.dim
    header = [f"x_{i}" for i in range(d)] + ["a"] + [f"xp_{i}" for i in range(d)]
    integral = np.issubdtype(sample.actions.dtype, np.integer)
    rows = []
    for x, a, xp in zip(sample.states, sample.actions, sample.next_states):
        act = str(int(a)) if integral else _fmt(a)
        rows.append([_fmt(v) for v in x] + [act] + [_fmt(v) for v in xp])
    _write_table(path, header, rows)


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(path, 0, "empty file")
    return rows[0], rows[1:]


def _floats(path, lineno, cells):
    try:
        vals = [float(c) for c in cells]
    except ValueError:
        raise DataFormatError(path, lineno, f"non-numeric field in {cells}") from None
    if not np.all(np.isfinite(vals)):
        raise DataFormatError(path, lineno, "non-finite value")
    return vals


def read_sample_csv(path) -> TransitionSample:
    """Inverse of :func:`write_sample_csv`.  Integer-valued action columns come
    back as integer ids, anything else as reals."""
    header, body = _read_rows(path)
    header = [h.strip() for h in header]
    if "a" not in header:
        raise DataFormatError(path, 1, "header lacks the action column 'a'")
    d = header.index("a")
    expected = [f"x_{i}" for i in range(d)] + ["a"] + [f"xp_{i}" for i in range(d)]
    if d == 0 or header != expected:
        raise DataFormatError(path, 1, f"expected header {','.join(expected)}")
    if not body:
        raise DataFormatError(path, 2, "no data rows")
    data = np.empty((len(body), 2 * d + 1))
    for i, row in enumerate(body):
        if len(row) != 2 * d + 1:
            raise DataFormatError(path, i + 2, f"expected {2 * d + 1} fields, got {len(row)}")
        data[i] = _floats(path, i + 2, row)
    acts = data[:, d]
    actions = acts.astype(int) if np.all(acts == np.rint(acts)) else acts
    return TransitionSample(data[:, :d], actions, data[:, d + 1:])


def write_values_csv(path, states, values):
    X = np.atleast_2d(np.asarray(states, dtype=float))
    header = [f"x_{i}" for i in range(X.shape[1])] + ["value"]
    _write_table(path, header, ([_fmt(v) for v in x] + [_fmt(val)] for x, val in zip(X, values)))


def write_policy_csv(path, states, actions):
    X = np.atleast_2d(np.asarray(states, dtype=float))
    acts = np.asarray(actions)
    integral = np.issubdtype(acts.dtype, np.integer)
    header = [f"x_{i}" for i in range(X.shape[1])] + ["a"]
    _write_table(path, header, ([_fmt(v) for v in x] + [str(int(a)) if integral else _fmt(a)]
                                for x, a in zip(X, acts)))


def read_policy_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """States ``(n, d)`` and their actions from a policy table."""
    header, body = _read_rows(path)
    header = [h.strip() for h in header]
    d = len(header) - 1
    if d < 1 or header != [f"x_{i}" for i in range(d)] + ["a"]:
        raise DataFormatError(path, 1, "expected header x_0..x_{d-1},a")
    if not body:
        raise DataFormatError(path, 2, "no data rows")
    data = np.empty((len(body), d + 1))
    for i, row in enumerate(body):
        if len(row) != d + 1:
            raise DataFormatError(path, i + 2, f"expected {d + 1} fields, got {len(row)}")
        data[i] = _floats(path, i + 2, row)
    acts = data[:, d]
    return data[:, :d], (acts.astype(int) if np.all(acts == np.rint(acts)) else acts)


def write_mdp_csv(directory, mdp: TabularMDP):
    """``transitions.csv`` (a,x,xp,prob) with nonzero entries only, ``rewards.csv`` (x,a,r)."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for a, P in enumerate(mdp.P):
        C = sp.coo_matrix(P)
        order = np.lexsort((C.col, C.row))
        rows += [[a, int(C.row[k]), int(C.col[k]), _fmt(C.data[k])] for k in order if C.data[k] != 0]
    _write_table(out / "transitions.csv", ["a", "x", "xp", "prob"], rows)
    _write_table(out / "rewards.csv", ["x", "a", "r"],
                 ([x, a, _fmt(mdp.r[x, a])] for x in range(mdp.n_states) for a in range(mdp.n_actions)))


def read_mdp_csv(directory, gamma: float) -> TabularMDP:
    base = Path(directory)
    tpath, rpath = base / "transitions.csv", base / "rewards.csv"
    th, tb = _read_rows(tpath)
    rh, rb = _read_rows(rpath)
    if [h.strip() for h in th] != ["a", "x", "xp", "prob"]:
        raise DataFormatError(tpath, 1, "expected header a,x,xp,prob")
    if [h.strip() for h in rh] != ["x", "a", "r"]:
        raise DataFormatError(rpath, 1, "expected header x,a,r")

    def ints(path, i, row, k):
        if len(row) != k:
            raise DataFormatError(path, i + 2, f"expected {k} fields, got {len(row)}")
        vals = _floats(path, i + 2, row)
        if any(v != int(v) or v < 0 for v in vals[:k - 1]):
            raise DataFormatError(path, i + 2, "indices must be non-negative integers")
        return vals

    T = np.array([ints(tpath, i, row, 4) for i, row in enumerate(tb)]).reshape(-1, 4)
    R = np.array([ints(rpath, i, row, 3) for i, row in enumerate(rb)]).reshape(-1, 3)
    if R.size == 0:
        raise DataFormatError(rpath, 2, "no data rows")
    n = int(max(R[:, 0].max(), T[:, 1].max(initial=0), T[:, 2].max(initial=0))) + 1
    k = int(max(R[:, 1].max(), T[:, 0].max(initial=0))) + 1
    r = np.full((n, k), np.nan)
    r[R[:, 0].astype(int), R[:, 1].astype(int)] = R[:, 2]
    if np.isnan(r).any():
        x, a = np.argwhere(np.isnan(r))[0]
        raise DataFormatError(rpath, 0, f"missing reward for x={x}, a={a}")
    P = []
    for a in range(k):
        t = T[T[:, 0] == a]
        P.append(sp.csr_matrix((t[:, 3], (t[:, 1].astype(int), t[:, 2].astype(int))), shape=(n, n)))
    return TabularMDP(tuple(P), r, gamma)
