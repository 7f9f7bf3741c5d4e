"""Expression matrices: ingestion, normalization, subsetting and per-gene statistics.

Matrices are stored cells x genes in CSR layout. All operations are pure and
return new objects; an :class:`ExpressionMatrix` is never mutated after
construction.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateInput, DimensionMismatch, ParseError

STAT_NAMES = ("std", "min", "max", "q1", "q2", "q3", "mean")


def _check_unique(ids, kind, path=None):
    seen = {}
    for pos, name in enumerate(ids):
        if name in seen:
            raise ParseError(f"duplicate {kind} id {name!r}", path=path)
        seen[name] = pos


@dataclass(frozen=True, eq=False)
class ExpressionMatrix:
    """Non-negative cells x genes matrix with cell and gene identifiers."""

    values: sp.csr_matrix
    gene_ids: tuple
    cell_ids: tuple

    def __post_init__(self):
        values = sp.csr_matrix(self.values, dtype=np.float64)
        values.sort_indices()
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "gene_ids", tuple(str(g) for g in self.gene_ids))
        object.__setattr__(self, "cell_ids", tuple(str(c) for c in self.cell_ids))
        n_cells, n_genes = values.shape
        if len(self.gene_ids) != n_genes:
            raise DimensionMismatch(f"{len(self.gene_ids)} gene ids for {n_genes} genes")
        if len(self.cell_ids) != n_cells:
            raise DimensionMismatch(f"{len(self.cell_ids)} cell ids for {n_cells} cells")
        _check_unique(self.gene_ids, "gene")
        _check_unique(self.cell_ids, "cell")
        data = values.data
        if data.size and (not np.all(np.isfinite(data)) or data.min() < 0):
            raise ValueError("expression values must be finite and non-negative")

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def n_genes(self) -> int:
        return self.values.shape[1]

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.values.data))

    def dense(self) -> np.ndarray:
        return self.values.toarray()

    @classmethod
    def from_dense(cls, array, gene_ids=None, cell_ids=None) -> "ExpressionMatrix":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 2:
            raise ValueError("expected a 2-d array")
        n_cells, n_genes = array.shape
        if gene_ids is None:
            gene_ids = [f"g{j}" for j in range(n_genes)]
        if cell_ids is None:
            cell_ids = [f"c{i}" for i in range(n_cells)]
        return cls(sp.csr_matrix(array), tuple(gene_ids), tuple(cell_ids))


@dataclass(frozen=True)
class GeneMask:
    """Boolean selection over the genes of a matrix."""

    bits: np.ndarray
    n_selected: int = field(init=False)

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool).ravel()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "n_selected", int(bits.sum()))

    def __len__(self):
        return self.bits.size

    def __eq__(self, other):
        if not isinstance(other, GeneMask):
            return NotImplemented
        return np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash(self.bits.tobytes())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    @classmethod
    def full(cls, n: int) -> "GeneMask":
        return cls(np.ones(n, dtype=bool))

    @classmethod
    def empty(cls, n: int) -> "GeneMask":
        return cls(np.zeros(n, dtype=bool))

    @classmethod
    def from_indices(cls, indices, n: int) -> "GeneMask":
        bits = np.zeros(n, dtype=bool)
        bits[np.asarray(list(indices), dtype=int)] = True
        return cls(bits)

    def __and__(self, other):
        return GeneMask(self.bits & other.bits)

    def __or__(self, other):
        return GeneMask(self.bits | other.bits)


@dataclass(frozen=True, eq=False)
class GeneStatsBlock:
    """Per-gene descriptive statistics, one row per gene, columns in STAT_NAMES order."""

    table: np.ndarray

    @property
    def n_genes(self) -> int:
        return self.table.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.table[:, STAT_NAMES.index(name)]


# ---------------------------------------------------------------------------
# readers / writers


def _parse_value(text, path, line, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"non-numeric value {text!r}", path, line, column) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {text!r}", path, line, column)
    if value < 0:
        raise ParseError(f"negative value {text!r}", path, line, column)
    return value


def load_csv(path, genes_in: str = "columns") -> ExpressionMatrix:
    """Read a dense CSV with identifiers in the first row and first column.

    Parameters
    ----------
    path : str or Path
    genes_in : {"columns", "rows"}
        Where the genes live in the file. ``"rows"`` means the file is
        genes x cells and is transposed on load.
    """
    if genes_in not in ("columns", "rows"):
        raise ValueError(f"genes_in must be 'columns' or 'rows', got {genes_in!r}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty matrix", path) from None
        col_ids = [h.strip() for h in header[1:]]
        if not col_ids:
            raise ParseError("empty matrix: header has no identifiers", path, 1)
        row_ids, rows, cols, vals = [], [], [], []
        for r, record in enumerate(reader):
            lineno = r + 2
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            if len(record) != len(header):
                raise ParseError(f"ragged row at line {lineno}", path, lineno)
            row_ids.append(record[0].strip())
            for c, text in enumerate(record[1:]):
                value = _parse_value(text.strip(), path, lineno, c + 2)
                if value != 0.0:
                    rows.append(len(row_ids) - 1)
                    cols.append(c)
                    vals.append(value)
    if not row_ids:
        raise ParseError("empty matrix: no data rows", path)
    kind_rows, kind_cols = ("cell", "gene") if genes_in == "columns" else ("gene", "cell")
    _check_unique(col_ids, kind_cols, path)
    _check_unique(row_ids, kind_rows, path)
    mat = sp.csr_matrix(
        (np.asarray(vals, dtype=np.float64), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(len(row_ids), len(col_ids)),
    )
    if genes_in == "columns":
        return ExpressionMatrix(mat, tuple(col_ids), tuple(row_ids))
    return ExpressionMatrix(mat.T.tocsr(), tuple(row_ids), tuple(col_ids))


def write_csv(m: ExpressionMatrix, path) -> None:
    """Write ``m`` as a dense cells x genes CSV (repr-exact floats)."""
    dense = m.dense()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([""] + list(m.gene_ids))
        for cid, row in zip(m.cell_ids, dense):
            writer.writerow([cid] + [_fmt(v) for v in row])


def _fmt(v: float) -> str:
    if v == 0.0:
        return "0"
    return repr(float(v))


def _read_ids(path, expected, kind):
    path = Path(path)
    ids = [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if len(ids) != expected:
        raise DimensionMismatch(f"{path}: {len(ids)} {kind} ids but matrix declares {expected}")
    _check_unique(ids, kind, path)
    return ids


def load_matrix_market(path, gene_ids_path, cell_ids_path, genes_in: str = "rows") -> ExpressionMatrix:
    """Read a ``coordinate real general`` MatrixMarket file plus id sidecars.

    The 10x convention (genes in rows, cells in columns) is the default.
    Duplicate coordinates are rejected rather than summed.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].lower().startswith("%%matrixmarket"):
        raise ParseError("missing %%MatrixMarket header", path, 1)
    banner = lines[0].lower().split()
    if banner[1:4] != ["matrix", "coordinate", "real"] and banner[1:4] != ["matrix", "coordinate", "integer"]:
        raise ParseError(f"unsupported MatrixMarket banner {lines[0]!r}", path, 1)
    if len(banner) > 4 and banner[4] != "general":
        raise ParseError("only 'general' symmetry is supported", path, 1)
    pos = 1
    while pos < len(lines) and (lines[pos].startswith("%") or not lines[pos].strip()):
        pos += 1
    if pos >= len(lines):
        raise ParseError("missing size line", path)
    try:
        n_rows, n_cols, n_entries = (int(t) for t in lines[pos].split())
    except ValueError:
        raise ParseError("malformed size line", path, pos + 1) from None
    rows = np.empty(n_entries, dtype=np.int64)
    cols = np.empty(n_entries, dtype=np.int64)
    vals = np.empty(n_entries, dtype=np.float64)
    seen = set()
    count = 0
    for lineno, text in enumerate(lines[pos + 1:], start=pos + 2):
        if not text.strip() or text.startswith("%"):
            continue
        parts = text.split()
        if len(parts) != 3:
            raise ParseError("expected 'row col value'", path, lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError("non-integer coordinate", path, lineno) from None
        if not (1 <= i <= n_rows and 1 <= j <= n_cols):
            raise ParseError(f"coordinate ({i}, {j}) out of range", path, lineno)
        if (i, j) in seen:
            raise ParseError(f"duplicate coordinate entry ({i}, {j})", path, lineno)
        if count >= n_entries:
            raise ParseError("more entries than declared", path, lineno)
        seen.add((i, j))
        rows[count], cols[count] = i - 1, j - 1
        vals[count] = _parse_value(parts[2], path, lineno, 3)
        count += 1
    if count != n_entries:
        raise ParseError(f"declared {n_entries} entries, found {count}", path)
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
    if genes_in == "rows":
        gene_ids = _read_ids(gene_ids_path, n_rows, "gene")
        cell_ids = _read_ids(cell_ids_path, n_cols, "cell")
        mat = mat.T.tocsr()
    else:
        cell_ids = _read_ids(cell_ids_path, n_rows, "cell")
        gene_ids = _read_ids(gene_ids_path, n_cols, "gene")
    mat.eliminate_zeros()
    return ExpressionMatrix(mat, tuple(gene_ids), tuple(cell_ids))


def write_matrix_market(m: ExpressionMatrix, path, gene_ids_path, cell_ids_path) -> None:
    """Write ``m`` genes x cells (10x convention) with repr-exact values."""
    coo = m.values.T.tocoo()
    order = np.lexsort((coo.row, coo.col))
    keep = [k for k in order if coo.data[k] != 0.0]
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{m.n_genes} {m.n_cells} {len(keep)}\n")
        for k in keep:
            fh.write(f"{coo.row[k] + 1} {coo.col[k] + 1} {repr(float(coo.data[k]))}\n")
    Path(gene_ids_path).write_text("".join(g + "\n" for g in m.gene_ids), encoding="utf-8")
    Path(cell_ids_path).write_text("".join(c + "\n" for c in m.cell_ids), encoding="utf-8")


def write_panel(mask: GeneMask, gene_ids: Sequence[str], path) -> None:
    if len(mask) != len(gene_ids):
        raise DimensionMismatch("mask length does not match gene ids")
    text = "".join(gene_ids[j] + "\n" for j in mask.indices)
    Path(path).write_text(text, encoding="utf-8")


def read_panel(path, gene_ids: Sequence[str]) -> GeneMask:
    index = {g: j for j, g in enumerate(gene_ids)}
    bits = np.zeros(len(gene_ids), dtype=bool)
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        name = line.strip()
        if not name:
            continue
        if name not in index:
            raise ParseError(f"unknown gene id {name!r}", path, lineno)
        bits[index[name]] = True
    return GeneMask(bits)


# ---------------------------------------------------------------------------
# transforms


def normalize(m: ExpressionMatrix, target_sum: float = 1e4) -> ExpressionMatrix:
    """Scale every cell to ``target_sum`` total counts, then apply log1p.

    All-zero cells stay all-zero and the sparsity pattern is unchanged.
    """
    if not target_sum > 0:
        raise ValueError("target_sum must be positive")
    values = m.values.copy()
    sums = np.asarray(values.sum(axis=1)).ravel()
    row_of = np.repeat(np.arange(values.shape[0]), np.diff(values.indptr))
    # divide before scaling so tiny library sizes cannot overflow
    row_sums = sums[row_of]
    share = np.divide(values.data, row_sums, out=np.zeros_like(values.data), where=row_sums > 0)
    values.data = np.log1p(share * target_sum)
    return ExpressionMatrix(values, m.gene_ids, m.cell_ids)


def subset_genes(m: ExpressionMatrix, mask: GeneMask) -> ExpressionMatrix:
    if len(mask) != m.n_genes:
        raise DimensionMismatch(f"mask has length {len(mask)}, matrix has {m.n_genes} genes")
    idx = mask.indices
    values = m.values[:, idx]
    return ExpressionMatrix(values, tuple(m.gene_ids[j] for j in idx), m.cell_ids)


def descriptive_stats(m: ExpressionMatrix) -> GeneStatsBlock:
    """Per-gene (std, min, max, q1, q2, q3, mean) over the dense columns.

    Implicit zeros count. Quartiles interpolate linearly between closest
    ranks and std uses the population (1/n) convention.
    """
    if m.n_genes == 0 or m.n_cells < 2:
        raise DegenerateInput("degenerate stats input")
    dense = m.dense()
    q1, q2, q3 = np.quantile(dense, [0.25, 0.5, 0.75], axis=0, method="linear")
    table = np.column_stack(
        [dense.std(axis=0), dense.min(axis=0), dense.max(axis=0), q1, q2, q3, dense.mean(axis=0)]
    )
    return GeneStatsBlock(table)
