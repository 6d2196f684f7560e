from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from ..schemas.models import RetrievalReport
from .errors import KOutOfRange, MatrixFormatError


logger = logging.getLogger(__name__)

DIRECTIONS = ("i2t", "t2i")
REPORT_KS = (1, 5, 10)


def as_similarity_matrix(scores: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    m = np.asarray(scores, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise ValueError(f"similarity matrix must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("similarity matrix has non-finite entries")
    return m


def ranks(m: np.ndarray, direction: str = "i2t") -> np.ndarray:
    """0-based rank of each query's ground-truth partner.

    Opposing items are ordered by descending score; ties go to the lower index.
    Only indices that have an equal-index partner are queries.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    s = m if direction == "i2t" else m.T
    q = min(s.shape)
    rows = s[:q]
    truth = rows[np.arange(q), np.arange(q)][:, None]
    cols = np.arange(s.shape[1])[None, :]
    better = (rows > truth).sum(axis=1)
    tied_before = ((rows == truth) & (cols < np.arange(q)[:, None])).sum(axis=1)
    return better + tied_before


def recall_at_k(m: Sequence[Sequence[float]] | np.ndarray, k: int, direction: str = "i2t") -> float:
    m = as_similarity_matrix(m)
    opposing = m.shape[1] if direction == "i2t" else m.shape[0]
    if k < 1 or k > opposing:
        raise KOutOfRange(f"k={k} outside 1..{opposing} for {direction}")
    r = ranks(m, direction)
    return 100.0 * float(np.count_nonzero(r < k)) / float(len(r))


def mean_recall(m: Sequence[Sequence[float]] | np.ndarray) -> float:
    m = as_similarity_matrix(m)
    values = [recall_at_k(m, k, d) for d in DIRECTIONS for k in REPORT_KS]
    return float(np.mean(values))


def evaluate_retrieval(m: Sequence[Sequence[float]] | np.ndarray) -> RetrievalReport:
    m = as_similarity_matrix(m)
    vals = {f"{d}-R@{k}": recall_at_k(m, k, d) for d in DIRECTIONS for k in REPORT_KS}
    report = RetrievalReport(
        **vals,
        **{"Mean Recall": float(np.mean(list(vals.values())))},
        images=int(m.shape[0]),
        texts=int(m.shape[1]),
    )
    logger.info("eval retrieval images=%d texts=%d mean_recall=%.2f", m.shape[0], m.shape[1], report.mean_recall)
    return report


def _read_matrix_text(path: str | Path) -> np.ndarray:
    """Header "rows cols", then row-major whitespace-separated reals."""
    path = Path(path)
    try:
        tokens = path.read_text(encoding="utf-8").split()
    except OSError as e:
        raise MatrixFormatError(f"cannot read matrix: {e}", path) from e
    if len(tokens) < 2:
        raise MatrixFormatError("missing 'rows cols' header", path)
    try:
        rows, cols = int(tokens[0]), int(tokens[1])
        values = np.array([float(t) for t in tokens[2:]], dtype=np.float64)
    except ValueError as e:
        raise MatrixFormatError(f"non-numeric token: {e}", path) from e
    if rows <= 0 or cols <= 0:
        raise MatrixFormatError(f"invalid shape {rows}x{cols}", path)
    if values.size != rows * cols:
        raise MatrixFormatError(f"expected {rows * cols} values, found {values.size}", path)
    if not np.all(np.isfinite(values)):
        raise MatrixFormatError("non-finite entries", path)
    return values.reshape(rows, cols)


def read_similarity_matrix(path: str | Path) -> np.ndarray:
    return _read_matrix_text(path)


def similarity_from_embeddings(image_path: str | Path, text_path: str | Path) -> np.ndarray:
    """Dot-product similarity between image rows and text rows of two embedding files."""
    img = _read_matrix_text(image_path)
    txt = _read_matrix_text(text_path)
    if img.shape[1] != txt.shape[1]:
        raise MatrixFormatError(f"embedding widths differ: {img.shape[1]} vs {txt.shape[1]}", text_path)
    return img @ txt.T


def write_similarity_matrix(m: np.ndarray, path: str | Path) -> None:
    m = as_similarity_matrix(m)
    lines = [f"{m.shape[0]} {m.shape[1]}"] + [" ".join(repr(float(v)) for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
