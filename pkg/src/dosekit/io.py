"""File formats: CSV vectors and matrices, models JSON, estimate JSON.

CSV parsing is locale independent (Python's correctly rounded ``float``)
and reports malformed input with the offending line number.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from numpy.typing import NDArray

from dosekit.errors import ValidationError
from dosekit.firststage import SubjectData
from dosekit.mctest import AnovaEstimate
from dosekit.models import CandidateModel, DoseDesign

SCHEMA = "dosekit/v1"


def _open(path: str | Path) -> list[list[str]]:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"input file not found: {p}")
    try:
        with p.open(newline="", encoding="utf-8") as fh:
            rows = [row for row in csv.reader(fh)]
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise ValidationError(f"{p}: cannot read CSV ({exc})") from None
    return rows


def _number(cell: str, path: str | Path, line: int, col: int) -> float:
    try:
        value = float(cell.strip())
    except ValueError:
        raise ValidationError(f"{path}:{line}: column {col}: not a number: {cell!r}") from None
    if not math.isfinite(value):
        raise ValidationError(f"{path}:{line}: column {col}: value must be finite")
    return value


def _is_header(row: Sequence[str]) -> bool:
    try:
        [float(c) for c in row]
    except ValueError:
        return True
    return False


def _body(path: str | Path) -> tuple[list[str] | None, list[tuple[int, list[str]]]]:
    rows = _open(path)
    numbered = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not numbered:
        raise ValidationError(f"{path}: file is empty")
    header = None
    if _is_header(numbered[0][1]):
        header = [c.strip() for c in numbered[0][1]]
        numbered = numbered[1:]
    if not numbered:
        raise ValidationError(f"{path}: no data rows")
    return header, numbered


def read_table(path: str | Path, columns: Sequence[str]) -> dict[str, NDArray[np.float64]]:
    """Numeric CSV with a header naming at least ``columns``."""
    header, rows = _body(path)
    if header is None:
        raise ValidationError(f"{path}:1: expected a header with columns {', '.join(columns)}")
    lower = [h.lower() for h in header]
    missing = [c for c in columns if c not in lower]
    if missing:
        raise ValidationError(f"{path}:1: missing column(s) {', '.join(missing)}")
    idx = {c: lower.index(c) for c in columns}
    out: dict[str, list[float]] = {c: [] for c in columns}
    for line, row in rows:
        if len(row) != len(header):
            raise ValidationError(f"{path}:{line}: expected {len(header)} fields, found {len(row)}")
        for c, j in idx.items():
            out[c].append(_number(row[j], path, line, j + 1))
    return {c: np.array(v) for c, v in out.items()}


def read_vector(path: str | Path) -> tuple[NDArray[np.float64] | None, NDArray[np.float64]]:
    """Estimates as ``dose,value`` rows (doses returned) or a single column."""
    header, rows = _body(path)
    width = len(rows[0][1])
    if width not in (1, 2):
        raise ValidationError(f"{path}:{rows[0][0]}: expected 1 or 2 columns, found {width}")
    doses, values = [], []
    for line, row in rows:
        if len(row) != width:
            raise ValidationError(f"{path}:{line}: expected {width} fields, found {len(row)}")
        nums = [_number(c, path, line, j + 1) for j, c in enumerate(row)]
        if width == 2:
            doses.append(nums[0])
        values.append(nums[-1])
    return (np.array(doses) if width == 2 else None), np.array(values)


def read_matrix(path: str | Path) -> tuple[NDArray[np.float64] | None, NDArray[np.float64]]:
    """Square matrix; an optional header row holds the dose labels.

    A file with ``K + 1`` rows of ``K`` fields has a header, even when the
    labels are numeric.
    """
    rows = [(i + 1, r) for i, r in enumerate(_open(path)) if any(c.strip() for c in r)]
    if not rows:
        raise ValidationError(f"{path}: file is empty")
    k = len(rows[0][1])
    header = None
    if len(rows) == k + 1 or _is_header(rows[0][1]):
        header = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    if len(rows) != k:
        raise ValidationError(f"{path}: expected a square matrix, found {len(rows)} rows of {k} fields")
    mat = np.empty((k, k))
    for i, (line, row) in enumerate(rows):
        if len(row) != k:
            raise ValidationError(f"{path}:{line}: expected {k} fields for a {k}x{k} matrix, found {len(row)}")
        mat[i] = [_number(c, path, line, j + 1) for j, c in enumerate(row)]
    labels = None
    if header is not None:
        try:
            labels = np.array([float(h) for h in header])
        except ValueError:
            labels = None
    return labels, mat


def write_matrix(path: str | Path, labels: Sequence[str], mat: NDArray) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(labels)
        for row in np.atleast_2d(mat):
            w.writerow([repr(float(v)) for v in row])


def matrix_csv(labels: Sequence[str], mat: NDArray) -> str:
    lines = [",".join(labels)]
    lines += [",".join(repr(float(v)) for v in row) for row in np.atleast_2d(mat)]
    return "\n".join(lines) + "\n"


def load_estimate(
    mu_path: str | Path,
    cov_path: str | Path,
    doses: Sequence[float] | None = None,
    plac_adj: bool = False,
) -> AnovaEstimate:
    """Estimates from a vector CSV and a covariance CSV.

    Doses come from the estimate file, the covariance header, or ``doses``,
    and must agree where several are present.
    """
    d_mu, mu = read_vector(mu_path)
    d_cov, S = read_matrix(cov_path)
    candidates = [np.asarray(d, dtype=float) for d in (d_mu, d_cov, doses) if d is not None]
    if not candidates:
        raise ValidationError("doses are unknown: give a dose column, a covariance header or the models file doses")
    ref = candidates[0]
    for other in candidates[1:]:
        if other.shape != ref.shape or not np.array_equal(other, ref):
            raise ValidationError("doses in the input files disagree")
    return AnovaEstimate(DoseDesign(ref, plac_adj=plac_adj), mu, S)


def estimate_to_json(est: AnovaEstimate) -> dict[str, Any]:
    return {
        "schema": SCHEMA,
        "kind": "estimate",
        "doses": est.doses.tolist(),
        "plac_adj": est.plac_adj,
        "mu": est.mu.tolist(),
        "S": est.S.tolist(),
    }


def estimate_from_json(obj: dict[str, Any], source: str = "estimate") -> AnovaEstimate:
    try:
        return AnovaEstimate(
            DoseDesign(obj["doses"], plac_adj=bool(obj.get("plac_adj", False))),
            np.asarray(obj["mu"], dtype=float),
            np.asarray(obj["S"], dtype=float),
        )
    except KeyError as exc:
        raise ValidationError(f"{source}: missing key {exc}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"{source}: malformed estimate ({exc})") from None


def read_json(path: str | Path) -> Any:
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"input file not found: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{p}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def read_models(path: str | Path) -> tuple[list[CandidateModel], NDArray[np.float64] | None]:
    """Candidate models ``{"models": [{"family", "guesstimates", "label"?}], "doses"?}``."""
    obj = read_json(path)
    if not isinstance(obj, dict) or not isinstance(obj.get("models"), list) or not obj["models"]:
        raise ValidationError(f"{path}: expected an object with a nonempty 'models' list")
    models = []
    for i, m in enumerate(obj["models"]):
        if not isinstance(m, dict) or "family" not in m:
            raise ValidationError(f"{path}: models[{i}] needs a 'family'")
        g = m.get("guesstimates", [])
        g = [g] if isinstance(g, (int, float)) else g
        try:
            models.append(CandidateModel(m["family"], tuple(g), m.get("label")))
        except ValidationError as exc:
            raise ValidationError(f"{path}: models[{i}]: {exc}") from None
    doses = obj.get("doses")
    return models, (None if doses is None else np.asarray(doses, dtype=float))


_SUBJECT_COLUMNS = {
    "normal": ("dose", "resp"),
    "count": ("dose", "resp"),
    "binary": ("dose", "successes", "trials"),
    "tte": ("dose", "time", "event"),
}


def read_subject_data(path: str | Path, endpoint: str) -> SubjectData:
    if endpoint not in _SUBJECT_COLUMNS:
        raise ValidationError(f"unknown endpoint type {endpoint!r}")
    cols = read_table(path, _SUBJECT_COLUMNS[endpoint])
    return SubjectData(endpoint, cols.pop("dose"), cols)


def _clean(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj: Any) -> str:
    """Deterministic JSON (non-finite numbers become ``null``)."""
    return json.dumps(_clean(obj), indent=2, allow_nan=False) + "\n"
