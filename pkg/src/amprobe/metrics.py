"""Task-agnostic evaluation: EER, accuracy, confusion counts, and the
representation-by-task results grid.

Conventions:
  - a trial is accepted at threshold t when score >= t
  - FAR(t) = P(score >= t | nontarget), FRR(t) = P(score < t | target)
  - EER is taken at the FAR-FRR sign change, linearly interpolated between
    the two adjacent operating points; values > 0.5 are reported as-is but
    flagged as degenerate
"""

import csv
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .validation import check_finite

METRICS = ("eer", "accuracy")


@dataclass
class ScoreSet:
    """Trial scores with target/nontarget labels."""

    scores: np.ndarray
    is_target: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.is_target = np.asarray(self.is_target, dtype=bool)
        if self.scores.shape != self.is_target.shape or self.scores.ndim != 1:
            raise ValueError("scores and is_target must be 1-D arrays of equal length")
        check_finite(self.scores, "scores")
        if not self.is_target.any() or self.is_target.all():
            raise ValueError("need at least one target and one nontarget score")

    @classmethod
    def from_pairs(cls, entries):
        scores = [s for s, _ in entries]
        labels = [t for _, t in entries]
        return cls(np.array(scores), np.array(labels))


def cosine_score(a, b) -> float:
    """Cosine similarity between two embedding vectors, in [-1, 1]."""
    va = np.asarray(getattr(a, "vector", a), dtype=np.float64)
    vb = np.asarray(getattr(b, "vector", b), dtype=np.float64)
    if va.shape != vb.shape or va.ndim != 1:
        raise ValueError(f"embedding dims differ: {va.shape} vs {vb.shape}")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.clip(va @ vb / (na * nb), -1.0, 1.0))


def _roc_points(scores, is_target):
    """FAR/FRR at every unique score threshold plus a reject-all endpoint.

    Computed from one descending sort with cumulative counts; thresholds
    come out ascending.
    """
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_target = is_target[order]
    n_tar = int(is_target.sum())
    n_non = len(scores) - n_tar

    # at threshold sorted_scores[i]: accept everything with score >= it
    accepted_non = np.cumsum(~sorted_target)
    accepted_tar = np.cumsum(sorted_target)
    # keep the last entry of each run of equal scores
    last_of_run = np.append(sorted_scores[1:] != sorted_scores[:-1], True)
    thresholds = sorted_scores[last_of_run]
    far = accepted_non[last_of_run] / n_non
    frr = (n_tar - accepted_tar[last_of_run]) / n_tar

    # descending-threshold order -> ascending
    thresholds = thresholds[::-1]
    far = far[::-1]
    frr = frr[::-1]
    # reject-all endpoint above the maximum score
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)
    far = np.append(far, 0.0)
    frr = np.append(frr, 1.0)
    return thresholds, far, frr


def interpolate_crossing(thresholds, far, frr):
    """EER and threshold at the first FAR-FRR sign change, linearly
    interpolated between the two adjacent operating points."""
    diff = far - frr
    idx = int(np.argmax(diff <= 0.0))
    if diff[idx] == 0.0:
        return float(far[idx]), float(thresholds[idx])
    lam = diff[idx - 1] / (diff[idx - 1] - diff[idx])
    eer = far[idx - 1] + lam * (far[idx] - far[idx - 1])
    thr = thresholds[idx - 1] + lam * (thresholds[idx] - thresholds[idx - 1])
    return float(eer), float(thr)


def compute_eer(score_set: ScoreSet):
    """Equal error rate and its threshold.

    FAR is non-increasing and FRR non-decreasing in the threshold, so the
    sign change is unique. Degenerate sets (worse than chance) can cross
    above 0.5; the value is reported unclamped with a warning.
    """
    thresholds, far, frr = _roc_points(score_set.scores, score_set.is_target)
    eer, threshold = interpolate_crossing(thresholds, far, frr)
    if eer > 0.5:
        warnings.warn(
            f"degenerate EER {eer:.4f} > 0.5 (nontargets score above targets)",
            RuntimeWarning,
            stacklevel=2,
        )
    return eer, threshold


def compute_accuracy(predictions, truth) -> float:
    """Fraction of exact label matches."""
    if len(predictions) != len(truth):
        raise ValueError(
            f"length mismatch: {len(predictions)} predictions vs {len(truth)} truths"
        )
    if len(truth) == 0:
        raise ValueError("cannot compute accuracy of empty lists")
    return sum(p == t for p, t in zip(predictions, truth)) / len(truth)


def confusion_matrix(predictions, truth, vocabulary):
    """Count grid with rows = truth and columns = prediction."""
    if len(predictions) != len(truth):
        raise ValueError("predictions and truth must have equal length")
    index = {label: i for i, label in enumerate(vocabulary)}
    grid = np.zeros((len(vocabulary), len(vocabulary)), dtype=np.int64)
    for pred, true in zip(predictions, truth):
        if true not in index:
            raise ValueError(f"truth label {true!r} not in vocabulary")
        if pred not in index:
            raise ValueError(f"predicted label {pred!r} not in vocabulary")
        grid[index[true], index[pred]] += 1
    return grid


@dataclass
class EvalResult:
    """One cell of the results grid."""

    task: str
    representation: str
    metric: str
    value: float
    n_eval: int
    seed: int
    degenerate: bool = False
    status: str = "ok"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if self.status not in ("ok", "failed"):
            raise ValueError("status must be 'ok' or 'failed'")
        if self.status == "ok":
            if not np.isfinite(self.value):
                raise ValueError("an ok result needs a finite value")
            if self.metric == "accuracy" and not 0.0 <= self.value <= 1.0:
                raise ValueError(f"accuracy {self.value} outside [0, 1]")
            if self.metric == "eer" and self.value > 0.5 and not self.degenerate:
                raise ValueError("EER above 0.5 must carry the degenerate flag")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, obj):
        return cls(**obj)


@dataclass
class ResultsMatrix:
    """(representation x task) grid of EvalResults plus provenance."""

    rows: list
    cols: list
    cells: dict = field(default_factory=dict)  # (row, col) -> EvalResult | None
    provenance: str = ""

    def get(self, row, col):
        return self.cells.get((row, col))

    @property
    def missing(self):
        return [
            (row, col)
            for row in self.rows
            for col in self.cols
            if self.cells.get((row, col)) is None
        ]

    def column_extrema(self, col):
        """(best_rows, worst_rows) for a task column; EER best is the
        minimum, accuracy best the maximum. Ties all count."""
        ok = [
            (row, self.cells[(row, col)])
            for row in self.rows
            if self.cells.get((row, col)) is not None
            and self.cells[(row, col)].status == "ok"
        ]
        if not ok:
            return [], []
        metric = ok[0][1].metric
        values = np.array([r.value for _, r in ok])
        best_value = values.min() if metric == "eer" else values.max()
        worst_value = values.max() if metric == "eer" else values.min()
        best = [row for row, r in ok if r.value == best_value]
        worst = [row for row, r in ok if r.value == worst_value]
        return best, worst


def aggregate_matrix(results, rows, cols, provenance="") -> ResultsMatrix:
    """Assemble EvalResults into the full grid; duplicates are an error and
    absent cells stay explicitly missing."""
    matrix = ResultsMatrix(list(rows), list(cols), {}, provenance)
    for result in results:
        key = (result.representation, result.task)
        if result.representation not in matrix.rows:
            raise ValueError(f"unexpected representation {result.representation!r}")
        if result.task not in matrix.cols:
            raise ValueError(f"unexpected task {result.task!r}")
        if key in matrix.cells:
            raise ValueError(f"duplicate result for cell {key}")
        matrix.cells[key] = result
    for row in matrix.rows:
        for col in matrix.cols:
            matrix.cells.setdefault((row, col), None)
    return matrix


# --- serialization ---------------------------------------------------------


def write_results_csv(matrix: ResultsMatrix, path):
    """CSV with header representation,task,metric,value,n_eval,seed.

    Formatting is fixed (repr of python floats) so identical grids yield
    byte-identical files.
    """
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(["representation", "task", "metric", "value", "n_eval", "seed"])
        for row in matrix.rows:
            for col in matrix.cols:
                cell = matrix.cells.get((row, col))
                if cell is None:
                    continue
                value = "nan" if cell.status == "failed" else repr(float(cell.value))
                writer.writerow([row, col, cell.metric, value, cell.n_eval, cell.seed])


def results_markdown(matrix: ResultsMatrix, notes=()) -> str:
    """Markdown table mirroring the results grid; per-column best values in
    bold, worst in italics, missing cells as an em dash."""
    extrema = {col: matrix.column_extrema(col) for col in matrix.cols}
    lines = ["| representation | " + " | ".join(matrix.cols) + " |"]
    lines.append("|" + "---|" * (len(matrix.cols) + 1))
    for row in matrix.rows:
        cells = []
        for col in matrix.cols:
            cell = matrix.cells.get((row, col))
            if cell is None:
                cells.append("—")
                continue
            if cell.status == "failed":
                cells.append("failed")
                continue
            text = f"{cell.value:.4f}"
            best, worst = extrema[col]
            if row in best:
                text = f"**{text}**"
            elif row in worst:
                text = f"_{text}_"
            if cell.degenerate:
                text += " (degenerate)"
            cells.append(text)
        lines.append("| " + row + " | " + " | ".join(cells) + " |")
    lines.append("")
    lines.append("Best per column in **bold**, worst in _italics_.")
    if matrix.provenance:
        lines.append(f"Provenance: {matrix.provenance}")
    for note in notes:
        lines.append(note)
    return "\n".join(lines) + "\n"


def save_scores(path, entries):
    """Write `<enroll_id> <test_id> <score>` lines."""
    with open(path, "w", encoding="ascii") as fh:
        for enroll_id, test_id, score in entries:
            fh.write(f"{enroll_id} {test_id} {float(score)!r}\n")


def load_scores(path):
    entries = []
    with open(path, encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise ValueError(f"{path}: line {line_no}: expected '<enroll> <test> <score>'")
            entries.append((parts[0], parts[1], float(parts[2])))
    return entries
