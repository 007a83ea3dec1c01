"""Mechanics instruction records, damage metric, and evaluation scoring.

Three tasks, each a fixed command string paired with a short vector
answer: von Mises stress statistics, per-atom potential energy
statistics (three reals each), and crack dynamics (damage fraction plus
an initiation flag). Answers render with three decimal places and
"True"/"False" booleans. Scoring uses the coefficient of determination
for real components and a confusion-matrix report for the flag.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

TASKS = ("stress", "energy", "crack")

INSTRUCTIONS = {
    "stress": "CalculateVonMisesStressStatistics <stress_stdev, stress_mean, stress_median>",
    "energy": (
        "CalculatePotentialEnergyStatistics "
        "<energy_peratom_std_dev, energy_peratom_mean, energy_peratom_median>"
    ),
    "crack": "CalculateCrackDynamics <damage, initiate>",
}

# per-task answer shapes: "f" real, "b" boolean
ANSWER_KINDS = {"stress": "fff", "energy": "fff", "crack": "fb"}

REAL_COMPONENTS = {
    "stress": ("std_dev", "mean", "median"),
    "energy": ("std_dev", "mean", "median"),
    "crack": ("damage",),
}


class AnswerParseError(Exception):
    """Raised by parse_answer_vector; ``code`` is one of
    no_vector | arity | element."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# field statistics


@dataclass(frozen=True)
class FieldStats:
    std_dev: float
    mean: float
    median: float


def field_statistics(values: Sequence[float], ddof: int = 0) -> FieldStats:
    """Mean, median, and standard deviation of a field sample.

    ``ddof=0`` (population standard deviation) is the default; pass
    ``ddof=1`` for the sample estimator. Median of an even-length list
    is the average of the two middle values.
    """
    if len(values) == 0:
        raise ValueError("cannot compute statistics of an empty list")
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    return FieldStats(
        std_dev=float(arr.std(ddof=ddof)) if len(arr) > ddof else 0.0,
        mean=float(arr.mean()),
        median=float(np.median(arr)),
    )


# ---------------------------------------------------------------------------
# answer vectors and instruction records


@dataclass(frozen=True)
class AnswerVector:
    values: tuple  # floats and bools, per the task's shape

    def render(self) -> str:
        parts = []
        for v in self.values:
            if isinstance(v, bool):
                parts.append("True" if v else "False")
            else:
                parts.append(f"{v:.3f}")
        return "[" + ", ".join(parts) + "]"


@dataclass
class InstructionRecord:
    record_id: str
    task: str
    instruction: str
    answer: AnswerVector
    image_ref: str | None = None

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "task": self.task,
            "instruction": self.instruction,
            "answer": self.answer.render(),
            "image_ref": self.image_ref,
        }


def _check_payload(task: str, payload: Sequence) -> tuple:
    kinds = ANSWER_KINDS[task]
    if len(payload) != len(kinds):
        raise ValueError(f"task {task!r} expects {len(kinds)} answer elements, got {len(payload)}")
    out = []
    for kind, value in zip(kinds, payload):
        if kind == "b":
            if not isinstance(value, bool):
                raise ValueError(f"task {task!r}: expected boolean, got {value!r}")
            out.append(value)
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError(f"task {task!r}: expected real, got {value!r}")
            out.append(float(value))
    return tuple(out)


def build_instruction(
    task: str, payload: Sequence, record_id: str = "", image_ref: str | None = None
) -> InstructionRecord:
    """An InstructionRecord with the task's exact command string."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    values = _check_payload(task, payload)
    return InstructionRecord(
        record_id=record_id,
        task=task,
        instruction=INSTRUCTIONS[task],
        answer=AnswerVector(values),
        image_ref=image_ref,
    )


_VECTOR_RE = re.compile(r"\[([^\[\]]*)\]")
_BOOL_WORDS = {"true": True, "false": False, "True": True, "False": False}


def parse_answer_vector(text: str, task: str) -> AnswerVector:
    """Extract the first bracketed vector from free text and type-check it.

    Raises AnswerParseError with code "no_vector" (nothing bracketed),
    "arity" (wrong element count), or "element" (wrong type or
    unparseable entry).
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    m = _VECTOR_RE.search(text)
    if not m:
        raise AnswerParseError("no_vector", f"no bracketed vector in {text!r}")
    raw_items = [s.strip() for s in m.group(1).split(",")] if m.group(1).strip() else []
    kinds = ANSWER_KINDS[task]
    if len(raw_items) != len(kinds):
        raise AnswerParseError(
            "arity", f"task {task!r} expects {len(kinds)} elements, got {len(raw_items)}"
        )
    values = []
    for kind, raw in zip(kinds, raw_items):
        if kind == "b":
            if raw not in _BOOL_WORDS:
                raise AnswerParseError("element", f"expected boolean, got {raw!r}")
            values.append(_BOOL_WORDS[raw])
        else:
            if raw in _BOOL_WORDS:
                raise AnswerParseError("element", f"expected real, got {raw!r}")
            try:
                value = float(raw)
            except ValueError as exc:
                raise AnswerParseError("element", f"unparseable real {raw!r}") from exc
            if not math.isfinite(value):
                raise AnswerParseError("element", f"non-finite real {raw!r}")
            values.append(value)
    return AnswerVector(tuple(values))


# ---------------------------------------------------------------------------
# damage metric


@dataclass(frozen=True)
class DamageConfig:
    color_distance_threshold: float = 0.15  # over unit-normalized RGB

    def __post_init__(self) -> None:
        if not 0 < self.color_distance_threshold <= math.sqrt(3):
            raise ValueError("threshold must lie in (0, sqrt(3)]")


def _to_rgb_array(img) -> np.ndarray:
    if isinstance(img, (str, bytes)):
        with Image.open(img) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    if isinstance(img, Image.Image):
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    arr = np.asarray(img, dtype=np.float64)
    if arr.max() > 1.0:
        arr = arr / 255.0
    return arr


def diff_proportion(img_a, img_b, cfg: DamageConfig | None = None) -> float:
    """Fraction of pixels whose RGB distance exceeds the threshold.

    Channels are normalized to [0,1]; per-pixel distance is Euclidean
    over the three channels. Inputs may be PIL images, paths, or arrays.
    """
    cfg = cfg or DamageConfig()
    a = _to_rgb_array(img_a)
    b = _to_rgb_array(img_b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    dist = np.sqrt(((a - b) ** 2).sum(axis=-1))
    return float((dist > cfg.color_distance_threshold).mean())


def normalize_damage(diff_props: Sequence[float]) -> list[float]:
    """Affine map sending the dataset minimum to 0 and maximum to 1."""
    if len(diff_props) < 2:
        raise ValueError("need at least two values to normalize")
    lo, hi = min(diff_props), max(diff_props)
    if lo == hi:
        raise ValueError("normalization undefined: all values equal")
    return [(v - lo) / (hi - lo) for v in diff_props]


# ---------------------------------------------------------------------------
# metrics


def r_squared(pred: Sequence[float], gt: Sequence[float]) -> float:
    """Coefficient of determination about the ground-truth mean."""
    if len(pred) != len(gt):
        raise ValueError("pred and gt lengths differ")
    if len(gt) < 2:
        raise ValueError("need at least two points")
    p = np.asarray(pred, dtype=float)
    g = np.asarray(gt, dtype=float)
    ss_tot = float(((g - g.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise ValueError("ground truth is constant; R^2 undefined")
    ss_res = float(((g - p) ** 2).sum())
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class ClassificationReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float
    degenerate: tuple[str, ...] = ()  # metrics whose denominator was zero

    def to_json(self) -> dict:
        return dict(self.__dict__) | {"degenerate": list(self.degenerate)}


def classification_report(pred: Sequence[bool], gt: Sequence[bool]) -> ClassificationReport:
    """Confusion counts plus accuracy, precision, recall, and F1.

    F1 is the harmonic mean of precision and recall. Any metric whose
    denominator is zero is reported as 0 and named in ``degenerate``.
    """
    if len(pred) != len(gt):
        raise ValueError("pred and gt lengths differ")
    if not gt:
        raise ValueError("empty inputs")
    tp = sum(1 for p, g in zip(pred, gt) if p and g)
    fp = sum(1 for p, g in zip(pred, gt) if p and not g)
    tn = sum(1 for p, g in zip(pred, gt) if not p and not g)
    fn = sum(1 for p, g in zip(pred, gt) if not p and g)
    degenerate = []

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    accuracy = (tp + tn) / len(gt)
    precision = ratio(tp, tp + fp, "precision")
    recall = ratio(tp, tp + fn, "recall")
    if precision + recall == 0.0:
        degenerate.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return ClassificationReport(
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f1=f1,
        degenerate=tuple(degenerate),
    )


# ---------------------------------------------------------------------------
# run evaluation


@dataclass
class EvalReport:
    r2_by_task: dict[str, dict[str, float | None]]
    crack_report: ClassificationReport | None
    evaluated: int
    unparsed: int
    unparsed_ids: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "r2_by_task": self.r2_by_task,
            "crack_report": self.crack_report.to_json() if self.crack_report else None,
            "evaluated": self.evaluated,
            "unparsed": self.unparsed,
            "unparsed_ids": self.unparsed_ids,
        }


def evaluate_run(records: Iterable[InstructionRecord], responses: dict[str, str]) -> EvalReport:
    """Score endpoint responses against ground-truth instruction records.

    Responses that fail to parse are excluded from the metrics and
    counted (with their ids) in the report. Real components score with
    R^2 per task; the crack initiation flag gets a classification report.
    """
    per_task_pred: dict[str, list[tuple]] = {t: [] for t in TASKS}
    per_task_gt: dict[str, list[tuple]] = {t: [] for t in TASKS}
    crack_pred_flags: list[bool] = []
    crack_gt_flags: list[bool] = []
    unparsed_ids: list[str] = []
    evaluated = 0

    for rec in records:
        text = responses.get(rec.record_id)
        if text is None:
            unparsed_ids.append(rec.record_id)
            continue
        try:
            answer = parse_answer_vector(text, rec.task)
        except AnswerParseError:
            unparsed_ids.append(rec.record_id)
            continue
        evaluated += 1
        gt = rec.answer.values
        pred = answer.values
        if rec.task == "crack":
            per_task_pred["crack"].append(pred[:1])
            per_task_gt["crack"].append(gt[:1])
            crack_pred_flags.append(bool(pred[1]))
            crack_gt_flags.append(bool(gt[1]))
        else:
            per_task_pred[rec.task].append(pred)
            per_task_gt[rec.task].append(gt)

    r2_by_task: dict[str, dict[str, float | None]] = {}
    for task in TASKS:
        comps = REAL_COMPONENTS[task]
        preds = per_task_pred[task]
        gts = per_task_gt[task]
        scores: dict[str, float | None] = {}
        for i, comp in enumerate(comps):
            p = [row[i] for row in preds]
            g = [row[i] for row in gts]
            try:
                scores[comp] = r_squared(p, g)
            except ValueError:
                scores[comp] = None
        if preds:
            r2_by_task[task] = scores

    crack_report = None
    if crack_gt_flags:
        crack_report = classification_report(crack_pred_flags, crack_gt_flags)

    return EvalReport(
        r2_by_task=r2_by_task,
        crack_report=crack_report,
        evaluated=evaluated,
        unparsed=len(unparsed_ids),
        unparsed_ids=unparsed_ids,
    )
