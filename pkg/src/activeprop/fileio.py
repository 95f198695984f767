"""JSON-lines file formats: snapshots, scenes, detections, and reports.

Every record carries a ``"schema": 1`` field. Streams are JSON lines so
errors can name the offending line and files stay appendable; single
reports are plain JSON. All writers emit canonical JSON (sorted keys,
compact separators), which makes outputs byte-reproducible for identical
inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import InputError, ParseError
from .evaluation import Detection
from .geometry import Box, ProposalSet
from .synth import SceneObject, SyntheticScene

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SnapshotRecord:
    """One image's partition inputs from an external detector.

    ``scores`` is (classes, proposals); ``present_classes`` lists the class
    ids whose image-level label is 1; ``theta`` is the training state the
    snapshot was taken at.
    """

    image_id: object
    proposals: ProposalSet
    scores: np.ndarray
    present_classes: tuple[int, ...]
    theta: float

    @property
    def num_classes(self) -> int:
        return self.scores.shape[0]

    def labels(self) -> np.ndarray:
        y = np.zeros(self.num_classes, dtype=np.int64)
        y[list(self.present_classes)] = 1
        return y


def dump_json_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_json(obj, path) -> None:
    Path(path).write_text(dump_json_line(obj) + "\n")


def _iter_lines(path) -> Iterator[tuple[int, dict]]:
    with open(path, "r") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"malformed JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise ParseError(line_no, "record must be a JSON object")
            if record.get("schema") != SCHEMA_VERSION:
                raise ParseError(
                    line_no, f"missing or unsupported schema version: {record.get('schema')!r}"
                )
            yield line_no, record


def _require(record: dict, key: str, line_no: int):
    if key not in record:
        raise ParseError(line_no, f"missing field {key!r}")
    return record[key]


def read_snapshots(path) -> Iterator[SnapshotRecord]:
    """Stream validated snapshot records in file order."""
    for line_no, record in _iter_lines(path):
        image_id = _require(record, "image_id", line_no)
        raw_boxes = _require(record, "proposals", line_no)
        raw_scores = _require(record, "scores", line_no)
        present = _require(record, "present_classes", line_no)
        theta = _require(record, "theta", line_no)
        try:
            boxes = tuple(Box.from_list(b) for b in raw_boxes)
        except (InputError, TypeError) as exc:
            raise ParseError(line_no, f"bad proposal box: {exc}") from exc
        if not boxes:
            raise ParseError(line_no, "proposals must be non-empty")
        scores = np.asarray(raw_scores, dtype=np.float64)
        if scores.ndim != 2:
            raise ParseError(line_no, f"scores must be a 2-d matrix, got shape {scores.shape}")
        if scores.shape[1] != len(boxes):
            raise ParseError(
                line_no,
                f"scores have {scores.shape[1]} columns but there are {len(boxes)} proposals",
            )
        if not np.all(np.isfinite(scores)):
            raise ParseError(line_no, "scores contain non-finite entries")
        if not isinstance(present, list) or any(
            not isinstance(c, int) or not (0 <= c < scores.shape[0]) for c in present
        ):
            raise ParseError(
                line_no,
                f"present_classes must be class ids below {scores.shape[0]}, got {present!r}",
            )
        if not isinstance(theta, (int, float)) or not (0.0 <= float(theta) <= 1.0):
            raise ParseError(line_no, f"theta must lie in [0, 1], got {theta!r}")
        yield SnapshotRecord(
            image_id=image_id,
            proposals=ProposalSet(boxes, image_id=image_id),
            scores=scores,
            present_classes=tuple(int(c) for c in present),
            theta=float(theta),
        )


def write_snapshots(records: Iterable[SnapshotRecord], path) -> None:
    with open(path, "w") as handle:
        for rec in records:
            handle.write(
                dump_json_line(
                    {
                        "schema": SCHEMA_VERSION,
                        "image_id": rec.image_id,
                        "proposals": [b.to_list() for b in rec.proposals.boxes],
                        "scores": [[float(v) for v in row] for row in rec.scores],
                        "present_classes": [int(c) for c in rec.present_classes],
                        "theta": float(rec.theta),
                    }
                )
                + "\n"
            )


def read_scenes(path) -> list[SyntheticScene]:
    scenes = []
    for line_no, record in _iter_lines(path):
        image_id = _require(record, "image_id", line_no)
        num_classes = _require(record, "num_classes", line_no)
        raw_objects = _require(record, "objects", line_no)
        if not isinstance(num_classes, int) or num_classes < 1:
            raise ParseError(line_no, f"num_classes must be a positive int, got {num_classes!r}")
        objects = []
        for raw in raw_objects:
            try:
                class_id = int(raw["class_id"])
                box = Box.from_list(raw["box"])
            except (KeyError, TypeError, InputError) as exc:
                raise ParseError(line_no, f"bad object record: {exc}") from exc
            if not (0 <= class_id < num_classes):
                raise ParseError(line_no, f"object class {class_id} out of range")
            objects.append(SceneObject(class_id, box))
        scenes.append(
            SyntheticScene(
                image_id=image_id,
                width=float(_require(record, "width", line_no)),
                height=float(_require(record, "height", line_no)),
                num_classes=num_classes,
                objects=tuple(objects),
            )
        )
    return scenes


def write_scenes(scenes: Sequence[SyntheticScene], path) -> None:
    with open(path, "w") as handle:
        for scene in scenes:
            handle.write(
                dump_json_line(
                    {
                        "schema": SCHEMA_VERSION,
                        "image_id": scene.image_id,
                        "width": float(scene.width),
                        "height": float(scene.height),
                        "num_classes": int(scene.num_classes),
                        "objects": [
                            {"class_id": int(o.class_id), "box": o.box.to_list()}
                            for o in scene.objects
                        ],
                    }
                )
                + "\n"
            )


def read_detections(path) -> list[Detection]:
    detections = []
    for line_no, record in _iter_lines(path):
        try:
            box = Box.from_list(_require(record, "box", line_no))
        except InputError as exc:
            raise ParseError(line_no, f"bad detection box: {exc}") from exc
        confidence = _require(record, "confidence", line_no)
        if not isinstance(confidence, (int, float)) or not np.isfinite(confidence):
            raise ParseError(line_no, f"confidence must be finite, got {confidence!r}")
        detections.append(
            Detection(
                image_id=_require(record, "image_id", line_no),
                class_id=int(_require(record, "class_id", line_no)),
                box=box,
                confidence=float(confidence),
            )
        )
    return detections


def write_detections(detections: Sequence[Detection], path) -> None:
    with open(path, "w") as handle:
        for det in detections:
            handle.write(
                dump_json_line(
                    {
                        "schema": SCHEMA_VERSION,
                        "image_id": det.image_id,
                        "class_id": int(det.class_id),
                        "box": det.box.to_list(),
                        "confidence": float(det.confidence),
                    }
                )
                + "\n"
            )


def write_jsonl(rows: Iterable[dict], path) -> None:
    """Write pre-built dict rows (e.g. training log records) as JSON lines."""
    with open(path, "w") as handle:
        for row in rows:
            handle.write(dump_json_line({"schema": SCHEMA_VERSION, **row}) + "\n")
