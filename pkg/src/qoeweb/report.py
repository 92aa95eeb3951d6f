"""Pipeline stages that turn inputs into report files.

Every stage returns ``{relative path: text}`` without touching the disk so the
CLI can refuse to write anything when a later stage fails.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from typing import Mapping, Sequence

from . import __version__
from .core import PacketTrace, Rating, SessionLog, StudyConfig, group_by_cell
from .errors import DataError, LabelMismatch, ParseError
from .qos import METRICS, MeanCI, QosSummary, mean_ci, summarize
from .regression import (RESPONSES, RETRANS, DUMMY, FittedModel, best_subset, build_dataset, equation,
                         predict)
from .scaling import RatingMatrix, fit_scale
from .usability import UsabilityScores, cell_scores, per_user_effectiveness

QOS_FIGURES = dict(zip(METRICS, (
    "fig02_handshake_rtt", "fig03_allseg_rtt", "fig04_segment_length", "fig05_packets_per_s",
    "fig06_bytes_per_s", "fig07_retrans_packets_per_s", "fig08_retrans_bytes_per_s", "fig09_loss_rate",
)))
QOE_FIGURES = {"E": "fig10_effectiveness", "H": "fig11_efficiency", "S": "fig12_satisfaction"}
FIT_FIGURES = {"E": "fig13_effectiveness_vs_T", "H": "fig14_efficiency_vs_T", "S": "fig15_satisfaction_vs_T"}


def to_csv(rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    columns = list(columns or (rows[0].keys() if rows else []))
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(row.get(k)) for k in columns})
    return buf.getvalue()


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def read_csv(text: str, source: str = "") -> list[dict]:
    """Rows with numeric-looking fields converted to float (service/environment kept as text)."""
    reader = csv.DictReader(io.StringIO(text))
    if not reader.fieldnames or not {"service", "environment"} <= set(reader.fieldnames):
        raise ParseError(1, "table needs 'service' and 'environment' columns", source)
    rows = []
    for row_no, row in enumerate(reader, start=2):
        out = {}
        for k, v in row.items():
            if k in ("service", "environment"):
                out[k] = v
                continue
            try:
                out[k] = float(v)
            except (TypeError, ValueError):
                raise ParseError(row_no, f"column {k}: not a number: {v!r}", source) from None
        rows.append(out)
    return rows


def to_json(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False, default=_json_default) + "\n"


def _json_default(o):
    raise TypeError(f"not serializable: {type(o).__name__}")


def _clean(doc):
    """Replace non-finite floats with None, recursively."""
    if isinstance(doc, float):
        return doc if math.isfinite(doc) else None
    if isinstance(doc, dict):
        return {k: _clean(v) for k, v in doc.items()}
    if isinstance(doc, (list, tuple)):
        return [_clean(v) for v in doc]
    return doc


# -- stages ------------------------------------------------------------------

def qos_stage(traces: Sequence[PacketTrace]) -> list[QosSummary]:
    return sorted((summarize(t) for t in traces), key=lambda s: (s.service_id, s.environment_id))


def qos_files(summaries: Sequence[QosSummary], stem: str = "qos") -> dict[str, str]:
    return {
        f"{stem}.csv": to_csv([s.row() for s in summaries]),
        f"{stem}.json": to_json(_clean([s.to_dict() for s in summaries])),
    }


def usability_stage(sessions: Sequence[SessionLog], ratings: Sequence[Rating],
                    config: StudyConfig) -> tuple[list[UsabilityScores], dict]:
    scores = cell_scores(sessions, config)
    matrix = RatingMatrix.from_ratings(ratings)
    labels = {(s.service_id, s.environment_id) for s in scores}
    if set(matrix.stimuli) != labels:
        raise LabelMismatch(
            f"ratings cover {sorted(set(matrix.stimuli) - labels)} beyond the scored cells "
            f"and miss {sorted(labels - set(matrix.stimuli))}")
    fit = fit_scale(matrix)
    scored = [UsabilityScores(s.service_id, s.environment_id, s.E, s.W, s.H,
                              fit.value((s.service_id, s.environment_id))) for s in scores]
    return scored, fit.to_dict()


def usability_csv(scores: Sequence[UsabilityScores]) -> str:
    return to_csv([s.row() for s in scores], ["service", "environment", "E", "W", "H", "S"])


def regress_stage(qos_rows: Sequence[Mapping], usability_rows: Sequence[Mapping], config: StudyConfig,
                  candidates: Sequence[str] | None = None) -> list[FittedModel]:
    metrics = [m for m in METRICS if m in qos_rows[0]] if qos_rows else []
    if candidates is not None:
        unknown = [c for c in candidates if c not in metrics and c != DUMMY]
        if unknown:
            raise DataError(f"unknown regressors {unknown}")
    missing = [r for r in RESPONSES if not usability_rows or r not in usability_rows[0]]
    if missing:
        raise DataError(f"usability table lacks response columns {missing}")
    data = build_dataset(qos_rows, usability_rows, config.reference_service, metrics)
    return [best_subset(data, response, candidates) for response in RESPONSES]


def regression_files(models: Sequence[FittedModel]) -> dict[str, str]:
    files = {f"regression/{m.response}.json": m.to_json() for m in models}
    files["regression/equations.txt"] = "".join(
        f"{equation(m)}    (adjusted R^2 = {m.adj_r2:.3f}, n = {m.n})\n" for m in models)
    return files


def figure_tables(summaries: Sequence[QosSummary], sessions: Sequence[SessionLog],
                  scores: Sequence[UsabilityScores], models: Sequence[FittedModel],
                  config: StudyConfig) -> dict[str, str]:
    """One CSV per figure: mean and 95% interval per (service, environment)."""
    cols = ["service", "environment", "mean", "ci_low", "ci_high", "n"]
    files = {}

    def ci_row(service, env, value):
        if not isinstance(value, MeanCI):
            value = MeanCI(value, value, value, 1)
        return {"service": service, "environment": env, "mean": value.mean,
                "ci_low": value.ci_low, "ci_high": value.ci_high, "n": value.n}

    for metric, name in QOS_FIGURES.items():
        rows = [ci_row(s.service_id, s.environment_id, getattr(s, metric)) for s in summaries]
        files[f"tables/{name}.csv"] = to_csv(rows, cols)

    groups = group_by_cell(sessions)
    per_cell = {}
    for s in scores:
        cell = groups.get((s.service_id, s.environment_id), [])
        # E is the mean of per-user scores, so its interval comes from them directly
        E = mean_ci(per_user_effectiveness(cell, config)) if cell else s.E
        per_cell[(s.service_id, s.environment_id)] = {"E": E, "H": s.H, "S": s.S}
    for response, name in QOE_FIGURES.items():
        rows = [ci_row(k[0], k[1], v[response]) for k, v in sorted(per_cell.items())]
        files[f"tables/{name}.csv"] = to_csv(rows, cols)

    qos_index = {(q.service_id, q.environment_id): q for q in summaries}
    for model in models:
        rows = []
        for s in scores:
            key = (s.service_id, s.environment_id)
            inputs = {m: qos_index[key].metric(m) for m in METRICS}
            inputs[DUMMY] = float(config.dummy(s.service_id))
            rows.append({"service": key[0], "environment": key[1], "T": inputs[RETRANS],
                         "X": inputs[DUMMY], "measured": getattr(s, model.response),
                         "predicted": predict(model, inputs)})
        files[f"tables/{FIT_FIGURES[model.response]}.csv"] = to_csv(
            rows, ["service", "environment", "T", "X", "measured", "predicted"])
    return files


def manifest(files: Mapping[str, str], config: StudyConfig, seed: int | None = None,
             inputs: Sequence[str] = ()) -> str:
    doc = {
        "tool": "qoeweb",
        "version": __version__,
        "config_sha256": config.digest(),
        "seed": seed,
        "inputs": list(inputs),
        "files": {k: hashlib.sha256(v.encode()).hexdigest() for k, v in sorted(files.items())},
    }
    return to_json(doc)
