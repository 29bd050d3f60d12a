"""
Evaluation outputs: metrics.json, the ROC/PR point lists and report.md.
"""
from typing import Any, Dict, List, Mapping, TextIO
import json

import pandas as pd

from turbinewatch.metrics import EvalReport


def write_metrics(report: EvalReport, sink: TextIO):
    json.dump(report.to_dict(), sink, sort_keys=True, indent=2)
    sink.write("\n")


def write_points(points: pd.DataFrame, sink: TextIO):
    points.to_csv(sink, index=False, lineterminator="\n")


def _fmt(value: Any) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _table(header: List[str], rows: List[List[Any]]) -> List[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(_fmt(v) for v in row) + " |" for row in rows]
    return lines


def render_report(
    metrics: Mapping[str, Any],
    ensemble: Mapping[str, Any],
    training: Mapping[str, Mapping[str, Any]],
    dataset: Mapping[str, Any],
) -> str:
    """
    Markdown summary of a pipeline run, built only from the JSON documents
    the earlier stages wrote.
    """
    lines = ["# turbinewatch report", ""]

    lines += ["## Dataset", ""]
    lines += _table(["property", "value"], [[k, dataset[k]] for k in sorted(dataset)])
    lines += [""]

    lines += ["## Training", ""]
    lines += _table(
        ["model", "epochs", "best validation loss", "seed"],
        [
            [name, t.get("epochs_run"), t.get("best_val_loss"), t.get("seed")]
            for name, t in training.items()
        ],
    )
    lines += [""]

    lines += ["## Ensemble", ""]
    weights = ensemble["weights"]
    lines += _table(
        ["weight mode", "vae", "lstm", "transformer", "percentile", "threshold"],
        [
            [
                ensemble["weight_mode"],
                weights["vae"],
                weights["lstm"],
                weights["transformer"],
                ensemble["percentile"],
                ensemble["threshold"],
            ]
        ],
    )
    lines += [""]

    lines += ["## Detection (test split)", ""]
    rows = [
        [
            "ensemble",
            metrics["precision"],
            metrics["recall"],
            metrics["f1"],
            metrics["auc_roc"],
            metrics["auc_pr"],
            metrics["precision_at_10"],
        ]
    ]
    for name, m in metrics.get("models", {}).items():
        rows.append(
            [name, m["precision"], m["recall"], m["f1"], m["auc_roc"], m["auc_pr"], m["precision_at_10"]]
        )
    lines += _table(["model", "precision", "recall", "f1", "auc-roc", "auc-pr", "precision@10%"], rows)
    lines += [""]

    lines += [
        f"Event recall {_fmt(metrics['event_recall'])}, "
        f"event precision {_fmt(metrics['event_precision'])}.",
        "",
    ]

    early: Dict[str, float] = metrics.get("early_detection", {})
    if early:
        lines += ["## Early detection", ""]
        lines += _table(["lead window", "detection rate"], [[w, r] for w, r in early.items()])
        lines += [""]

    stats = metrics["score_stats"]
    lines += ["## Score distribution", ""]
    lines += _table(
        ["class", "mean", "std"],
        [
            ["normal", stats["mean_normal"], stats["std_normal"]],
            ["anomalous", stats["mean_anomalous"], stats["std_anomalous"]],
        ],
    )
    lines += ["", f"Overlap {_fmt(stats['overlap'])}.", ""]

    importance: Dict[str, float] = metrics.get("feature_importance", {})
    if importance:
        ranked = sorted(importance.items(), key=lambda item: -item[1])[:10]
        lines += ["## Feature importance", ""]
        lines += _table(["feature", "auc drop"], [[k, v] for k, v in ranked])
        lines += [""]

        shares = metrics.get("group_shares", {})
        if shares:
            lines += _table(["family", "share"], [[k, v] for k, v in shares.items()])
            lines += [""]

    ablation = metrics.get("ablation")
    if ablation:
        lines += [
            f"Removing {', '.join(ablation['removed'])} changes AUC-ROC from "
            f"{_fmt(ablation['baseline_auc'])} to {_fmt(ablation['ablated_auc'])}.",
            "",
        ]

    degenerate = metrics.get("degenerate", [])
    if degenerate:
        lines += ["Degenerate metrics: " + ", ".join(degenerate) + ".", ""]

    return "\n".join(lines)
