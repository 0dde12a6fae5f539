"""The task-matrix evaluation: single-feature and combined-classifier AUCs
per binary diagnosis task, with paired significance tests between methods."""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InvalidArgument
from ..io import STRUCTURES
from ..training import FoldAssignment
from .classifiers import fit_gbt, fit_logistic
from .delong import AucComparison, compare_auc
from .metrics import (
    FEATURE_NAMES,
    AucResult,
    VolumeFeatures,
    oriented_auc,
    roc_auc,
)

CLASSIFIER_NAMES = ("logistic", "boosted_trees")


@dataclass
class EvaluationReport:
    methods: list[str]
    tasks: list[str]
    single_feature: dict = field(default_factory=dict)
    combined: dict = field(default_factory=dict)
    pvalues: dict = field(default_factory=dict)
    dice: dict = field(default_factory=dict)
    run_config: dict = field(default_factory=dict)
    folds: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "format": "parkvol-report-v1",
            "run_config": self.run_config,
            "methods": self.methods,
            "tasks": self.tasks,
            "features": list(FEATURE_NAMES),
            "structures": list(STRUCTURES),
            "classifiers": list(CLASSIFIER_NAMES),
            "folds": self.folds,
            "dice": self.dice,
            "single_feature": self.single_feature,
            "combined": self.combined,
            "pvalues": self.pvalues,
        }

    def write_json(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=True))
        tmp.replace(path)

    def write_single_feature_csv(self, path) -> None:
        """Per-structure thresholding AUCs: one row per (task, method)."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["task", "method", *FEATURE_NAMES])
            for task in self.tasks:
                for method in self.methods:
                    cells = [
                        _mean_std(self.single_feature[task][method][feat])
                        for feat in FEATURE_NAMES
                    ]
                    writer.writerow([task, method, *cells])

    def write_combined_csv(self, path) -> None:
        """Six-volume classifier AUCs: one row per task."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["task"]
            for method in self.methods:
                for clf in CLASSIFIER_NAMES:
                    header.append(f"{method}:{clf}")
            writer.writerow(header)
            for task in self.tasks:
                row = [task]
                for method in self.methods:
                    for clf in CLASSIFIER_NAMES:
                        row.append(_mean_std(self.combined[task][method][clf]))
                writer.writerow(row)

    def write_dice_csv(self, path) -> None:
        """Dice per structure (rows) and method (columns), mean±std over folds."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            methods = [m for m in self.methods if m in _dice_methods(self.dice)]
            writer.writerow(["structure", *methods])
            for structure in STRUCTURES:
                row = [structure]
                for method in methods:
                    r = self.dice[structure][method]
                    row.append(f"{r['mean']:.4f}±{r['std']:.4f}")
                writer.writerow(row)


def _mean_std(cell: dict) -> str:
    if cell.get("mean") is None:
        return "n/a"
    return f"{cell['mean']:.2f}±{cell['std']:.2f}"


def _dice_methods(dice: dict) -> set:
    out = set()
    for per_method in dice.values():
        out.update(per_method)
    return out


def _feature_scores(rows, feature: str):
    """Scores/labels/ids for one feature, skipping undefined ratios."""
    ids, scores, labels = [], [], []
    for feats, label in rows:
        value = feats.value(feature)
        if value is None:
            continue
        ids.append(feats.subject_id)
        scores.append(float(value))
        labels.append(label)
    return ids, np.array(scores), np.array(labels)


def _degenerate_cell() -> dict:
    """Placeholder for an AUC that cannot be computed (a class is missing,
    e.g. every predicted pons was empty so no ratio exists)."""
    return {"auc": None, "fold_values": [], "mean": None, "std": None,
            "direction": "larger", "degenerate": True}


def _two_classes(labels) -> bool:
    return len(set(np.asarray(labels).tolist())) == 2


def _fold_aucs(ids, scores, labels, folds: FoldAssignment, oriented: bool):
    id_to_fold = {}
    for i in range(folds.k):
        for sid in folds.folds[i]:
            id_to_fold[sid] = i
    values = []
    for i in range(folds.k):
        sel = [j for j, sid in enumerate(ids) if id_to_fold.get(sid) == i]
        if not sel:
            continue
        fold_labels = labels[sel]
        if len(set(fold_labels.tolist())) < 2:
            continue
        if oriented:
            auc, _ = oriented_auc(scores[sel], fold_labels)
        else:
            auc = roc_auc(scores[sel], fold_labels)
        values.append(float(auc))
    return values


def run_task_matrix(
    features_by_method: dict[str, list[VolumeFeatures]],
    tasks,
    folds: FoldAssignment,
    gbt_params: dict | None = None,
    l2: float = 1.0,
) -> EvaluationReport:
    """Produce the full AUC matrix.

    Per task and method: (a) oriented thresholding AUCs for the seven
    single features, per test fold and pooled; (b) out-of-fold AUCs for
    the two six-volume classifiers trained on the train folds; and
    (c) paired AUC-difference p-values between every pair of methods.
    """
    methods = list(features_by_method)
    if not methods:
        raise InvalidArgument("no methods given")
    tasks = list(tasks)
    gbt_params = gbt_params or {}

    all_ids = [sid for f in folds.folds for sid in f]
    by_method: dict[str, dict[str, VolumeFeatures]] = {}
    for method, feats in features_by_method.items():
        table = {f.subject_id: f for f in feats}
        missing = [sid for sid in all_ids if sid not in table]
        if missing:
            raise InvalidArgument(f"method {method!r} lacks features for subjects: {missing[:10]}")
        by_method[method] = table

    report = EvaluationReport(methods=methods, tasks=[t.name for t in tasks],
                              folds={"k": folds.k, "seed": folds.seed})
    pv_single: dict = {}
    pv_combined: dict = {}

    for task in tasks:
        report.single_feature[task.name] = {}
        report.combined[task.name] = {}
        combined_scores: dict[str, dict[str, tuple[list, list, list]]] = {}

        for method in methods:
            rows = []
            for sid in all_ids:
                feats = by_method[method][sid]
                label = task.label(feats.condition)
                if label is not None:
                    rows.append((feats, label))
            if not rows or len({lab for _, lab in rows}) < 2:
                raise InvalidArgument(f"task {task.name}: cohort lacks one of the classes")

            per_feature = {}
            for feat_name in FEATURE_NAMES:
                ids, scores, labels = _feature_scores(rows, feat_name)
                if len(scores) == 0 or not _two_classes(labels):
                    per_feature[feat_name] = _degenerate_cell()
                    continue
                pooled, direction = oriented_auc(scores, labels)
                fold_vals = _fold_aucs(ids, scores, labels, folds, oriented=True)
                per_feature[feat_name] = AucResult.from_folds(pooled, fold_vals, direction).to_dict()
            report.single_feature[task.name][method] = per_feature

            per_clf: dict[str, dict] = {}
            clf_scores: dict[str, tuple[list, list, list]] = {}
            for clf_name in CLASSIFIER_NAMES:
                fold_vals = []
                oof_ids: list[str] = []
                oof_scores: list[float] = []
                oof_labels: list[int] = []
                for i in range(folds.k):
                    train_ids = set(folds.train_ids(i))
                    test_ids = set(folds.test_ids(i))
                    tr = [(f, lab) for f, lab in rows if f.subject_id in train_ids]
                    te = [(f, lab) for f, lab in rows if f.subject_id in test_ids]
                    tr_labels = [lab for _, lab in tr]
                    if not te or min(tr_labels.count(0), tr_labels.count(1)) < 2:
                        continue  # classifiers need two subjects per class
                    x_tr = np.stack([f.vector() for f, _ in tr])
                    y_tr = np.array([lab for _, lab in tr])
                    x_te = np.stack([f.vector() for f, _ in te])
                    y_te = np.array([lab for _, lab in te])
                    if clf_name == "logistic":
                        clf = fit_logistic(x_tr, y_tr, l2=l2)
                    else:
                        clf = fit_gbt(x_tr, y_tr, **gbt_params)
                    scores_te = clf.predict_score(x_te)
                    if len(set(y_te.tolist())) == 2:
                        fold_vals.append(float(roc_auc(scores_te, y_te)))
                    oof_ids.extend(f.subject_id for f, _ in te)
                    oof_scores.extend(float(s) for s in scores_te)
                    oof_labels.extend(int(y) for y in y_te)
                if oof_scores and _two_classes(oof_labels):
                    pooled = roc_auc(oof_scores, oof_labels)
                    per_clf[clf_name] = AucResult.from_folds(pooled, fold_vals).to_dict()
                else:
                    per_clf[clf_name] = _degenerate_cell()
                clf_scores[clf_name] = (oof_ids, oof_scores, oof_labels)
            report.combined[task.name][method] = per_clf
            combined_scores[method] = clf_scores

        # paired significance tests between methods on identical subjects
        pv_single[task.name] = {}
        for feat_name in FEATURE_NAMES:
            cell = {}
            for ma, mb in itertools.combinations(methods, 2):
                rows_a = {f.subject_id: (f.value(feat_name), task.label(f.condition))
                          for f in by_method[ma].values() if task.label(f.condition) is not None}
                rows_b = {f.subject_id: (f.value(feat_name), task.label(f.condition))
                          for f in by_method[mb].values() if task.label(f.condition) is not None}
                shared = [sid for sid in rows_a
                          if sid in rows_b and rows_a[sid][0] is not None and rows_b[sid][0] is not None]
                labels = np.array([rows_a[sid][1] for sid in shared])
                if not shared or not _two_classes(labels):
                    cell[f"{ma}|{mb}"] = AucComparison(1.0, 0.5, 0.5, 0.0, True).to_dict()
                    continue
                sa = np.array([rows_a[sid][0] for sid in shared])
                sb = np.array([rows_b[sid][0] for sid in shared])
                cell[f"{ma}|{mb}"] = compare_auc(sa, sb, labels).to_dict()
            pv_single[task.name][feat_name] = cell

        pv_combined[task.name] = {}
        for clf_name in CLASSIFIER_NAMES:
            cell = {}
            for ma, mb in itertools.combinations(methods, 2):
                ids_a, sc_a, lab_a = combined_scores[ma][clf_name]
                ids_b, sc_b, lab_b = combined_scores[mb][clf_name]
                pos_a = {sid: (s, l) for sid, s, l in zip(ids_a, sc_a, lab_a)}
                pos_b = {sid: (s, l) for sid, s, l in zip(ids_b, sc_b, lab_b)}
                shared = [sid for sid in pos_a if sid in pos_b]
                labels = np.array([pos_a[sid][1] for sid in shared])
                if not shared or not _two_classes(labels):
                    cell[f"{ma}|{mb}"] = AucComparison(1.0, 0.5, 0.5, 0.0, True).to_dict()
                    continue
                sa = np.array([pos_a[sid][0] for sid in shared])
                sb = np.array([pos_b[sid][0] for sid in shared])
                cell[f"{ma}|{mb}"] = compare_auc(sa, sb, labels).to_dict()
            pv_combined[task.name][clf_name] = cell

    report.pvalues = {"single_feature": pv_single, "combined": pv_combined}
    return report


def write_task_svg(report: EvaluationReport, task: str, path) -> None:
    """Small bar chart of pooled single-feature AUCs for one task."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    methods = report.methods
    feats = list(FEATURE_NAMES)
    bar_w = 16
    group_w = bar_w * len(methods) + 14
    width = 70 + group_w * len(feats)
    height = 260
    base_y, plot_h = 210, 170
    colors = ["#4878cf", "#e1812c", "#3b7d3b", "#9467bd"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="10" y="20" font-size="14" font-family="sans-serif">{task} — single-feature AUC</text>',
        f'<line x1="50" y1="{base_y}" x2="{width - 10}" y2="{base_y}" stroke="#333"/>',
    ]
    for frac in (0.5, 0.75, 1.0):
        y = base_y - frac * plot_h
        parts.append(f'<line x1="46" y1="{y:.1f}" x2="{width - 10}" y2="{y:.1f}" stroke="#ddd"/>')
        parts.append(
            f'<text x="12" y="{y + 4:.1f}" font-size="10" font-family="sans-serif">{frac:.2f}</text>'
        )
    for fi, feat in enumerate(feats):
        gx = 60 + fi * group_w
        for mi, method in enumerate(methods):
            auc = report.single_feature[task][method][feat]["auc"] or 0.0
            h = auc * plot_h
            x = gx + mi * bar_w
            parts.append(
                f'<rect x="{x}" y="{base_y - h:.1f}" width="{bar_w - 3}" height="{h:.1f}" '
                f'fill="{colors[mi % len(colors)]}"/>'
            )
        label = feat.replace("midbrain_pons_ratio", "mb/pons").replace("third_ventricle", "V3")
        parts.append(
            f'<text x="{gx}" y="{base_y + 14}" font-size="9" font-family="sans-serif">{label}</text>'
        )
    for mi, method in enumerate(methods):
        parts.append(
            f'<rect x="{60 + mi * 80}" y="{height - 22}" width="10" height="10" fill="{colors[mi % len(colors)]}"/>'
            f'<text x="{74 + mi * 80}" y="{height - 13}" font-size="10" font-family="sans-serif">{method}</text>'
        )
    parts.append("</svg>")
    path.write_text("\n".join(parts))
