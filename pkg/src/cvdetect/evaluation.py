"""ROC, AUC and EER over scored pairs; per-consonant reports and weight sweeps.

Decision rule: a pair is called positive iff ``score >= threshold``.
"""

import json
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_scores_labels, check_unit_weight, weight_grid
from .corpus import SegmentKind, atomic_write_bytes

SCORE_TYPES = ("C", "CV", "C+CV")


@dataclass(frozen=True, eq=False)
class RocCurve:
    """Operating points ordered by decreasing threshold, from (0, 0) to (1, 1).

    ``tp``/``fp`` hold the integer counts behind each point; every rate is a
    count divided by its class size, so mirrored inputs give identical floats.
    """

    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    n_pos: int
    n_neg: int

    @property
    def tpr(self):
        return self.tp / self.n_pos

    @property
    def fpr(self):
        return self.fp / self.n_neg

    @property
    def fnr(self):
        return (self.n_pos - self.tp) / self.n_pos

    def points(self):
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist(), self.fnr.tolist()))


def roc(scores, labels):
    """ROC with one operating point per distinct score; tied scores move together."""
    scores, positive = check_scores_labels(scores, labels)
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], positive[order]
    tp = np.cumsum(y)
    fp = np.cumsum(~y)
    # last index of every run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    return RocCurve(np.r_[np.inf, s[ends]], np.r_[0, tp[ends]], np.r_[0, fp[ends]],
                    int(tp[-1]), int(fp[-1]))


def auc(curve):
    """Trapezoidal area under TPR vs. FPR, summed in integer counts."""
    tp = curve.tp.astype(np.int64)
    area2 = int(np.sum(np.diff(curve.fp) * (tp[1:] + tp[:-1])))
    return area2 / (2 * curve.n_pos * curve.n_neg)


def eer(scores, labels):
    """Rate at which FPR equals FNR, interpolating linearly between operating points."""
    curve = roc(scores, labels)
    fpr, fnr = curve.fpr, curve.fnr
    gap = fpr - fnr
    i = int(np.argmax(gap >= 0.0))
    if gap[i] == 0.0:
        return float(fpr[i])
    f0, f1, n0, n1 = fpr[i - 1], fpr[i], fnr[i - 1], fnr[i]
    # crossing of the two line segments, written symmetrically in (f, n)
    return float((n0 * f1 - f0 * n1) / ((f1 - f0) - (n1 - n0)))


def metrics(scores, labels):
    return {"eer": eer(scores, labels), "auc": auc(roc(scores, labels))}


def best_row(rows):
    """Index of the lowest-EER row; ties go to the higher AUC, then the earlier row."""
    return min(range(len(rows)), key=lambda i: (rows[i]["eer"], -rows[i]["auc"], i))


def sweep_weights(a, b, labels, grid=None):
    """EER/AUC of ``w * a + (1 - w) * b`` for each weight of ``grid``."""
    grid = weight_grid(0.1) if grid is None else [check_unit_weight(g, "weight") for g in grid]
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    rows = []
    for g in grid:
        rows.append({"weight": g, **metrics(g * a + (1.0 - g) * b, labels)})
    best = best_row(rows)
    for i, row in enumerate(rows):
        row["best"] = i == best
    return rows


def _joined(pairs):
    """Align C and CV pairs by (test_id, ref_id); returns dict of column arrays."""
    by_kind = {SegmentKind.C: {}, SegmentKind.CV: {}}
    for p in pairs:
        table = by_kind[p.kind]
        if p.key in table:
            raise ValueError(f"duplicate {p.kind.value} pair {p.key}")
        table[p.key] = p
    c_keys, cv_keys = list(by_kind[SegmentKind.C]), set(by_kind[SegmentKind.CV])
    if set(c_keys) != cv_keys:
        raise ValueError("C and CV pairs do not cover the same (test, reference) keys")
    cols = defaultdict(list)
    for key in c_keys:
        pc, pv = by_kind[SegmentKind.C][key], by_kind[SegmentKind.CV][key]
        if pc.label != pv.label:
            raise ValueError(f"conflicting labels for pair {key}")
        cols["test_id"].append(key[0])
        cols["consonant"].append(pc.consonant)
        cols["label"].append(pc.label)
        cols["cos_c"].append(pc.score_cos)
        cols["bin_c"].append(pc.score_binary)
        cols["C"].append(pc.combined)
        cols["cos_cv"].append(pv.score_cos)
        cols["bin_cv"].append(pv.score_binary)
        cols["CV"].append(pv.combined)
        cols["C+CV"].append(pc.fused)
    return {k: np.asarray(v) for k, v in cols.items()}


def _subset_metrics(cols, mask):
    labels = cols["label"][mask]
    if labels.all() or not labels.any():
        return None
    return {t: metrics(cols[t][mask], labels) for t in SCORE_TYPES}


@dataclass
class EvalReport:
    overall: dict
    counts: dict
    per_consonant: list = field(default_factory=list)
    sweeps: dict = field(default_factory=dict)

    def to_dict(self):
        return {"overall": self.overall, "counts": self.counts,
                "per_consonant": self.per_consonant, "sweeps": self.sweeps}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self):
        head = ["Consonant", "TD", "Atypical", "EER C", "EER CV", "EER C+CV", "AUC C", "AUC CV", "AUC C+CV"]

        def cells(name, counts, m):
            out = [name, str(counts["td"]), str(counts["atypical"])]
            for key in ("eer", "auc"):
                for t in SCORE_TYPES:
                    out.append("n/a" if m is None else f"{m[t][key]:.3f}")
            return out

        rows = [cells(r["consonant"], r, r["metrics"]) for r in self.per_consonant]
        rows.append(cells("ALL", self.counts, self.overall))
        widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(head)]
        fmt = lambda r: " | ".join(c.rjust(w) for c, w in zip(r, widths))  # noqa: E731
        lines = [fmt(head), "-+-".join("-" * w for w in widths)]
        lines.extend(fmt(r) for r in rows)
        for name, table in self.sweeps.items():
            lines.append("")
            lines.append(sweep_text(name, table))
        return "\n".join(lines) + "\n"


def sweep_text(name, rows):
    lines = [f"sweep {name}", f"{'weight':>6}  {'EER':>6}  {'AUC':>6}"]
    for row in rows:
        mark = "  *" if row["best"] else ""
        lines.append(f"{row['weight']:>6.2f}  {row['eer']:>6.3f}  {row['auc']:>6.3f}{mark}")
    return "\n".join(lines)


def sweeps_from_pairs(pairs, grid=None):
    """Weight sweeps: lambda for C, lambda for CV, and the C/CV fusion weight."""
    cols = _joined(pairs)
    labels = cols["label"]
    return {
        "lambda_C": sweep_weights(cols["cos_c"], cols["bin_c"], labels, grid),
        "lambda_CV": sweep_weights(cols["cos_cv"], cols["bin_cv"], labels, grid),
        "w": sweep_weights(cols["C"], cols["CV"], labels, grid),
    }


def report(pairs, grid=None):
    """Overall and per-consonant EER/AUC for C, CV and fused scores, plus sweeps.

    Counts are test tokens: ``td`` positive, ``atypical`` negative.
    Consonant subsets with a single label report ``None`` metrics.
    """
    if not pairs:
        raise ValueError("no scored pairs")
    cols = _joined(pairs)
    labels = cols["label"]
    if labels.all() or not labels.any():
        raise ValueError("scored pairs need both positive and negative labels")

    def token_counts(mask):
        tests = {}
        for tid, lab in zip(cols["test_id"][mask], labels[mask]):
            tests[tid] = lab
        pos = sum(1 for v in tests.values() if v)
        return {"td": pos, "atypical": len(tests) - pos,
                "pos_pairs": int(labels[mask].sum()), "neg_pairs": int((~labels[mask]).sum())}

    everything = np.ones(labels.shape, dtype=bool)
    overall = _subset_metrics(cols, everything)
    rows = []
    for cons in sorted(set(cols["consonant"].tolist())):
        mask = cols["consonant"] == cons
        rows.append({"consonant": cons, **token_counts(mask), "metrics": _subset_metrics(cols, mask)})
    return EvalReport(overall, token_counts(everything), rows, sweeps_from_pairs(pairs, grid))


def save_report(report_obj, prefix):
    """Write ``<prefix>.txt`` (aligned table) and ``<prefix>.json``."""
    atomic_write_bytes(f"{prefix}.txt", report_obj.to_text().encode("utf-8"))
    atomic_write_bytes(f"{prefix}.json", report_obj.to_json().encode("utf-8"))


class ScoreFusion(ClassifierMixin, BaseEstimator):
    """Choose the weight of ``w * a + (1 - w) * b`` by minimum EER over a grid.

    ``X`` is ``(n, 2)`` with columns ``a`` and ``b`` (e.g. C and CV scores, or
    cosine and relation scores).  ``predict`` applies the EER threshold.
    """

    def __init__(self, grid=None):
        self.grid = grid

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError("X must have exactly two score columns")
        y = np.asarray(y).astype(bool)
        self.classes_ = np.array([False, True])
        self.sweep_ = sweep_weights(X[:, 0], X[:, 1], y, self.grid)
        best = next(r for r in self.sweep_ if r["best"])
        self.weight_ = best["weight"]
        self.eer_ = best["eer"]
        fused = self.decision_function(X)
        curve = roc(fused, y)
        gap = curve.fpr - curve.fnr
        self.threshold_ = float(curve.thresholds[int(np.argmax(gap >= 0.0))])
        self.n_features_in_ = 2
        return self

    def decision_function(self, X):
        check_is_fitted(self, "weight_")
        X = np.asarray(X, dtype=np.float64)
        return self.weight_ * X[:, 0] + (1.0 - self.weight_) * X[:, 1]

    def predict(self, X):
        return self.decision_function(X) >= self.threshold_
