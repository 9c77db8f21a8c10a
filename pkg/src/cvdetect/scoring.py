"""Similarity scores between test and reference embeddings, and evaluation pairing."""

import math
import warnings
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ._validation import check_unit_weight, check_vector
from .corpus import Group, SegmentKind, atomic_write_bytes
from .nn import sigmoid


def cosine_score(x_t, x_r):
    x_t = check_vector(x_t, "x_t")
    x_r = check_vector(x_r, "x_r", dim=x_t.shape[0])
    nt, nr = np.linalg.norm(x_t), np.linalg.norm(x_r)
    if nt == 0.0 or nr == 0.0:
        raise ValueError("cosine score is undefined for zero-norm embeddings")
    return float(np.clip(np.dot(x_t, x_r) / (nt * nr), -1.0, 1.0))


def binary_relation_score(x_t, x_r, W, b):
    """``sigmoid(W . (x_t - x_r)**2 + b)`` with an element-wise square."""
    x_t = check_vector(x_t, "x_t")
    x_r = check_vector(x_r, "x_r", dim=x_t.shape[0])
    W = np.asarray(W, dtype=np.float64).reshape(-1)
    if W.shape[0] != x_t.shape[0]:
        raise ValueError(f"relation weights have dimension {W.shape[0]}, embeddings {x_t.shape[0]}")
    d = x_t - x_r
    return float(sigmoid(np.dot(W, d * d) + float(b)))


def combine(score_cos, score_binary, lam):
    lam = check_unit_weight(lam, "lambda")
    return lam * score_cos + (1.0 - lam) * score_binary


def fuse(score_c, score_cv, w):
    w = check_unit_weight(w, "w")
    return w * score_c + (1.0 - w) * score_cv


def _mean(values):
    # fsum is correctly rounded, so the result does not depend on order
    return math.fsum(values) / len(values)


def _aggregate(values, how):
    if how == "mean":
        return _mean(values)
    if how == "max":
        return float(np.max(values))
    raise ValueError(f"unknown aggregation {how!r}")


def score_vs_references(x_t, references, W, b, lam, aggregate="mean"):
    """Combined score of ``x_t`` against each reference, aggregated (mean by default)."""
    if len(references) == 0:
        raise ValueError("at least one reference embedding is required")
    scores = [combine(cosine_score(x_t, r), binary_relation_score(x_t, r, W, b), lam) for r in references]
    return _aggregate(scores, aggregate)


@dataclass(frozen=True)
class ScoredPair:
    test_id: str
    ref_id: str
    consonant: str
    kind: SegmentKind
    score_cos: float
    score_binary: float
    combined: float
    fused: float
    label: bool

    @property
    def key(self):
        return self.test_id, self.ref_id


@dataclass(frozen=True)
class Relation:
    W: np.ndarray
    b: float

    @classmethod
    def from_checkpoint(cls, ckpt):
        return cls(np.asarray(ckpt.params["relation.W"])[0].copy(), float(ckpt.params["relation.b"][0]))


def _tokens(manifest):
    tokens = defaultdict(dict)
    for r in manifest.records:
        if r.group is not Group.TRAIN_TD:
            tokens[r.token_id][r.segment_kind] = r
    return tokens


def build_eval_pairs(manifest, emb_c, emb_cv, rel_c, rel_cv, lam_c=0.5, lam_cv=0.5, w=0.5,
                     mode="pair", aggregate="mean"):
    """Score every test token against TD references of its expected category.

    A test token is one TEST_TD or TEST_ATYPICAL production with both a C and
    a CV record.  References are other TEST_TD tokens from different
    speakers.  The label is positive iff the produced consonant equals the
    expected one.

    ``mode="pair"``: one comparison per (test token, reference token) whose CV
    category matches the test's expected consonant+vowel; each yields a C and
    a CV :class:`ScoredPair` carrying the same fused score.

    ``mode="aggregate"``: one comparison per test token; C references are all
    tokens of the expected consonant, CV references those of the expected
    consonant+vowel, and scores are aggregated over each set.

    Returns ``(pairs, skipped)`` where ``skipped`` counts test tokens without
    eligible references.
    """
    lam_c = check_unit_weight(lam_c, "lambda_c")
    lam_cv = check_unit_weight(lam_cv, "lambda_cv")
    w = check_unit_weight(w, "w")
    if mode not in ("pair", "aggregate"):
        raise ValueError(f"unknown pairing mode {mode!r}")
    tokens = _tokens(manifest)
    for tid, segs in tokens.items():
        if set(segs) != {SegmentKind.C, SegmentKind.CV}:
            raise ValueError(f"test token {tid!r} needs both a C and a CV record")
        for kind, table in ((SegmentKind.C, emb_c), (SegmentKind.CV, emb_cv)):
            if segs[kind].record_id not in table:
                raise ValueError(f"no {kind.value} embedding for record {segs[kind].record_id!r}")

    refs = [(tid, segs) for tid, segs in tokens.items() if segs[SegmentKind.CV].group is Group.TEST_TD]

    def component(kind, test_rec, ref_rec, lam):
        table, rel = (emb_c, rel_c) if kind is SegmentKind.C else (emb_cv, rel_cv)
        xt, xr = table[test_rec.record_id], table[ref_rec.record_id]
        cos = cosine_score(xt, xr)
        binary = binary_relation_score(xt, xr, rel.W, rel.b)
        return cos, binary, combine(cos, binary, lam)

    pairs, skipped = [], 0
    for tid, segs in tokens.items():
        test_cv = segs[SegmentKind.CV]
        expected, vowel = test_cv.expected_consonant, test_cv.vowel_label
        label = test_cv.consonant_label == expected
        eligible = [
            (rid, rsegs)
            for rid, rsegs in refs
            if rid != tid
            and rsegs[SegmentKind.CV].speaker_id != test_cv.speaker_id
            and rsegs[SegmentKind.CV].consonant_label == expected
        ]
        cv_refs = [(rid, rs) for rid, rs in eligible if rs[SegmentKind.CV].vowel_label == vowel]
        if not cv_refs:
            skipped += 1
            continue
        if mode == "pair":
            for rid, rsegs in cv_refs:
                c = component(SegmentKind.C, segs[SegmentKind.C], rsegs[SegmentKind.C], lam_c)
                v = component(SegmentKind.CV, test_cv, rsegs[SegmentKind.CV], lam_cv)
                f = fuse(c[2], v[2], w)
                pairs.append(ScoredPair(tid, rid, expected, SegmentKind.C, *c, f, label))
                pairs.append(ScoredPair(tid, rid, expected, SegmentKind.CV, *v, f, label))
        else:
            c = np.array([component(SegmentKind.C, segs[SegmentKind.C], rs[SegmentKind.C], lam_c)
                          for _, rs in eligible])
            v = np.array([component(SegmentKind.CV, test_cv, rs[SegmentKind.CV], lam_cv)
                          for _, rs in cv_refs])
            sc, scv = _aggregate(c[:, 2], aggregate), _aggregate(v[:, 2], aggregate)
            f = fuse(sc, scv, w)
            pairs.append(ScoredPair(tid, f"{aggregate}({len(eligible)})", expected, SegmentKind.C,
                                    _mean(c[:, 0]), _mean(c[:, 1]), sc, f, label))
            pairs.append(ScoredPair(tid, f"{aggregate}({len(cv_refs)})", expected, SegmentKind.CV,
                                    _mean(v[:, 0]), _mean(v[:, 1]), scv, f, label))
    if skipped:
        warnings.warn(f"{skipped} test tokens had no eligible references and were skipped", stacklevel=2)
    return pairs, skipped


# --- scored-pairs file -----------------------------------------------------------

PAIR_FIELDS = ("test_id", "ref_id", "consonant", "kind", "score_cos", "score_binary",
               "combined", "fused", "label")


def pairs_text(pairs, params=None):
    lines = ["# " + "\t".join(PAIR_FIELDS)]
    if params:
        lines.append("#@params\t" + "\t".join(f"{k}={params[k]}" for k in sorted(params)))
    for p in pairs:
        lines.append("\t".join([
            p.test_id, p.ref_id, p.consonant, p.kind.value, repr(p.score_cos), repr(p.score_binary),
            repr(p.combined), repr(p.fused), "pos" if p.label else "neg",
        ]))
    return "\n".join(lines) + "\n"


def save_pairs(path, pairs, params=None):
    """Write pairs as tab-separated lines; ``params`` go in a ``#@params`` line."""
    atomic_write_bytes(path, pairs_text(pairs, params).encode("utf-8"))


def load_pairs(path):
    """Return ``(pairs, params)`` from a scored-pairs file."""
    pairs, params = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if line.startswith("#@params"):
                for item in line.split("\t")[1:]:
                    k, _, v = item.partition("=")
                    params[k] = v
                continue
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != len(PAIR_FIELDS) or parts[8] not in ("pos", "neg"):
                raise ValueError(f"{path}:{lineno}: malformed scored pair")
            try:
                pairs.append(ScoredPair(
                    parts[0], parts[1], parts[2], SegmentKind(parts[3]),
                    *(float(x) for x in parts[4:8]), parts[8] == "pos",
                ))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return pairs, params
