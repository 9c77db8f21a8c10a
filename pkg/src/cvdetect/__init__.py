"""Consonant error detection in child speech from C and CV segment embeddings."""

from .corpus import (
    AudioStore,
    CorpusManifest,
    Group,
    SegmentKind,
    SegmentRecord,
    Waveform,
    augment_training_set,
    build_manifest,
    load_manifest,
    save_manifest,
    speed_perturb,
)
from .dsp import FeatureArchive, FeatureConfig, GlobalCMVN, LogMelFilterbank, featurize_manifest, log_mel
from .evaluation import EvalReport, ScoreFusion, auc, eer, report, roc
from .extractor import BiGRUEmbedder, Checkpoint, EmbeddingTable, ExtractorConfig, embed_corpus, train
from .scoring import (
    Relation,
    binary_relation_score,
    build_eval_pairs,
    combine,
    cosine_score,
    fuse,
    score_vs_references,
)
from .synth import SynthConfig, synth_cv_corpus

__version__ = "0.1.0"

__all__ = [
    "AudioStore", "BiGRUEmbedder", "Checkpoint", "CorpusManifest", "EmbeddingTable", "EvalReport",
    "ExtractorConfig", "FeatureArchive", "FeatureConfig", "GlobalCMVN", "Group", "LogMelFilterbank",
    "Relation", "ScoreFusion", "SegmentKind", "SegmentRecord", "SynthConfig", "Waveform", "auc",
    "augment_training_set", "binary_relation_score", "build_eval_pairs", "build_manifest", "combine",
    "cosine_score", "eer", "embed_corpus", "featurize_manifest", "fuse", "load_manifest", "log_mel",
    "report", "roc", "save_manifest", "score_vs_references", "speed_perturb", "synth_cv_corpus", "train",
]
