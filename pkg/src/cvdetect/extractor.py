"""Bi-GRU segment embedding extractor with a classification + relation objective."""

import json
import math
import struct
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import Group, SegmentKind, atomic_write_bytes
from .dsp import CmvnStats, FeatureConfig, FeatureMatrix, cmvn_apply, cmvn_fit
from .nn import AdamState, Dense, Dropout, GRULayer, adam_step, binary_xent, sigmoid, softmax_xent


@dataclass(frozen=True)
class ExtractorConfig:
    """Extractor architecture and training settings (defaults are the published full-scale setup)."""

    num_layers: int = 3
    hidden_units: int = 400
    embedding_dim: int = 128
    num_classes: int | None = None
    dropout: float = 0.5
    learning_rate: float = 0.001
    weight_decay: float = 0.0005
    batch_size: int = 256
    epochs: int = 5
    pairs_per_sample: int = 4
    seed: int = 0
    task_weight: float = 0.5
    pooling: str = "last"

    def __post_init__(self):
        for name in ("num_layers", "hidden_units", "embedding_dim", "batch_size", "epochs"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.num_classes is not None and self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.pairs_per_sample < 0:
            raise ValueError("pairs_per_sample must be non-negative")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must lie in [0, 1)")
        if not (0.0 <= self.task_weight <= 1.0):
            raise ValueError("task_weight must lie in [0, 1]")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive and weight_decay non-negative")
        if self.pooling not in ("last", "mean"):
            raise ValueError("pooling must be 'last' or 'mean'")

    def to_dict(self):
        return asdict(self)


class BiGRUNet:
    """Stacked bidirectional GRU, embedding layer, class head and relation head.

    The embedding is a linear map of the pooled top-layer states; with
    ``pooling="last"`` these are the forward state at the last frame and the
    backward state at the first frame.  The relation head ``(W, b)`` scores a
    pair through ``sigmoid(W (e1 - e2)**2 + b)``.
    """

    def __init__(self, input_dim, num_classes, num_layers, hidden_units, embedding_dim,
                 dropout=0.5, pooling="last", seed=0):
        rng = np.random.default_rng(seed)
        self.input_dim = input_dim
        self.hidden_units = hidden_units
        self.pooling = pooling
        self.layers = []
        dim = input_dim
        for i in range(num_layers):
            fwd = GRULayer(dim, hidden_units, rng, name=f"gru{i}.fwd")
            bwd = GRULayer(dim, hidden_units, rng, name=f"gru{i}.bwd")
            self.layers.append((fwd, bwd))
            dim = 2 * hidden_units
        self.embedding = Dense(dim, embedding_dim, rng, name="embedding")
        self.classifier = Dense(embedding_dim, num_classes, rng, name="classifier")
        self.relation = Dense(embedding_dim, 1, rng, name="relation")
        self.layer_dropout = [Dropout(dropout) for _ in range(num_layers)]
        self.pool_dropout = Dropout(dropout)
        self._cache = None

    @classmethod
    def from_config(cls, cfg, input_dim):
        return cls(input_dim, cfg.num_classes, cfg.num_layers, cfg.hidden_units,
                   cfg.embedding_dim, cfg.dropout, cfg.pooling, cfg.seed)

    def named_params(self):
        out = []
        for fwd, bwd in self.layers:
            out.extend((p.name, p) for p in fwd.params() + bwd.params())
        for head in (self.embedding, self.classifier, self.relation):
            out.extend((p.name, p) for p in head.params())
        return out

    def params(self):
        return [p for _, p in self.named_params()]

    @property
    def relation_weights(self):
        return self.relation.W.value[0].copy(), float(self.relation.b.value[0])

    def forward(self, x, lengths, training=False, rng=None):
        """Embeddings ``(B, embedding_dim)`` of a padded batch ``(B, T, input_dim)``."""
        x = np.asarray(x, dtype=np.float64)
        lengths = np.asarray(lengths, dtype=np.int64)
        B = x.shape[0]
        h = x
        for i, (fwd, bwd) in enumerate(self.layers):
            if i > 0:
                h = self.layer_dropout[i].forward(h, rng, training)
            h = np.concatenate([fwd.forward(h, lengths), bwd.forward(h, lengths, reverse=True)], axis=2)
        H = self.hidden_units
        if self.pooling == "last":
            pooled = np.concatenate([h[np.arange(B), lengths - 1, :H], h[:, 0, H:]], axis=1)
        else:
            valid = (np.arange(h.shape[1])[None, :] < lengths[:, None])[:, :, None]
            pooled = (h * valid).sum(axis=1) / lengths[:, None]
        pooled = self.pool_dropout.forward(pooled, rng, training)
        self._cache = (h.shape, lengths)
        return self.embedding.forward(pooled)

    def backward(self, d_embedding):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        shape, lengths = self._cache
        B, T, _ = shape
        H = self.hidden_units
        d_pooled = self.pool_dropout.backward(self.embedding.backward(d_embedding))
        dh = np.zeros(shape)
        if self.pooling == "last":
            dh[np.arange(B), lengths - 1, :H] += d_pooled[:, :H]
            dh[:, 0, H:] += d_pooled[:, H:]
        else:
            valid = (np.arange(T)[None, :] < lengths[:, None])[:, :, None]
            dh += valid * (d_pooled / lengths[:, None])[:, None, :]
        for i in range(len(self.layers) - 1, -1, -1):
            fwd, bwd = self.layers[i]
            dh = fwd.backward(dh[:, :, :H]) + bwd.backward(dh[:, :, H:])
            if i > 0:
                dh = self.layer_dropout[i].backward(dh)
        return dh


def pad_batch(seqs):
    lengths = np.array([s.shape[0] for s in seqs], dtype=np.int64)
    if np.any(lengths < 1):
        raise ValueError("every sequence needs at least one frame")
    out = np.zeros((len(seqs), int(lengths.max()), seqs[0].shape[1]))
    for i, s in enumerate(seqs):
        out[i, : s.shape[0]] = s
    return out, lengths


def sample_pairs(n, k, rng):
    """``k`` partners per sample, excluding self; without replacement when possible."""
    if k == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    if n < 2:
        raise ValueError("pairing needs a batch of at least two samples")
    first, second = [], []
    for i in range(n):
        others = np.delete(np.arange(n), i)
        pick = rng.choice(others, size=k, replace=k > others.size)
        first.extend([i] * k)
        second.extend(pick.tolist())
    return np.array(first, dtype=np.int64), np.array(second, dtype=np.int64)


def _multitask(net, x, lengths, targets, rng, task_weight, pairs_per_sample, training=True):
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size == 0:
        raise ValueError("empty batch")
    emb = net.forward(x, lengths, training=training, rng=rng)
    logits = net.classifier.forward(emb)
    ce, d_logits = softmax_xent(logits, targets)
    first, second = sample_pairs(len(targets), pairs_per_sample, rng)
    if first.size:
        diff = emb[first] - emb[second]
        z = net.relation.forward(diff * diff)[:, 0]
        p = sigmoid(z)
        same = (targets[first] == targets[second]).astype(np.float64)
        bce, d_p = binary_xent(p, same)
        d_z = d_p * p * (1.0 - p)
    else:
        bce = 0.0
    loss = task_weight * ce + (1.0 - task_weight) * bce
    d_emb = net.classifier.backward(task_weight * d_logits)
    if first.size:
        d_sq = net.relation.backward(((1.0 - task_weight) * d_z)[:, None])
        d_diff = 2.0 * diff * d_sq
        np.add.at(d_emb, first, d_diff)
        np.add.at(d_emb, second, -d_diff)
    net.backward(d_emb)
    return loss, {"ce": ce, "bce": bce, "logits": logits}


def multitask_loss(net, batch, rng, task_weight=0.5, pairs_per_sample=4, training=True):
    """Joint loss on ``batch = [(features, class_index), ...]``; accumulates gradients.

    ``L = task_weight * CE + (1 - task_weight) * BCE`` where BCE scores
    ``pairs_per_sample`` random in-batch partners per sample, labeled 1 when
    both samples share a class.  Returns ``(loss, parts)``.
    """
    if not batch:
        raise ValueError("empty batch")
    seqs = [f.data if isinstance(f, FeatureMatrix) else np.asarray(f, dtype=np.float64) for f, _ in batch]
    x, lengths = pad_batch(seqs)
    targets = [t for _, t in batch]
    return _multitask(net, x, lengths, targets, rng, task_weight, pairs_per_sample, training)


def _batches(lengths, batch_size, rng):
    """Shuffled batches of indices; lengths are sorted within buckets of 8 batches."""
    perm = rng.permutation(len(lengths))
    bucket = 8 * batch_size
    batches = []
    for lo in range(0, len(perm), bucket):
        chunk = perm[lo : lo + bucket]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        batches.extend(chunk[i : i + batch_size] for i in range(0, len(chunk), batch_size))
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def predict_logits(net, seqs, batch_size=64):
    out = []
    for lo in range(0, len(seqs), batch_size):
        x, lengths = pad_batch(seqs[lo : lo + batch_size])
        out.append(net.classifier.forward(net.forward(x, lengths)))
    return np.concatenate(out, axis=0)


def fit_network(seqs, targets, cfg, input_dim):
    """Train a fresh :class:`BiGRUNet` on normalized sequences; return (net, log)."""
    targets = np.asarray(targets, dtype=np.int64)
    if len(np.unique(targets)) < 2:
        raise ValueError("training data must contain at least two classes")
    if cfg.num_classes is None or targets.max() >= cfg.num_classes:
        raise ValueError("num_classes must cover every target index")
    net = BiGRUNet.from_config(cfg, input_dim)
    params = net.params()
    state = AdamState(learning_rate=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([cfg.seed, 1])
    lengths = np.array([s.shape[0] for s in seqs])
    epochs = []
    for epoch in range(1, cfg.epochs + 1):
        totals = np.zeros(3)
        correct = 0
        for idx in _batches(lengths, cfg.batch_size, rng):
            if len(idx) < 2 and cfg.pairs_per_sample > 0:
                continue
            x, lens = pad_batch([seqs[i] for i in idx])
            loss, parts = _multitask(net, x, lens, targets[idx], rng, cfg.task_weight,
                                     cfg.pairs_per_sample)
            adam_step(params, state)
            totals += len(idx) * np.array([loss, parts["ce"], parts["bce"]])
            correct += int(np.sum(parts["logits"].argmax(axis=1) == targets[idx]))
        n = len(seqs)
        epochs.append({
            "epoch": epoch,
            "loss": float(totals[0] / n),
            "ce": float(totals[1] / n),
            "bce": float(totals[2] / n),
            "accuracy": correct / n,
        })
    accuracy = float(np.mean(predict_logits(net, seqs).argmax(axis=1) == targets))
    log = {
        "num_samples": len(seqs),
        "num_classes": cfg.num_classes,
        "chance_loss": math.log(cfg.num_classes),
        "epochs": epochs,
        "train_accuracy": accuracy,
        "steps": state.step,
    }
    return net, log


def embed(net, fm):
    """Embedding of one normalized feature matrix (inference mode)."""
    if isinstance(fm, FeatureMatrix):
        if not fm.normalized:
            raise ValueError("embed expects CMVN-normalized features")
        data = fm.data
    else:
        data = np.asarray(fm, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError(f"features must be (frames >= 1, dims), got {data.shape}")
    if data.shape[1] != net.input_dim:
        raise ValueError(f"feature dim {data.shape[1]} does not match extractor input {net.input_dim}")
    return net.forward(data[None], np.array([data.shape[0]]))[0]


# --- checkpoints -----------------------------------------------------------------

CHECKPOINT_MAGIC = b"CVDCKPT\x00"
CHECKPOINT_VERSION = 1
_BLOCKS = (b"CONF", b"INVT", b"PARM", b"CMVN", b"TLOG")


@dataclass(eq=False)
class Checkpoint:
    """Self-describing trained extractor.

    Binary layout: ``magic[8] version:u32`` followed by the blocks CONF, INVT,
    PARM, CMVN, TLOG, each ``tag[4] length:u64 payload``.  CONF, INVT and
    TLOG are JSON; PARM holds ``count:u32`` then per parameter
    ``name_len:u16 name ndim:u8 dims:u32[ndim] float64[...]``; CMVN holds
    ``frame_count:u64 dim:u32 mean:f64[dim] variance:f64[dim]``.
    """

    config: ExtractorConfig
    kind: SegmentKind
    feature_config: FeatureConfig
    inventory: tuple
    params: dict
    cmvn: CmvnStats
    training_log: dict

    @classmethod
    def from_network(cls, net, cfg, kind, feature_config, inventory, cmvn, log):
        params = {name: p.value.copy() for name, p in net.named_params()}
        return cls(cfg, SegmentKind(kind), feature_config, tuple(inventory), params, cmvn, log)

    def network(self):
        net = BiGRUNet.from_config(self.config, self.feature_config.num_mels)
        named = dict(net.named_params())
        if set(named) != set(self.params):
            raise ValueError("checkpoint parameters do not match its configuration")
        for name, p in named.items():
            if p.value.shape != self.params[name].shape:
                raise ValueError(f"parameter {name} has shape {self.params[name].shape}, expected {p.value.shape}")
            p.value[...] = self.params[name]
        return net

    def to_bytes(self):
        conf = {
            "extractor": self.config.to_dict(),
            "kind": self.kind.value,
            "features": self.feature_config.to_dict(),
            "feature_config_hash": self.feature_config.config_hash(),
        }
        blocks = {
            b"CONF": json.dumps(conf, sort_keys=True).encode("utf-8"),
            b"INVT": json.dumps(list(self.inventory)).encode("utf-8"),
            b"TLOG": json.dumps(self.training_log, sort_keys=True).encode("utf-8"),
        }
        parm = [struct.pack("<I", len(self.params))]
        for name, value in self.params.items():
            nb = name.encode("utf-8")
            parm.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", value.ndim))
            parm.append(struct.pack(f"<{value.ndim}I", *value.shape))
            parm.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
        blocks[b"PARM"] = b"".join(parm)
        blocks[b"CMVN"] = (
            struct.pack("<QI", self.cmvn.frame_count, self.cmvn.dim)
            + self.cmvn.mean.astype("<f8").tobytes()
            + self.cmvn.variance.astype("<f8").tobytes()
        )
        out = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
        for tag in _BLOCKS:
            out.append(tag + struct.pack("<Q", len(blocks[tag])) + blocks[tag])
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob, source="<checkpoint>"):
        if blob[:8] != CHECKPOINT_MAGIC:
            raise ValueError(f"{source}: not an extractor checkpoint")
        (version,) = struct.unpack_from("<I", blob, 8)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{source}: unsupported checkpoint version {version}")
        pos, blocks = 12, {}
        while pos < len(blob):
            tag = blob[pos : pos + 4]
            (n,) = struct.unpack_from("<Q", blob, pos + 4)
            if tag not in _BLOCKS or tag in blocks:
                raise ValueError(f"{source}: unexpected block {tag!r}")
            blocks[tag] = blob[pos + 12 : pos + 12 + n]
            pos += 12 + n
        if set(blocks) != set(_BLOCKS):
            raise ValueError(f"{source}: missing checkpoint blocks")
        conf = json.loads(blocks[b"CONF"])
        feature_config = FeatureConfig.from_dict(conf["features"])
        if feature_config.config_hash() != conf["feature_config_hash"]:
            raise ValueError(f"{source}: feature config hash mismatch")
        parm = blocks[b"PARM"]
        (count,) = struct.unpack_from("<I", parm, 0)
        p, params = 4, {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", parm, p)
            name = parm[p + 2 : p + 2 + nlen].decode("utf-8")
            p += 2 + nlen
            (ndim,) = struct.unpack_from("<B", parm, p)
            shape = struct.unpack_from(f"<{ndim}I", parm, p + 1)
            p += 1 + 4 * ndim
            size = int(np.prod(shape))
            params[name] = np.frombuffer(parm, dtype="<f8", count=size, offset=p).reshape(shape).copy()
            p += 8 * size
        cm = blocks[b"CMVN"]
        frame_count, dim = struct.unpack_from("<QI", cm, 0)
        mean = np.frombuffer(cm, dtype="<f8", count=dim, offset=12).copy()
        var = np.frombuffer(cm, dtype="<f8", count=dim, offset=12 + 8 * dim).copy()
        return cls(
            config=ExtractorConfig(**conf["extractor"]),
            kind=SegmentKind(conf["kind"]),
            feature_config=feature_config,
            inventory=tuple(json.loads(blocks[b"INVT"])),
            params=params,
            cmvn=CmvnStats(mean, var, int(frame_count)),
            training_log=json.loads(blocks[b"TLOG"]),
        )

    def save(self, path):
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), source=str(path))


def train(manifest, features, cfg=None, kind=SegmentKind.CV):
    """Train an extractor on the TRAIN_TD records of one segment kind.

    Class indices follow the manifest inventory for ``kind``.  CMVN statistics
    come from ``features.cmvn`` when present, else they are fitted on the
    training features.
    """
    cfg = ExtractorConfig() if cfg is None else cfg
    kind = SegmentKind(kind)
    inventory = manifest.inventory(kind)
    index = {label: i for i, label in enumerate(inventory)}
    records = manifest.select(kind=kind, groups=[Group.TRAIN_TD])
    if not records:
        raise ValueError(f"no TRAIN_TD {kind.value} records in the manifest")
    missing = [r.record_id for r in records if r.record_id not in features]
    if missing:
        raise ValueError(f"{len(missing)} training records lack features, e.g. {missing[0]!r}")
    raw = [features[r.record_id] for r in records]
    targets = np.array([index[r.class_label] for r in records])
    if len(set(targets.tolist())) < 2:
        raise ValueError("training data contains a single class")
    cmvn = features.cmvn if features.cmvn is not None else cmvn_fit(raw)
    seqs = [cmvn_apply(cmvn, fm).data for fm in raw]
    cfg = replace(cfg, num_classes=len(inventory))
    net, log = fit_network(seqs, targets, cfg, features.config.num_mels)
    return Checkpoint.from_network(net, cfg, kind, features.config, inventory, cmvn, log)


# --- embedding tables ----------------------------------------------------------

TABLE_MAGIC = b"CVDEMBT\x00"
TABLE_VERSION = 1


class EmbeddingTable(dict):
    """Ordered ``record_id -> embedding`` mapping with a binary file format.

    Layout: ``magic[8] version:u32 header_len:u32 header(JSON)`` then per
    entry ``id_len:u32 id float64[dim]``.
    """

    def __init__(self, kind, dim, items=()):
        super().__init__(items)
        self.kind = SegmentKind(kind)
        self.dim = int(dim)

    def to_bytes(self):
        header = json.dumps({"kind": self.kind.value, "dim": self.dim, "count": len(self)},
                            sort_keys=True).encode("utf-8")
        parts = [TABLE_MAGIC, struct.pack("<II", TABLE_VERSION, len(header)), header]
        for rid, vec in self.items():
            rb = rid.encode("utf-8")
            parts.append(struct.pack("<I", len(rb)) + rb)
            parts.append(np.asarray(vec, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob, source="<table>"):
        if blob[:8] != TABLE_MAGIC:
            raise ValueError(f"{source}: not an embedding table")
        version, hlen = struct.unpack_from("<II", blob, 8)
        if version != TABLE_VERSION:
            raise ValueError(f"{source}: unsupported embedding table version {version}")
        header = json.loads(blob[16 : 16 + hlen])
        table = cls(header["kind"], header["dim"])
        pos = 16 + hlen
        for _ in range(header["count"]):
            (n,) = struct.unpack_from("<I", blob, pos)
            rid = blob[pos + 4 : pos + 4 + n].decode("utf-8")
            pos += 4 + n
            table[rid] = np.frombuffer(blob, dtype="<f8", count=table.dim, offset=pos).copy()
            pos += 8 * table.dim
        if pos != len(blob):
            raise ValueError(f"{source}: trailing bytes in embedding table")
        return table

    def save(self, path):
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), source=str(path))


def embed_corpus(checkpoint, manifest, features):
    """Embed every record of the checkpoint's segment kind, one record at a time."""
    if features.config.config_hash() != checkpoint.feature_config.config_hash():
        raise ValueError("feature archive config does not match the checkpoint")
    net = checkpoint.network()
    table = EmbeddingTable(checkpoint.kind, checkpoint.config.embedding_dim)
    for r in manifest.select(kind=checkpoint.kind):
        if r.record_id not in features:
            raise ValueError(f"no features for record {r.record_id!r}")
        table[r.record_id] = embed(net, cmvn_apply(checkpoint.cmvn, features[r.record_id]))
    return table


# --- estimator -----------------------------------------------------------------


def _as_sequences(X):
    seqs = []
    for x in X:
        data = x.data if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError(f"each sample must be a (frames >= 1, dims) matrix, got {data.shape}")
        seqs.append(data)
    if not seqs:
        raise ValueError("empty input")
    if len({s.shape[1] for s in seqs}) != 1:
        raise ValueError("all samples must share the feature dimension")
    return seqs


class BiGRUEmbedder(ClassifierMixin, TransformerMixin, BaseEstimator):
    """scikit-learn wrapper: ``fit`` trains, ``transform`` embeds, ``predict`` classifies.

    ``X`` is a sequence of normalized ``(frames, dims)`` matrices (or
    :class:`FeatureMatrix`), ``y`` any hashable labels.
    """

    def __init__(self, num_layers=3, hidden_units=400, embedding_dim=128, dropout=0.5,
                 learning_rate=0.001, weight_decay=0.0005, batch_size=256, epochs=5,
                 pairs_per_sample=4, task_weight=0.5, pooling="last", random_state=0):
        self.num_layers = num_layers
        self.hidden_units = hidden_units
        self.embedding_dim = embedding_dim
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.pairs_per_sample = pairs_per_sample
        self.task_weight = task_weight
        self.pooling = pooling
        self.random_state = random_state

    def _config(self, num_classes):
        params = self.get_params()
        seed = params.pop("random_state")
        names = {f.name for f in fields(ExtractorConfig)}
        return ExtractorConfig(num_classes=num_classes, seed=seed,
                               **{k: v for k, v in params.items() if k in names})

    def fit(self, X, y):
        seqs = _as_sequences(X)
        y = np.asarray(y)
        if y.shape[0] != len(seqs):
            raise ValueError(f"{len(seqs)} samples but {y.shape[0]} labels")
        self.classes_, targets = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("at least two classes are required")
        cfg = self._config(self.classes_.size)
        self.n_features_in_ = seqs[0].shape[1]
        self.net_, self.training_log_ = fit_network(seqs, targets, cfg, self.n_features_in_)
        return self

    def transform(self, X):
        check_is_fitted(self, "net_")
        return np.stack([embed(self.net_, s) for s in _as_sequences(X)])

    def decision_function(self, X):
        check_is_fitted(self, "net_")
        return self.net_.classifier.forward(self.transform(X))

    def predict_proba(self, X):
        logits = self.decision_function(X)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def relation_score(self, X_test, X_ref):
        """Pairwise relation score of aligned test/reference samples."""
        a, b = self.transform(X_test), self.transform(X_ref)
        W, bias = self.net_.relation_weights
        return sigmoid((a - b) ** 2 @ W + bias)
