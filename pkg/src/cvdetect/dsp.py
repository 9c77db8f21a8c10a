"""Log-mel filterbank features and global mean/variance normalization."""

import functools
import hashlib
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import Waveform, atomic_write_bytes

VARIANCE_FLOOR = 1e-10


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class FeatureConfig:
    """Framing and filterbank settings.  Times in ms, frequencies in Hz."""

    frame_length: float = 25.0
    frame_shift: float = 10.0
    num_mels: int = 80
    fft_size: int = 512
    preemphasis: float = 0.97
    low_freq: float = 20.0
    high_freq: float = 7600.0
    log_floor: float = 1e-10

    def frame_samples(self, sample_rate):
        return int(round(self.frame_length * sample_rate / 1000.0))

    def shift_samples(self, sample_rate):
        return int(round(self.frame_shift * sample_rate / 1000.0))

    def validate(self, sample_rate=16000):
        if self.frame_shift <= 0 or self.frame_length <= 0:
            raise ValueError("frame_length and frame_shift must be positive")
        if self.frame_shift > self.frame_length:
            raise ValueError("frame_shift must not exceed frame_length")
        if self.num_mels < 1:
            raise ValueError("num_mels must be positive")
        if self.fft_size < self.frame_samples(sample_rate):
            raise ValueError(
                f"fft_size {self.fft_size} is shorter than a frame "
                f"({self.frame_samples(sample_rate)} samples)"
            )
        if not (0.0 <= self.preemphasis < 1.0):
            raise ValueError("preemphasis must lie in [0, 1)")
        if not (0.0 <= self.low_freq < self.high_freq <= sample_rate / 2):
            raise ValueError("need 0 <= low_freq < high_freq <= Nyquist")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    data: np.ndarray
    config: FeatureConfig
    normalized: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError(f"feature matrix must be frames x dims with frames >= 1, got {data.shape}")
        if data.shape[1] != self.config.num_mels:
            raise ValueError(f"{data.shape[1]} feature dims but config has {self.config.num_mels}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature matrix contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def num_frames(self):
        return self.data.shape[0]


def num_frames(n_samples, cfg, sample_rate):
    flen, shift = cfg.frame_samples(sample_rate), cfg.shift_samples(sample_rate)
    if n_samples < flen:
        raise ValueError(f"waveform of {n_samples} samples is shorter than one frame ({flen})")
    return 1 + (n_samples - flen) // shift


@functools.lru_cache(maxsize=16)
def mel_filterbank(num_mels, fft_size, sample_rate, low_freq, high_freq):
    """Triangular filters over rfft bins, shape ``(num_mels, fft_size // 2 + 1)``.

    Filter edges are equally spaced on the mel scale; weights are evaluated
    at the exact bin frequencies.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(low_freq), hz_to_mel(high_freq), num_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - left) / (center - left)
    down = (right - freqs[None, :]) / (right - center)
    bank = np.maximum(0.0, np.minimum(up, down))
    bank.setflags(write=False)
    return bank


def mel_center_frequencies(cfg):
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.low_freq), hz_to_mel(cfg.high_freq), cfg.num_mels + 2))
    return edges[1:-1]


def log_mel(w, cfg=None):
    """Log mel filterbank energies of ``w``, one row per frame.

    Pre-emphasis, Hamming window, magnitude spectrum, mel filterbank, then
    ``log(max(energy, log_floor))``.
    """
    cfg = FeatureConfig() if cfg is None else cfg
    rate = w.sample_rate
    cfg.validate(rate)
    x = w.samples
    n = num_frames(x.shape[0], cfg, rate)
    flen, shift = cfg.frame_samples(rate), cfg.shift_samples(rate)
    emph = x.copy()
    emph[1:] -= cfg.preemphasis * x[:-1]
    frames = sliding_window_view(emph, flen)[::shift][:n] * np.hamming(flen)
    spectrum = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1))
    bank = mel_filterbank(cfg.num_mels, cfg.fft_size, rate, cfg.low_freq, cfg.high_freq)
    energy = spectrum @ bank.T
    return FeatureMatrix(np.log(np.maximum(energy, cfg.log_floor)), cfg)


@dataclass(frozen=True, eq=False)
class CmvnStats:
    mean: np.ndarray
    variance: np.ndarray
    frame_count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        var = np.asarray(self.variance, dtype=np.float64)
        if mean.ndim != 1 or mean.shape != var.shape:
            raise ValueError("mean and variance must be vectors of equal length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var)) and np.all(var > 0)):
            raise ValueError("CMVN statistics must be finite with positive variance")
        if self.frame_count < 2:
            raise ValueError("CMVN statistics need at least two frames")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", var)

    @property
    def dim(self):
        return self.mean.shape[0]


def _raw(fm):
    if isinstance(fm, FeatureMatrix):
        if fm.normalized:
            raise ValueError("features are already normalized")
        return fm.data
    return np.asarray(fm, dtype=np.float64)


def cmvn_fit(features):
    """Pooled per-dimension mean and population variance over all frames."""
    mats = [_raw(f) for f in features]
    if not mats:
        raise ValueError("cannot fit CMVN on an empty collection")
    dims = {m.shape[1] for m in mats}
    if len(dims) != 1:
        raise ValueError(f"mixed feature dimensionality {sorted(dims)}")
    stacked = np.concatenate(mats, axis=0)
    if stacked.shape[0] < 2:
        raise ValueError("CMVN needs at least two frames")
    mean = stacked.mean(axis=0)
    var = np.mean((stacked - mean) ** 2, axis=0)
    return CmvnStats(mean, np.maximum(var, VARIANCE_FLOOR), stacked.shape[0])


def cmvn_apply(stats, fm):
    if fm.normalized:
        raise ValueError("features are already normalized")
    if fm.data.shape[1] != stats.dim:
        raise ValueError(f"feature dim {fm.data.shape[1]} does not match CMVN dim {stats.dim}")
    out = (fm.data - stats.mean) / np.sqrt(stats.variance)
    return FeatureMatrix(out, fm.config, normalized=True)


# --- feature archive ---------------------------------------------------------

ARCHIVE_MAGIC = b"CVDFEAT\x00"
ARCHIVE_VERSION = 1


class FeatureArchive:
    """Record id -> raw feature matrix, plus optional CMVN statistics.

    Binary layout (little endian)::

        magic[8] version:u32 header_len:u32 header(JSON)
        count x { id_len:u32 id rows:u32 cols:u32 float32[rows*cols] }
        [ frame_count:u64 mean:f64[dim] variance:f64[dim] ]   if header.cmvn

    Matrices are held as float32 so that a loaded archive re-saves
    byte-identically.
    """

    def __init__(self, config, cmvn=None):
        self.config = config
        self.cmvn = cmvn
        self._data = {}

    def __len__(self):
        return len(self._data)

    def __contains__(self, record_id):
        return record_id in self._data

    def ids(self):
        return list(self._data)

    def add(self, record_id, fm):
        data = fm.data if isinstance(fm, FeatureMatrix) else np.asarray(fm)
        if isinstance(fm, FeatureMatrix) and fm.normalized:
            raise ValueError("archives store unnormalized features")
        if data.ndim != 2 or data.shape[1] != self.config.num_mels:
            raise ValueError(f"{record_id}: matrix shape {data.shape} does not match config")
        self._data[record_id] = np.ascontiguousarray(data, dtype="<f4")

    def __getitem__(self, record_id):
        try:
            data = self._data[record_id]
        except KeyError:
            raise KeyError(f"no features for record {record_id!r}") from None
        return FeatureMatrix(data.astype(np.float64), self.config)

    def to_bytes(self):
        header = {
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "num_mels": self.config.num_mels,
            "count": len(self._data),
            "cmvn": self.cmvn is not None,
        }
        hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
        parts = [ARCHIVE_MAGIC, struct.pack("<II", ARCHIVE_VERSION, len(hbytes)), hbytes]
        for rid, data in self._data.items():
            rb = rid.encode("utf-8")
            parts.append(struct.pack("<I", len(rb)))
            parts.append(rb)
            parts.append(struct.pack("<II", *data.shape))
            parts.append(data.tobytes())
        if self.cmvn is not None:
            parts.append(struct.pack("<Q", self.cmvn.frame_count))
            parts.append(self.cmvn.mean.astype("<f8").tobytes())
            parts.append(self.cmvn.variance.astype("<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob, source="<archive>"):
        if blob[:8] != ARCHIVE_MAGIC:
            raise ValueError(f"{source}: not a feature archive")
        version, hlen = struct.unpack_from("<II", blob, 8)
        if version != ARCHIVE_VERSION:
            raise ValueError(f"{source}: unsupported feature archive version {version}")
        pos = 16
        header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
        pos += hlen
        config = FeatureConfig.from_dict(header["config"])
        if config.config_hash() != header["config_hash"]:
            raise ValueError(f"{source}: feature config hash mismatch")
        archive = cls(config)
        for _ in range(header["count"]):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            rid = blob[pos : pos + n].decode("utf-8")
            pos += n
            rows, cols = struct.unpack_from("<II", blob, pos)
            pos += 8
            size = rows * cols * 4
            data = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=pos).reshape(rows, cols)
            pos += size
            archive._data[rid] = data.copy()
        if header["cmvn"]:
            dim = header["num_mels"]
            (count,) = struct.unpack_from("<Q", blob, pos)
            pos += 8
            mean = np.frombuffer(blob, dtype="<f8", count=dim, offset=pos).copy()
            pos += 8 * dim
            var = np.frombuffer(blob, dtype="<f8", count=dim, offset=pos).copy()
            pos += 8 * dim
            archive.cmvn = CmvnStats(mean, var, int(count))
        if pos != len(blob):
            raise ValueError(f"{source}: trailing bytes in feature archive")
        return archive

    def save(self, path):
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read(), source=str(path))


# --- estimators ----------------------------------------------------------------


class LogMelFilterbank(TransformerMixin, BaseEstimator):
    """Stateless transformer: waveforms -> list of :class:`FeatureMatrix`.

    ``X`` may hold :class:`Waveform` objects or 1-D sample arrays, the latter
    interpreted at ``sample_rate``.
    """

    def __init__(
        self,
        frame_length=25.0,
        frame_shift=10.0,
        num_mels=80,
        fft_size=512,
        preemphasis=0.97,
        low_freq=20.0,
        high_freq=7600.0,
        log_floor=1e-10,
        sample_rate=16000,
    ):
        self.frame_length = frame_length
        self.frame_shift = frame_shift
        self.num_mels = num_mels
        self.fft_size = fft_size
        self.preemphasis = preemphasis
        self.low_freq = low_freq
        self.high_freq = high_freq
        self.log_floor = log_floor
        self.sample_rate = sample_rate

    def feature_config(self):
        params = self.get_params()
        params.pop("sample_rate")
        return FeatureConfig(**params)

    def fit(self, X=None, y=None):
        self.config_ = self.feature_config().validate(self.sample_rate)
        return self

    def transform(self, X):
        cfg = self.feature_config()
        out = []
        for x in X:
            w = x if isinstance(x, Waveform) else Waveform(x, self.sample_rate)
            out.append(log_mel(w, cfg))
        return out

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags


class GlobalCMVN(TransformerMixin, BaseEstimator):
    """Corpus-level mean/variance normalization of feature matrices."""

    def fit(self, X, y=None):
        self.stats_ = cmvn_fit(X)
        self.n_features_in_ = self.stats_.dim
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        out = []
        for fm in X:
            if not isinstance(fm, FeatureMatrix):
                fm = np.asarray(fm, dtype=np.float64)
                fm = FeatureMatrix(fm, FeatureConfig(num_mels=fm.shape[1]))
            out.append(cmvn_apply(self.stats_, fm))
        return out

    def inverse_transform(self, X):
        check_is_fitted(self, "stats_")
        scale = np.sqrt(self.stats_.variance)
        return [FeatureMatrix(fm.data * scale + self.stats_.mean, fm.config) for fm in X]


def featurize_manifest(manifest, store, cfg=None, cmvn_groups=("TRAIN_TD",)):
    """Features for every record of ``manifest`` read through ``store``.

    CMVN statistics are fitted on records whose group is in ``cmvn_groups``
    (training data by default) and attached to the archive.
    """
    cfg = FeatureConfig() if cfg is None else cfg
    archive = FeatureArchive(cfg)
    fit_on = []
    for r in manifest.records:
        fm = log_mel(store.segment(r), cfg)
        archive.add(r.record_id, fm)
        if r.group.value in cmvn_groups:
            fit_on.append(archive[r.record_id])
    if fit_on:
        archive.cmvn = cmvn_fit(fit_on)
    return archive
