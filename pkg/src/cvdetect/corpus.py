"""Segment records, manifest files, waveform access and speed perturbation.

Manifest format
---------------
UTF-8 text, one record per line, ten tab-separated ``name=value`` fields in
this fixed order::

    audio_ref sample_rate start end speaker_id consonant vowel kind group expected_consonant

``start``/``end`` are seconds, ``vowel`` is ``-`` for C segments, ``kind`` is
``C`` or ``CV`` and ``group`` one of ``TRAIN_TD``, ``TEST_TD``,
``TEST_ATYPICAL``.  Lines starting with ``#`` are comments, except the two
directives ``#@consonants`` and ``#@cv`` which declare the label inventories
(tab-separated labels; CV labels are written ``consonant+vowel``).  Declared
inventories fix the class-index order used by the extractors.
"""

import enum
import io
import math
import os
import re
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

FIELDS = (
    "audio_ref",
    "sample_rate",
    "start",
    "end",
    "speaker_id",
    "consonant",
    "vowel",
    "kind",
    "group",
    "expected_consonant",
)
WAV_SAMPLE_RATE = 16000
SPEED_SUFFIX = "~sp"
_LABEL_RE = re.compile(r"^[^\s=+,#]+$")


class ManifestError(ValueError):
    """Malformed or inconsistent manifest content."""


class SegmentKind(str, enum.Enum):
    C = "C"
    CV = "CV"


class Group(str, enum.Enum):
    TRAIN_TD = "TRAIN_TD"
    TEST_TD = "TEST_TD"
    TEST_ATYPICAL = "TEST_ATYPICAL"


def round_half_up(x):
    return int(math.floor(x + 0.5))


def cv_label(consonant, vowel):
    return f"{consonant}+{vowel}"


@dataclass(frozen=True)
class SegmentRecord:
    """One labeled C or CV segment inside an audio file."""

    audio_ref: str
    sample_rate: int
    start: float
    end: float
    speaker_id: str
    consonant_label: str
    vowel_label: str | None
    segment_kind: SegmentKind
    group: Group
    expected_consonant: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "segment_kind", SegmentKind(self.segment_kind))
        object.__setattr__(self, "group", Group(self.group))
        if self.expected_consonant is None and self.group is not Group.TEST_ATYPICAL:
            object.__setattr__(self, "expected_consonant", self.consonant_label)
        self.validate()

    def validate(self):
        where = f"record {self.record_id!r}"
        if not self.audio_ref or "\t" in self.audio_ref or "\n" in self.audio_ref:
            raise ManifestError(f"{where}: invalid audio_ref")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ManifestError(f"{where}: sample_rate must be a positive integer")
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise ManifestError(f"{where}: boundaries must be finite")
        if self.start < 0:
            raise ManifestError(f"{where}: start {self.start} is negative")
        if self.end <= self.start:
            raise ManifestError(f"{where}: end {self.end} <= start {self.start}")
        if not _LABEL_RE.match(self.speaker_id):
            raise ManifestError(f"{where}: invalid speaker_id {self.speaker_id!r}")
        for name in ("consonant_label", "expected_consonant"):
            value = getattr(self, name)
            if value is None:
                raise ManifestError(f"{where}: atypical record needs expected_consonant")
            if not _LABEL_RE.match(value):
                raise ManifestError(f"{where}: invalid {name} {value!r}")
        if self.segment_kind is SegmentKind.CV:
            if self.vowel_label is None:
                raise ManifestError(f"{where}: CV record is missing its vowel")
            if not _LABEL_RE.match(self.vowel_label):
                raise ManifestError(f"{where}: invalid vowel {self.vowel_label!r}")
        elif self.vowel_label is not None:
            raise ManifestError(f"{where}: C record must not carry a vowel")
        if self.group is not Group.TEST_ATYPICAL and self.expected_consonant != self.consonant_label:
            raise ManifestError(
                f"{where}: typical records must have expected_consonant == consonant"
            )

    @property
    def start_sample(self):
        return round_half_up(self.start * self.sample_rate)

    @property
    def end_sample(self):
        return round_half_up(self.end * self.sample_rate)

    @property
    def token_id(self):
        """Identifier shared by the C and CV segments of one production."""
        return f"{self.audio_ref}@{round_half_up(self.start * self.sample_rate)}"

    @property
    def record_id(self):
        return f"{self.token_id}/{self.segment_kind.value}"

    @property
    def class_label(self):
        """Produced category: the consonant for C, consonant+vowel for CV."""
        if self.segment_kind is SegmentKind.CV:
            return cv_label(self.consonant_label, self.vowel_label)
        return self.consonant_label

    @property
    def expected_label(self):
        if self.segment_kind is SegmentKind.CV:
            return cv_label(self.expected_consonant, self.vowel_label)
        return self.expected_consonant


@dataclass(frozen=True)
class CorpusManifest:
    records: tuple
    consonant_inventory: tuple = field(default=())
    cv_inventory: tuple = field(default=())

    def __len__(self):
        return len(self.records)

    def inventory(self, kind):
        kind = SegmentKind(kind)
        return self.cv_inventory if kind is SegmentKind.CV else self.consonant_inventory

    def select(self, kind=None, groups=None):
        kind = None if kind is None else SegmentKind(kind)
        groups = None if groups is None else {Group(g) for g in groups}
        return [
            r
            for r in self.records
            if (kind is None or r.segment_kind is kind) and (groups is None or r.group in groups)
        ]


def build_manifest(records, consonant_inventory=None, cv_inventory=None):
    """Construct a manifest, deriving inventories and checking declared ones.

    Derived inventories are sorted.  A declared consonant inventory may list
    consonants that never occur; a declared CV inventory must match the
    consonant+vowel pairs of the CV records exactly.
    """
    records = tuple(records)
    seen = set()
    for r in records:
        if r.record_id in seen:
            raise ManifestError(f"duplicate record {r.record_id!r}")
        seen.add(r.record_id)
    used_consonants = set()
    used_cv = set()
    for r in records:
        used_consonants.update((r.consonant_label, r.expected_consonant))
        if r.segment_kind is SegmentKind.CV:
            used_cv.add(r.class_label)
    if consonant_inventory is None:
        consonant_inventory = tuple(sorted(used_consonants))
    else:
        consonant_inventory = _check_inventory(consonant_inventory, "consonant")
        missing = used_consonants - set(consonant_inventory)
        if missing:
            raise ManifestError(f"consonants {sorted(missing)} not in declared inventory")
    if cv_inventory is None:
        cv_inventory = tuple(sorted(used_cv))
    else:
        cv_inventory = _check_inventory(cv_inventory, "cv")
        if set(cv_inventory) != used_cv:
            extra = sorted(set(cv_inventory) - used_cv)
            missing = sorted(used_cv - set(cv_inventory))
            raise ManifestError(
                f"declared CV inventory mismatch (unused: {extra}, undeclared: {missing})"
            )
    return CorpusManifest(records, tuple(consonant_inventory), tuple(cv_inventory))


def _check_inventory(labels, name):
    labels = tuple(labels)
    if len(set(labels)) != len(labels):
        raise ManifestError(f"{name} inventory contains duplicates")
    return labels


def _format_float(x):
    return repr(float(x))


def format_record(r):
    values = (
        r.audio_ref,
        str(int(r.sample_rate)),
        _format_float(r.start),
        _format_float(r.end),
        r.speaker_id,
        r.consonant_label,
        r.vowel_label if r.vowel_label is not None else "-",
        r.segment_kind.value,
        r.group.value,
        r.expected_consonant,
    )
    return "\t".join(f"{k}={v}" for k, v in zip(FIELDS, values))


def manifest_text(manifest):
    lines = [
        "# cvdetect segment manifest",
        "# fields: " + " ".join(FIELDS),
        "#@consonants\t" + "\t".join(manifest.consonant_inventory),
        "#@cv\t" + "\t".join(manifest.cv_inventory),
    ]
    lines.extend(format_record(r) for r in manifest.records)
    return "\n".join(lines) + "\n"


def save_manifest(manifest, path):
    atomic_write_bytes(path, manifest_text(manifest).encode("utf-8"))


def parse_manifest(text, source="<manifest>"):
    records = []
    declared = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if line.startswith("#@"):
            name, *labels = line[2:].split("\t")
            if name not in ("consonants", "cv"):
                raise ManifestError(f"{source}:{lineno}: unknown directive #@{name}")
            declared[name] = tuple(x for x in labels if x)
            continue
        if line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != len(FIELDS):
            raise ManifestError(
                f"{source}:{lineno}: expected {len(FIELDS)} fields, found {len(parts)}"
            )
        values = {}
        for expected, part in zip(FIELDS, parts):
            key, sep, value = part.partition("=")
            if not sep or key != expected:
                raise ManifestError(f"{source}:{lineno}: expected field {expected!r}, got {part!r}")
            values[key] = value
        try:
            vowel = None if values["vowel"] == "-" else values["vowel"]
            try:
                kind = SegmentKind(values["kind"])
            except ValueError:
                raise ManifestError(f"unknown segment kind {values['kind']!r}") from None
            try:
                group = Group(values["group"])
            except ValueError:
                raise ManifestError(f"unknown group {values['group']!r}") from None
            try:
                rate = int(values["sample_rate"])
                start = float(values["start"])
                end = float(values["end"])
            except ValueError as exc:
                raise ManifestError(f"bad number ({exc})") from None
            records.append(
                SegmentRecord(
                    audio_ref=values["audio_ref"],
                    sample_rate=rate,
                    start=start,
                    end=end,
                    speaker_id=values["speaker_id"],
                    consonant_label=values["consonant"],
                    vowel_label=vowel,
                    segment_kind=kind,
                    group=group,
                    expected_consonant=values["expected_consonant"] or None,
                )
            )
        except ManifestError as exc:
            raise ManifestError(f"{source}:{lineno}: {exc}") from None
    if not records:
        raise ManifestError(f"{source}: no records")
    return build_manifest(records, declared.get("consonants"), declared.get("cv"))


def load_manifest(path):
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_manifest(text, source=str(path))


def atomic_write_bytes(path, data):
    """Write ``data`` to a sibling temp file, then rename it into place."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# --- waveforms -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be mono (1-D), got shape {samples.shape}")
        if samples.size == 0:
            raise ValueError("waveform is empty")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return len(self) / self.sample_rate


def read_wav(path):
    """Read 16 kHz, 16-bit PCM, mono WAV as floats in [-1, 1)."""
    with wave.open(str(path), "rb") as wf:
        channels, width, rate = wf.getnchannels(), wf.getsampwidth(), wf.getframerate()
        if channels != 1 or width != 2 or rate != WAV_SAMPLE_RATE:
            raise ValueError(
                f"{path}: unsupported audio ({channels} ch, {8 * width}-bit, {rate} Hz); "
                f"expected mono 16-bit PCM at {WAV_SAMPLE_RATE} Hz"
            )
        data = wf.readframes(wf.getnframes())
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def wav_bytes(w):
    if w.sample_rate != WAV_SAMPLE_RATE:
        raise ValueError(f"only {WAV_SAMPLE_RATE} Hz audio can be written, got {w.sample_rate}")
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(WAV_SAMPLE_RATE)
        wf.writeframes(pcm.tobytes())
    return buf.getvalue()


def write_wav(path, w):
    atomic_write_bytes(path, wav_bytes(w))


def slice_segment(w, r):
    """Samples ``[round(start*rate), round(end*rate))`` of ``w``."""
    if w.sample_rate != r.sample_rate:
        raise ValueError(
            f"record {r.record_id!r} expects {r.sample_rate} Hz audio, got {w.sample_rate} Hz"
        )
    i0, i1 = r.start_sample, r.end_sample
    if i0 < 0 or i1 > len(w) or i1 <= i0:
        raise ValueError(
            f"record {r.record_id!r}: samples [{i0}, {i1}) outside audio of {len(w)} samples"
        )
    return Waveform(w.samples[i0:i1].copy(), w.sample_rate)


def speed_perturb(w, factor, zeros=16):
    """Resample ``w`` so that it plays ``factor`` times faster.

    Band-limited interpolation with a Hann-windowed sinc kernel spanning
    ``zeros`` zero crossings per side.  For ``factor > 1`` the kernel cutoff
    is lowered to the new Nyquist frequency.
    """
    factor = float(factor)
    if not (0.5 < factor < 2.0):
        raise ValueError(f"speed factor must lie in (0.5, 2.0), got {factor}")
    n_in = len(w)
    n_out = round_half_up(n_in / factor)
    if n_out < 1:
        raise ValueError("speed perturbation would produce an empty waveform")
    if factor == 1.0:
        return Waveform(w.samples.copy(), w.sample_rate)
    x = w.samples
    cutoff = min(1.0, 1.0 / factor)
    half = int(math.ceil(zeros / cutoff))
    positions = np.arange(n_out) * factor
    base = np.floor(positions).astype(np.int64)
    offsets = np.arange(-half + 1, half + 1)
    out = np.zeros(n_out)
    # chunked to bound memory on long recordings
    for lo in range(0, n_out, 8192):
        hi = min(lo + 8192, n_out)
        idx = base[lo:hi, None] + offsets[None, :]
        dist = positions[lo:hi, None] - idx
        kernel = cutoff * np.sinc(cutoff * dist) * (0.5 + 0.5 * np.cos(np.pi * dist / half))
        kernel[np.abs(dist) >= half] = 0.0
        valid = (idx >= 0) & (idx < n_in)
        taps = np.where(valid, x[np.clip(idx, 0, n_in - 1)], 0.0)
        out[lo:hi] = np.sum(taps * kernel, axis=1)
    return Waveform(np.clip(out, -1.0, 1.0), w.sample_rate)


def speed_ref(audio_ref, factor):
    return f"{audio_ref}{SPEED_SUFFIX}{float(factor)!r}"


def parse_speed_ref(audio_ref):
    base, sep, factor = audio_ref.rpartition(SPEED_SUFFIX)
    if not sep:
        return audio_ref, None
    return base, float(factor)


def augment_training_set(manifest, factors=(0.9, 1.1)):
    """Append one speed-perturbed copy of every TRAIN_TD record per factor.

    Perturbed copies reference ``<audio_ref>~sp<factor>`` with boundaries
    divided by the factor; test records are never touched.
    """
    factors = [float(f) for f in factors]
    for f in factors:
        if not (0.5 < f < 2.0):
            raise ValueError(f"speed factor must lie in (0.5, 2.0), got {f}")
    if not factors:
        return manifest
    train = [r for r in manifest.records if r.group is Group.TRAIN_TD]
    extra = []
    for f in factors:
        for r in train:
            extra.append(
                replace(r, audio_ref=speed_ref(r.audio_ref, f), start=r.start / f, end=r.end / f)
            )
    return CorpusManifest(
        manifest.records + tuple(extra), manifest.consonant_inventory, manifest.cv_inventory
    )


class AudioStore:
    """Resolve ``audio_ref`` strings to waveforms.

    References are looked up in an in-memory mapping first, then as paths
    relative to ``root``.  A ``~sp<factor>`` suffix yields the speed-perturbed
    version of the base recording.  Results are cached.
    """

    def __init__(self, root=None, waveforms=None):
        self.root = Path(root) if root is not None else None
        self._memory = dict(waveforms or {})
        self._cache = {}

    def __getitem__(self, audio_ref):
        if audio_ref in self._cache:
            return self._cache[audio_ref]
        base, factor = parse_speed_ref(audio_ref)
        if factor is not None:
            w = speed_perturb(self[base], factor)
        elif audio_ref in self._memory:
            w = self._memory[audio_ref]
        elif self.root is not None:
            w = read_wav(self.root / audio_ref)
        else:
            raise KeyError(f"unknown audio reference {audio_ref!r}")
        self._cache[audio_ref] = w
        return w

    def segment(self, record):
        return slice_segment(self[record.audio_ref], record)
