"""Deterministic source-filter generator for small C/CV corpora.

Each token is ``[lead silence][consonant][vowel][tail silence]``.  Consonant
classes differ by manner (stop burst, frication, voiced glide, nasal murmur)
and spectral band; vowels are harmonic sources shaped by formant envelopes.
The first ``transition_ms`` of every vowel glides from the consonant's locus
frequencies to the vowel targets, so the vowel carries a trace of the
preceding consonant.  ``consonant_corruption`` masks the consonant interval of
a fraction of tokens with broadband noise while leaving the vowel intact.
"""

from dataclasses import dataclass, fields

import numpy as np

from .corpus import Group, SegmentKind, SegmentRecord, Waveform, build_manifest, round_half_up


@dataclass(frozen=True)
class ConsonantRecipe:
    manner: str
    band: tuple
    duration: float
    level: float
    locus: tuple


CONSONANTS = {
    "p": ConsonantRecipe("stop", (300.0, 1500.0), 0.07, 0.6, (300.0, 800.0, 2200.0)),
    "t": ConsonantRecipe("stop", (3000.0, 6000.0), 0.07, 0.5, (300.0, 1800.0, 2700.0)),
    "k": ConsonantRecipe("stop", (1500.0, 3000.0), 0.08, 0.6, (300.0, 2300.0, 2500.0)),
    "s": ConsonantRecipe("fricative", (4000.0, 7500.0), 0.12, 0.5, (350.0, 1700.0, 2700.0)),
    "f": ConsonantRecipe("fricative", (1200.0, 6500.0), 0.11, 0.2, (350.0, 1000.0, 2300.0)),
    "h": ConsonantRecipe("fricative", (600.0, 3500.0), 0.09, 0.25, (450.0, 1500.0, 2500.0)),
    "l": ConsonantRecipe("glide", (0.0, 0.0), 0.08, 0.7, (350.0, 1100.0, 2800.0)),
    "j": ConsonantRecipe("glide", (0.0, 0.0), 0.08, 0.7, (280.0, 2200.0, 3000.0)),
    "w": ConsonantRecipe("glide", (0.0, 0.0), 0.08, 0.7, (300.0, 700.0, 2200.0)),
    "m": ConsonantRecipe("nasal", (0.0, 0.0), 0.08, 0.4, (250.0, 900.0, 2200.0)),
    "n": ConsonantRecipe("nasal", (0.0, 0.0), 0.08, 0.4, (250.0, 1700.0, 2600.0)),
}

VOWELS = {
    "a": (800.0, 1250.0, 2700.0),
    "i": (300.0, 2300.0, 3000.0),
    "u": (330.0, 800.0, 2300.0),
    "e": (500.0, 1900.0, 2700.0),
    "o": (500.0, 900.0, 2500.0),
}

_BANDWIDTHS = np.array([90.0, 110.0, 170.0])
_FORMANT_GAINS = np.array([1.0, 0.6, 0.3])


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings; ``tokens_per_class`` counts tokens per C+V class."""

    consonants: tuple = ("p", "s", "l", "k")
    vowels: tuple = ("a", "i", "u")
    tokens_per_class: int = 30
    sample_rate: int = 16000
    test_fraction: float = 0.3
    atypical_rate: float = 0.1
    n_train_speakers: int = 6
    n_test_speakers: int = 3
    n_atypical_speakers: int = 3
    vowel_duration: tuple = (0.16, 0.24)
    consonant_scale: tuple = (0.85, 1.15)
    transition_ms: float = 60.0
    transition_strength: float = 1.0
    formant_jitter: float = 0.03
    noise_db: float = -45.0
    consonant_corruption: float = 0.0
    corruption_snr_db: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "consonants", tuple(self.consonants))
        object.__setattr__(self, "vowels", tuple(self.vowels))
        object.__setattr__(self, "vowel_duration", tuple(float(x) for x in self.vowel_duration))
        object.__setattr__(self, "consonant_scale", tuple(float(x) for x in self.consonant_scale))
        self.validate()

    def validate(self):
        if len(set(self.consonants)) < 2:
            raise ValueError("at least two distinct consonant classes are required")
        if len(set(self.consonants)) != len(self.consonants):
            raise ValueError("consonant classes must be distinct")
        unknown = [c for c in self.consonants if c not in CONSONANTS]
        if unknown:
            raise ValueError(f"unknown consonant classes {unknown}; known: {sorted(CONSONANTS)}")
        if not self.vowels or len(set(self.vowels)) != len(self.vowels):
            raise ValueError("at least one vowel class, without duplicates, is required")
        unknown = [v for v in self.vowels if v not in VOWELS]
        if unknown:
            raise ValueError(f"unknown vowel classes {unknown}; known: {sorted(VOWELS)}")
        if self.tokens_per_class < 1:
            raise ValueError("tokens_per_class must be at least 1")
        if self.sample_rate < 16000:
            raise ValueError("sample_rate must be at least 16000 Hz")
        if not (0 <= self.test_fraction <= 1 and 0 <= self.atypical_rate <= 1):
            raise ValueError("test_fraction and atypical_rate must lie in [0, 1]")
        if self.test_fraction + self.atypical_rate > 1:
            raise ValueError("test_fraction + atypical_rate must not exceed 1")
        if min(self.n_train_speakers, self.n_test_speakers, self.n_atypical_speakers) < 1:
            raise ValueError("speaker counts must be positive")
        lo, hi = self.vowel_duration
        if not (0.05 <= lo <= hi):
            raise ValueError("vowel_duration must be an increasing range of at least 50 ms")
        lo, hi = self.consonant_scale
        if not (0.5 <= lo <= hi <= 2.0):
            raise ValueError("consonant_scale must be a range within [0.5, 2]")
        if not (0 <= self.consonant_corruption <= 1):
            raise ValueError("consonant_corruption must lie in [0, 1]")
        if not (0 <= self.transition_strength <= 1):
            raise ValueError("transition_strength must lie in [0, 1]")

    @classmethod
    def from_mapping(cls, mapping):
        """Build from string values, e.g. a parsed key=value config file."""
        kwargs = {}
        types = {f.name: f.default for f in fields(cls)}
        for key, value in mapping.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown synth setting {key!r}")
            default = types[key]
            if not isinstance(value, str):
                kwargs[key] = value
            elif isinstance(default, tuple):
                items = [v.strip() for v in value.split(",") if v.strip()]
                if default and isinstance(default[0], float):
                    items = [float(v) for v in items]
                kwargs[key] = tuple(items)
            else:
                kwargs[key] = type(default)(value)
        return cls(**kwargs)


# Consonant cue masked in 60% of tokens, weaker and noisier vowel transitions:
# neither C nor CV scores separate the classes alone, so fusion has work to do.
PRESETS = {
    "default": {},
    "corrupted": {
        "consonant_corruption": 0.6,
        "corruption_snr_db": -5.0,
        "transition_strength": 0.3,
        "formant_jitter": 0.06,
    },
}


def preset(name, **overrides):
    """``SynthConfig`` for a named preset, with keyword overrides."""
    if name not in PRESETS:
        raise ValueError(f"unknown synth preset {name!r}; known: {sorted(PRESETS)}")
    return SynthConfig(**{**PRESETS[name], **overrides})


def _band_noise(n, fs, lo, hi, rng, edge=150.0):
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    rise = np.clip((freqs - (lo - edge)) / edge, 0.0, 1.0)
    fall = np.clip(((hi + edge) - freqs) / edge, 0.0, 1.0)
    gain = np.sin(0.5 * np.pi * rise) * np.sin(0.5 * np.pi * fall)
    out = np.fft.irfft(spec * gain, n)
    rms = np.sqrt(np.mean(out**2))
    return out / rms if rms > 0 else out


def _voiced(f0, formants, fs, rng, bandwidths=_BANDWIDTHS):
    """Harmonic source shaped by time-varying Gaussian formant envelopes."""
    n = f0.shape[0]
    phase = 2.0 * np.pi * np.cumsum(f0) / fs
    n_harm = int((0.5 * fs - 300.0) // f0.min())
    k = np.arange(1, n_harm + 1)[:, None]
    fk = k * f0[None, :]
    env = np.zeros_like(fk)
    for j in range(formants.shape[0]):
        env += _FORMANT_GAINS[j] * np.exp(-0.5 * ((fk - formants[j][None, :]) / bandwidths[j]) ** 2)
    env *= fk < 0.5 * fs - 100.0
    offsets = rng.uniform(0.0, 2.0 * np.pi, size=(n_harm, 1))
    out = np.sum(env / k * np.sin(k * phase[None, :] + offsets), axis=0)
    rms = np.sqrt(np.mean(out**2))
    return out / rms if rms > 0 else out


def _ramp(n, fs, rise_ms, fall_ms):
    env = np.ones(n)
    r = min(n, max(1, int(rise_ms * fs / 1000)))
    f = min(n, max(1, int(fall_ms * fs / 1000)))
    env[:r] *= 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
    env[n - f :] *= 0.5 + 0.5 * np.cos(np.pi * np.arange(f) / f)
    return env


def _consonant(recipe, n, fs, f0, locus, rng):
    if recipe.manner == "stop":
        closure = int(0.5 * n)
        burst = np.zeros(n)
        m = n - closure
        t = np.arange(m) / fs
        noise = _band_noise(m, fs, *recipe.band, rng)
        burst[closure:] = noise * (np.exp(-t / 0.012) + 0.1)
        return recipe.level * burst
    if recipe.manner == "fricative":
        noise = _band_noise(n, fs, *recipe.band, rng)
        return recipe.level * noise * _ramp(n, fs, 15, 10)
    formants = np.repeat(np.asarray(locus)[:, None], n, axis=1)
    if recipe.manner == "glide":
        return recipe.level * _voiced(f0, formants, fs, rng) * _ramp(n, fs, 10, 1)
    wide = _BANDWIDTHS * np.array([1.0, 2.0, 2.0])
    return recipe.level * _voiced(f0, formants, fs, rng, bandwidths=wide) * _ramp(n, fs, 10, 1)


def render_token(consonant, vowel, formant_scale, f0_mean, rng, cfg):
    """Return (samples, consonant_samples, vowel_samples, lead_samples)."""
    fs = cfg.sample_rate
    recipe = CONSONANTS[consonant]
    n_lead = round_half_up(0.03 * fs)
    n_c = max(round_half_up(recipe.duration * rng.uniform(*cfg.consonant_scale) * fs), 1)
    n_v = round_half_up(rng.uniform(*cfg.vowel_duration) * fs)
    jitter = 1.0 + cfg.formant_jitter * rng.standard_normal(3)
    target = np.asarray(VOWELS[vowel]) * formant_scale * jitter
    locus = np.asarray(recipe.locus) * formant_scale
    onset = target + cfg.transition_strength * (locus - target)

    f0_c = np.full(n_c, f0_mean * 1.05)
    cons = _consonant(recipe, n_c, fs, f0_c, locus, rng)

    t = np.arange(n_v) / fs
    frac = np.clip(t / (cfg.transition_ms / 1000.0), 0.0, 1.0)
    shape = 0.5 - 0.5 * np.cos(np.pi * frac)
    formants = onset[:, None] + (target - onset)[:, None] * shape[None, :]
    f0_v = f0_mean * (1.05 - 0.1 * t / t[-1])
    vowel_sig = _voiced(f0_v, formants, fs, rng) * _ramp(n_v, fs, 8, 30)

    if rng.random() < cfg.consonant_corruption:
        rms_c = np.sqrt(np.mean(cons**2))
        mask = _band_noise(n_c, fs, 200.0, 7000.0, rng)
        cons = cons + mask * rms_c * 10.0 ** (-cfg.corruption_snr_db / 20.0)

    n_tail = round_half_up(0.03 * fs)
    signal = np.concatenate([np.zeros(n_lead), cons, vowel_sig, np.zeros(n_tail)])
    signal = 0.8 * signal / np.max(np.abs(signal))
    signal += 10.0 ** (cfg.noise_db / 20.0) * rng.standard_normal(signal.shape[0])
    return np.clip(signal, -1.0, 1.0), n_c, n_v, n_lead


def _speakers(seed, tag, count):
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, 1, tag, i])
        out.append((rng.uniform(0.94, 1.08), rng.uniform(220.0, 300.0)))
    return out


def synth_cv_corpus(cfg=None, seed=0):
    """Generate ``(waveforms, manifest)`` deterministically from ``(cfg, seed)``.

    Every token yields one C and one CV record.  Within each consonant+vowel
    class, tokens are split into TRAIN_TD, TEST_TD and TEST_ATYPICAL; atypical
    tokens are produced with a different consonant class while keeping the
    prompted one as ``expected_consonant``.
    """
    cfg = SynthConfig() if cfg is None else cfg
    fs = cfg.sample_rate
    groups = {
        Group.TRAIN_TD: ("trn", _speakers(seed, 0, cfg.n_train_speakers)),
        Group.TEST_TD: ("tst", _speakers(seed, 1, cfg.n_test_speakers)),
        Group.TEST_ATYPICAL: ("aty", _speakers(seed, 2, cfg.n_atypical_speakers)),
    }
    n = cfg.tokens_per_class
    n_atyp = round_half_up(cfg.atypical_rate * n)
    n_test = round_half_up(cfg.test_fraction * n)
    n_train = n - n_test - n_atyp
    if n_train < 0:
        raise ValueError("test_fraction and atypical_rate leave no room for training tokens")
    plan = [Group.TRAIN_TD] * n_train + [Group.TEST_TD] * n_test + [Group.TEST_ATYPICAL] * n_atyp

    waveforms = {}
    records = []
    counters = {g: 0 for g in groups}
    serial = 0
    for ci, prompted in enumerate(cfg.consonants):
        for vi, vowel in enumerate(cfg.vowels):
            for ti, group in enumerate(plan):
                rng = np.random.default_rng([seed, 2, ci, vi, ti])
                produced = prompted
                if group is Group.TEST_ATYPICAL:
                    others = [c for c in cfg.consonants if c != prompted]
                    produced = others[int(rng.integers(len(others)))]
                prefix, speakers = groups[group]
                spk = counters[group] % len(speakers)
                counters[group] += 1
                scale, f0 = speakers[spk]
                samples, n_c, n_v, n_lead = render_token(produced, vowel, scale, f0, rng, cfg)
                audio_ref = f"tok{serial:05d}.wav"
                serial += 1
                waveforms[audio_ref] = Waveform(samples, fs)
                common = dict(
                    audio_ref=audio_ref,
                    sample_rate=fs,
                    start=n_lead / fs,
                    speaker_id=f"{prefix}{spk:02d}",
                    consonant_label=produced,
                    group=group,
                    expected_consonant=prompted,
                )
                records.append(
                    SegmentRecord(
                        end=(n_lead + n_c) / fs, vowel_label=None, segment_kind=SegmentKind.C, **common
                    )
                )
                records.append(
                    SegmentRecord(
                        end=(n_lead + n_c + n_v) / fs,
                        vowel_label=vowel,
                        segment_kind=SegmentKind.CV,
                        **common,
                    )
                )
    consonant_inventory = tuple(cfg.consonants)
    return waveforms, build_manifest(records, consonant_inventory=consonant_inventory)
