"""Desk-scale synthetic corpus with planted, independently controllable
factors.

Every utterance is a harmonic voice source plus one environmental noise at a
target SNR. The factors and how they are planted:

  speaker   - per-speaker fundamental frequency (spaced inside the gender
              band) and a per-speaker high-formant template
  gender    - disjoint f0 bands, so a trivial pitch estimator separates them
  phones    - segments with distinct F1/F2 resonance patterns; per-frame
              target ids are recorded at the 25ms/10ms front-end frame rate
  env_class - one of ten noise generators with distinct long-term spectra
  emotion   - f0 contour slope (falling/flat/rising) crossed with an energy
              modulation rate (none/slow/fast), seven combinations
  sentiment - the slope part alone (negative/neutral/positive)

The generator is a pure function of its spec: identical specs give
bit-identical audio and labels.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from .manifest import EMOTIONS, ENV_CLASSES, GENDERS, Manifest, UtteranceRecord

# emotion -> (f0 contour slope, energy modulation rate Hz, modulation depth);
# fast modulation is also deeper, and modulated classes carry a matching
# vibrato, so the cue is redundantly visible in energy and spectrum
EMOTION_PROSODY = {
    "anger": (-1, 9.0, 0.75),
    "disgust": (-1, 3.0, 0.4),
    "sadness": (-1, 0.0, 0.0),
    "neutral": (0, 0.0, 0.0),
    "fear": (1, 9.0, 0.75),
    "joy": (1, 3.0, 0.4),
    "surprise": (1, 0.0, 0.0),
}
SENTIMENT_BY_SLOPE = {-1: "negative", 0: "neutral", 1: "positive"}
VIBRATO_BY_DEPTH = {0.0: 0.0, 0.4: 0.02, 0.75: 0.035}

CONTOUR_OCTAVE_SPAN = 0.3  # total rise/fall over an utterance, in octaves
VOICE_MAX_HZ = 4000.0  # harmonics above this are dropped
FRAME_WINDOW_S = 0.025  # frame_targets are laid out on this grid
FRAME_SHIFT_S = 0.010

DEFAULT_NOISE_BANK = {
    "air_conditioner": {"kind": "lowpass_noise", "cutoff_hz": 300.0},
    "car_horn": {"kind": "tone_stack", "freqs": (420.0, 520.0), "n_harmonics": 3},
    "children_playing": {"kind": "burst_noise", "band_hz": (2000.0, 3200.0), "burst_hz": 4.0},
    "dog_bark": {"kind": "burst_noise", "band_hz": (600.0, 950.0), "burst_hz": 2.0},
    "drilling": {"kind": "am_noise", "band_hz": (3500.0, 5200.0), "mod_hz": 30.0},
    "engine_idling": {"kind": "harmonic_rumble", "f0_hz": 45.0, "max_hz": 420.0},
    "gun_shot": {"kind": "impulses", "rate_hz": 2.0, "decay_s": 0.05},
    "jackhammer": {"kind": "gated_noise", "band_hz": (1200.0, 1900.0), "gate_hz": 12.0, "duty": 0.35},
    "siren": {"kind": "sweep_tone", "band_hz": (900.0, 1500.0), "sweep_hz": 0.6},
    "street_music": {
        "kind": "tone_sequence",
        "freqs": (220.0, 262.0, 330.0, 392.0, 440.0, 523.0, 660.0),
        "note_s": 0.125,
    },
}


@dataclass(frozen=True)
class SyntheticSpec:
    n_speakers: int = 12
    utterances_per_speaker: int = 20
    f0_ranges_by_gender: dict = field(
        default_factory=lambda: {"male": (85.0, 150.0), "female": (175.0, 260.0)}
    )
    # pool of formant templates, each a tuple of (center_hz, bandwidth_hz);
    # None auto-generates one distinct template per speaker
    formant_templates_per_speaker: tuple | None = None
    noise_bank: dict = field(default_factory=lambda: dict(DEFAULT_NOISE_BANK))
    snr_db: float = 5.0
    phone_inventory_size: int = 8
    utterance_seconds: float = 1.0
    sample_rate: int = 16000
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 1 or self.utterances_per_speaker < 1:
            raise ValueError("need at least one speaker and one utterance per speaker")
        if self.phone_inventory_size < 1:
            raise ValueError("phone_inventory_size must be positive")
        if self.utterance_seconds <= 0.1:
            raise ValueError("utterance_seconds too short to frame")
        for gender in GENDERS:
            if gender not in self.f0_ranges_by_gender:
                raise ValueError(f"f0_ranges_by_gender missing {gender!r}")
        (m_lo, m_hi) = self.f0_ranges_by_gender["male"]
        (f_lo, f_hi) = self.f0_ranges_by_gender["female"]
        if not (m_lo < m_hi and f_lo < f_hi):
            raise ValueError("f0 ranges must be increasing intervals")
        if max(m_lo, f_lo) <= min(m_hi, f_hi):
            raise ValueError("gender f0 intervals must be disjoint")
        unknown = set(self.noise_bank) - set(ENV_CLASSES)
        if unknown:
            raise ValueError(f"noise_bank has unknown env classes: {sorted(unknown)}")


def phone_formants(phone, inventory_size):
    """F1/F2 pair for a phone id, laid out on a grid so ids are acoustically
    distinct."""
    a = max(2, math.ceil(math.sqrt(inventory_size)))
    i, j = phone % a, phone // a
    f1 = 300.0 + 550.0 * i / (a - 1)
    f2 = 950.0 + 1300.0 * (j % a) / (a - 1)
    return ((f1, 90.0), (f2, 120.0))


def _auto_templates(n_speakers):
    """Distinct per-speaker high-formant templates (vocal-tract surrogate)."""
    templates = []
    for i in range(n_speakers):
        scale = 0.90 + 0.20 * (i / max(1, n_speakers - 1))
        templates.append(((2550.0 * scale, 250.0), (3500.0 * scale, 300.0)))
    return tuple(templates)


def _spectral_envelope(freqs_hz, formants):
    env = np.full_like(freqs_hz, 0.03)
    for center, bandwidth in formants:
        env = env + np.exp(-0.5 * ((freqs_hz - center) / bandwidth) ** 2)
    return env


def _segment_phones(n_frames, inventory_size, rng):
    """Random phone segments of 8..16 frames; returns per-frame phone ids."""
    targets = np.empty(n_frames, dtype=np.int64)
    pos = 0
    prev = -1
    while pos < n_frames:
        length = int(rng.integers(8, 17))
        phone = int(rng.integers(0, inventory_size))
        if inventory_size > 1:
            while phone == prev:
                phone = int(rng.integers(0, inventory_size))
        targets[pos : pos + length] = phone
        prev = phone
        pos += length
    return targets


def _synth_voice(spec, f0_base, templates, slope, mod_rate, mod_depth, rng):
    """Harmonic source with formant shaping; returns (samples, frame_targets)."""
    sr = spec.sample_rate
    n = int(round(spec.utterance_seconds * sr))
    win = int(round(FRAME_WINDOW_S * sr))
    shift = int(round(FRAME_SHIFT_S * sr))
    n_frames = 1 + (n - win) // shift

    frame_targets = _segment_phones(n_frames, spec.phone_inventory_size, rng)

    # f0 contour: log-linear rise/fall across the utterance plus jitter and
    # (for modulated emotions) a vibrato locked to the modulation rate
    f0_utt = f0_base * (1.0 + rng.uniform(-0.015, 0.015))
    vibrato = VIBRATO_BY_DEPTH.get(mod_depth, 0.02 * mod_depth)
    t = np.arange(n) / sr
    octave = slope * CONTOUR_OCTAVE_SPAN * (t / t[-1] - 0.5)
    f0 = f0_utt * np.exp2(octave)
    if mod_rate > 0 and vibrato > 0:
        f0 = f0 * (1.0 + vibrato * np.sin(2.0 * np.pi * mod_rate * t))
    phase = 2.0 * np.pi * np.cumsum(f0) / sr

    n_harmonics = max(3, int(VOICE_MAX_HZ / np.max(f0)))
    k = np.arange(1, n_harmonics + 1)

    # per-frame harmonic amplitudes from the phone's formants + speaker template
    frame_centers = (np.arange(n_frames) * shift + win // 2) / sr
    f0_frames = f0_utt * np.exp2(slope * CONTOUR_OCTAVE_SPAN * (frame_centers / t[-1] - 0.5))
    if mod_rate > 0 and vibrato > 0:
        f0_frames = f0_frames * (1.0 + vibrato * np.sin(2.0 * np.pi * mod_rate * frame_centers))
    amps = np.empty((n_frames, n_harmonics))
    for frame in range(n_frames):
        formants = phone_formants(int(frame_targets[frame]), spec.phone_inventory_size) + templates
        harmonic_freqs = k * f0_frames[frame]
        amps[frame] = _spectral_envelope(harmonic_freqs, formants) / k**0.8
        amps[frame][harmonic_freqs > VOICE_MAX_HZ] = 0.0
    # smooth phone transitions over ~3 frames to avoid clicks
    kernel = np.array([0.25, 0.5, 0.25])
    amps = np.apply_along_axis(lambda col: np.convolve(col, kernel, mode="same"), 0, amps)

    voice = np.zeros(n)
    phases = rng.uniform(0, 2 * np.pi, n_harmonics)
    for h in range(n_harmonics):
        a = np.interp(t, frame_centers, amps[:, h])
        voice += a * np.sin(k[h] * phase + phases[h])

    if mod_rate > 0:
        voice *= 1.0 + mod_depth * np.sin(2.0 * np.pi * mod_rate * t)
    ramp = min(int(0.01 * sr), n // 4)
    envelope = np.ones(n)
    envelope[:ramp] = np.linspace(0, 1, ramp)
    envelope[-ramp:] = np.linspace(1, 0, ramp)
    voice *= envelope
    voice /= max(np.sqrt(np.mean(voice**2)), 1e-12)
    return voice, frame_targets


# --- noise generators ------------------------------------------------------


def _bandpass(x, band, sr):
    nyq = sr / 2.0
    lo, hi = band[0] / nyq, min(band[1] / nyq, 0.99)
    b, a = scipy.signal.butter(4, [lo, hi], btype="band")
    return scipy.signal.lfilter(b, a, x)


def _noise_lowpass_noise(n, sr, rng, cutoff_hz=300.0):
    b, a = scipy.signal.butter(4, cutoff_hz / (sr / 2.0))
    return scipy.signal.lfilter(b, a, rng.standard_normal(n))


def _noise_tone_stack(n, sr, rng, freqs=(420.0, 520.0), n_harmonics=3):
    t = np.arange(n) / sr
    out = np.zeros(n)
    for f in freqs:
        for h in range(1, n_harmonics + 1):
            out += np.sin(2 * np.pi * f * h * t + rng.uniform(0, 2 * np.pi)) / h
    return out


def _noise_burst_noise(n, sr, rng, band_hz=(2000.0, 3200.0), burst_hz=4.0):
    base = _bandpass(rng.standard_normal(n), band_hz, sr)
    t = np.arange(n) / sr
    envelope = np.full(n, 0.05)
    n_bursts = max(1, int(round(burst_hz * n / sr)))
    for center in rng.uniform(0, n / sr, n_bursts):
        width = rng.uniform(0.03, 0.08)
        envelope += np.exp(-0.5 * ((t - center) / width) ** 2)
    return base * envelope


def _noise_am_noise(n, sr, rng, band_hz=(3500.0, 5200.0), mod_hz=30.0):
    base = _bandpass(rng.standard_normal(n), band_hz, sr)
    t = np.arange(n) / sr
    return base * (0.5 + 0.5 * np.sin(2 * np.pi * mod_hz * t + rng.uniform(0, 2 * np.pi)))


def _noise_harmonic_rumble(n, sr, rng, f0_hz=45.0, max_hz=420.0):
    t = np.arange(n) / sr
    out = np.zeros(n)
    for h in range(1, int(max_hz / f0_hz) + 1):
        out += np.sin(2 * np.pi * f0_hz * h * t + rng.uniform(0, 2 * np.pi)) / h
    return out * (1.0 + 0.2 * np.sin(2 * np.pi * 1.5 * t))


def _noise_impulses(n, sr, rng, rate_hz=2.0, decay_s=0.05):
    out = np.zeros(n)
    n_impulses = max(1, int(round(rate_hz * n / sr)))
    length = int(3 * decay_s * sr)
    decay = np.exp(-np.arange(length) / (decay_s * sr))
    for start in rng.integers(0, max(1, n - length), n_impulses):
        out[start : start + length] += decay * rng.standard_normal(length)
    return out


def _noise_gated_noise(n, sr, rng, band_hz=(1200.0, 1900.0), gate_hz=12.0, duty=0.35):
    base = _bandpass(rng.standard_normal(n), band_hz, sr)
    t = np.arange(n) / sr
    gate = ((gate_hz * t) % 1.0 < duty).astype(np.float64)
    smooth = int(0.002 * sr)
    gate = np.convolve(gate, np.ones(smooth) / smooth, mode="same") + 0.05
    return base * gate


def _noise_sweep_tone(n, sr, rng, band_hz=(900.0, 1500.0), sweep_hz=0.6):
    t = np.arange(n) / sr
    tri = 2.0 * np.abs((sweep_hz * t + rng.uniform(0, 1)) % 1.0 - 0.5)
    freq = band_hz[0] + (band_hz[1] - band_hz[0]) * tri
    phase = 2 * np.pi * np.cumsum(freq) / sr
    return np.sin(phase) + 0.3 * np.sin(2 * phase)


def _noise_tone_sequence(n, sr, rng, freqs=(220.0, 330.0, 440.0), note_s=0.125):
    note_len = int(note_s * sr)
    out = np.zeros(n)
    t_note = np.arange(note_len) / sr
    envelope = np.minimum(1.0, np.minimum(t_note, note_s - t_note) / 0.01)
    for start in range(0, n, note_len):
        f = float(rng.choice(freqs))
        note = (
            np.sin(2 * np.pi * f * t_note)
            + 0.5 * np.sin(4 * np.pi * f * t_note)
            + 0.25 * np.sin(6 * np.pi * f * t_note)
        ) * envelope
        out[start : start + note_len] = note[: n - start]
    return out


_NOISE_KINDS = {
    "lowpass_noise": _noise_lowpass_noise,
    "tone_stack": _noise_tone_stack,
    "burst_noise": _noise_burst_noise,
    "am_noise": _noise_am_noise,
    "harmonic_rumble": _noise_harmonic_rumble,
    "impulses": _noise_impulses,
    "gated_noise": _noise_gated_noise,
    "sweep_tone": _noise_sweep_tone,
    "tone_sequence": _noise_tone_sequence,
}


def generate_noise(descriptor, n_samples, sample_rate, rng):
    """Render one noise descriptor to unit-RMS samples."""
    params = dict(descriptor)
    kind = params.pop("kind")
    if kind not in _NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}")
    out = _NOISE_KINDS[kind](n_samples, sample_rate, rng, **params)
    return out / max(np.sqrt(np.mean(out**2)), 1e-12)


# --- corpus assembly -------------------------------------------------------


def _balanced_assignment(values, n, rng):
    reps = int(np.ceil(n / len(values)))
    pool = np.tile(np.arange(len(values)), reps)[:n]
    return [values[i] for i in rng.permutation(pool)]


def synth_corpus(spec: SyntheticSpec) -> Manifest:
    """Generate the full synthetic corpus described by `spec`.

    Records carry inline float32 samples, all factor labels, and per-frame
    phone targets aligned to the default 25ms/10ms framing.
    """
    rng = np.random.default_rng(spec.seed)
    n_total = spec.n_speakers * spec.utterances_per_speaker

    genders = [GENDERS[i % 2] for i in range(spec.n_speakers)]
    per_gender_counts = {g: genders.count(g) for g in GENDERS}
    f0_bases = []
    gender_rank = {g: 0 for g in GENDERS}
    for gender in genders:
        lo, hi = spec.f0_ranges_by_gender[gender]
        j, n_g = gender_rank[gender], per_gender_counts[gender]
        f0_bases.append(lo + (j + 0.5) / n_g * (hi - lo))
        gender_rank[gender] += 1

    templates = spec.formant_templates_per_speaker or _auto_templates(spec.n_speakers)
    env_assignment = _balanced_assignment(ENV_CLASSES, n_total, rng)
    emotion_assignment = _balanced_assignment(EMOTIONS, n_total, rng)

    records = []
    for spk in range(spec.n_speakers):
        speaker_id = f"spk{spk:03d}"
        template = templates[spk % len(templates)]
        for j in range(spec.utterances_per_speaker):
            flat = spk * spec.utterances_per_speaker + j
            env_class = env_assignment[flat]
            emotion = emotion_assignment[flat]
            slope, mod_rate, mod_depth = EMOTION_PROSODY[emotion]

            voice, frame_targets = _synth_voice(
                spec, f0_bases[spk], template, slope, mod_rate, mod_depth, rng
            )
            noise = generate_noise(
                spec.noise_bank[env_class], len(voice), spec.sample_rate, rng
            )
            noise *= 10.0 ** (-spec.snr_db / 20.0)
            mix = voice + noise
            # peak normalization scales voice and noise together, so the SNR
            # is untouched
            mix *= 0.7 / np.max(np.abs(mix))

            records.append(
                UtteranceRecord(
                    id=f"{speaker_id}_u{j:03d}",
                    sample_rate=spec.sample_rate,
                    labels={
                        "speaker_id": speaker_id,
                        "gender": genders[spk],
                        "env_class": env_class,
                        "sentiment": SENTIMENT_BY_SLOPE[slope],
                        "emotion": emotion,
                    },
                    samples=mix.astype(np.float32),
                    frame_targets=frame_targets,
                )
            )
    return Manifest(records, split_tag="train")
