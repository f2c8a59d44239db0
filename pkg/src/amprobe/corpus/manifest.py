"""Utterance records, manifests, and their on-disk JSONL format.

A manifest file is UTF-8 with one JSON object per line:

    {"id": "...", "audio": "rel/path.wav", "sample_rate": 16000,
     "labels": {"speaker_id": "spk003", "gender": "female", ...},
     "frame_targets": [3, 3, 5, ...]}            # optional

"audio" may be replaced by an inline "samples" array of floats in [-1, 1].
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.io.wavfile

from ..dsp import Waveform
from ..validation import check_in_vocab, check_sample_rate

GENDERS = ("male", "female")
ENV_CLASSES = (
    "air_conditioner",
    "car_horn",
    "children_playing",
    "dog_bark",
    "drilling",
    "engine_idling",
    "gun_shot",
    "jackhammer",
    "siren",
    "street_music",
)
SENTIMENTS = ("negative", "neutral", "positive")
EMOTIONS = ("anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise")
RATE_CLASSES = ("0.85", "1.0", "1.15")

# Label fields with a closed vocabulary; anything else (speaker_id, ...) is
# free-form.
LABEL_VOCABULARIES = {
    "gender": GENDERS,
    "env_class": ENV_CLASSES,
    "sentiment": SENTIMENTS,
    "emotion": EMOTIONS,
    "rate_class": RATE_CLASSES,
}

VALID_SPLIT_TAGS = ("train", "dev", "eval")


@dataclass
class UtteranceRecord:
    id: str
    sample_rate: int
    labels: dict = field(default_factory=dict)
    audio: str | None = None
    samples: np.ndarray | None = None
    frame_targets: np.ndarray | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("utterance id must be a non-empty string")
        self.sample_rate = check_sample_rate(self.sample_rate)
        if self.audio is None and self.samples is None:
            raise ValueError(f"record {self.id!r} has neither 'audio' nor 'samples'")
        if self.samples is not None:
            self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.frame_targets is not None:
            self.frame_targets = np.asarray(self.frame_targets, dtype=np.int64)
        for fname, value in self.labels.items():
            vocab = LABEL_VOCABULARIES.get(fname)
            if vocab is not None:
                check_in_vocab(value, vocab, fname)


@dataclass
class Manifest:
    records: list
    split_tag: str = "train"

    def __post_init__(self):
        if self.split_tag not in VALID_SPLIT_TAGS:
            raise ValueError(f"split_tag must be one of {VALID_SPLIT_TAGS}")
        seen = set()
        rates = set()
        for rec in self.records:
            if rec.id in seen:
                raise ValueError(f"duplicate utterance id {rec.id!r}")
            seen.add(rec.id)
            rates.add(rec.sample_rate)
        if len(rates) > 1:
            raise ValueError(f"mixed sample rates in manifest: {sorted(rates)}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self):
        return [rec.id for rec in self.records]

    @property
    def sample_rate(self):
        return self.records[0].sample_rate if self.records else None

    def by_id(self, utterance_id):
        for rec in self.records:
            if rec.id == utterance_id:
                return rec
        raise KeyError(utterance_id)

    def speakers(self):
        return sorted({rec.labels.get("speaker_id") for rec in self.records} - {None})

    def subset(self, indices, split_tag=None):
        return Manifest(
            [self.records[i] for i in indices],
            split_tag=split_tag or self.split_tag,
        )


def read_wav(path) -> Waveform:
    """Read a mono WAV file (16-bit PCM or 32-bit float)."""
    sample_rate, data = scipy.io.wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported WAV sample format {data.dtype}")
    return Waveform(samples, int(sample_rate))


def write_wav(path, wave: Waveform):
    """Write 32-bit float WAV (lossless for our float32 pipelines)."""
    scipy.io.wavfile.write(path, wave.sample_rate, wave.samples.astype(np.float32))


def load_audio(record: UtteranceRecord, base_dir=None) -> Waveform:
    """Resolve a record to a Waveform, reading from disk when needed."""
    if record.samples is not None:
        return Waveform(record.samples.astype(np.float64), record.sample_rate)
    path = record.audio
    if base_dir is not None and not os.path.isabs(path):
        path = os.path.join(base_dir, path)
    wave = read_wav(path)
    if wave.sample_rate != record.sample_rate:
        raise ValueError(
            f"record {record.id!r}: manifest says {record.sample_rate} Hz "
            f"but {path} has {wave.sample_rate} Hz"
        )
    return wave


def _record_from_json(obj, line_no):
    try:
        rec = UtteranceRecord(
            id=obj["id"],
            sample_rate=obj["sample_rate"],
            labels=dict(obj.get("labels", {})),
            audio=obj.get("audio"),
            samples=obj.get("samples"),
            frame_targets=obj.get("frame_targets"),
        )
    except KeyError as exc:
        raise ValueError(f"line {line_no}: missing required key {exc}") from None
    except ValueError as exc:
        raise ValueError(f"line {line_no}: {exc}") from None
    return rec


def load_manifest(path, split_tag="train") -> Manifest:
    """Parse a JSONL manifest; any bad line fails the whole load with its
    line number."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {line_no}: malformed JSON ({exc.msg})") from None
            records.append(_record_from_json(obj, line_no))
    return Manifest(records, split_tag=split_tag)


def save_manifest(manifest: Manifest, path, audio_dir=None):
    """Write a manifest as JSONL.

    With audio_dir set, inline samples are written out as float WAV files
    under that directory and referenced by relative path; otherwise inline
    samples stay inline.
    """
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest.records:
            obj = {"id": rec.id, "sample_rate": rec.sample_rate, "labels": rec.labels}
            if rec.samples is not None and audio_dir is not None:
                os.makedirs(audio_dir, exist_ok=True)
                wav_path = os.path.join(audio_dir, f"{rec.id}.wav")
                write_wav(wav_path, Waveform(rec.samples.astype(np.float64), rec.sample_rate))
                obj["audio"] = os.path.relpath(wav_path, base)
            elif rec.samples is not None:
                obj["samples"] = [float(s) for s in rec.samples]
            else:
                obj["audio"] = rec.audio
            if rec.frame_targets is not None:
                obj["frame_targets"] = [int(t) for t in rec.frame_targets]
            fh.write(json.dumps(obj) + "\n")
