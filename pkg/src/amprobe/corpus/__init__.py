from .manifest import (
    ENV_CLASSES,
    EMOTIONS,
    GENDERS,
    LABEL_VOCABULARIES,
    RATE_CLASSES,
    SENTIMENTS,
    Manifest,
    UtteranceRecord,
    load_audio,
    load_manifest,
    read_wav,
    save_manifest,
    write_wav,
)
from .splits import kfold_split, speaker_disjoint_split
from .synth import DEFAULT_NOISE_BANK, EMOTION_PROSODY, SyntheticSpec, synth_corpus
from .trials import Trial, TrialList, build_trial_list, load_trial_list, save_trial_list

__all__ = [
    "ENV_CLASSES",
    "EMOTIONS",
    "GENDERS",
    "LABEL_VOCABULARIES",
    "RATE_CLASSES",
    "SENTIMENTS",
    "Manifest",
    "UtteranceRecord",
    "load_audio",
    "load_manifest",
    "read_wav",
    "save_manifest",
    "write_wav",
    "kfold_split",
    "speaker_disjoint_split",
    "DEFAULT_NOISE_BANK",
    "EMOTION_PROSODY",
    "SyntheticSpec",
    "synth_corpus",
    "Trial",
    "TrialList",
    "build_trial_list",
    "load_trial_list",
    "save_trial_list",
]
