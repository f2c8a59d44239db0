"""The six probing tasks: what they label, how they split, how they score.

Each task binds a label field to a probe head and an evaluation protocol:

  speaker_verification  AAM embeddings, speaker-disjoint trials, EER
  speaking_rate         3-way speed perturbation, 3 classes, accuracy
  gender                2 classes, accuracy
  acoustic_env          10 classes, 10-fold cross validation, accuracy
  sentiment             3 classes, accuracy
  emotion               7 classes, accuracy

Classification tasks with a train/eval split use a speaker-disjoint split
(standing in for the cross-corpus train/eval protocol), so probes never see
eval speakers.
"""

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .corpus import (
    Manifest,
    UtteranceRecord,
    build_trial_list,
    kfold_split,
    load_audio,
    speaker_disjoint_split,
)
from .dsp import speed_perturb
from .dumps import layer_of_representation
from .ecapa import TrainingDivergence
from .metrics import EvalResult, ScoreSet, compute_accuracy, compute_eer, cosine_score

PERTURB_RATES = (0.85, 1.0, 1.15)


@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str  # "classification" | "verification"
    metric: str  # "accuracy" | "eer"
    label_field: str
    split: str  # "train_eval" | "kfold" | "trial_list"
    num_classes: int | None = None
    k: int = 10
    augmentation: str | None = None

    def __post_init__(self):
        if (self.kind == "verification") != (self.metric == "eer"):
            raise ValueError("verification tasks use EER and only they do")
        if self.kind == "classification" and (self.num_classes or 0) < 2:
            raise ValueError("classification tasks need num_classes >= 2")


TASKS = {
    "speaker_verification": TaskSpec(
        "speaker_verification", "verification", "eer", "speaker_id", "trial_list"
    ),
    "speaking_rate": TaskSpec(
        "speaking_rate", "classification", "accuracy", "rate_class", "train_eval",
        num_classes=3, augmentation="speed_perturb_3way",
    ),
    "gender": TaskSpec(
        "gender", "classification", "accuracy", "gender", "train_eval", num_classes=2
    ),
    "acoustic_env": TaskSpec(
        "acoustic_env", "classification", "accuracy", "env_class", "kfold",
        num_classes=10, k=10,
    ),
    "sentiment": TaskSpec(
        "sentiment", "classification", "accuracy", "sentiment", "train_eval", num_classes=3
    ),
    "emotion": TaskSpec(
        "emotion", "classification", "accuracy", "emotion", "train_eval", num_classes=7
    ),
}
TASK_NAMES = tuple(TASKS)


def get_task(name) -> TaskSpec:
    if name not in TASKS:
        raise ValueError(f"unknown task {name!r}; valid tasks: {', '.join(TASK_NAMES)}")
    return TASKS[name]


def derive_seed(*parts):
    """Stable sub-seed from string-able parts (unlike hash(), identical
    across processes and platforms)."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "little")


def augment_speed_3way(manifest: Manifest, base_dir=None) -> Manifest:
    """Three labeled copies of every utterance, one per perturbation rate.

    Ids gain a `#sp<rate>` suffix; rate_class joins the labels and all other
    labels are kept. Frame targets are dropped (durations change).
    """
    records = []
    for rec in manifest:
        wave = load_audio(rec, base_dir=base_dir)
        for rate in PERTURB_RATES:
            perturbed = speed_perturb(wave, rate)
            labels = dict(rec.labels)
            labels["rate_class"] = str(rate)
            records.append(
                UtteranceRecord(
                    id=f"{rec.id}#sp{rate}",
                    sample_rate=rec.sample_rate,
                    labels=labels,
                    samples=perturbed.samples.astype(np.float32),
                )
            )
    return Manifest(records, split_tag=manifest.split_tag)


@dataclass
class MaterializedTask:
    task: TaskSpec
    folds: list  # (train Manifest, eval Manifest) pairs; 1 entry unless kfold
    trial_list: object = None  # TrialList for verification


def materialize_task(
    task: TaskSpec,
    manifest: Manifest,
    seed,
    eval_fraction=1.0 / 3.0,
    n_target=200,
    n_nontarget=200,
    base_dir=None,
) -> MaterializedTask:
    """Prepare train/eval manifests (or trials) for one task.

    The split seed should be shared across representations so every layer is
    probed on identical data.
    """
    if task.augmentation == "speed_perturb_3way":
        manifest = augment_speed_3way(manifest, base_dir=base_dir)

    missing = [rec.id for rec in manifest if task.label_field not in rec.labels]
    if missing:
        raise ValueError(
            f"task {task.name!r} needs label field {task.label_field!r}; "
            f"missing on {len(missing)} records (first: {missing[0]!r})"
        )

    if task.split == "kfold":
        return MaterializedTask(task, kfold_split(manifest, task.k, seed))
    train_m, eval_m = speaker_disjoint_split(manifest, eval_fraction, seed)
    if task.split == "train_eval":
        return MaterializedTask(task, [(train_m, eval_m)])
    trials = build_trial_list(eval_m, n_target, n_nontarget, seed)
    return MaterializedTask(task, [(train_m, eval_m)], trial_list=trials)


@dataclass
class TaskRunOutput:
    result: EvalResult
    fold_values: list
    score_entries: list  # (enroll_id, test_id, score) for verification
    trial_list: object = None


def run_task_detailed(
    task: TaskSpec,
    representation,
    store,
    manifest,
    probe_factory,
    seed,
    eval_fraction=1.0 / 3.0,
    n_target=200,
    n_nontarget=200,
    base_dir=None,
) -> TaskRunOutput:
    """Train and evaluate the probe for one grid cell.

    probe_factory(input_dim, num_classes, head, seed) must return an
    unfitted probe estimator. Training divergence is reported as a failed
    cell rather than raised.
    """
    layer = layer_of_representation(representation)
    split_seed = derive_seed(seed, task.name)
    materialized = materialize_task(
        task, manifest, split_seed,
        eval_fraction=eval_fraction, n_target=n_target, n_nontarget=n_nontarget,
        base_dir=base_dir,
    )

    def features_for(records):
        feats = [store.load(rec.id, layer) for rec in records]
        return feats, [rec.labels.get(task.label_field) for rec in records]

    try:
        if task.kind == "classification":
            fold_values = []
            n_eval = 0
            for fold_index, (train_m, eval_m) in enumerate(materialized.folds):
                x_train, y_train = features_for(train_m.records)
                probe = probe_factory(
                    input_dim=x_train[0].shape[1],
                    num_classes=task.num_classes,
                    head="softmax",
                    seed=derive_seed(seed, task.name, representation, fold_index),
                )
                probe.fit(x_train, y_train)
                x_eval, y_eval = features_for(eval_m.records)
                fold_values.append(compute_accuracy(probe.predict(x_eval), y_eval))
                n_eval += len(eval_m)
            value = float(np.mean(fold_values))
            result = EvalResult(task.name, representation, "accuracy", value, n_eval, seed)
            return TaskRunOutput(result, fold_values, [])

        train_m, _ = materialized.folds[0]
        x_train, y_train = features_for(train_m.records)
        probe = probe_factory(
            input_dim=x_train[0].shape[1],
            num_classes=len(set(y_train)),
            head="aam",
            seed=derive_seed(seed, task.name, representation),
        )
        probe.fit(x_train, y_train)

        trial_ids = sorted(
            {t.enroll_id for t in materialized.trial_list}
            | {t.test_id for t in materialized.trial_list}
        )
        embeddings = {
            utt: probe.transform([store.load(utt, layer)])[0] for utt in trial_ids
        }
        entries = []
        scores = []
        labels = []
        for trial in materialized.trial_list:
            score = cosine_score(embeddings[trial.enroll_id], embeddings[trial.test_id])
            entries.append((trial.enroll_id, trial.test_id, score))
            scores.append(score)
            labels.append(trial.is_target)
        eer, _ = compute_eer(ScoreSet(np.array(scores), np.array(labels)))
        result = EvalResult(
            task.name, representation, "eer", eer,
            len(materialized.trial_list), seed, degenerate=eer > 0.5,
        )
        return TaskRunOutput(result, [eer], entries, materialized.trial_list)
    except TrainingDivergence:
        failed = EvalResult(
            task.name, representation, task.metric, float("nan"), 0, seed, status="failed"
        )
        return TaskRunOutput(failed, [], [])


def run_task(task, representation, store, manifest, probe_factory, seed, **kwargs) -> EvalResult:
    return run_task_detailed(
        task, representation, store, manifest, probe_factory, seed, **kwargs
    ).result
