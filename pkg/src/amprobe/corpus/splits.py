"""Dataset splitting: k-fold by utterance and speaker-disjoint train/eval."""

import numpy as np

from ..validation import check_seed


def kfold_split(manifest, k, seed):
    """Uniform random k-fold partition of a manifest's records.

    Eval folds are disjoint, their union is the manifest, and fold sizes
    differ by at most one. Returns k (train, eval) manifest pairs.
    """
    check_seed(seed)
    n = len(manifest)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} available records")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    folds = np.array_split(order, k)
    pairs = []
    for fold in folds:
        eval_idx = set(int(i) for i in fold)
        train_idx = [i for i in range(n) if i not in eval_idx]
        pairs.append(
            (
                manifest.subset(train_idx, split_tag="train"),
                manifest.subset(sorted(eval_idx), split_tag="eval"),
            )
        )
    return pairs


def speaker_disjoint_split(manifest, eval_fraction=1.0 / 3.0, seed=0, stratify_field="gender"):
    """Split by speaker so train and eval share no speaker.

    Stratifies the speaker draw by `stratify_field` (when every speaker
    carries it) so both sides keep all strata, which matters for the
    two-class gender probe.
    """
    check_seed(seed)
    speaker_stratum = {}
    for rec in manifest:
        speaker = rec.labels.get("speaker_id")
        if speaker is None:
            raise ValueError(f"record {rec.id!r} has no speaker_id label")
        stratum = rec.labels.get(stratify_field, "_all") if stratify_field else "_all"
        speaker_stratum.setdefault(speaker, stratum)

    strata = {}
    for speaker, stratum in sorted(speaker_stratum.items()):
        strata.setdefault(stratum, []).append(speaker)

    rng = np.random.default_rng(seed)
    eval_speakers = set()
    for stratum, speakers in sorted(strata.items()):
        if len(speakers) < 2:
            raise ValueError(
                f"stratum {stratum!r} has only {len(speakers)} speaker(s); "
                "cannot split speaker-disjointly"
            )
        n_eval = min(len(speakers) - 1, max(1, round(eval_fraction * len(speakers))))
        chosen = rng.permutation(len(speakers))[:n_eval]
        eval_speakers.update(speakers[i] for i in chosen)

    train_idx = [
        i for i, rec in enumerate(manifest) if rec.labels["speaker_id"] not in eval_speakers
    ]
    eval_idx = [
        i for i, rec in enumerate(manifest) if rec.labels["speaker_id"] in eval_speakers
    ]
    return (
        manifest.subset(train_idx, split_tag="train"),
        manifest.subset(eval_idx, split_tag="eval"),
    )
