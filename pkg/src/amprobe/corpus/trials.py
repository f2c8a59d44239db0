"""Verification trial lists: labeled (enroll, test) utterance pairs.

On disk one trial per line: `<0|1> <enroll_id> <test_id>`, 1 = same speaker.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..validation import check_seed


@dataclass(frozen=True)
class Trial:
    is_target: bool
    enroll_id: str
    test_id: str


@dataclass
class TrialList:
    trials: list

    def __post_init__(self):
        for trial in self.trials:
            if trial.enroll_id == trial.test_id:
                raise ValueError(
                    f"trial pairs utterance {trial.enroll_id!r} with itself"
                )

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    @property
    def n_target(self):
        return sum(t.is_target for t in self.trials)

    @property
    def n_nontarget(self):
        return len(self.trials) - self.n_target


def build_trial_list(manifest, n_target, n_nontarget, seed) -> TrialList:
    """Sample same-speaker and cross-speaker pairs without replacement."""
    check_seed(seed)
    by_speaker = {}
    for rec in manifest:
        speaker = rec.labels.get("speaker_id")
        if speaker is None:
            raise ValueError(f"record {rec.id!r} has no speaker_id label")
        by_speaker.setdefault(speaker, []).append(rec.id)
    if len(by_speaker) < 2:
        raise ValueError("need at least 2 speakers to build nontarget trials")
    if max(len(v) for v in by_speaker.values()) < 2:
        raise ValueError("need a speaker with at least 2 utterances for target trials")

    target_pairs = [
        pair for ids in by_speaker.values() for pair in combinations(ids, 2)
    ]
    speakers = list(by_speaker)
    nontarget_pairs = [
        (a, b)
        for i, j in combinations(range(len(speakers)), 2)
        for a in by_speaker[speakers[i]]
        for b in by_speaker[speakers[j]]
    ]
    if n_target > len(target_pairs):
        raise ValueError(
            f"requested {n_target} target trials but only {len(target_pairs)} "
            "distinct same-speaker pairs exist"
        )
    if n_nontarget > len(nontarget_pairs):
        raise ValueError(
            f"requested {n_nontarget} nontarget trials but only "
            f"{len(nontarget_pairs)} distinct cross-speaker pairs exist"
        )

    rng = np.random.default_rng(seed)
    chosen_t = rng.permutation(len(target_pairs))[:n_target]
    chosen_n = rng.permutation(len(nontarget_pairs))[:n_nontarget]
    trials = [Trial(True, *target_pairs[i]) for i in sorted(chosen_t)]
    trials += [Trial(False, *nontarget_pairs[i]) for i in sorted(chosen_n)]
    return TrialList(trials)


def save_trial_list(trial_list: TrialList, path):
    with open(path, "w", encoding="ascii") as fh:
        for trial in trial_list:
            fh.write(f"{int(trial.is_target)} {trial.enroll_id} {trial.test_id}\n")


def load_trial_list(path) -> TrialList:
    trials = []
    with open(path, encoding="ascii") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3 or parts[0] not in ("0", "1"):
                raise ValueError(f"{path}: line {line_no}: expected '<0|1> <enroll> <test>'")
            trials.append(Trial(parts[0] == "1", parts[1], parts[2]))
    return TrialList(trials)
