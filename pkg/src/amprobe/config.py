"""Experiment configuration: one YAML file drives the whole grid.

Schema (all sections optional, shown with their defaults):

    seed: 0
    output_dir: runs/experiment
    corpus:
      synthetic: {n_speakers: 12, utterances_per_speaker: 20, ...}
      # or-> manifest: path/to/manifest.jsonl
    mfcc: {n_coeffs: 40, ...}
    use_cmvn: true
    am: {hidden_dim: 1536, bottleneck_dim: 160, num_targets: ...,
         steps: 500, lr: 0.002, batch_size: 8, holdout_fraction: 0.0}
    taps: [0, 1, 2, 4, 6, 8, 10, 12, 14, 16]   # 0 = the MFCC passthrough
    tasks: [speaker_verification, speaking_rate, gender, acoustic_env,
            sentiment, emotion]
    probes:
      default: {channels: 1024, total_steps: 300, max_lr: 0.001, ...}
      acoustic_env: {total_steps: 150}          # per-task overrides
    eval_fraction: 0.3333
    verification: {n_target: 200, n_nontarget: 200}
"""

import hashlib
import json
from dataclasses import dataclass, field, asdict

import yaml

from .dsp import MfccConfig
from .corpus import SyntheticSpec
from .ecapa import EcapaConfig, EcapaProbe, OneCycleSpec
from .tasks import TASK_NAMES, get_task
from .tdnnf import TdnnfConfig

_AM_TRAIN_KEYS = ("steps", "lr", "batch_size", "holdout_fraction", "min_margin_over_chance")
_PROBE_TRAIN_KEYS = ("crop_frames", "batch_size")
_SCHEDULE_KEYS = ("total_steps", "max_lr", "start_div", "final_div", "peak_fraction", "optimizer")
_ECAPA_KEYS = (
    "channels", "num_blocks", "dilations", "res2net_scale", "attention_dim", "embed_dim",
    "aam_margin", "aam_scale",
)


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/experiment"
    corpus: dict = field(default_factory=lambda: {"synthetic": {}})
    mfcc: dict = field(default_factory=dict)
    use_cmvn: bool = True
    am: dict = field(default_factory=dict)
    taps: tuple = (0, 1, 2, 4, 6, 8, 10, 12, 14, 16)
    tasks: tuple = TASK_NAMES
    probes: dict = field(default_factory=dict)
    eval_fraction: float = 1.0 / 3.0
    verification: dict = field(default_factory=lambda: {"n_target": 200, "n_nontarget": 200})

    def __post_init__(self):
        self.taps = tuple(int(t) for t in self.taps)
        self.tasks = tuple(self.tasks)
        for name in self.tasks:
            get_task(name)
        if len(set(self.tasks)) != len(self.tasks):
            raise ValueError("duplicate task names in config")
        if len(set(self.taps)) != len(self.taps):
            raise ValueError("duplicate tap indices in config")
        if not ("synthetic" in self.corpus) ^ ("manifest" in self.corpus):
            raise ValueError("corpus section needs exactly one of 'synthetic' or 'manifest'")
        for task_name in self.probes:
            if task_name != "default":
                get_task(task_name)

    # -- typed views ----------------------------------------------------------

    def synthetic_spec(self):
        if "synthetic" not in self.corpus:
            return None
        params = dict(self.corpus["synthetic"])
        params.setdefault("seed", self.seed)
        if "f0_ranges_by_gender" in params:
            params["f0_ranges_by_gender"] = {
                k: tuple(v) for k, v in params["f0_ranges_by_gender"].items()
            }
        return SyntheticSpec(**params)

    def manifest_path(self):
        return self.corpus.get("manifest")

    def mfcc_config(self):
        return MfccConfig(**self.mfcc)

    def am_config(self):
        params = {k: v for k, v in self.am.items() if k not in _AM_TRAIN_KEYS}
        if "num_targets" not in params:
            spec = self.synthetic_spec()
            if spec is not None:
                params["num_targets"] = spec.phone_inventory_size
        if "context_offsets" in params and params["context_offsets"] is not None:
            params["context_offsets"] = tuple(tuple(o) for o in params["context_offsets"])
        return TdnnfConfig(**params)

    def am_train_params(self):
        params = {k: v for k, v in self.am.items() if k in _AM_TRAIN_KEYS}
        params.setdefault("seed", self.seed)
        return params

    def probe_settings(self, task_name):
        """Merged default + per-task probe settings, split by destination."""
        merged = dict(self.probes.get("default", {}))
        merged.update(self.probes.get(task_name, {}))
        unknown = set(merged) - set(_ECAPA_KEYS) - set(_SCHEDULE_KEYS) - set(_PROBE_TRAIN_KEYS)
        if unknown:
            raise ValueError(f"unknown probe settings for {task_name!r}: {sorted(unknown)}")
        ecapa = {k: v for k, v in merged.items() if k in _ECAPA_KEYS}
        if "dilations" in ecapa:
            ecapa["dilations"] = tuple(ecapa["dilations"])
        schedule = {k: v for k, v in merged.items() if k in _SCHEDULE_KEYS}
        trainer = {k: v for k, v in merged.items() if k in _PROBE_TRAIN_KEYS}
        return ecapa, schedule, trainer

    def probe_factory(self, task_name):
        """probe_factory(input_dim, num_classes, head, seed) for run_task."""
        ecapa_kwargs, schedule_kwargs, trainer_kwargs = self.probe_settings(task_name)

        def factory(input_dim, num_classes, head, seed):
            config = EcapaConfig(
                input_dim=input_dim, num_classes=num_classes, head=head, **ecapa_kwargs
            )
            sched = dict(schedule_kwargs)
            if "optimizer" not in sched:
                sched["optimizer"] = "sgd" if head == "aam" else "adamw"
            return EcapaProbe(
                config=config, schedule=OneCycleSpec(**sched), seed=seed, **trainer_kwargs
            )

        return factory

    # -- identity -------------------------------------------------------------

    def to_dict(self):
        return asdict(self)

    def section_hash(self, *sections):
        payload = {name: getattr(self, name) for name in sections}
        canonical = json.dumps(payload, sort_keys=True, default=_canonical)
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    def config_hash(self):
        data = self.to_dict()
        data.pop("output_dir")  # where results land doesn't change what they are
        canonical = json.dumps(data, sort_keys=True, default=_canonical)
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def _canonical(obj):
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot canonicalize {type(obj)}")


def desk_config(output_dir, seed=0, **overrides) -> ExperimentConfig:
    """Desk-scale experiment: small model widths, short trainings, the
    reduced tap set. Runs end to end in minutes on CPU."""
    params = dict(
        seed=seed,
        output_dir=output_dir,
        corpus={"synthetic": {"n_speakers": 12, "utterances_per_speaker": 20}},
        # per-utterance CMVN would normalize away the planted energy
        # modulation; probes apply train-split normalization regardless
        use_cmvn=False,
        am={"hidden_dim": 64, "bottleneck_dim": 16, "steps": 500, "lr": 2e-3, "batch_size": 8},
        taps=(0, 1, 2, 4, 8, 16),
        probes={
            "default": {
                "channels": 64,
                "attention_dim": 64,
                "res2net_scale": 4,
                "total_steps": 150,
                "max_lr": 3e-3,
                "batch_size": 16,
            },
            "acoustic_env": {"total_steps": 80},
            "speaker_verification": {"total_steps": 300, "max_lr": 5e-2},
        },
        verification={"n_target": 200, "n_nontarget": 200},
    )
    params.update(overrides)
    return ExperimentConfig(**params)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**data)


def save_config(config: ExperimentConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(json.loads(json.dumps(config.to_dict(), default=_canonical)), fh, sort_keys=False)
