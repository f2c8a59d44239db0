"""amprobe: layer-wise information probing for TDNN-F acoustic models.

Train a factorized TDNN on a frame classification objective, tap its hidden
layers, train ECAPA-TDNN probes on six speech tasks from those activations
(and from the MFCC baseline), and assemble the layer-by-task results grid.
"""

from .config import ExperimentConfig, desk_config, load_config, save_config
from .corpus import (
    Manifest,
    SyntheticSpec,
    TrialList,
    UtteranceRecord,
    build_trial_list,
    kfold_split,
    load_manifest,
    save_manifest,
    speaker_disjoint_split,
    synth_corpus,
)
from .dsp import (
    FeatureMatrix,
    MfccConfig,
    Waveform,
    apply_cmvn,
    compute_mfcc,
    speed_perturb,
)
from .dumps import DumpStore, extract_activations, read_dump, write_dump
from .ecapa import (
    EcapaConfig,
    EcapaProbe,
    Embedding,
    OneCycleSpec,
    aam_softmax_loss,
    ecapa_forward,
    extract_embedding,
    load_probe,
    one_cycle_lr,
    save_probe,
)
from .harness import Harness, RunLedger
from .metrics import (
    EvalResult,
    ResultsMatrix,
    ScoreSet,
    aggregate_matrix,
    compute_accuracy,
    compute_eer,
    confusion_matrix,
    cosine_score,
)
from .tasks import TASKS, TaskSpec, get_task, materialize_task, run_task
from .tdnnf import (
    LayerTapSpec,
    TdnnfClassifier,
    TdnnfConfig,
    load_am,
    save_am,
    semiortho_residual,
    semiortho_step,
)

__version__ = "0.1.0"
