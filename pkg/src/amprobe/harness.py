"""Pipeline orchestration: synth -> train-am -> extract -> probe grid ->
report, with an append-only run ledger for idempotent, resumable stages.

Every stage checks the ledger (stage key + hash of the config sections it
depends on) and skips work whose artifacts already exist; --force redoes a
stage. Grid cells fail independently: a diverging probe marks its cell
failed and the grid moves on.
"""

import json
import os
import time
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .config import ExperimentConfig
from .corpus import load_manifest, save_manifest, save_trial_list, synth_corpus
from .dumps import (
    DumpStore,
    compute_input_features,
    extract_activations,
    representation_name,
)
from .metrics import (
    EvalResult,
    aggregate_matrix,
    results_markdown,
    save_scores,
    write_results_csv,
)
from .tasks import augment_speed_3way, get_task, run_task_detailed
from .tdnnf import LayerTapSpec, TdnnfClassifier, load_am, save_am

STAGE_NAMES = ("synth", "train-am", "extract", "probe", "report")


@dataclass
class RunPaths:
    root: str

    def __post_init__(self):
        os.makedirs(self.root, exist_ok=True)

    @property
    def ledger(self):
        return os.path.join(self.root, "ledger.jsonl")

    @property
    def corpus_dir(self):
        return os.path.join(self.root, "corpus")

    @property
    def manifest(self):
        return os.path.join(self.corpus_dir, "manifest.jsonl")

    @property
    def am_checkpoint(self):
        return os.path.join(self.root, "am.pt")

    @property
    def dumps_dir(self):
        return os.path.join(self.root, "dumps")

    @property
    def cells_dir(self):
        return os.path.join(self.root, "cells")

    def cell(self, task, representation):
        return os.path.join(self.cells_dir, f"{task}__{representation}.json")

    @property
    def scores_dir(self):
        return os.path.join(self.root, "scores")

    def scores(self, task, representation):
        return os.path.join(self.scores_dir, f"{task}__{representation}.txt")

    def trials(self, task):
        return os.path.join(self.root, f"trials_{task}.txt")

    @property
    def results_csv(self):
        return os.path.join(self.root, "results.csv")

    @property
    def report_md(self):
        return os.path.join(self.root, "report.md")

    @property
    def trend_json(self):
        return os.path.join(self.root, "trend.json")

    @property
    def plots_dir(self):
        return os.path.join(self.root, "plots")


class RunLedger:
    """Append-only JSONL of completed stages."""

    def __init__(self, path):
        self.path = path
        self.entries = []
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                self.entries = [json.loads(line) for line in fh if line.strip()]

    def is_done(self, key, config_hash, root):
        for entry in reversed(self.entries):
            if entry["key"] != key:
                continue
            if entry["status"] != "done" or entry["config_hash"] != config_hash:
                return False
            return all(os.path.exists(os.path.join(root, a)) for a in entry["artifacts"])
        return False

    def record(self, key, config_hash, artifacts, elapsed_s, status="done"):
        entry = {
            "key": key,
            "status": status,
            "config_hash": config_hash,
            "artifacts": list(artifacts),
            "elapsed_s": round(elapsed_s, 3),
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        self.entries.append(entry)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry) + "\n")


class Harness:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.paths = RunPaths(config.output_dir)
        self.ledger = RunLedger(self.paths.ledger)
        self._manifest = None
        self._am = None
        self._store = None

    # -- stages --------------------------------------------------------------

    def stage_synth(self, force=False):
        """Materialize the corpus: synthesize (or ingest) and persist it."""
        chash = self.config.section_hash("corpus", "seed")
        if self.config.manifest_path() is not None:
            self._manifest = load_manifest(self.config.manifest_path())
            return self._manifest
        rel_manifest = os.path.relpath(self.paths.manifest, self.paths.root)
        if not force and self.ledger.is_done("synth", chash, self.paths.root):
            self._manifest = load_manifest(self.paths.manifest)
            return self._manifest
        started = time.time()
        manifest = synth_corpus(self.config.synthetic_spec())
        os.makedirs(self.paths.corpus_dir, exist_ok=True)
        save_manifest(manifest, self.paths.manifest, audio_dir=os.path.join(self.paths.corpus_dir, "wav"))
        self.ledger.record("synth", chash, [rel_manifest], time.time() - started)
        self._manifest = load_manifest(self.paths.manifest)
        return self._manifest

    def manifest(self):
        if self._manifest is None:
            if self.config.manifest_path() is not None:
                self._manifest = load_manifest(self.config.manifest_path())
            elif os.path.exists(self.paths.manifest):
                self._manifest = load_manifest(self.paths.manifest)
            else:
                raise FileNotFoundError("missing corpus manifest; run the synth stage first")
        return self._manifest

    def _manifest_base_dir(self):
        if self.config.manifest_path() is not None:
            return os.path.dirname(os.path.abspath(self.config.manifest_path()))
        return os.path.dirname(self.paths.manifest)

    def stage_train_am(self, force=False):
        chash = self.config.section_hash("corpus", "mfcc", "use_cmvn", "am", "seed")
        if not force and self.ledger.is_done("train-am", chash, self.paths.root):
            self._am = load_am(self.paths.am_checkpoint)
            return self._am
        manifest = self.manifest()
        started = time.time()
        mfcc_cfg = self.config.mfcc_config()
        base = self._manifest_base_dir()
        features = []
        targets = []
        for rec in manifest:
            if rec.frame_targets is None:
                raise ValueError(f"record {rec.id!r} has no frame_targets; cannot train the AM")
            feats = compute_input_features(rec, mfcc_cfg, self.config.use_cmvn, base)
            features.append(feats.values)
            targets.append(rec.frame_targets)
        am = TdnnfClassifier(config=self.config.am_config(), **self.config.am_train_params())
        am.fit(features, targets)
        save_am(am, self.paths.am_checkpoint)
        self.ledger.record("train-am", chash, ["am.pt"], time.time() - started)
        self._am = am
        return am

    def am(self):
        if self._am is None:
            if not os.path.exists(self.paths.am_checkpoint):
                raise FileNotFoundError("missing AM checkpoint; run the train-am stage first")
            self._am = load_am(self.paths.am_checkpoint)
        return self._am

    def stage_extract(self, force=False):
        chash = self.config.section_hash("corpus", "mfcc", "use_cmvn", "am", "taps", "tasks", "seed")
        index_rel = os.path.join("dumps", "index.json")
        if not force and self.ledger.is_done("extract", chash, self.paths.root):
            self._store = DumpStore(self.paths.dumps_dir)
            return self._store
        am = self.am()
        manifest = self.manifest()
        started = time.time()
        taps = LayerTapSpec(self.config.taps)
        base = self._manifest_base_dir()
        mfcc_cfg = self.config.mfcc_config()
        store = extract_activations(
            am, manifest, taps, self.paths.dumps_dir,
            mfcc_config=mfcc_cfg, use_cmvn=self.config.use_cmvn, base_dir=base,
        )
        for task_name in self.config.tasks:
            if get_task(task_name).augmentation == "speed_perturb_3way":
                augmented = augment_speed_3way(manifest, base_dir=base)
                store = extract_activations(
                    am, augmented, taps, self.paths.dumps_dir,
                    mfcc_config=mfcc_cfg, use_cmvn=self.config.use_cmvn, base_dir=base,
                )
        self.ledger.record("extract", chash, [index_rel], time.time() - started)
        self._store = store
        return store

    def store(self):
        if self._store is None:
            if not os.path.exists(os.path.join(self.paths.dumps_dir, "index.json")):
                raise FileNotFoundError("missing activation dumps; run the extract stage first")
            self._store = DumpStore(self.paths.dumps_dir)
        return self._store

    def _cell_hash(self, task_name):
        return self.config.section_hash(
            "corpus", "mfcc", "use_cmvn", "am", "taps", "seed",
            "probes", "eval_fraction", "verification",
        ) + f":{task_name}"

    def stage_probe_cell(self, task_name, representation, force=False):
        """Train and evaluate one (task, representation) cell."""
        task = get_task(task_name)
        key = f"probe:{task_name}:{representation}"
        chash = self._cell_hash(task_name)
        cell_rel = os.path.relpath(self.paths.cell(task_name, representation), self.paths.root)
        if not force and self.ledger.is_done(key, chash, self.paths.root):
            return self._load_cell(task_name, representation)
        store = self.store()
        manifest = self.manifest()
        started = time.time()
        output = run_task_detailed(
            task,
            representation,
            store,
            manifest,
            self.config.probe_factory(task_name),
            self.config.seed,
            eval_fraction=self.config.eval_fraction,
            n_target=self.config.verification.get("n_target", 200),
            n_nontarget=self.config.verification.get("n_nontarget", 200),
            base_dir=self._manifest_base_dir(),
        )
        os.makedirs(self.paths.cells_dir, exist_ok=True)
        artifacts = [cell_rel]
        tmp = self.paths.cell(task_name, representation) + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(output.result.to_dict(), fh, sort_keys=True)
        os.replace(tmp, self.paths.cell(task_name, representation))
        if output.score_entries:
            os.makedirs(self.paths.scores_dir, exist_ok=True)
            save_scores(self.paths.scores(task_name, representation), output.score_entries)
            artifacts.append(os.path.relpath(self.paths.scores(task_name, representation), self.paths.root))
        if output.trial_list is not None:
            save_trial_list(output.trial_list, self.paths.trials(task_name))
        status = "done" if output.result.status == "ok" else "failed"
        self.ledger.record(key, chash, artifacts, time.time() - started, status=status)
        return output.result

    def _load_cell(self, task_name, representation):
        path = self.paths.cell(task_name, representation)
        with open(path, encoding="utf-8") as fh:
            return EvalResult.from_dict(json.load(fh))

    def representations(self):
        return [representation_name(t) for t in self.config.taps]

    def stage_report(self, force=False):
        """Aggregate available cells into CSV + markdown + plots."""
        rows = self.representations()
        cols = list(self.config.tasks)
        results = []
        for task_name in cols:
            for rep in rows:
                path = self.paths.cell(task_name, rep)
                if os.path.exists(path):
                    results.append(self._load_cell(task_name, rep))
        provenance = f"config={self.config.config_hash()} seed={self.config.seed}"
        matrix = aggregate_matrix(results, rows, cols, provenance)
        write_results_csv(matrix, self.paths.results_csv)

        trend = self._verification_trend(matrix)
        notes = []
        if trend is not None:
            notes.append(
                "Trend check (non-blocking): speaker-verification EER at "
                f"{trend['deepest']} ({trend['deepest_eer']:.4f}) vs "
                f"{trend['shallowest']} ({trend['shallowest_eer']:.4f}) -> "
                + ("pass" if trend["pass"] else "fail")
            )
            with open(self.paths.trend_json, "w", encoding="utf-8") as fh:
                json.dump(trend, fh, sort_keys=True)
        with open(self.paths.report_md, "w", encoding="utf-8") as fh:
            fh.write(results_markdown(matrix, notes))
        self._plot_tasks(matrix)
        return matrix

    def _verification_trend(self, matrix):
        """Deep layers should not beat shallow ones at speaker verification."""
        if "speaker_verification" not in matrix.cols:
            return None
        layer_rows = [(int(r[5:]), r) for r in matrix.rows if r.startswith("layer")]
        if len(layer_rows) < 2:
            return None
        shallow = min(layer_rows)[1]
        deep = max(layer_rows)[1]
        cell_s = matrix.get(shallow, "speaker_verification")
        cell_d = matrix.get(deep, "speaker_verification")
        if not cell_s or not cell_d or cell_s.status != "ok" or cell_d.status != "ok":
            return None
        return {
            "task": "speaker_verification",
            "shallowest": shallow,
            "deepest": deep,
            "shallowest_eer": cell_s.value,
            "deepest_eer": cell_d.value,
            "pass": bool(cell_d.value >= cell_s.value),
        }

    def _plot_tasks(self, matrix):
        os.makedirs(self.paths.plots_dir, exist_ok=True)
        for col in matrix.cols:
            xs, ys = [], []
            for i, row in enumerate(matrix.rows):
                cell = matrix.get(row, col)
                if cell is not None and cell.status == "ok":
                    xs.append(i)
                    ys.append(cell.value)
            if not xs:
                continue
            fig, ax = plt.subplots(figsize=(5, 3))
            ax.plot(xs, ys, marker="o")
            ax.set_xticks(range(len(matrix.rows)))
            ax.set_xticklabels(matrix.rows, rotation=45, ha="right")
            metric = next(
                matrix.get(r, col).metric for r in matrix.rows if matrix.get(r, col)
            )
            ax.set_ylabel(metric)
            ax.set_title(col)
            fig.tight_layout()
            fig.savefig(os.path.join(self.paths.plots_dir, f"{col}.png"), dpi=100)
            plt.close(fig)

    # -- entry points ----------------------------------------------------------

    def run_grid(self, force=False):
        """Full pipeline; independent cells keep going when one fails."""
        self.stage_synth(force=force)
        self.stage_train_am(force=force)
        self.stage_extract(force=force)
        for task_name in self.config.tasks:
            for rep in self.representations():
                try:
                    self.stage_probe_cell(task_name, rep, force=force)
                except Exception as exc:  # noqa: BLE001 - cell isolation
                    self.ledger.record(
                        f"probe:{task_name}:{rep}",
                        self._cell_hash(task_name),
                        [],
                        0.0,
                        status=f"error: {exc}",
                    )
        return self.stage_report(force=force)


def run_stage(config: ExperimentConfig, stage, task=None, layer=None, force=False):
    """CLI-facing single-stage dispatch."""
    harness = Harness(config)
    if stage == "synth":
        return harness.stage_synth(force=force)
    if stage == "train-am":
        return harness.stage_train_am(force=force)
    if stage == "extract":
        return harness.stage_extract(force=force)
    if stage == "probe":
        if task is None:
            raise ValueError("the probe stage needs --task")
        reps = harness.representations() if layer is None else [representation_name(layer)]
        return [harness.stage_probe_cell(task, rep, force=force) for rep in reps]
    if stage == "report":
        return harness.stage_report(force=force)
    if stage == "run-grid":
        return harness.run_grid(force=force)
    raise ValueError(f"unknown stage {stage!r}")
