"""Persisted per-(utterance, layer) activation matrices.

Binary layout (little-endian): magic "AMPB", u32 version=1, u32 layer_index,
u32 num_frames, u32 dim, then num_frames*dim float32 values row-major. An
index.json in the dump directory maps utterance id -> {layer -> relative
file path}.
"""

import json
import os
import struct

import numpy as np

from .corpus.manifest import load_audio
from .dsp import MfccConfig, apply_cmvn, compute_mfcc

MAGIC = b"AMPB"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def representation_name(layer_index):
    return "mfcc" if layer_index == 0 else f"layer{layer_index}"


def layer_of_representation(name):
    if name == "mfcc":
        return 0
    if name.startswith("layer"):
        return int(name[len("layer") :])
    raise ValueError(f"unknown representation {name!r}")


def write_dump(path, layer_index, values):
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ValueError("activation dump must be a 2-D matrix")
    header = _HEADER.pack(MAGIC, VERSION, layer_index, values.shape[0], values.shape[1])
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(values.tobytes())
    os.replace(tmp, path)


def read_dump(path):
    """Returns (layer_index, values) and validates the header."""
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ValueError(f"{path}: truncated dump header")
        magic, version, layer_index, num_frames, dim = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(num_frames * dim * 4), dtype="<f4")
        if data.size != num_frames * dim:
            raise ValueError(f"{path}: truncated dump payload")
    return layer_index, data.reshape(num_frames, dim)


class DumpStore:
    """Read-side view of a dump directory."""

    def __init__(self, directory):
        self.directory = directory
        index_path = os.path.join(directory, "index.json")
        if not os.path.exists(index_path):
            raise FileNotFoundError(f"missing activation dumps: no index at {index_path}")
        with open(index_path, encoding="utf-8") as fh:
            self.index = json.load(fh)

    def has(self, utterance_id, layer_index):
        return str(layer_index) in self.index.get(utterance_id, {})

    def load(self, utterance_id, layer_index):
        try:
            rel = self.index[utterance_id][str(layer_index)]
        except KeyError:
            raise KeyError(
                f"no dump for utterance {utterance_id!r} at layer {layer_index}"
            ) from None
        stored_layer, values = read_dump(os.path.join(self.directory, rel))
        if stored_layer != layer_index:
            raise ValueError(
                f"index says layer {layer_index} but file holds layer {stored_layer}"
            )
        return values

    def utterances(self):
        return sorted(self.index)


def compute_input_features(record, mfcc_config=None, use_cmvn=True, base_dir=None):
    """The exact feature matrix the acoustic model consumes for a record."""
    wave = load_audio(record, base_dir=base_dir)
    feats = compute_mfcc(wave, mfcc_config or MfccConfig())
    if use_cmvn:
        feats = apply_cmvn(feats)
    return feats


def extract_activations(
    am,
    manifest,
    taps,
    out_dir,
    mfcc_config=None,
    use_cmvn=True,
    base_dir=None,
):
    """Write one dump per (utterance, tapped layer) plus the index.

    Layer 0 writes the model's input features unchanged. Tap indices are
    validated against the model before any file is written; re-running on
    the same model and audio produces byte-identical dumps.
    """
    if not hasattr(taps, "layer_indices"):
        from .tdnnf import LayerTapSpec

        taps = LayerTapSpec(tuple(taps))
    taps.validate_range(am.config_.num_layers)

    os.makedirs(out_dir, exist_ok=True)
    index_path = os.path.join(out_dir, "index.json")
    index = {}
    if os.path.exists(index_path):
        with open(index_path, encoding="utf-8") as fh:
            index = json.load(fh)

    for record in manifest:
        feats = compute_input_features(record, mfcc_config, use_cmvn, base_dir)
        per_layer = am.activations([feats.values], taps.layer_indices)[0]
        entry = index.setdefault(record.id, {})
        for layer_index, values in sorted(per_layer.items()):
            rel = f"{record.id}.layer{layer_index}.ampb"
            write_dump(os.path.join(out_dir, rel), layer_index, values)
            entry[str(layer_index)] = rel

    tmp = index_path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=0, sort_keys=True)
    os.replace(tmp, index_path)
    return DumpStore(out_dir)
