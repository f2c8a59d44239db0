"""Factorized time-delay network (TDNN-F) frame classifier.

Each hidden layer is a pair of factors: a constrained linear projection into
a narrow bottleneck over spliced temporal context, then an affine expansion
back to the wide layer, followed by ReLU and batch normalization. The first
factor is periodically pushed toward semi-orthogonality (M M^T ~ beta*I)
during training.

Temporal context is consumed without padding, so layer k's output is shorter
than its input by the context its splices cover; `predict` targets align to
input frames shifted by the total left context.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator

from .validation import check_feature_list, check_fitted, check_seed


def default_context_offsets(num_layers):
    """(-1,0,1) splices for the first three layers, then alternating
    (-3,0,3) and (0,) up the stack."""
    offsets = []
    for layer in range(1, num_layers + 1):
        if layer <= 3:
            offsets.append((-1, 0, 1))
        elif (layer - 4) % 2 == 0:
            offsets.append((-3, 0, 3))
        else:
            offsets.append((0,))
    return tuple(offsets)


@dataclass(frozen=True)
class TdnnfConfig:
    num_layers: int = 16
    hidden_dim: int = 1536
    bottleneck_dim: int = 160
    context_offsets: tuple | None = None  # None -> default_context_offsets
    num_targets: int = 8
    semiortho_every: int = 4
    semiortho_alpha: float = 0.125

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be at least 1")
        if not (0 < self.bottleneck_dim < self.hidden_dim):
            raise ValueError("require 0 < bottleneck_dim < hidden_dim")
        if self.num_targets < 1 or self.semiortho_every < 1:
            raise ValueError("num_targets and semiortho_every must be positive")
        offsets = self.layer_offsets()
        if len(offsets) != self.num_layers:
            raise ValueError("context_offsets must list one splice tuple per layer")
        for splice in offsets:
            diffs = set(np.diff(splice)) if len(splice) > 1 else set()
            if len(diffs) > 1:
                raise ValueError(f"splice offsets must be evenly spaced, got {splice}")

    def layer_offsets(self):
        return self.context_offsets or default_context_offsets(self.num_layers)

    @classmethod
    def desk(cls, **overrides):
        """Small configuration that trains in seconds on a laptop CPU."""
        params = dict(hidden_dim=64, bottleneck_dim=16)
        params.update(overrides)
        return cls(**params)


@dataclass(frozen=True)
class LayerTapSpec:
    """Which layer outputs to export; index 0 is the front-end passthrough."""

    layer_indices: tuple
    tap_point: str = "post_activation"

    def __post_init__(self):
        if self.tap_point != "post_activation":
            raise ValueError("only post_activation taps are supported")
        if len(self.layer_indices) == 0:
            raise ValueError("need at least one tap index")
        object.__setattr__(self, "layer_indices", tuple(sorted(set(int(i) for i in self.layer_indices))))

    def validate_range(self, num_layers):
        for idx in self.layer_indices:
            if not 0 <= idx <= num_layers:
                raise ValueError(
                    f"tap index {idx} out of range for a {num_layers}-layer model"
                )


def semiortho_step(factor, alpha=0.125):
    """One constraint update M' = M - 4*alpha*(P - beta*I) M with
    P = M M^T and beta = trace(P P)/trace(P).

    Requires a wide matrix (more columns than rows). The update is a fixed
    point exactly when P is already a multiple of the identity, and it
    contracts the residual for factors near unit row scale (the training
    regime: variance-scaled init keeps beta near 1).
    """
    is_numpy = not torch.is_tensor(factor)
    m = torch.as_tensor(np.asarray(factor), dtype=torch.float64) if is_numpy else factor
    if m.ndim != 2 or m.shape[0] > m.shape[1]:
        raise ValueError(f"factor must be wide (rows <= cols), got shape {tuple(m.shape)}")
    p = m @ m.T
    trace_p = torch.trace(p)
    if trace_p <= 0:
        raise ValueError("degenerate factor: M M^T has zero trace")
    beta = torch.trace(p @ p) / trace_p
    eye = torch.eye(p.shape[0], dtype=m.dtype, device=m.device)
    out = m - 4.0 * alpha * (p - beta * eye) @ m
    return out.numpy() if is_numpy else out


def semiortho_residual(factor):
    """||M M^T / beta - I||_F / sqrt(rows); 0 means exactly semi-orthogonal."""
    m = torch.as_tensor(np.asarray(factor), dtype=torch.float64) if not torch.is_tensor(factor) else factor.double()
    p = m @ m.T
    beta = torch.trace(p @ p) / torch.trace(p)
    eye = torch.eye(p.shape[0], dtype=torch.float64)
    return float(torch.linalg.norm(p / beta - eye) / math.sqrt(p.shape[0]))


class _TdnnfLayer(nn.Module):
    def __init__(self, in_dim, hidden_dim, bottleneck_dim, offsets):
        super().__init__()
        kernel = len(offsets)
        dilation = int(offsets[1] - offsets[0]) if kernel > 1 else 1
        self.left_context = -int(offsets[0])
        self.right_context = int(offsets[-1])
        self.factor_a = nn.Conv1d(in_dim, bottleneck_dim, kernel, dilation=dilation, bias=False)
        self.factor_b = nn.Conv1d(bottleneck_dim, hidden_dim, 1, bias=True)
        self.norm = nn.BatchNorm1d(hidden_dim)

    def forward(self, x):
        return self.norm(F.relu(self.factor_b(self.factor_a(x))))


class _TdnnfNet(nn.Module):
    def __init__(self, input_dim, config: TdnnfConfig):
        super().__init__()
        layers = []
        in_dim = input_dim
        for offsets in config.layer_offsets():
            layers.append(_TdnnfLayer(in_dim, config.hidden_dim, config.bottleneck_dim, offsets))
            in_dim = config.hidden_dim
        self.layers = nn.ModuleList(layers)
        self.head = nn.Conv1d(config.hidden_dim, config.num_targets, 1)

    def forward(self, x, collect_layers=()):
        taps = {}
        for index, layer in enumerate(self.layers, start=1):
            x = layer(x)
            if index in collect_layers:
                taps[index] = x
        return F.log_softmax(self.head(x), dim=1), taps

    def init_parameters(self, generator):
        for layer in self.layers:
            for conv in (layer.factor_a, layer.factor_b):
                fan_in = conv.weight.shape[1] * conv.weight.shape[2]
                conv.weight.data = torch.randn(conv.weight.shape, generator=generator) / math.sqrt(fan_in)
                if conv.bias is not None:
                    conv.bias.data.zero_()
        fan_in = self.head.weight.shape[1]
        self.head.weight.data = torch.randn(self.head.weight.shape, generator=generator) / math.sqrt(fan_in)
        self.head.bias.data.zero_()

    def constrain_factors(self, alpha):
        """Apply the semi-orthogonal update to every first factor in place.

        Tall factors (possible in the first layer when the spliced input is
        narrower than the bottleneck) are constrained through their
        transpose.
        """
        with torch.no_grad():
            for layer in self.layers:
                weight = layer.factor_a.weight
                m = weight.view(weight.shape[0], -1)
                if m.shape[0] <= m.shape[1]:
                    updated = semiortho_step(m, alpha)
                else:
                    updated = semiortho_step(m.T, alpha).T
                weight.copy_(updated.view_as(weight))

    def factor_residuals(self):
        out = []
        for layer in self.layers:
            weight = layer.factor_a.weight.detach()
            m = weight.view(weight.shape[0], -1)
            if m.shape[0] > m.shape[1]:
                m = m.T
            out.append(semiortho_residual(m))
        return out


class TdnnfClassifier(BaseEstimator):
    """Frame-level classifier over spliced features, sklearn-style.

    fit(X, y) takes lists of (T, D) feature arrays and (T,) integer target
    arrays; targets are aligned to input frames, and the network's temporal
    context trims `left_context_` frames from the front and
    `right_context_` from the back of each utterance.
    """

    def __init__(
        self,
        config: TdnnfConfig | None = None,
        steps=500,
        lr=2e-3,
        batch_size=8,
        holdout_fraction=0.0,
        min_margin_over_chance=None,
        seed=0,
    ):
        self.config = config
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.holdout_fraction = holdout_fraction
        self.min_margin_over_chance = min_margin_over_chance
        self.seed = seed

    def _resolved_config(self):
        return self.config if self.config is not None else TdnnfConfig()

    # -- training -----------------------------------------------------------

    def _prepare(self, X, y, config):
        feats = check_feature_list(X, name="X")
        if y is None or len(y) != len(feats):
            raise ValueError("y must provide frame targets for every utterance")
        pairs = []
        for i, (f, t) in enumerate(zip(feats, y)):
            if t is None:
                raise ValueError(f"utterance {i} is missing frame targets")
            targets = np.asarray(t, dtype=np.int64)
            if targets.ndim != 1:
                raise ValueError(f"utterance {i}: frame targets must be 1-D")
            n = min(len(targets), f.shape[0])
            if n <= self.left_context_ + self.right_context_:
                raise ValueError(
                    f"utterance {i} has {n} frames, shorter than the model's "
                    f"context ({self.left_context_ + self.right_context_ + 1})"
                )
            if targets.max() >= config.num_targets or targets.min() < 0:
                raise ValueError(
                    f"utterance {i}: target ids must lie in [0, {config.num_targets})"
                )
            pairs.append((f[:n], targets[:n]))
        return pairs

    def _batch_loss(self, net, pairs, indices):
        total_nll = 0.0
        total_frames = 0
        by_length = {}
        for i in indices:
            by_length.setdefault(pairs[i][0].shape[0], []).append(i)
        for length, group in sorted(by_length.items()):
            x = torch.stack([torch.from_numpy(pairs[i][0]) for i in group]).transpose(1, 2)
            t = torch.stack(
                [
                    torch.from_numpy(pairs[i][1][self.left_context_ : length - self.right_context_])
                    for i in group
                ]
            )
            log_probs, _ = net(x)
            total_nll = total_nll + F.nll_loss(log_probs, t, reduction="sum")
            total_frames += t.numel()
        return total_nll / total_frames

    def fit(self, X, y):
        config = self._resolved_config()
        check_seed(self.seed)
        offsets = config.layer_offsets()
        self.left_context_ = sum(-o[0] for o in offsets)
        self.right_context_ = sum(o[-1] for o in offsets)

        pairs = self._prepare(X, y, config)
        if not pairs:
            raise ValueError("empty training set")
        self.input_dim_ = pairs[0][0].shape[1]

        generator = torch.Generator().manual_seed(self.seed)
        order = torch.randperm(len(pairs), generator=generator).tolist()
        n_holdout = int(round(self.holdout_fraction * len(pairs)))
        holdout = [pairs[i] for i in order[:n_holdout]]
        train = [pairs[i] for i in order[n_holdout:]]
        if not train:
            raise ValueError("holdout_fraction leaves no training utterances")

        net = _TdnnfNet(self.input_dim_, config)
        net.init_parameters(generator)
        net.constrain_factors(config.semiortho_alpha)
        optimizer = torch.optim.Adam(net.parameters(), lr=self.lr)

        net.train()
        curve = []
        for step in range(self.steps):
            idx = torch.randint(0, len(train), (min(self.batch_size, len(train)),), generator=generator)
            loss = self._batch_loss(net, train, idx.tolist())
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if (step + 1) % config.semiortho_every == 0:
                net.constrain_factors(config.semiortho_alpha)
            curve.append(float(loss.detach()))
        net.constrain_factors(config.semiortho_alpha)
        net.eval()

        self.net_ = net
        self.loss_curve_ = curve
        self.final_loss_ = curve[-1] if curve else float("nan")
        self.config_ = config

        if holdout:
            correct, total = self._frame_matches(holdout)
            self.holdout_accuracy_ = correct / total
            margin = self.min_margin_over_chance
            if margin is not None:
                chance = 1.0 / config.num_targets
                if self.holdout_accuracy_ < chance + margin:
                    raise RuntimeError(
                        f"held-out frame accuracy {self.holdout_accuracy_:.3f} below "
                        f"chance + margin ({chance + margin:.3f})"
                    )
        else:
            self.holdout_accuracy_ = None
        return self

    def _frame_matches(self, pairs):
        correct = 0
        total = 0
        with torch.no_grad():
            for feats, targets in pairs:
                x = torch.from_numpy(feats).T.unsqueeze(0)
                log_probs, _ = self.net_(x)
                pred = log_probs.squeeze(0).argmax(dim=0).numpy()
                ref = targets[self.left_context_ : feats.shape[0] - self.right_context_]
                correct += int((pred == ref).sum())
                total += len(ref)
        return correct, total

    # -- inference ----------------------------------------------------------

    def _batched_forward(self, feats, collect_layers=(), chunk=32):
        """Eval-mode forward over a list of utterances, grouping equal
        lengths into batches (values are identical to one-by-one forwards)."""
        log_probs = [None] * len(feats)
        taps = [None] * len(feats)
        by_length = {}
        for i, f in enumerate(feats):
            by_length.setdefault(f.shape[0], []).append(i)
        with torch.no_grad():
            for _, indices in sorted(by_length.items()):
                for start in range(0, len(indices), chunk):
                    group = indices[start : start + chunk]
                    x = torch.from_numpy(np.stack([feats[i] for i in group])).transpose(1, 2)
                    lp, collected = self.net_(x, collect_layers=collect_layers)
                    for row, i in enumerate(group):
                        log_probs[i] = lp[row].T.numpy()
                        taps[i] = {k: v[row].T.numpy().astype(np.float32) for k, v in collected.items()}
        return log_probs, taps

    def predict_log_proba(self, X):
        check_fitted(self, "net_")
        feats = check_feature_list(X, expected_dim=self.input_dim_, name="X")
        log_probs, _ = self._batched_forward(feats)
        return log_probs

    def predict(self, X):
        return [lp.argmax(axis=1) for lp in self.predict_log_proba(X)]

    def score(self, X, y):
        """Mean frame accuracy against context-aligned targets."""
        check_fitted(self, "net_")
        feats = check_feature_list(X, expected_dim=self.input_dim_, name="X")
        pairs = [(f, np.asarray(t, dtype=np.int64)) for f, t in zip(feats, y)]
        correct, total = self._frame_matches(pairs)
        return correct / total

    def activations(self, X, layers):
        """Per-layer post-activation outputs.

        Returns one dict per utterance mapping layer index -> (T_k, hidden)
        float32 array; layer 0 passes the input features through unchanged.
        """
        check_fitted(self, "net_")
        taps = LayerTapSpec(tuple(layers))
        taps.validate_range(self.config_.num_layers)
        feats = check_feature_list(X, expected_dim=self.input_dim_, name="X")
        wanted = set(taps.layer_indices)
        _, collected = self._batched_forward(feats, collect_layers=wanted - {0})
        out = []
        for f, per_utt in zip(feats, collected):
            if 0 in wanted:
                per_utt[0] = f.astype(np.float32)
            out.append(per_utt)
        return out

    def frame_nll(self, X, y):
        """Training objective on a batch, kept differentiable (used by the
        finite-difference gradient checks)."""
        check_fitted(self, "net_")
        pairs = self._prepare(X, y, self.config_)
        return self._batch_loss(self.net_, pairs, list(range(len(pairs))))

    def factor_residuals(self):
        check_fitted(self, "net_")
        return self.net_.factor_residuals()


def save_am(am: TdnnfClassifier, path):
    check_fitted(am, "net_")
    torch.save(
        {
            "config": asdict(am.config_),
            "train_params": {
                "steps": am.steps,
                "lr": am.lr,
                "batch_size": am.batch_size,
                "holdout_fraction": am.holdout_fraction,
                "seed": am.seed,
            },
            "input_dim": am.input_dim_,
            "state_dict": am.net_.state_dict(),
            "loss_curve": am.loss_curve_,
            "holdout_accuracy": am.holdout_accuracy_,
        },
        path,
    )


def load_am(path) -> TdnnfClassifier:
    payload = torch.load(path, weights_only=True)
    config = TdnnfConfig(**{
        k: tuple(tuple(o) for o in v) if k == "context_offsets" and v is not None else v
        for k, v in payload["config"].items()
    })
    am = TdnnfClassifier(config=config, **payload["train_params"])
    offsets = config.layer_offsets()
    am.left_context_ = sum(-o[0] for o in offsets)
    am.right_context_ = sum(o[-1] for o in offsets)
    am.input_dim_ = payload["input_dim"]
    net = _TdnnfNet(am.input_dim_, config)
    net.load_state_dict(payload["state_dict"])
    net.eval()
    am.net_ = net
    am.config_ = config
    am.loss_curve_ = payload["loss_curve"]
    am.final_loss_ = am.loss_curve_[-1] if am.loss_curve_ else float("nan")
    am.holdout_accuracy_ = payload["holdout_accuracy"]
    return am
