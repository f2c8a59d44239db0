"""ECAPA-TDNN probe: SE-Res2Net frame blocks, multilayer feature
aggregation, attentive statistics pooling, and a 192-dim embedding with a
softmax or additive-angular-margin head.

One probe instance is trained per (task, representation) cell on frozen
features; training follows a one-cycle learning-rate schedule with AdamW or
SGD.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from sklearn.base import BaseEstimator

from .validation import check_feature_list, check_fitted, check_seed


class TrainingDivergence(RuntimeError):
    """Raised when the training loss goes non-finite."""


@dataclass(frozen=True)
class EcapaConfig:
    input_dim: int = 40
    channels: int = 1024
    num_blocks: int = 3
    dilations: tuple = (2, 3, 4)
    res2net_scale: int = 8
    attention_dim: int = 128
    embed_dim: int = 192
    head: str = "softmax"  # or "aam"
    num_classes: int = 2
    aam_margin: float = 0.2
    aam_scale: float = 30.0

    def __post_init__(self):
        if len(self.dilations) != self.num_blocks:
            raise ValueError("need one dilation per block")
        if self.channels % self.res2net_scale != 0:
            raise ValueError("channels must be divisible by res2net_scale")
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be at least 1")
        if self.head not in ("softmax", "aam"):
            raise ValueError("head must be 'softmax' or 'aam'")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")

    @property
    def mfa_dim(self):
        # aggregated width after the 1x1 conv over concatenated block outputs
        return 3 * self.channels // 2

    @classmethod
    def desk(cls, **overrides):
        params = dict(channels=64, attention_dim=64, res2net_scale=4)
        params.update(overrides)
        return cls(**params)


@dataclass(frozen=True)
class OneCycleSpec:
    total_steps: int = 300
    max_lr: float = 1e-3
    start_div: float = 25.0
    final_div: float = 1e4
    peak_fraction: float = 0.45
    optimizer: str = "adamw"  # or "sgd"

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")
        if not (0.0 < self.peak_fraction < 1.0):
            raise ValueError("peak_fraction must lie in (0, 1)")
        if self.max_lr <= 0:
            raise ValueError("max_lr must be positive")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError("optimizer must be 'adamw' or 'sgd'")


def one_cycle_lr(spec: OneCycleSpec, step):
    """Cosine warmup to max_lr at peak_fraction*total_steps, then cosine
    anneal to max_lr/(start_div*final_div)."""
    if not 0 <= step <= spec.total_steps:
        raise ValueError(f"step {step} outside [0, {spec.total_steps}]")
    peak = spec.peak_fraction * spec.total_steps
    low = spec.max_lr / spec.start_div
    final = low / spec.final_div
    if step <= peak:
        return low + (spec.max_lr - low) * 0.5 * (1.0 - math.cos(math.pi * step / peak))
    span = spec.total_steps - peak
    return final + (spec.max_lr - final) * 0.5 * (1.0 + math.cos(math.pi * (step - peak) / span))


def weighted_stats(values, weights, variance_floor=1e-9):
    """Attention-weighted per-channel mean and std over time.

    values: (C, T); weights: (C, T) nonnegative, each channel summing to 1.
    Returns (mu, sigma) with sigma = sqrt(max(E[h^2] - mu^2, floor)).
    """
    values = torch.as_tensor(np.asarray(values), dtype=torch.float64) if not torch.is_tensor(values) else values
    weights = torch.as_tensor(np.asarray(weights), dtype=values.dtype) if not torch.is_tensor(weights) else weights
    mu = (weights * values).sum(dim=-1)
    second = (weights * values**2).sum(dim=-1)
    sigma = torch.sqrt(torch.clamp(second - mu**2, min=variance_floor))
    return mu, sigma


class AttentiveStatsPool(nn.Module):
    """Channel- and context-dependent attention over time, producing
    concatenated weighted mean and std (2C from C channels)."""

    def __init__(self, channels, attention_dim):
        super().__init__()
        self.pre = nn.Conv1d(3 * channels, attention_dim, 1)
        self.post = nn.Conv1d(attention_dim, channels, 1)

    def attention_weights(self, x):
        t = x.shape[-1]
        mean = x.mean(dim=-1, keepdim=True).expand(-1, -1, t)
        std = x.std(dim=-1, unbiased=False, keepdim=True).expand(-1, -1, t)
        logits = self.post(torch.tanh(self.pre(torch.cat([x, mean, std], dim=1))))
        return torch.softmax(logits, dim=-1)

    def forward(self, x):
        alpha = self.attention_weights(x)
        mu = (alpha * x).sum(dim=-1)
        second = (alpha * x**2).sum(dim=-1)
        sigma = torch.sqrt(torch.clamp(second - mu**2, min=1e-9))
        return torch.cat([mu, sigma], dim=1)


class _SERes2NetBlock(nn.Module):
    def __init__(self, channels, scale, dilation):
        super().__init__()
        width = channels // scale
        self.scale = scale
        self.conv_in = nn.Conv1d(channels, channels, 1)
        self.bn_in = nn.BatchNorm1d(channels)
        self.convs = nn.ModuleList(
            nn.Conv1d(width, width, 3, dilation=dilation, padding=dilation)
            for _ in range(scale - 1)
        )
        self.conv_out = nn.Conv1d(channels, channels, 1)
        self.bn_out = nn.BatchNorm1d(channels)
        se_dim = max(channels // 8, 4)
        self.se = nn.Sequential(
            nn.Linear(channels, se_dim), nn.ReLU(), nn.Linear(se_dim, channels), nn.Sigmoid()
        )

    def forward(self, x):
        out = self.bn_in(F.relu(self.conv_in(x)))
        chunks = torch.chunk(out, self.scale, dim=1)
        pieces = [chunks[0]]
        prev = None
        for i, conv in enumerate(self.convs):
            inp = chunks[i + 1] if prev is None else chunks[i + 1] + prev
            prev = F.relu(conv(inp))
            pieces.append(prev)
        out = self.bn_out(F.relu(self.conv_out(torch.cat(pieces, dim=1))))
        gate = self.se(out.mean(dim=-1)).unsqueeze(-1)
        return x + out * gate


class _EcapaNet(nn.Module):
    def __init__(self, config: EcapaConfig):
        super().__init__()
        c = config.channels
        self.stem = nn.Conv1d(config.input_dim, c, 5, padding=2)
        self.stem_bn = nn.BatchNorm1d(c)
        self.blocks = nn.ModuleList(
            _SERes2NetBlock(c, config.res2net_scale, d) for d in config.dilations
        )
        self.mfa = nn.Conv1d(config.num_blocks * c, config.mfa_dim, 1)
        self.mfa_bn = nn.BatchNorm1d(config.mfa_dim)
        self.pool = AttentiveStatsPool(config.mfa_dim, config.attention_dim)
        self.pool_bn = nn.BatchNorm1d(2 * config.mfa_dim)
        self.embed = nn.Linear(2 * config.mfa_dim, config.embed_dim)

    def forward(self, x):
        x = self.stem_bn(F.relu(self.stem(x)))
        outs = []
        for block in self.blocks:
            x = block(x)
            outs.append(x)
        agg = self.mfa_bn(F.relu(self.mfa(torch.cat(outs, dim=1))))
        return self.embed(self.pool_bn(self.pool(agg)))


def aam_logits(embeddings, weights, labels, margin, scale):
    """Scaled cosine logits with an additive angular margin on the true
    class: logit_y = s*cos(theta_y + m), others s*cos(theta_j).

    Embeddings and class weights are L2-normalized here, so callers may pass
    raw vectors.
    """
    emb = F.normalize(embeddings, dim=-1)
    w = F.normalize(weights, dim=-1)
    cos = emb @ w.T
    if margin == 0.0:
        return scale * cos
    cos_y = cos.gather(1, labels.unsqueeze(1)).clamp(-1.0 + 1e-7, 1.0 - 1e-7)
    sin_y = torch.sqrt(1.0 - cos_y**2)
    adjusted = cos_y * math.cos(margin) - sin_y * math.sin(margin)
    return scale * cos.scatter(1, labels.unsqueeze(1), adjusted)


def aam_softmax_loss(embedding, class_weights, label, margin=0.2, scale=30.0):
    """Cross-entropy over margin-adjusted cosine logits for one embedding."""
    emb = torch.as_tensor(np.asarray(embedding), dtype=torch.float64).unsqueeze(0)
    weights = torch.as_tensor(np.asarray(class_weights), dtype=torch.float64)
    if not 0 <= label < weights.shape[0]:
        raise ValueError(f"label {label} out of range for {weights.shape[0]} classes")
    logits = aam_logits(emb, weights, torch.tensor([label]), margin, scale)
    return float(F.cross_entropy(logits, torch.tensor([label])))


class _AamHead(nn.Module):
    def __init__(self, embed_dim, num_classes, margin, scale):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(num_classes, embed_dim))
        self.margin = margin
        self.scale = scale

    def forward(self, embeddings, labels=None):
        if labels is None:
            # plain scaled cosine scores at inference
            return self.scale * (F.normalize(embeddings, dim=-1) @ F.normalize(self.weight, dim=-1).T)
        return aam_logits(embeddings, self.weight, labels, self.margin, self.scale)


@dataclass(frozen=True)
class Embedding:
    """Utterance-level vector; normalized means unit L2 norm."""

    vector: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=np.float32)
        if vector.ndim != 1 or not np.all(np.isfinite(vector)):
            raise ValueError("embedding must be a finite 1-D vector")
        if self.normalized and abs(np.linalg.norm(vector) - 1.0) > 1e-6:
            raise ValueError("embedding flagged normalized but L2 norm != 1")
        object.__setattr__(self, "vector", vector)

    def __len__(self):
        return len(self.vector)


class EcapaProbe(BaseEstimator):
    """Probe classifier/embedder over frozen frame features, sklearn-style.

    fit(X, y) takes a list of (T, D) arrays and one label per utterance
    (any hashable; classes_ records the sorted vocabulary). Training crops
    each sampled utterance to `crop_frames` frames; evaluation always sees
    the full utterance.
    """

    def __init__(
        self,
        config: EcapaConfig | None = None,
        schedule: OneCycleSpec | None = None,
        crop_frames=200,
        batch_size=16,
        seed=0,
    ):
        self.config = config
        self.schedule = schedule
        self.crop_frames = crop_frames
        self.batch_size = batch_size
        self.seed = seed

    # -- training -----------------------------------------------------------

    def fit(self, X, y):
        config = self.config if self.config is not None else EcapaConfig()
        schedule = self.schedule if self.schedule is not None else OneCycleSpec()
        check_seed(self.seed)
        feats = check_feature_list(X, expected_dim=config.input_dim, name="X")
        if len(feats) != len(y):
            raise ValueError("need exactly one label per utterance")

        self.classes_ = sorted(set(y))
        if len(self.classes_) != config.num_classes:
            raise ValueError(
                f"config expects {config.num_classes} classes but labels have "
                f"{len(self.classes_)}"
            )
        class_index = {label: i for i, label in enumerate(self.classes_)}
        targets = np.array([class_index[label] for label in y], dtype=np.int64)

        # per-dimension normalization statistics from the training split
        stacked = np.concatenate(feats, axis=0).astype(np.float64)
        self.norm_mean_ = stacked.mean(axis=0).astype(np.float32)
        std = stacked.std(axis=0)
        self.norm_std_ = np.where(std < 1e-8, 1.0, std).astype(np.float32)
        normed = [(f - self.norm_mean_) / self.norm_std_ for f in feats]

        generator = torch.Generator().manual_seed(self.seed)
        net = _EcapaNet(config)
        self._init_parameters(net, generator)
        if config.head == "aam":
            head = _AamHead(config.embed_dim, config.num_classes, config.aam_margin, config.aam_scale)
            head.weight.data = F.normalize(
                torch.randn(head.weight.shape, generator=generator), dim=-1
            )
        else:
            head = nn.Linear(config.embed_dim, config.num_classes)
            head.weight.data = torch.randn(head.weight.shape, generator=generator) * 0.01
            head.bias.data.zero_()

        params = list(net.parameters()) + list(head.parameters())
        if schedule.optimizer == "sgd":
            optimizer = torch.optim.SGD(params, lr=one_cycle_lr(schedule, 0), momentum=0.9)
        else:
            optimizer = torch.optim.AdamW(params, lr=one_cycle_lr(schedule, 0))

        net.train()
        head.train()
        curve = []
        for step in range(schedule.total_steps):
            lr = one_cycle_lr(schedule, step)
            for group in optimizer.param_groups:
                group["lr"] = lr
            idx = torch.randint(0, len(normed), (min(self.batch_size, len(normed)),), generator=generator)
            batch = self._crop_batch(normed, idx.tolist(), generator)
            labels = torch.from_numpy(targets[idx.numpy()])
            embeddings = net(batch)
            logits = head(embeddings, labels) if config.head == "aam" else head(embeddings)
            loss = F.cross_entropy(logits, labels)
            if not torch.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            curve.append((step, lr, float(loss.detach())))
        net.eval()
        head.eval()

        self.net_ = net
        self.head_ = head
        self.config_ = config
        self.schedule_ = schedule
        self.curve_ = curve
        self.final_loss_ = curve[-1][2] if curve else float("nan")
        return self

    def _init_parameters(self, net, generator):
        for module in net.modules():
            if isinstance(module, (nn.Conv1d, nn.Linear)):
                fan_in = module.weight.shape[1] * (
                    module.weight.shape[2] if module.weight.ndim == 3 else 1
                )
                module.weight.data = torch.randn(module.weight.shape, generator=generator) / math.sqrt(fan_in)
                if module.bias is not None:
                    module.bias.data.zero_()

    def _crop_batch(self, normed, indices, generator):
        crop = min([self.crop_frames] + [normed[i].shape[0] for i in indices])
        pieces = []
        for i in indices:
            t = normed[i].shape[0]
            start = int(torch.randint(0, t - crop + 1, (1,), generator=generator)) if t > crop else 0
            pieces.append(torch.from_numpy(normed[i][start : start + crop]))
        return torch.stack(pieces).transpose(1, 2)

    # -- inference ----------------------------------------------------------

    def _embed_many(self, feats, chunk=32):
        """Full-length embeddings for a list of utterances, batching
        same-length inputs together (eval-mode batch norm, so batching does
        not change any value)."""
        out = [None] * len(feats)
        by_length = {}
        for i, f in enumerate(feats):
            by_length.setdefault(f.shape[0], []).append(i)
        with torch.no_grad():
            for _, indices in sorted(by_length.items()):
                for start in range(0, len(indices), chunk):
                    group = indices[start : start + chunk]
                    x = np.stack(
                        [(feats[i] - self.norm_mean_) / self.norm_std_ for i in group]
                    )
                    emb = self.net_(torch.from_numpy(x).transpose(1, 2))
                    for row, i in enumerate(group):
                        out[i] = emb[row]
        return torch.stack(out)

    def transform(self, X):
        """L2-normalized embeddings, one row per utterance."""
        check_fitted(self, "net_")
        feats = check_feature_list(X, expected_dim=self.config_.input_dim, name="X")
        embeddings = self._embed_many(feats)
        return F.normalize(embeddings, dim=-1).numpy()

    def decision_logits(self, X):
        check_fitted(self, "net_")
        feats = check_feature_list(X, expected_dim=self.config_.input_dim, name="X")
        with torch.no_grad():
            return self.head_(self._embed_many(feats)).numpy()

    def predict(self, X):
        logits = self.decision_logits(X)
        return [self.classes_[i] for i in logits.argmax(axis=1)]

    def score(self, X, y):
        predictions = self.predict(X)
        return sum(p == t for p, t in zip(predictions, y)) / len(y)


def extract_embedding(probe: EcapaProbe, feats) -> Embedding:
    """Embed one utterance (full length, deterministic)."""
    vector = probe.transform([feats])[0]
    return Embedding(vector, normalized=True)


def ecapa_forward(probe: EcapaProbe, feats):
    """(Embedding, head logits) for one utterance."""
    embedding = extract_embedding(probe, feats)
    logits = probe.decision_logits([feats])[0]
    return embedding, logits


def save_probe(probe: EcapaProbe, path):
    check_fitted(probe, "net_")
    torch.save(
        {
            "config": asdict(probe.config_),
            "schedule": asdict(probe.schedule_),
            "train_params": {
                "crop_frames": probe.crop_frames,
                "batch_size": probe.batch_size,
                "seed": probe.seed,
            },
            "classes": list(probe.classes_),
            "net_state": probe.net_.state_dict(),
            "head_state": probe.head_.state_dict(),
            "norm_mean": torch.from_numpy(np.asarray(probe.norm_mean_)),
            "norm_std": torch.from_numpy(np.asarray(probe.norm_std_)),
            "curve": probe.curve_,
        },
        path,
    )


def load_probe(path) -> EcapaProbe:
    payload = torch.load(path, weights_only=True)
    config_dict = dict(payload["config"])
    config_dict["dilations"] = tuple(config_dict["dilations"])
    config = EcapaConfig(**config_dict)
    schedule = OneCycleSpec(**payload["schedule"])
    probe = EcapaProbe(config=config, schedule=schedule, **payload["train_params"])
    net = _EcapaNet(config)
    net.load_state_dict(payload["net_state"])
    net.eval()
    if config.head == "aam":
        head = _AamHead(config.embed_dim, config.num_classes, config.aam_margin, config.aam_scale)
    else:
        head = nn.Linear(config.embed_dim, config.num_classes)
    head.load_state_dict(payload["head_state"])
    head.eval()
    probe.net_ = net
    probe.head_ = head
    probe.config_ = config
    probe.schedule_ = schedule
    probe.classes_ = payload["classes"]
    probe.norm_mean_ = payload["norm_mean"].numpy()
    probe.norm_std_ = payload["norm_std"].numpy()
    probe.curve_ = [tuple(entry) for entry in payload["curve"]]
    probe.final_loss_ = probe.curve_[-1][2] if probe.curve_ else float("nan")
    return probe
