"""Three-lead SE-ResNet network with lead-wise attention, a heartbeat-count
head and demographic fusion."""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np

from . import nncore as nn
from .demographics import DEMOG_DIM
from .errors import FormatError, ParameterError, ShapeError
from .nncore import Tensor

TASKS = ("multi-class", "multi-label")


@dataclass
class BackboneConfig:
    stem_channels: int = 16
    stage_channels: tuple = (16, 32, 64)
    blocks_per_stage: tuple = (1, 1, 1)
    kernel_size: int = 7
    se_reduction: int = 4
    stem_kernel: int = 15
    stem_stride: int = 2
    pool_kernel: int = 3
    pool_stride: int = 2

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.blocks_per_stage = tuple(int(b) for b in self.blocks_per_stage)
        if len(self.stage_channels) != len(self.blocks_per_stage):
            raise ParameterError("stage_channels and blocks_per_stage differ in length")
        for c in self.stage_channels:
            if c % self.se_reduction:
                raise ParameterError(f"se_reduction {self.se_reduction} does not divide stage width {c}")

    @property
    def feature_dim(self) -> int:
        return self.stage_channels[-1]

    @classmethod
    def desk(cls) -> "BackboneConfig":
        return cls()

    @classmethod
    def full(cls) -> "BackboneConfig":
        """1D SE-ResNet18: four stages of two blocks."""
        return cls(stem_channels=64, stage_channels=(64, 128, 256, 512), blocks_per_stage=(2, 2, 2, 2),
                   kernel_size=7, se_reduction=16)

    @classmethod
    def tiny(cls) -> "BackboneConfig":
        return cls(stem_channels=4, stage_channels=(4, 8), blocks_per_stage=(1, 1), kernel_size=3,
                   se_reduction=2, stem_kernel=5)


@dataclass
class X3Config:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    attention_hidden: Optional[int] = None  # None ties it to the feature width D
    demog_dim: int = DEMOG_DIM
    demog_hidden: int = 128
    num_classes: int = 4
    task: str = "multi-class"
    lam: float = 0.02
    dropout_p: float = 0.2
    use_demographics: bool = True
    use_hc: bool = True
    input_length: int = 5000

    def __post_init__(self):
        if self.lam < 0:
            raise ParameterError(f"lambda must be non-negative, got {self.lam}")
        if self.num_classes < 2:
            raise ParameterError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.demog_dim != DEMOG_DIM:
            raise ParameterError(f"demog_dim must be {DEMOG_DIM}")
        if self.task not in TASKS:
            raise ParameterError(f"task must be one of {TASKS}, got {self.task!r}")

    @property
    def feature_dim(self) -> int:
        return self.backbone.feature_dim

    @property
    def hidden(self) -> int:
        return self.attention_hidden or self.feature_dim

    def to_text(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if k == "backbone":
                for bk, bv in v.items():
                    lines.append(f"backbone.{bk}={_fmt(bv)}")
            else:
                lines.append(f"{k}={_fmt(v)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "X3Config":
        top = {f.name: f.type for f in fields(cls)}
        bb_kwargs, kwargs = {}, {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if key.startswith("backbone."):
                bb_kwargs[key[len("backbone."):]] = _parse(value)
            elif key in top:
                kwargs[key] = _parse(value)
            else:
                raise FormatError(f"unknown config key {key!r}")
        return cls(backbone=BackboneConfig(**bb_kwargs), **kwargs)


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(value: str):
    value = value.strip()
    if value == "None":
        return None
    if value in ("True", "False"):
        return value == "True"
    if "," in value:
        return tuple(int(x) for x in value.split(","))
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


@dataclass
class ModelOutput:
    logits: Tensor
    n_pred: Optional[Tensor]
    alpha: Tensor
    f_merged: Tensor
    f_demog: Optional[Tensor]
    f_final: Tensor


def _kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class X3ECG:
    """Parameters, running statistics and forward pass of the full network.

    ``params`` maps names to trainable Tensors (insertion order is the
    checkpoint order); ``buffers`` maps batch-norm layer names to running
    statistics.
    """

    def __init__(self, config: X3Config, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, nn.BatchNormStats] = {}
        rng = np.random.default_rng(seed)
        self._build(rng)

    # -- construction -------------------------------------------------------

    def _conv(self, rng, name, cout, cin, k):
        self.params[f"{name}.w"] = Tensor(_kaiming_uniform(rng, (cout, cin, k), cin * k), True)

    def _dense(self, rng, name, dout, din):
        self.params[f"{name}.w"] = Tensor(_kaiming_uniform(rng, (dout, din), din), True)
        self.params[f"{name}.b"] = Tensor(np.zeros(dout), True)

    def _bn(self, name, c, gamma=1.0):
        self.params[f"{name}.gamma"] = Tensor(np.full(c, gamma), True)
        self.params[f"{name}.beta"] = Tensor(np.zeros(c), True)
        self.buffers[name] = nn.BatchNormStats(c)

    def _build(self, rng):
        cfg, bb = self.config, self.config.backbone
        k = bb.kernel_size
        for lead in range(3):
            p = f"bb{lead}"
            self._conv(rng, f"{p}.stem.conv", bb.stem_channels, 1, bb.stem_kernel)
            self._bn(f"{p}.stem.bn", bb.stem_channels)
            cin = bb.stem_channels
            for s, (width, nblocks) in enumerate(zip(bb.stage_channels, bb.blocks_per_stage)):
                for blk in range(nblocks):
                    q = f"{p}.s{s}.b{blk}"
                    stride = 2 if (s > 0 and blk == 0) else 1
                    self._conv(rng, f"{q}.conv1", width, cin, k)
                    self._bn(f"{q}.bn1", width)
                    self._conv(rng, f"{q}.conv2", width, width, k)
                    self._bn(f"{q}.bn2", width, gamma=0.0)
                    self._dense(rng, f"{q}.se1", width // bb.se_reduction, width)
                    self._dense(rng, f"{q}.se2", width, width // bb.se_reduction)
                    if stride != 1 or cin != width:
                        self._conv(rng, f"{q}.proj", width, cin, 1)
                        self._bn(f"{q}.proj_bn", width)
                    cin = width
        d, h = cfg.feature_dim, cfg.hidden
        self._dense(rng, "att.fc1", h, 3 * d)
        self._bn("att.bn", h)
        self._dense(rng, "att.fc2", 3, h)
        self._dense(rng, "hc", 1, d)
        cls_in = d
        if cfg.use_demographics:
            self._dense(rng, "demog.fc1", cfg.demog_hidden, cfg.demog_dim)
            self._bn("demog.bn1", cfg.demog_hidden)
            self._dense(rng, "demog.fc2", cfg.demog_hidden, cfg.demog_hidden)
            self._bn("demog.bn2", cfg.demog_hidden)
            cls_in += cfg.demog_hidden
        self._dense(rng, "cls", cfg.num_classes, cls_in)

    # -- helpers ------------------------------------------------------------

    def _p(self, name) -> Tensor:
        return self.params[name]

    def _bn_apply(self, x, name, mode):
        return nn.batchnorm1d(x, self._p(f"{name}.gamma"), self._p(f"{name}.beta"), self.buffers[name], mode)

    def _dense_apply(self, x, name):
        return nn.dense(x, self._p(f"{name}.w"), self._p(f"{name}.b"))

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.params.values()))

    # -- forward pieces -------------------------------------------------------

    def backbone_forward(self, lead: Tensor, index: int, mode: str = "train") -> Tensor:
        """One lead ``[N, 1, L]`` -> feature vector ``[N, D]``."""
        bb = self.config.backbone
        if lead.ndim != 3 or lead.shape[1] != 1:
            raise ShapeError(f"backbone expects [N, 1, L], got {lead.shape}")
        p = f"bb{index}"
        x = nn.conv1d(lead, self._p(f"{p}.stem.conv.w"), None, bb.stem_stride, bb.stem_kernel // 2)
        x = nn.relu(self._bn_apply(x, f"{p}.stem.bn", mode))
        x = nn.maxpool1d(x, bb.pool_kernel, bb.pool_stride, bb.pool_kernel // 2)
        for s, nblocks in enumerate(bb.blocks_per_stage):
            for blk in range(nblocks):
                stride = 2 if (s > 0 and blk == 0) else 1
                x = self._se_block(x, f"{p}.s{s}.b{blk}", stride, mode)
        return nn.global_avg_pool1d(x)

    def _se_block(self, x: Tensor, q: str, stride: int, mode: str) -> Tensor:
        k = self.config.backbone.kernel_size
        h = nn.conv1d(x, self._p(f"{q}.conv1.w"), None, stride, k // 2)
        h = nn.relu(self._bn_apply(h, f"{q}.bn1", mode))
        h = nn.conv1d(h, self._p(f"{q}.conv2.w"), None, 1, k // 2)
        h = self._bn_apply(h, f"{q}.bn2", mode)
        h = self.se_gate(h, q)
        if f"{q}.proj.w" in self.params:
            short = nn.conv1d(x, self._p(f"{q}.proj.w"), None, stride, 0)
            short = self._bn_apply(short, f"{q}.proj_bn", mode)
        else:
            short = x
        return nn.relu(h + short)

    def se_gate(self, h: Tensor, q: str) -> Tensor:
        squeeze = nn.global_avg_pool1d(h)
        z = nn.relu(self._dense_apply(squeeze, f"{q}.se1"))
        gate = nn.sigmoid(self._dense_apply(z, f"{q}.se2"))
        return h * gate.reshape(gate.shape[0], gate.shape[1], 1)

    def leadwise_attention(self, feats, mode: str = "train", rng=None) -> tuple[Tensor, Tensor]:
        """Sigmoid scores over the concatenated lead features, then a weighted sum."""
        if len({f.shape for f in feats}) != 1:
            raise ShapeError(f"lead features differ in shape: {[f.shape for f in feats]}")
        c = nn.concat(list(feats), axis=1)
        h = self._dense_apply(c, "att.fc1")
        h = nn.relu(self._bn_apply(h, "att.bn", mode))
        h = nn.dropout(h, self.config.dropout_p, mode, rng)
        alpha = nn.sigmoid(self._dense_apply(h, "att.fc2"))
        merged = None
        for i, f in enumerate(feats):
            term = alpha[:, i : i + 1] * f
            merged = term if merged is None else merged + term
        return merged, alpha

    def heartbeat_head(self, f_merged: Tensor) -> Tensor:
        out = self._dense_apply(f_merged, "hc")
        return out.reshape(out.shape[0])

    def demographic_mlp(self, v: Tensor, mode: str = "train", rng=None) -> Tensor:
        if v.ndim != 2 or v.shape[1] != self.config.demog_dim:
            raise ShapeError(f"demographic input must be [N, {self.config.demog_dim}], got {v.shape}")
        h = nn.relu(self._bn_apply(self._dense_apply(v, "demog.fc1"), "demog.bn1", mode))
        h = nn.dropout(h, 0.2, mode, rng)
        return nn.relu(self._bn_apply(self._dense_apply(h, "demog.fc2"), "demog.bn2", mode))

    def forward(self, x, demog=None, mode: str = "train", rng=None, compute_hc: bool = True) -> ModelOutput:
        """Full network on ``x: [N, 3, L]`` and ``demog: [N, 11]``."""
        cfg = self.config
        x = nn.as_tensor(x)
        if x.ndim != 3 or x.shape[1] != 3:
            raise ShapeError(f"input must be [N, 3, L], got {x.shape}")
        feats = [self.backbone_forward(x[:, i : i + 1, :], i, mode) for i in range(3)]
        f_merged, alpha = self.leadwise_attention(feats, mode, rng)
        n_pred = self.heartbeat_head(f_merged) if (compute_hc and cfg.use_hc) else None
        f_demog = None
        if cfg.use_demographics:
            if demog is None:
                raise ShapeError("this model expects demographic input")
            f_demog = self.demographic_mlp(nn.as_tensor(demog), mode, rng)
            f_final = nn.concat([f_demog, f_merged], axis=1)
        else:
            f_final = f_merged
        logits = self._dense_apply(f_final, "cls")
        return ModelOutput(logits, n_pred, alpha, f_merged, f_demog, f_final)

    __call__ = forward

    # -- state --------------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        out = {name: t.data.copy() for name, t in self.params.items()}
        for name, st in self.buffers.items():
            out[f"{name}.running_mean"] = st.mean.copy()
            out[f"{name}.running_var"] = st.var.copy()
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        expected = self.state()
        missing = set(expected) - set(state)
        extra = set(state) - set(expected)
        if missing or extra:
            raise ShapeError(f"state mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
        for name, arr in state.items():
            if arr.shape != expected[name].shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {expected[name].shape}")
        for name, t in self.params.items():
            t.data = np.array(state[name], dtype=np.float64)
        for name, st in self.buffers.items():
            st.mean = np.array(state[f"{name}.running_mean"], dtype=np.float64)
            st.var = np.array(state[f"{name}.running_var"], dtype=np.float64)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None


def save_checkpoint(model: X3ECG, path) -> None:
    """Tensor container followed by the plain-text config section."""
    buf = io.BytesIO()
    nn.write_tensors(buf, model.state())
    buf.write(model.config.to_text().encode("utf-8"))
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> X3ECG:
    with open(path, "rb") as f:
        state = nn.read_tensors(f)
        config = X3Config.from_text(f.read().decode("utf-8"))
    model = X3ECG(config)
    model.load_state(state)
    return model
