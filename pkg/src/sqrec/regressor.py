"""CNN parameter regressor: architectures, training protocol, prediction.

The network maps a single-channel range image to the 8 shape parameters in
their scaled [0, 1] encoding.  Input depths are divided by the frame size so
pixels land in [0, 1] as well.  Training minimizes the batch-mean squared
Euclidean distance between predicted and true scaled vectors with Adam, a
stepwise learning-rate schedule, and early stopping on validation loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from hashlib import sha256

import numpy as np

from .geometry import FRAME_SIZE, PARAM_HIGH, PARAM_LOW, SuperquadricParams
from .net import ops
from .net.layers import BatchNorm, Conv, Dense, Flatten, Network, Relu
from .net.optim import Adam
from .net.weights import ModelWeights, write_weights

PREDICTION_FLOOR = 1e-6  # scaled-unit clamp keeps dims/exponents positive

LAYER_KINDS = ("conv", "batchnorm", "relu", "flatten", "dense")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 0
    stride: int = 1
    in_ch: int = 0
    out_ch: int = 0
    activation: str = "linear"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


def _conv_block(kernel, stride, in_ch, out_ch):
    return (LayerSpec("conv", kernel, stride, in_ch, out_ch),
            LayerSpec("batchnorm", in_ch=out_ch, out_ch=out_ch),
            LayerSpec("relu", in_ch=out_ch, out_ch=out_ch))


@dataclass(frozen=True)
class ArchitectureConfig:
    """Ordered layer list plus the input geometry it expects."""

    name: str
    input_hw: tuple
    layers: tuple
    output_dim: int = 8

    def __post_init__(self):
        self.validate()

    def validate(self):
        h, w = self.input_hw
        if h < 1 or w < 1:
            raise ValueError(f"invalid input size {self.input_hw}")
        ch, flat = 1, None
        for i, spec in enumerate(self.layers):
            where = f"layer {i} ({spec.kind})"
            if spec.kind == "conv":
                if flat is not None:
                    raise ValueError(f"{where}: convolution after flatten")
                if spec.in_ch != ch:
                    raise ValueError(f"{where}: expects {spec.in_ch} channels, gets {ch}")
                if spec.kernel < 1 or spec.stride < 1:
                    raise ValueError(f"{where}: invalid kernel/stride")
                h, _, _ = ops.same_padding(h, spec.kernel, spec.stride)
                w, _, _ = ops.same_padding(w, spec.kernel, spec.stride)
                ch = spec.out_ch
            elif spec.kind in ("batchnorm", "relu"):
                if flat is None and spec.in_ch != ch:
                    raise ValueError(f"{where}: expects {spec.in_ch} channels, gets {ch}")
            elif spec.kind == "flatten":
                if flat is not None:
                    raise ValueError(f"{where}: repeated flatten")
                flat = ch * h * w
            elif spec.kind == "dense":
                if flat is None:
                    raise ValueError(f"{where}: dense before flatten")
                if spec.in_ch != flat:
                    raise ValueError(f"{where}: expects {spec.in_ch} inputs, gets {flat}")
                flat = spec.out_ch
        if flat != self.output_dim:
            raise ValueError(f"network emits {flat} values, declared {self.output_dim}")
        if not self.layers or self.layers[-1].kind != "dense" \
                or self.layers[-1].activation != "linear":
            raise ValueError("final layer must be a linear dense head")

    def conv_specs(self):
        return [s for s in self.layers if s.kind == "conv"]

    def digest(self) -> bytes:
        text = [self.name, f"{self.input_hw[0]}x{self.input_hw[1]}", str(self.output_dim)]
        for s in self.layers:
            text.append(f"{s.kind},{s.kernel},{s.stride},{s.in_ch},{s.out_ch},{s.activation}")
        return sha256("|".join(text).encode("ascii")).digest()


def paper_scale() -> ArchitectureConfig:
    """Full-resolution architecture: 256x256 input, 13 convolutions.

    A 7x7 stride-2 stem, then pairs of 3x3 convolutions (stride 1 then
    stride 2) doubling channels down to a 2x2x512 map, flattened into a
    linear 8-way dense head.
    """
    layers = _conv_block(7, 2, 1, 16)
    chain = [(3, 1, 16, 16), (3, 2, 16, 32), (3, 1, 32, 32), (3, 2, 32, 64),
             (3, 1, 64, 64), (3, 2, 64, 128), (3, 1, 128, 128), (3, 2, 128, 256),
             (3, 1, 256, 256), (3, 2, 256, 256), (3, 1, 256, 256), (3, 2, 256, 512)]
    for k, s, ci, co in chain:
        layers += _conv_block(k, s, ci, co)
    layers += (LayerSpec("flatten"),
               LayerSpec("dense", in_ch=2 * 2 * 512, out_ch=8, activation="linear"))
    arch = ArchitectureConfig("paper-scale", (256, 256), layers)
    convs = arch.conv_specs()
    assert len(convs) == 13 and convs[0].kernel == 7 and convs[0].stride == 2
    return arch


def desk_scale() -> ArchitectureConfig:
    """Reduced architecture for 64x64 images: same design, 8 convolutions."""
    layers = _conv_block(5, 2, 1, 16)
    chain = [(3, 1, 16, 16), (3, 2, 16, 32), (3, 1, 32, 32), (3, 2, 32, 64),
             (3, 1, 64, 64), (3, 2, 64, 128), (3, 1, 128, 128)]
    for k, s, ci, co in chain:
        layers += _conv_block(k, s, ci, co)
    layers += (LayerSpec("flatten"),
               LayerSpec("dense", in_ch=4 * 4 * 128, out_ch=8, activation="linear"))
    return ArchitectureConfig("desk-scale", (64, 64), layers)


PRESETS = {"paper": paper_scale, "desk": desk_scale}


def build_network(arch: ArchitectureConfig, dtype=np.float32) -> Network:
    layers = []
    counts = {k: 0 for k in LAYER_KINDS}
    for spec in arch.layers:
        counts[spec.kind] += 1
        n = counts[spec.kind]
        if spec.kind == "conv":
            layers.append(Conv(f"conv{n:02d}", spec.in_ch, spec.out_ch,
                               spec.kernel, spec.stride, dtype=dtype))
        elif spec.kind == "batchnorm":
            layers.append(BatchNorm(f"bn{n:02d}", spec.out_ch, dtype=dtype))
        elif spec.kind == "relu":
            layers.append(Relu(f"relu{n:02d}"))
        elif spec.kind == "flatten":
            layers.append(Flatten("flatten"))
        else:
            layers.append(Dense("head" if n == 1 else f"dense{n:02d}",
                                spec.in_ch, spec.out_ch, dtype=dtype))
    return Network(layers)


def build_model(arch: ArchitectureConfig, seed: int = 0) -> ModelWeights:
    """Freshly initialized weights: He-uniform kernels, zero biases."""
    net = build_network(arch)
    net.init_params(np.random.Generator(np.random.Philox(key=seed)))
    return ModelWeights(arch.digest(), {k: v.copy() for k, v in net.state_blocks().items()})


def restore_network(arch: ArchitectureConfig, weights: ModelWeights) -> Network:
    if weights.arch_digest != arch.digest():
        raise ValueError(f"weights digest {weights.arch_digest.hex()[:12]}... does not "
                         f"match architecture {arch.name!r}")
    net = build_network(arch)
    net.load_state(weights.blocks)
    return net


def prepare_inputs(depths: np.ndarray) -> np.ndarray:
    """(N,H,W) or (H,W) depth maps -> (N,1,H,W) float32 in [0, 1]."""
    depths = np.asarray(depths)
    if depths.ndim == 2:
        depths = depths[None]
    if depths.ndim != 3:
        raise ValueError(f"expected (N,H,W) depths, got shape {depths.shape}")
    return (depths[:, None, :, :] / FRAME_SIZE).astype(np.float32)


def scale_targets(params: np.ndarray) -> np.ndarray:
    """(N,8) raw parameter rows -> float32 scaled targets in [0, 1]."""
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    return ((params - PARAM_LOW) / (PARAM_HIGH - PARAM_LOW)).astype(np.float32)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    lr: float = 1e-3
    lr_drop_epochs: tuple = (250, 500)
    lr_drop_factor: float = 0.1
    max_epochs: int = 600
    patience: int = 15
    seed: int = 0
    target_train_loss: float = None

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2 (batch statistics)")
        if self.lr <= 0 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("invalid training hyperparameters")

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.lr_drop_epochs if epoch > e)
        return self.lr * self.lr_drop_factor ** drops


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    wall_s: float


@dataclass
class TrainLog:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    stopped_on: str = "max_epochs"

    def deterministic_rows(self):
        """Epoch records minus wall-clock times, for run-to-run comparison."""
        return [(e.epoch, e.lr, e.train_loss, e.val_loss) for e in self.epochs]

    def to_tsv(self) -> str:
        lines = [f"# best_epoch\t{self.best_epoch}",
                 f"# best_val_loss\t{self.best_val_loss!r}",
                 f"# stopped_on\t{self.stopped_on}",
                 "epoch\tlr\ttrain_loss\tval_loss\twall_s"]
        for e in self.epochs:
            lines.append(f"{e.epoch}\t{e.lr!r}\t{e.train_loss!r}\t{e.val_loss!r}\t{e.wall_s!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> "TrainLog":
        log = cls()
        for line in text.splitlines():
            if line.startswith("# best_epoch"):
                log.best_epoch = int(line.split("\t")[1])
            elif line.startswith("# best_val_loss"):
                log.best_val_loss = float(line.split("\t")[1])
            elif line.startswith("# stopped_on"):
                log.stopped_on = line.split("\t")[1]
            elif line and not line.startswith(("#", "epoch\t")):
                ep, lr, tr, vl, ws = line.split("\t")
                log.epochs.append(EpochStats(int(ep), float(lr), float(tr),
                                             float(vl), float(ws)))
        return log


@dataclass
class TrainData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    def __post_init__(self):
        for tag, x, y in (("train", self.x_train, self.y_train),
                          ("val", self.x_val, self.y_val)):
            if len(x) == 0:
                raise ValueError(f"{tag} split is empty")
            if len(x) != len(y):
                raise ValueError(f"{tag}: {len(x)} images vs {len(y)} targets")


def _batch_bounds(n: int, batch_size: int):
    """Contiguous batch edges; a trailing single sample joins the previous
    batch so batch statistics are always defined."""
    edges = list(range(0, n, batch_size)) + [n]
    if len(edges) > 2 and edges[-1] - edges[-2] == 1:
        edges.pop(-2)
    return list(zip(edges[:-1], edges[1:]))


def eval_loss(net: Network, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    """Mean per-sample squared error in evaluation mode (running statistics)."""
    total = 0.0
    for lo, hi in _batch_bounds(len(x), batch_size):
        pred = net.forward(x[lo:hi], train=False)
        loss, _ = ops.l2_loss(y[lo:hi], pred)
        total += loss * (hi - lo)
    return total / len(x)


def train(arch: ArchitectureConfig, weights: ModelWeights, data: TrainData,
          cfg: TrainConfig, checkpoint_path=None):
    """Run the training protocol; returns (selected weights, TrainLog).

    Selection is the epoch with the lowest validation loss.  Training stops
    early after ``cfg.patience`` epochs without improvement, or immediately
    once ``cfg.target_train_loss`` is reached (in which case the weights of
    that epoch are returned instead of the validation-best ones).
    """
    net = restore_network(arch, weights)
    if data.x_train.shape[2:] != tuple(arch.input_hw):
        raise ValueError(f"training images are {data.x_train.shape[2:]}, "
                         f"architecture expects {arch.input_hw}")
    opt = Adam(lr=cfg.lr)
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    n = len(data.x_train)
    log = TrainLog()
    best_state = None
    since_best = 0
    digest = arch.digest()

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        opt.lr = cfg.lr_at(epoch)
        perm = rng.permutation(n)
        total = 0.0
        for lo, hi in _batch_bounds(n, cfg.batch_size):
            idx = perm[lo:hi]
            pred = net.forward(data.x_train[idx], train=True)
            loss, dpred = ops.l2_loss(data.y_train[idx], pred)
            if not np.isfinite(loss):
                raise RuntimeError(f"non-finite training loss at epoch {epoch}, "
                                   f"batch [{lo}:{hi}]")
            net.backward(dpred)
            opt.step(net.params(), net.grads())
            total += loss * (hi - lo)
        train_loss = total / n
        val_loss = eval_loss(net, data.x_val, data.y_val, cfg.batch_size)
        log.epochs.append(EpochStats(epoch, opt.lr, train_loss, val_loss,
                                     time.perf_counter() - t0))
        if val_loss < log.best_val_loss:
            log.best_val_loss = val_loss
            log.best_epoch = epoch
            best_state = {k: v.copy() for k, v in net.state_blocks().items()}
            since_best = 0
            if checkpoint_path is not None:
                write_weights(ModelWeights(digest, best_state), checkpoint_path)
        else:
            since_best += 1
        if cfg.target_train_loss is not None and train_loss <= cfg.target_train_loss:
            log.stopped_on = "target"
            best_state = {k: v.copy() for k, v in net.state_blocks().items()}
            log.best_epoch = epoch
            break
        if since_best >= cfg.patience:
            log.stopped_on = "patience"
            break

    if best_state is None:
        best_state = {k: v.copy() for k, v in net.state_blocks().items()}
        log.best_epoch = len(log.epochs)
    return ModelWeights(digest, best_state), log


def predict_scaled(net: Network, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Raw scaled outputs (N,8) in evaluation mode, clamped to [floor, 1]."""
    outs = []
    for lo, hi in _batch_bounds(len(x), batch_size):
        outs.append(net.forward(x[lo:hi], train=False))
    raw = np.concatenate(outs, axis=0).astype(np.float64)
    return np.clip(raw, PREDICTION_FLOOR, 1.0)


def predict_params(net: Network, depths: np.ndarray) -> list:
    """Depth map(s) -> recovered SuperquadricParams, one per image."""
    x = prepare_inputs(depths)
    scaled = predict_scaled(net, x)
    low, span = PARAM_LOW, PARAM_HIGH - PARAM_LOW
    return [SuperquadricParams.from_array(low + row * span) for row in scaled]


def predict(arch: ArchitectureConfig, weights: ModelWeights, depths: np.ndarray):
    """One-call convenience for a single image; returns SuperquadricParams."""
    depths = np.asarray(depths)
    if depths.ndim != 2:
        raise ValueError(f"expected a single (H,W) image, got shape {depths.shape}")
    if depths.shape != tuple(arch.input_hw):
        raise ValueError(f"image is {depths.shape}, architecture expects {arch.input_hw}")
    net = restore_network(arch, weights)
    return predict_params(net, depths)[0]
