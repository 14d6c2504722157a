"""Two-stage alignment autoencoder: 4 conv layers down to a 768-dim latent,
4 transposed-conv layers back up.

Stage 1 minimizes reconstruction MSE alone (self-supervised). Stage 2, warm
started from the stage-1 optimum, minimizes reconstruction plus an alignment
penalty ``1 - cos(latent, gt_vector)`` that pulls each feature map's latent
toward its scene's text-embedding. The alignment term reaches encoder
parameters only (its gradient enters at the latent node); the decoder keeps
learning from reconstruction.

Training is plain minibatch gradient descent (optional momentum, default 0)
with a per-epoch cosine-annealed learning rate, fully deterministic in
(seed, config, data): batches come from a seeded shuffle and gradients are
reduced in fixed sample order.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .embed import EMBED_DIM, Representation
from .errors import (
    ConfigError,
    CoverageError,
    DegenerateVectorError,
    DigestMismatchError,
    FormatError,
    NonFiniteError,
    ShapeMismatchError,
)
from .hashing import fnv1a_64
from .tensor_ops import (
    ConvSpec,
    conv2d_backward_batch,
    conv2d_forward_batch,
    deconv2d_backward_batch,
    deconv2d_forward_batch,
)

CHECKPOINT_MAGIC = b"AECK"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class AEConfig:
    input_shape: tuple[int, int, int]
    encoder_layers: tuple[ConvSpec, ...]
    decoder_layers: tuple[ConvSpec, ...]
    latent_dim: int = EMBED_DIM
    stage1_epochs: int = 12
    stage1_lr: float = 1e-3
    stage2_epochs: int = 6
    stage2_lr: float = 1e-4
    batch_size: int = 128
    momentum: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "encoder_layers", tuple(self.encoder_layers))
        object.__setattr__(self, "decoder_layers", tuple(self.decoder_layers))
        self._validate()

    def _validate(self):
        if len(self.encoder_layers) != 4 or len(self.decoder_layers) != 4:
            raise ConfigError("expected exactly 4 encoder and 4 decoder layers")
        if any(s.transposed for s in self.encoder_layers):
            raise ConfigError("encoder layers must not be transposed")
        if any(not s.transposed for s in self.decoder_layers):
            raise ConfigError("decoder layers must be transposed")
        if self.stage1_epochs < 1 or self.stage2_epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        # The encoder must land exactly on latent_dim x 1 x 1 and the decoder
        # must invert it back to input_shape.
        shape = self.input_shape
        for i, spec in enumerate(self.encoder_layers):
            if spec.in_channels != shape[0]:
                raise ConfigError(f"encoder layer {i}: in_channels {spec.in_channels} != {shape[0]}")
            shape = (spec.out_channels,) + spec.out_hw(shape[1], shape[2])
        if shape != (self.latent_dim, 1, 1):
            raise ConfigError(f"encoder output {shape} != ({self.latent_dim}, 1, 1)")
        for i, spec in enumerate(self.decoder_layers):
            if spec.in_channels != shape[0]:
                raise ConfigError(f"decoder layer {i}: in_channels {spec.in_channels} != {shape[0]}")
            shape = (spec.out_channels,) + spec.out_hw(shape[1], shape[2])
        if shape != self.input_shape:
            raise ConfigError(f"decoder output {shape} != input shape {self.input_shape}")


def _conv_chain_shapes(input_shape, specs):
    shapes = [tuple(input_shape)]
    for spec in specs:
        c, h, w = shapes[-1]
        shapes.append((spec.out_channels,) + spec.out_hw(h, w))
    return shapes


def default_ae_config(
    input_shape,
    latent_dim: int = EMBED_DIM,
    seed: int = 0,
    channels=None,
    hidden_activation: str = "relu",
    **overrides,
) -> AEConfig:
    """Standard architecture: three 3x3 convs, then a full-field conv to
    latent_dim x 1 x 1; the decoder mirrors it with output paddings chosen so
    shapes invert exactly.

    Wide inputs (>= 128 channels) halve channels at stride 2 per layer; small
    inputs grow channels and keep the first layer at stride 1, which leaves
    enough pre-latent width and well-conditioned gradient paths for plain SGD
    to fit them quickly. ``channels`` overrides the three hidden widths;
    ``hidden_activation`` switches the hidden layers between relu and a fully
    linear variant (useful for correlation studies where memorization of
    noise features must stay off the table).
    """
    c, h, w = (int(d) for d in input_shape)
    if channels is not None:
        widths = [int(x) for x in channels]
        if len(widths) != 3:
            raise ConfigError(f"channels needs exactly 3 hidden widths, got {widths}")
    elif c >= 128:
        widths = [c // 2, c // 4, c // 8]
    else:
        widths = [2 * c, 3 * c, 4 * c]
    strides = [2, 2, 2] if c >= 128 else [1, 2, 2]
    encoder = []
    chain = [(c, h, w)]
    for out_c, stride in zip(widths, strides):
        in_c, ch, cw = chain[-1]
        spec = ConvSpec(
            in_c, out_c, 3, 3, stride_h=stride, stride_w=stride, pad_h=1, pad_w=1,
            activation=hidden_activation,
        )
        encoder.append(spec)
        chain.append((out_c,) + spec.out_hw(ch, cw))
    _, fh, fw = chain[-1]
    encoder.append(ConvSpec(widths[-1], latent_dim, fh, fw, activation="identity"))
    chain.append((latent_dim, 1, 1))

    decoder = []
    for i, enc in enumerate(reversed(encoder)):
        src = chain[len(encoder) - i]  # shape entering this decoder layer
        dst = chain[len(encoder) - i - 1]  # shape it must restore
        base_h = (src[1] - 1) * enc.stride_h - 2 * enc.pad_h + enc.kernel_h
        base_w = (src[2] - 1) * enc.stride_w - 2 * enc.pad_w + enc.kernel_w
        decoder.append(
            ConvSpec(
                enc.out_channels,
                enc.in_channels,
                enc.kernel_h,
                enc.kernel_w,
                stride_h=enc.stride_h,
                stride_w=enc.stride_w,
                pad_h=enc.pad_h,
                pad_w=enc.pad_w,
                out_pad_h=dst[1] - base_h,
                out_pad_w=dst[2] - base_w,
                transposed=True,
                activation="identity" if i == len(encoder) - 1 else hidden_activation,
            )
        )
    return AEConfig(
        input_shape=(c, h, w),
        encoder_layers=tuple(encoder),
        decoder_layers=tuple(decoder),
        latent_dim=latent_dim,
        seed=seed,
        **overrides,
    )


def config_digest(config: AEConfig) -> int:
    """64-bit FNV over the canonical JSON form of the config."""
    canon = json.dumps(asdict(config), sort_keys=True, separators=(",", ":"))
    return fnv1a_64(canon.encode("utf-8"))


# ---------------------------------------------------------------------------
# parameters


@dataclass
class Layer:
    spec: ConvSpec
    w: np.ndarray
    b: np.ndarray


@dataclass
class AEParams:
    input_shape: tuple[int, int, int]
    latent_dim: int
    encoder: list[Layer]
    decoder: list[Layer]

    def layers(self) -> list[Layer]:
        return self.encoder + self.decoder

    def copy(self) -> "AEParams":
        return AEParams(
            self.input_shape,
            self.latent_dim,
            [Layer(l.spec, l.w.copy(), l.b.copy()) for l in self.encoder],
            [Layer(l.spec, l.w.copy(), l.b.copy()) for l in self.decoder],
        )


def init_params(config: AEConfig) -> AEParams:
    """Seeded Glorot-uniform weights, zero biases."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(0,))))

    def make(spec: ConvSpec) -> Layer:
        fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
        fan_out = spec.out_channels * spec.kernel_h * spec.kernel_w
        a = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-a, a, size=spec.weight_shape)
        return Layer(spec, w, np.zeros(spec.out_channels))

    return AEParams(
        input_shape=config.input_shape,
        latent_dim=config.latent_dim,
        encoder=[make(s) for s in config.encoder_layers],
        decoder=[make(s) for s in config.decoder_layers],
    )


def pack_params(params: AEParams) -> np.ndarray:
    """Flatten all weights and biases in declaration order."""
    return np.concatenate([a.ravel() for l in params.layers() for a in (l.w, l.b)])


def unpack_params(params: AEParams, vec: np.ndarray) -> AEParams:
    """Rebuild params of the same structure from a flat vector."""
    out = params.copy()
    pos = 0
    for layer in out.layers():
        for name in ("w", "b"):
            a = getattr(layer, name)
            setattr(layer, name, vec[pos : pos + a.size].reshape(a.shape).copy())
            pos += a.size
    if pos != vec.size:
        raise ShapeMismatchError(f"parameter vector length {vec.size}, expected {pos}")
    return out


# ---------------------------------------------------------------------------
# forward / backward


def _forward_chain(layers: list[Layer], x: np.ndarray, transposed: bool) -> list[np.ndarray]:
    """Activations after each layer; acts[0] is the input."""
    fwd = deconv2d_forward_batch if transposed else conv2d_forward_batch
    acts = [x]
    for layer in layers:
        acts.append(fwd(acts[-1], layer.spec, layer.w, layer.b))
    return acts


def _backward_chain(layers, acts, grad_out, transposed: bool):
    """Returns (grad wrt chain input, [(grad_w, grad_b) per layer])."""
    bwd = deconv2d_backward_batch if transposed else conv2d_backward_batch
    grads = [None] * len(layers)
    g = grad_out
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        g, gw, gb = bwd(acts[i], layer.spec, layer.w, acts[i + 1], g)
        grads[i] = (gw, gb)
    return g, grads


def _as_batch(fmap: np.ndarray, input_shape) -> tuple[np.ndarray, bool]:
    """Normalize a feature map to [B,C,H,W]; True if it had a camera axis."""
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim == 3:
        if fmap.shape != tuple(input_shape):
            raise ShapeMismatchError(f"feature shape {fmap.shape} != configured {tuple(input_shape)}")
        return fmap[None], False
    if fmap.ndim == 4:
        if fmap.shape[1:] != tuple(input_shape):
            raise ShapeMismatchError(
                f"per-camera feature shape {fmap.shape[1:]} != configured {tuple(input_shape)}"
            )
        return fmap, True
    raise ShapeMismatchError(f"feature map must be [C,H,W] or [Cam,C,H,W], got ndim={fmap.ndim}")


def encode(params: AEParams, fmap: np.ndarray, sample_id: str = "") -> Representation:
    """Project a feature map into the latent space: [C,H,W] -> 1 row,
    [Cam,C,H,W] -> one row per camera (shared weights, camera as batch)."""
    batch, has_cameras = _as_batch(fmap, params.input_shape)
    latent = _forward_chain(params.encoder, batch, transposed=False)[-1]
    vectors = latent.reshape(latent.shape[0], params.latent_dim)
    return Representation(
        vectors=vectors,
        space_tag="2d" if has_cameras else "3d",
        sample_id=sample_id,
        source="encoder",
    )


def decode(params: AEParams, latent: np.ndarray) -> np.ndarray:
    """Reconstruct a feature map from a latent vector (768,) or stack (K, 768)."""
    latent = np.asarray(latent, dtype=np.float64)
    single = latent.ndim == 1
    if single:
        latent = latent[None]
    if latent.ndim != 2 or latent.shape[1] != params.latent_dim:
        raise ShapeMismatchError(f"latent must be (K, {params.latent_dim}), got {latent.shape}")
    out = _forward_chain(params.decoder, latent.reshape(-1, params.latent_dim, 1, 1), transposed=True)[-1]
    return out[0] if single else out


def reconstruct(params: AEParams, fmap: np.ndarray) -> np.ndarray:
    """decode(encode(fmap)) with the camera axis preserved."""
    batch, has_cameras = _as_batch(fmap, params.input_shape)
    latent = _forward_chain(params.encoder, batch, transposed=False)[-1]
    recon = _forward_chain(params.decoder, latent, transposed=True)[-1]
    return recon if has_cameras else recon[0]


def loss_and_grads(params: AEParams, batch: np.ndarray, gt_rows: np.ndarray | None, context: str = ""):
    """Losses and full parameter gradients for one flattened row batch.

    batch: [N,C,H,W] (cameras already folded into N); gt_rows: [N, latent]
    alignment targets or None for stage 1. Returns
    (recon_loss, align_loss_or_None, enc_grads, dec_grads).
    """
    if not np.isfinite(batch).all():
        raise NonFiniteError(f"non-finite feature values{context}")
    enc_acts = _forward_chain(params.encoder, batch, transposed=False)
    latent = enc_acts[-1]
    dec_acts = _forward_chain(params.decoder, latent, transposed=True)
    recon = dec_acts[-1]

    diff = recon - batch
    recon_loss = float(np.mean(diff * diff))
    grad_recon = 2.0 * diff / diff.size

    grad_latent, dec_grads = _backward_chain(params.decoder, dec_acts, grad_recon, transposed=True)

    align_loss = None
    if gt_rows is not None:
        rows = latent.reshape(latent.shape[0], -1)
        na = np.linalg.norm(rows, axis=1)
        bad = np.nonzero(na <= 1e-12)[0]
        if bad.size:
            raise DegenerateVectorError(f"zero-norm latent for batch row {bad[0]}{context}")
        nb = np.linalg.norm(gt_rows, axis=1)
        if (nb <= 1e-12).any():
            raise DegenerateVectorError(f"zero-norm alignment target{context}")
        dots = np.einsum("ij,ij->i", rows, gt_rows)
        cos = dots / (na * nb)
        align_loss = float(np.mean(1.0 - cos))
        # d(mean(1-cos))/d row_i = -(1/N) * (b/(na*nb) - cos*a/na^2)
        gcos = gt_rows / (na * nb)[:, None] - (cos / (na * na))[:, None] * rows
        grad_latent = grad_latent + (-gcos / rows.shape[0]).reshape(latent.shape)

    _, enc_grads = _backward_chain(params.encoder, enc_acts, grad_latent, transposed=False)
    total = recon_loss + (align_loss or 0.0)
    if not math.isfinite(total):
        raise NonFiniteError(f"non-finite loss{context}")
    return recon_loss, align_loss, enc_grads, dec_grads


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainSample:
    sample_id: str
    phase: int
    x: np.ndarray  # [C,H,W] or [Cam,C,H,W]


@dataclass
class EpochStats:
    stage: int
    epoch: int
    lr: float
    mean_recon: float
    mean_align: float | None
    mean_total: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)

    def stage_epochs(self, stage: int) -> list[EpochStats]:
        return [e for e in self.epochs if e.stage == stage]

    def to_dict(self) -> dict:
        return {"epochs": [asdict(e) for e in self.epochs]}


def cosine_lr(lr0: float, epoch: int, total_epochs: int) -> float:
    """Cosine annealing toward zero: lr0 at epoch 0."""
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def _check_dataset(config: AEConfig, dataset: list[TrainSample]):
    if not dataset:
        raise ConfigError("training dataset is empty")
    shape = dataset[0].x.shape
    for s in dataset:
        if s.x.shape != shape:
            raise ShapeMismatchError(
                f"non-uniform dataset: sample {s.sample_id!r} phase {s.phase} has "
                f"{s.x.shape}, expected {shape}"
            )
        _as_batch(s.x, config.input_shape)


def _gt_matrix(config: AEConfig, dataset: list[TrainSample], gt_reps: dict[str, Representation]):
    """Per-dataset-sample alignment rows, pre-flattened to the camera axis."""
    missing = sorted({s.sample_id for s in dataset if s.sample_id not in gt_reps})
    if missing:
        shown = ", ".join(missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise CoverageError(f"no GT representation for sample_ids: {shown}{more}")
    rows = []
    for s in dataset:
        rep = gt_reps[s.sample_id]
        cams = s.x.shape[0] if s.x.ndim == 4 else 1
        if rep.vectors.shape[0] != cams:
            raise ShapeMismatchError(
                f"sample {s.sample_id!r}: {cams} camera rows in features but "
                f"{rep.vectors.shape[0]} representation rows"
            )
        rows.append(rep.vectors)
    return rows


def _run_stage(
    stage: int,
    config: AEConfig,
    params: AEParams,
    dataset: list[TrainSample],
    gt_rows_per_sample,
    epochs: int,
    lr0: float,
    report: TrainReport,
) -> AEParams:
    params = params.copy()
    shuffle_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(config.seed, spawn_key=(stage,)))
    )
    velocity = [
        (np.zeros_like(l.w), np.zeros_like(l.b)) for l in params.layers()
    ]
    n = len(dataset)
    for epoch in range(epochs):
        lr = cosine_lr(lr0, epoch, epochs)
        order = shuffle_rng.permutation(n)
        recon_sum = 0.0
        align_sum = 0.0
        for start in range(0, n, config.batch_size):
            picked = order[start : start + config.batch_size]
            samples = [dataset[i] for i in picked]
            xb = np.stack([s.x for s in samples])
            if xb.ndim == 5:  # fold cameras into the row axis
                cams = xb.shape[1]
                rows = xb.reshape(-1, *xb.shape[2:])
            else:
                cams = 1
                rows = xb
            gt_rows = None
            if gt_rows_per_sample is not None:
                gt_rows = np.concatenate([gt_rows_per_sample[i] for i in picked])
            ctx = f" (stage {stage}, epoch {epoch}, batch {start // config.batch_size})"
            recon, align, enc_grads, dec_grads = loss_and_grads(params, rows, gt_rows, ctx)
            recon_sum += recon * len(samples)
            align_sum += (align or 0.0) * len(samples)
            all_grads = enc_grads + dec_grads
            for layer, (vw, vb), (gw, gb) in zip(params.layers(), velocity, all_grads):
                if config.momentum:
                    vw *= config.momentum
                    vw -= lr * gw
                    vb *= config.momentum
                    vb -= lr * gb
                    layer.w += vw
                    layer.b += vb
                else:
                    layer.w -= lr * gw
                    layer.b -= lr * gb
        mean_recon = recon_sum / n
        mean_align = align_sum / n if gt_rows_per_sample is not None else None
        report.epochs.append(
            EpochStats(
                stage=stage,
                epoch=epoch,
                lr=lr,
                mean_recon=mean_recon,
                mean_align=mean_align,
                mean_total=mean_recon + (mean_align or 0.0),
            )
        )
    return params


def train_stage1(config: AEConfig, dataset: list[TrainSample]) -> tuple[AEParams, TrainReport]:
    """Self-supervised reconstruction from seeded-fresh parameters."""
    _check_dataset(config, dataset)
    report = TrainReport()
    params = _run_stage(
        1, config, init_params(config), dataset, None, config.stage1_epochs, config.stage1_lr, report
    )
    return params, report


def train_stage2(
    config: AEConfig,
    dataset: list[TrainSample],
    gt_reps: dict[str, Representation],
    init: AEParams,
) -> tuple[AEParams, TrainReport]:
    """Joint reconstruction + alignment, warm started from stage-1 params."""
    _check_dataset(config, dataset)
    gt_rows = _gt_matrix(config, dataset, gt_reps)
    report = TrainReport()
    params = _run_stage(2, config, init, dataset, gt_rows, config.stage2_epochs, config.stage2_lr, report)
    return params, report


def train_two_stage(
    config: AEConfig, dataset: list[TrainSample], gt_reps: dict[str, Representation]
) -> tuple[AEParams, TrainReport]:
    params1, report = train_stage1(config, dataset)
    params2, report2 = train_stage2(config, dataset, gt_reps, params1)
    report.epochs.extend(report2.epochs)
    return params2, report


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: AEParams, config: AEConfig):
    """Binary layout: magic, u16 version, u64 config digest, then f64 LE
    weight/bias blobs per layer in declaration order."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHQ", CHECKPOINT_MAGIC, CHECKPOINT_VERSION, config_digest(config)))
        for layer in params.layers():
            fh.write(np.ascontiguousarray(layer.w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.b, dtype="<f8").tobytes())


def load_checkpoint(path, config: AEConfig) -> AEParams:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sHQ"))
        if len(header) < struct.calcsize("<4sHQ"):
            raise FormatError(f"{path}: truncated checkpoint header")
        magic, version, digest = struct.unpack("<4sHQ", header)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        expected = config_digest(config)
        if digest != expected:
            raise DigestMismatchError(
                f"{path}: checkpoint config digest {digest:016x} != expected {expected:016x}"
            )
        params = init_params(config)
        for layer in params.layers():
            for name in ("w", "b"):
                target = getattr(layer, name)
                blob = fh.read(target.size * 8)
                if len(blob) != target.size * 8:
                    raise FormatError(f"{path}: truncated parameter blob")
                setattr(layer, name, np.frombuffer(blob, dtype="<f8").reshape(target.shape).copy())
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after parameter blobs")
    return params
