"""Dense 2-D convolution / transposed-convolution math with exact backward passes.

Everything is float64 and pure: an op is a function of its inputs only, so
concurrent use on distinct data is safe. Convolution follows the modern
cross-correlation convention (no kernel flip). Shapes never broadcast
implicitly; any mismatch raises ShapeMismatchError naming expected vs actual
dimensions.

Weight layouts:
  convolution:            w[out_channels, in_channels, kh, kw]
  transposed convolution: w[in_channels, out_channels, kh, kw]

The public single-sample ops wrap batched internals (leading batch axis) that
the autoencoder trainer uses directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateVectorError, NonFiniteError, ShapeMismatchError

NORM_EPS = 1e-12

_ACTIVATIONS = ("identity", "relu")


@dataclass(frozen=True)
class ConvSpec:
    """Parameterization of one (de)convolution layer."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    pad_h: int = 0
    pad_w: int = 0
    out_pad_h: int = 0
    out_pad_w: int = 0
    transposed: bool = False
    activation: str = "identity"

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError(f"channel counts must be >= 1, got {self.in_channels}/{self.out_channels}")
        if self.kernel_h < 1 or self.kernel_w < 1:
            raise ConfigError(f"kernel dims must be >= 1, got {self.kernel_h}x{self.kernel_w}")
        if self.stride_h < 1 or self.stride_w < 1:
            raise ConfigError(f"strides must be >= 1, got {self.stride_h}x{self.stride_w}")
        if min(self.pad_h, self.pad_w, self.out_pad_h, self.out_pad_w) < 0:
            raise ConfigError("paddings must be >= 0")
        if self.transposed and (self.out_pad_h >= self.stride_h or self.out_pad_w >= self.stride_w):
            raise ConfigError(
                f"out_pad ({self.out_pad_h},{self.out_pad_w}) must be < stride "
                f"({self.stride_h},{self.stride_w}) in transposed mode"
            )
        if not self.transposed and (self.out_pad_h or self.out_pad_w):
            raise ConfigError("out_pad is only meaningful in transposed mode")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        if self.transposed:
            return (self.in_channels, self.out_channels, self.kernel_h, self.kernel_w)
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        """Spatial output size for an h x w input."""
        if self.transposed:
            ho = (h - 1) * self.stride_h - 2 * self.pad_h + self.kernel_h + self.out_pad_h
            wo = (w - 1) * self.stride_w - 2 * self.pad_w + self.kernel_w + self.out_pad_w
        else:
            ho = (h + 2 * self.pad_h - self.kernel_h) // self.stride_h + 1
            wo = (w + 2 * self.pad_w - self.kernel_w) // self.stride_w + 1
        if ho < 1 or wo < 1:
            raise ShapeMismatchError(
                f"layer produces empty output {ho}x{wo} from input {h}x{w} (spec {self})"
            )
        return ho, wo


def _as_f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _check_batch_input(x: np.ndarray, spec: ConvSpec, w: np.ndarray, b: np.ndarray):
    if x.ndim != 4:
        raise ShapeMismatchError(f"expected batched input [B,C,H,W], got ndim={x.ndim}")
    if x.shape[1] != spec.in_channels:
        raise ShapeMismatchError(
            f"input channels: expected {spec.in_channels}, got {x.shape[1]} (input shape {x.shape})"
        )
    if w.shape != spec.weight_shape:
        raise ShapeMismatchError(f"weight shape: expected {spec.weight_shape}, got {tuple(w.shape)}")
    if b.shape != (spec.out_channels,):
        raise ShapeMismatchError(f"bias shape: expected ({spec.out_channels},), got {tuple(b.shape)}")


def _pad2d(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _im2col(xp: np.ndarray, spec: ConvSpec, ho: int, wo: int) -> np.ndarray:
    """Gather sliding windows of the padded input into a (C*kh*kw, B*ho*wo)
    matrix (rows ordered channel-major to match w.reshape(C_out, -1))."""
    bsz, c = xp.shape[0], xp.shape[1]
    s0, s1, s2, s3 = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp,
        shape=(c, spec.kernel_h, spec.kernel_w, bsz, ho, wo),
        strides=(s1, s2, s3, s0, s2 * spec.stride_h, s3 * spec.stride_w),
        writeable=False,
    )
    return view.reshape(c * spec.kernel_h * spec.kernel_w, bsz * ho * wo)


def _apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return z


def _activation_grad(grad_out: np.ndarray, out: np.ndarray, activation: str) -> np.ndarray:
    # relu(z) > 0 iff z > 0, so the post-activation output recovers the mask;
    # subgradient at exactly 0 is 0.
    if activation == "relu":
        return grad_out * (out > 0.0)
    return np.asarray(grad_out, dtype=np.float64)


# ---------------------------------------------------------------------------
# batched convolution


def conv2d_forward_batch(x: np.ndarray, spec: ConvSpec, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross-correlation plus bias plus activation over a [B,C,H,W] batch."""
    if spec.transposed:
        raise ShapeMismatchError("conv2d called with a transposed ConvSpec")
    x, w, b = _as_f64(x), _as_f64(w), _as_f64(b)
    _check_batch_input(x, spec, w, b)
    bsz, _, h, wd = x.shape
    ho, wo = spec.out_hw(h, wd)
    xp = _pad2d(x, spec.pad_h, spec.pad_w)
    cols = _im2col(xp, spec, ho, wo)
    out = (w.reshape(spec.out_channels, -1) @ cols).reshape(spec.out_channels, bsz, ho, wo)
    out = out.transpose(1, 0, 2, 3) + b.reshape(1, -1, 1, 1)
    return _apply_activation(out, spec.activation)


def conv2d_backward_batch(
    x: np.ndarray,
    spec: ConvSpec,
    w: np.ndarray,
    out: np.ndarray,
    grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward_batch given its output and upstream grad."""
    x, w = _as_f64(x), _as_f64(w)
    if grad_out.shape != out.shape:
        raise ShapeMismatchError(f"grad_out shape: expected {out.shape}, got {grad_out.shape}")
    bsz, _, h, wd = x.shape
    ho, wo = out.shape[2], out.shape[3]
    sh, sw = spec.stride_h, spec.stride_w
    gz = _activation_grad(grad_out, out, spec.activation)
    grad_b = gz.sum(axis=(0, 2, 3))
    gz2 = gz.transpose(1, 0, 2, 3).reshape(spec.out_channels, -1)

    xp = _pad2d(x, spec.pad_h, spec.pad_w)
    cols = _im2col(xp, spec, ho, wo)
    grad_w = (gz2 @ cols.T).reshape(w.shape)

    gcols = (w.reshape(spec.out_channels, -1).T @ gz2).reshape(
        spec.in_channels, spec.kernel_h, spec.kernel_w, bsz, ho, wo
    )
    grad_xp = np.zeros_like(xp)
    span_h, span_w = (ho - 1) * sh + 1, (wo - 1) * sw + 1
    for ki in range(spec.kernel_h):
        for kj in range(spec.kernel_w):
            grad_xp[:, :, ki : ki + span_h : sh, kj : kj + span_w : sw] += gcols[
                :, ki, kj
            ].transpose(1, 0, 2, 3)
    ph, pw = spec.pad_h, spec.pad_w
    grad_x = grad_xp[:, :, ph : ph + h, pw : pw + wd]
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# batched transposed convolution


def deconv2d_forward_batch(x: np.ndarray, spec: ConvSpec, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Transposed convolution (adjoint of the strided cross-correlation)."""
    if not spec.transposed:
        raise ShapeMismatchError("deconv2d called with a non-transposed ConvSpec")
    x, w, b = _as_f64(x), _as_f64(w), _as_f64(b)
    _check_batch_input(x, spec, w, b)
    bsz, _, h, wd = x.shape
    ho, wo = spec.out_hw(h, wd)
    sh, sw = spec.stride_h, spec.stride_w
    # Scatter into an uncropped buffer (out_pad rows included), then crop the
    # padding; positions past the last kernel touch stay exactly zero.
    hf = (h - 1) * sh + spec.kernel_h + spec.out_pad_h
    wf = (wd - 1) * sw + spec.kernel_w + spec.out_pad_w
    buf = np.zeros((bsz, spec.out_channels, hf, wf))
    x2 = x.transpose(1, 0, 2, 3).reshape(spec.in_channels, -1)
    contrib = (w.reshape(spec.in_channels, -1).T @ x2).reshape(
        spec.out_channels, spec.kernel_h, spec.kernel_w, bsz, h, wd
    )
    span_h, span_w = (h - 1) * sh + 1, (wd - 1) * sw + 1
    for ki in range(spec.kernel_h):
        for kj in range(spec.kernel_w):
            buf[:, :, ki : ki + span_h : sh, kj : kj + span_w : sw] += contrib[
                :, ki, kj
            ].transpose(1, 0, 2, 3)
    ph, pw = spec.pad_h, spec.pad_w
    out = buf[:, :, ph : ph + ho, pw : pw + wo] + b.reshape(1, -1, 1, 1)
    return _apply_activation(out, spec.activation)


def deconv2d_backward_batch(
    x: np.ndarray,
    spec: ConvSpec,
    w: np.ndarray,
    out: np.ndarray,
    grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of deconv2d_forward_batch."""
    x, w = _as_f64(x), _as_f64(w)
    if grad_out.shape != out.shape:
        raise ShapeMismatchError(f"grad_out shape: expected {out.shape}, got {grad_out.shape}")
    bsz, _, h, wd = x.shape
    ho, wo = out.shape[2], out.shape[3]
    sh, sw = spec.stride_h, spec.stride_w
    gz = _activation_grad(grad_out, out, spec.activation)
    grad_b = gz.sum(axis=(0, 2, 3))

    hf = (h - 1) * sh + spec.kernel_h + spec.out_pad_h
    wf = (wd - 1) * sw + spec.kernel_w + spec.out_pad_w
    gbuf = np.zeros((bsz, spec.out_channels, hf, wf))
    ph, pw = spec.pad_h, spec.pad_w
    gbuf[:, :, ph : ph + ho, pw : pw + wo] = gz

    # Gather the scattered positions back: one window view over the buffer.
    s0, s1, s2, s3 = gbuf.strides
    gcols = np.lib.stride_tricks.as_strided(
        gbuf,
        shape=(spec.out_channels, spec.kernel_h, spec.kernel_w, bsz, h, wd),
        strides=(s1, s2, s3, s0, s2 * sh, s3 * sw),
        writeable=False,
    ).reshape(spec.out_channels * spec.kernel_h * spec.kernel_w, bsz * h * wd)
    x2 = x.transpose(1, 0, 2, 3).reshape(spec.in_channels, -1)
    grad_w = (x2 @ gcols.T).reshape(w.shape)
    grad_x = (w.reshape(spec.in_channels, -1) @ gcols).reshape(
        spec.in_channels, bsz, h, wd
    ).transpose(1, 0, 2, 3)
    return grad_x, grad_w, grad_b


# ---------------------------------------------------------------------------
# public single-sample ops


def _single(x: np.ndarray, what: str) -> np.ndarray:
    x = _as_f64(x)
    if x.ndim != 3:
        raise ShapeMismatchError(f"{what} must be [C,H,W], got ndim={x.ndim} shape={x.shape}")
    return x


def conv2d_forward(x, spec: ConvSpec, w, b) -> np.ndarray:
    """Convolve one [C,H,W] sample; returns [C_out,H',W']."""
    return conv2d_forward_batch(_single(x, "input")[None], spec, w, b)[0]


def conv2d_backward(x, spec: ConvSpec, w, b, grad_out):
    """(grad_x, grad_w, grad_b) of conv2d_forward at (x, w, b).

    Recomputes the forward output internally for the activation mask.
    """
    x = _single(x, "input")[None]
    out = conv2d_forward_batch(x, spec, w, b)
    grad_out = _single(grad_out, "grad_out")[None]
    gx, gw, gb = conv2d_backward_batch(x, spec, _as_f64(w), out, grad_out)
    return gx[0], gw, gb


def deconv2d_forward(x, spec: ConvSpec, w, b) -> np.ndarray:
    """Transposed-convolve one [C,H,W] sample."""
    return deconv2d_forward_batch(_single(x, "input")[None], spec, w, b)[0]


def deconv2d_backward(x, spec: ConvSpec, w, b, grad_out):
    """(grad_x, grad_w, grad_b) of deconv2d_forward at (x, w, b)."""
    x = _single(x, "input")[None]
    out = deconv2d_forward_batch(x, spec, w, b)
    grad_out = _single(grad_out, "grad_out")[None]
    gx, gw, gb = deconv2d_backward_batch(x, spec, _as_f64(w), out, grad_out)
    return gx[0], gw, gb


# ---------------------------------------------------------------------------
# losses


def mse_loss(x, x_hat) -> float:
    """Mean over all elements of the squared difference."""
    x, x_hat = _as_f64(x), _as_f64(x_hat)
    if x.shape != x_hat.shape:
        raise ShapeMismatchError(f"mse_loss shapes differ: {x.shape} vs {x_hat.shape}")
    d = x_hat - x
    return float(np.mean(d * d))


def mse_loss_backward(x, x_hat) -> np.ndarray:
    """Gradient of mse_loss with respect to x_hat: 2*(x_hat - x)/N."""
    x, x_hat = _as_f64(x), _as_f64(x_hat)
    if x.shape != x_hat.shape:
        raise ShapeMismatchError(f"mse_loss shapes differ: {x.shape} vs {x_hat.shape}")
    return 2.0 * (x_hat - x) / x.size


def _checked_norms(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeMismatchError(f"cosine_sim needs equal-length vectors, got {a.shape} vs {b.shape}")
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise DegenerateVectorError(f"cosine of near-zero vector (norms {na:.3e}, {nb:.3e})")
    return na, nb


def cosine_sim(a, b) -> float:
    """Cosine similarity in [-1, 1]; raises on (near-)zero-norm inputs."""
    a, b = _as_f64(a), _as_f64(b)
    na, nb = _checked_norms(a, b)
    return float(np.dot(a, b) / (na * nb))


def cosine_sim_backward(a, b) -> np.ndarray:
    """Gradient of cosine_sim with respect to a."""
    a, b = _as_f64(a), _as_f64(b)
    na, nb = _checked_norms(a, b)
    cos = float(np.dot(a, b) / (na * nb))
    return b / (na * nb) - cos * a / (na * na)


# ---------------------------------------------------------------------------
# finite-difference checking


def grad_check(f, point, analytic_grad, step: float = 1e-5, n_coords: int | None = None, rng=None) -> float:
    """Max relative error between analytic_grad and central differences of f.

    f maps an array like ``point`` to a scalar. Checks every coordinate, or
    ``n_coords`` randomly chosen ones when given. Coordinates where both
    sides vanish count as zero error.
    """
    point = _as_f64(point)
    analytic_grad = _as_f64(analytic_grad)
    if analytic_grad.shape != point.shape:
        raise ShapeMismatchError(
            f"analytic grad shape {analytic_grad.shape} != point shape {point.shape}"
        )
    flat = point.ravel()
    idx = np.arange(flat.size)
    if n_coords is not None and n_coords < flat.size:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = rng.choice(flat.size, size=n_coords, replace=False)
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(point))
        flat[i] = orig - step
        fm = float(f(point))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite value at coordinate {i} during finite differences")
        numeric = (fp - fm) / (2.0 * step)
        analytic = analytic_grad.ravel()[i]
        denom = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / denom)
    return worst
