"""Dense autoencoder: architecture, forward pass, mixed loss, backprop.

The encoder and decoder are mirrored stacks of affine layers.  Hidden
layers use a Leaky-ReLU with slope 0.4; the bottleneck layer and the final
decoder layer use Tanh, so every model output lies in (-1, 1).

The training loss mixes two parts.  Categorical one-hot segments are scored
with a per-attribute normalised negative binary cross entropy after mapping
the Tanh output into (0, 1); numerical slots are scored with squared error.
The two parts are blended with a fixed mixing weight.
"""

from dataclasses import dataclass

import numpy as np

from fedledger.errors import ConfigError, NumericError, ShapeError
from fedledger.params import ParamVector

LEAKY_SLOPE = 0.4
# Probabilities are clamped away from {0, 1} before the log; gradients are
# zero in the clamped region.
CLAMP_LO = 1e-6
CLAMP_HI = 1.0 - 1e-6

SHALLOW_WIDTHS = (128, 64, 32, 16, 8, 4, 2)
DEEP_WIDTHS = (2048, 1024, 512, 256, 128, 64, 32, 16, 8, 4, 2)


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer widths of a symmetric autoencoder.

    Widths include the input layer, so an encoder (10, 4, 2) has two weight
    layers.  The decoder must be the exact reverse of the encoder.
    """

    encoder_widths: tuple
    decoder_widths: tuple
    leaky_slope: float = LEAKY_SLOPE

    def __post_init__(self):
        enc = tuple(int(w) for w in self.encoder_widths)
        dec = tuple(int(w) for w in self.decoder_widths)
        object.__setattr__(self, "encoder_widths", enc)
        object.__setattr__(self, "decoder_widths", dec)
        if len(enc) < 2:
            raise ConfigError("encoder needs at least an input and one layer")
        if any(w <= 0 for w in enc + dec):
            raise ConfigError("layer widths must be positive")
        if dec != tuple(reversed(enc)):
            raise ConfigError("decoder widths must mirror the encoder widths")

    @property
    def input_dim(self):
        return self.encoder_widths[0]

    @property
    def bottleneck_dim(self):
        return self.encoder_widths[-1]

    @property
    def chain(self):
        """Full width chain from input through bottleneck back to output."""
        return self.encoder_widths + self.decoder_widths[1:]

    @property
    def n_layers(self):
        return len(self.chain) - 1

    @property
    def layer_shapes(self):
        chain = self.chain
        return tuple((chain[i], chain[i + 1]) for i in range(len(chain) - 1))

    def uses_tanh(self, layer):
        bottleneck = len(self.encoder_widths) - 2
        return layer == bottleneck or layer == self.n_layers - 1

    @property
    def param_count(self):
        return sum(r * c + c for r, c in self.layer_shapes)


def shallow_architecture(input_dim):
    widths = (int(input_dim),) + SHALLOW_WIDTHS
    return ArchitectureSpec(widths, tuple(reversed(widths)))


def deep_architecture(input_dim):
    widths = (int(input_dim),) + DEEP_WIDTHS
    return ArchitectureSpec(widths, tuple(reversed(widths)))


def make_architecture(name, input_dim):
    if name == "shallow":
        return shallow_architecture(input_dim)
    if name == "deep":
        return deep_architecture(input_dim)
    raise ConfigError(f"unknown architecture {name!r}")


def init_model(spec, seed):
    """Glorot-uniform weights, zero biases, deterministic for a given seed."""
    rng = np.random.default_rng(int(seed))
    parts = []
    for rows, cols in spec.layer_shapes:
        bound = np.sqrt(6.0 / (rows + cols))
        parts.append(rng.uniform(-bound, bound, rows * cols))
        parts.append(np.zeros(cols))
    return ParamVector(np.concatenate(parts), spec.layer_shapes)


def _check_input(spec, rows):
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.shape[1] != spec.input_dim:
        raise ShapeError(
            f"input width {rows.shape[1]} does not match architecture "
            f"input width {spec.input_dim}"
        )
    return rows


def forward_cached(params, spec, rows):
    """Run the full stack, returning per-layer activations and pre-activations.

    activations[0] is the input; activations[-1] the reconstruction.
    """
    if params.shapes != spec.layer_shapes:
        raise ShapeError("parameter shapes do not match the architecture")
    x = _check_input(spec, rows)
    activations = [x]
    preacts = []
    slope = spec.leaky_slope
    for i, (w, b) in enumerate(params.layers()):
        z = activations[-1] @ w + b
        preacts.append(z)
        if spec.uses_tanh(i):
            a = np.tanh(z)
        else:
            a = np.where(z > 0.0, z, slope * z)
        activations.append(a)
    return activations, preacts


def forward(params, spec, rows):
    """Reconstruction of a batch; output shape equals input shape."""
    activations, _ = forward_cached(params, spec, rows)
    out = activations[-1]
    if np.asarray(rows).ndim == 1:
        return out[0]
    return out


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    bce_part: float
    mse_part: float
    theta_mix: float


def _row_parts(layout, targets, outputs):
    """Per-row categorical and numerical loss parts.

    Returns two arrays of length n: the mean over categorical attributes of
    the per-attribute (1/width)-normalised negative BCE, and the mean over
    numerical attributes of the squared error.
    """
    n = targets.shape[0]
    if not np.isfinite(outputs).all():
        raise NumericError("non-finite values in model output")
    bce = np.zeros(n)
    if layout.cat_segments:
        for start, stop in layout.cat_segments:
            t = targets[:, start:stop]
            p = np.clip((outputs[:, start:stop] + 1.0) * 0.5, CLAMP_LO, CLAMP_HI)
            per_slot = t * np.log(p) + (1.0 - t) * np.log(1.0 - p)
            bce -= per_slot.sum(axis=1) / (stop - start)
        bce /= len(layout.cat_segments)
    mse = np.zeros(n)
    if layout.num_slots:
        slots = np.asarray(layout.num_slots)
        diff = targets[:, slots] - outputs[:, slots]
        mse = (diff * diff).mean(axis=1)
    return bce, mse


def row_losses(layout, targets, outputs, theta_mix):
    """Per-row total loss; used both for training and for anomaly scoring."""
    bce, mse = _row_parts(layout, targets, outputs)
    return theta_mix * bce + (1.0 - theta_mix) * mse


def reconstruction_loss(layout, target, output, theta_mix):
    """Mixed reconstruction loss of a single row or a batch (mean)."""
    targets = np.atleast_2d(np.asarray(target, dtype=np.float64))
    outputs = np.atleast_2d(np.asarray(output, dtype=np.float64))
    if targets.shape != outputs.shape:
        raise ShapeError("target and output shapes differ")
    if targets.shape[1] != layout.width:
        raise ShapeError(
            f"row width {targets.shape[1]} does not match layout width {layout.width}"
        )
    bce, mse = _row_parts(layout, targets, outputs)
    bce_part = float(bce.mean())
    mse_part = float(mse.mean())
    total = theta_mix * bce_part + (1.0 - theta_mix) * mse_part
    return LossBreakdown(total, bce_part, mse_part, theta_mix)


def batch_loss(params, spec, layout, rows, theta_mix):
    out = forward(params, spec, rows)
    return reconstruction_loss(layout, rows, out, theta_mix)


def output_gradient(layout, targets, outputs, theta_mix):
    """Gradient of the batch-mean reconstruction loss w.r.t. the outputs."""
    n = targets.shape[0]
    grad = np.zeros_like(outputs)
    if layout.cat_segments:
        coef = theta_mix / (len(layout.cat_segments) * n)
        for start, stop in layout.cat_segments:
            t = targets[:, start:stop]
            p_raw = (outputs[:, start:stop] + 1.0) * 0.5
            inside = (p_raw > CLAMP_LO) & (p_raw < CLAMP_HI)
            p = np.clip(p_raw, CLAMP_LO, CLAMP_HI)
            d = ((1.0 - t) / (1.0 - p) - t / p) * 0.5
            grad[:, start:stop] = np.where(inside, coef / (stop - start) * d, 0.0)
    if layout.num_slots:
        slots = np.asarray(layout.num_slots)
        coef = (1.0 - theta_mix) * 2.0 / (len(layout.num_slots) * n)
        grad[:, slots] = coef * (outputs[:, slots] - targets[:, slots])
    return grad


def backprop_deltas(params, spec, activations, preacts, dldy):
    """Backpropagate output-space gradients into per-layer deltas.

    ``dldy`` may carry any scaling (mean or per-row); deltas inherit it.
    """
    slope = spec.leaky_slope
    n_layers = spec.n_layers
    deltas = [None] * n_layers
    out = activations[-1]
    delta = dldy * (1.0 - out * out)  # final layer is Tanh
    deltas[n_layers - 1] = delta
    for i in range(n_layers - 1, 0, -1):
        w, _ = params.layer(i)
        upstream = delta @ w.T
        if spec.uses_tanh(i - 1):
            a = activations[i]
            delta = upstream * (1.0 - a * a)
        else:
            z = preacts[i - 1]
            delta = upstream * np.where(z > 0.0, 1.0, slope)
        deltas[i - 1] = delta
    return deltas


def grad_from_deltas(params, activations, deltas):
    """Assemble the flat gradient from activations and deltas."""
    parts = []
    for i, delta in enumerate(deltas):
        a = activations[i]
        parts.append((a.T @ delta).ravel())
        parts.append(delta.sum(axis=0))
    return ParamVector(np.concatenate(parts), params.shapes)


def backward(params, spec, layout, rows, theta_mix):
    """Gradient of the batch-mean loss plus the loss breakdown."""
    rows = _check_input(spec, rows)
    activations, preacts = forward_cached(params, spec, rows)
    out = activations[-1]
    loss = reconstruction_loss(layout, rows, out, theta_mix)
    dldy = output_gradient(layout, rows, out, theta_mix)
    deltas = backprop_deltas(params, spec, activations, preacts, dldy)
    return grad_from_deltas(params, activations, deltas), loss
