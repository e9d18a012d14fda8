"""Fire modules and the full classifier network.

The backbone is the small-variant SqueezeNet topology: a 3x3 stride-2 stem
convolution, 3/2 max pools, and a list of fire modules (1x1 squeeze into
parallel 1x1 and 3x3 expands whose outputs concatenate along channels).
The classifier head replaces the usual conv10 with global average pooling
followed by two dense layers and a softmax, which keeps the parameter count
small while still producing per-class probabilities.

Parameters live in a flat name -> array dict using ``<layer>/weight`` and
``<layer>/bias`` keys, fully determined by the config, which is what lets
checkpoints validate shapes on load.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ModelError, ShapeError, StateError
from .ops import (
    ConvSpec,
    channel_concat,
    channel_split,
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    dropout_mask,
    global_avg_pool,
    global_avg_pool_backward,
    maxpool2d,
    maxpool2d_backward,
    relu,
    relu_backward,
    softmax,
)
from .tensor import derive_seed, he_init

MIN_INPUT_SIZE = 32
STEM_CHANNELS = 64
POOL_KERNEL = 3
POOL_STRIDE = 2
# mid-network pools sit after these (1-based) fire positions when more follow
POOL_AFTER_FIRES = (2, 4)


@dataclass(frozen=True)
class FireSpec:
    """Channel widths of one fire module."""

    squeeze_1x1: int
    expand_1x1: int
    expand_3x3: int

    def __post_init__(self):
        if min(self.squeeze_1x1, self.expand_1x1, self.expand_3x3) < 1:
            raise ConfigError(f"fire widths must be >= 1, got {self}")
        if self.squeeze_1x1 > self.expand_1x1 + self.expand_3x3:
            raise ConfigError(f"squeeze wider than combined expand in {self}")

    @property
    def out_channels(self) -> int:
        return self.expand_1x1 + self.expand_3x3


V11_FIRES: tuple[FireSpec, ...] = (
    FireSpec(16, 64, 64),
    FireSpec(16, 64, 64),
    FireSpec(32, 128, 128),
    FireSpec(32, 128, 128),
    FireSpec(48, 192, 192),
    FireSpec(48, 192, 192),
    FireSpec(64, 256, 256),
    FireSpec(64, 256, 256),
)

TINY_FIRES: tuple[FireSpec, ...] = (FireSpec(2, 2, 2), FireSpec(2, 2, 2))


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 24
    input_size: int = 244
    fire_specs: tuple[FireSpec, ...] = V11_FIRES
    head_hidden: int = 512
    dropout_rate: float = 0.5
    variant: str = "v1.1"

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_size < MIN_INPUT_SIZE:
            raise ConfigError(f"input_size must be >= {MIN_INPUT_SIZE}, got {self.input_size}")
        if not self.fire_specs:
            raise ConfigError("fire_specs must be non-empty")
        if self.head_hidden < 1:
            raise ConfigError(f"head_hidden must be >= 1, got {self.head_hidden}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0,1), got {self.dropout_rate}")
        object.__setattr__(self, "fire_specs", tuple(self.fire_specs))

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "input_size": self.input_size,
            "fire_specs": [[f.squeeze_1x1, f.expand_1x1, f.expand_3x3] for f in self.fire_specs],
            "head_hidden": self.head_hidden,
            "dropout_rate": self.dropout_rate,
            "variant": self.variant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            num_classes=int(d["num_classes"]),
            input_size=int(d["input_size"]),
            fire_specs=tuple(FireSpec(*f) for f in d["fire_specs"]),
            head_hidden=int(d["head_hidden"]),
            dropout_rate=float(d["dropout_rate"]),
            variant=str(d["variant"]),
        )


def tiny_config(num_classes: int = 3, input_size: int = 32) -> ModelConfig:
    """Two-fire desk-scale network used by tests and quick experiments."""
    return ModelConfig(
        num_classes=num_classes,
        input_size=input_size,
        fire_specs=TINY_FIRES,
        head_hidden=32,
        variant="tiny",
    )


@dataclass(frozen=True)
class _Step:
    kind: str
    name: str
    conv: ConvSpec | None = None
    fire: FireSpec | None = None
    in_channels: int = 0
    in_features: int = 0
    units: int = 0
    apply_relu: bool = False


def layer_plan(config: ModelConfig) -> list[_Step]:
    """Ordered layer list implied by the config."""
    steps = [
        _Step("conv", "conv1", conv=ConvSpec(STEM_CHANNELS, 3, 3, 3, stride=2), apply_relu=True),
        _Step("pool", "pool1"),
    ]
    channels = STEM_CHANNELS
    pools = 1
    for i, fire in enumerate(config.fire_specs, start=1):
        steps.append(_Step("fire", f"fire{i}", fire=fire, in_channels=channels))
        channels = fire.out_channels
        if i in POOL_AFTER_FIRES and i < len(config.fire_specs):
            pools += 1
            steps.append(_Step("pool", f"pool{pools}"))
    steps.append(_Step("gap", "gap"))
    steps.append(
        _Step("dense", "dense1", in_features=channels, units=config.head_hidden, apply_relu=True)
    )
    steps.append(_Step("dropout", "dropout"))
    steps.append(_Step("dense", "dense2", in_features=config.head_hidden, units=config.num_classes))
    steps.append(_Step("softmax", "softmax"))
    return steps


def _fire_conv_specs(spec: FireSpec, in_channels: int) -> dict[str, ConvSpec]:
    return {
        "squeeze": ConvSpec(spec.squeeze_1x1, in_channels, 1, 1),
        "expand1x1": ConvSpec(spec.expand_1x1, spec.squeeze_1x1, 1, 1),
        "expand3x3": ConvSpec(spec.expand_3x3, spec.squeeze_1x1, 3, 3, pad=1),
    }


def _param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for step in layer_plan(config):
        if step.kind == "conv":
            c = step.conv
            shapes[f"{step.name}/weight"] = (c.out_channels, c.in_channels, c.kernel_h, c.kernel_w)
            shapes[f"{step.name}/bias"] = (c.out_channels,)
        elif step.kind == "fire":
            for part, c in _fire_conv_specs(step.fire, step.in_channels).items():
                shapes[f"{step.name}_{part}/weight"] = (
                    c.out_channels,
                    c.in_channels,
                    c.kernel_h,
                    c.kernel_w,
                )
                shapes[f"{step.name}_{part}/bias"] = (c.out_channels,)
        elif step.kind == "dense":
            shapes[f"{step.name}/weight"] = (step.in_features, step.units)
            shapes[f"{step.name}/bias"] = (step.units,)
    return shapes


def layer_summary(config: ModelConfig) -> list[dict]:
    """Per-layer name, output shape (channel-first, no batch dim) and parameter count.

    Raises ConfigError when the pooling stack shrinks the input below 1x1.
    """
    shapes = _param_shapes(config)
    rows = []
    h = w = config.input_size
    channels = 3
    features = 0
    try:
        for step in layer_plan(config):
            if step.kind == "conv":
                h, w = step.conv.out_hw(h, w)
                channels = step.conv.out_channels
                out_shape = (channels, h, w)
            elif step.kind == "pool":
                if POOL_KERNEL > h or POOL_KERNEL > w:
                    raise ShapeError(f"pool window {POOL_KERNEL} larger than {h}x{w}")
                h = (h - POOL_KERNEL) // POOL_STRIDE + 1
                w = (w - POOL_KERNEL) // POOL_STRIDE + 1
                out_shape = (channels, h, w)
            elif step.kind == "fire":
                channels = step.fire.out_channels
                out_shape = (channels, h, w)
            elif step.kind == "gap":
                features = channels
                out_shape = (features,)
            elif step.kind == "dense":
                features = step.units
                out_shape = (features,)
            else:  # dropout, softmax
                out_shape = (features,)
            count = sum(
                int(np.prod(s)) for n, s in shapes.items() if n.split("/")[0].startswith(step.name)
            )
            rows.append({"name": step.name, "output_shape": list(out_shape), "params": count})
    except ShapeError as exc:
        raise ConfigError(f"input_size {config.input_size} too small for the pooling stack: {exc}")
    return rows


class Model:
    """Config plus named parameter tensors and per-parameter SGD velocity."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray], velocity=None):
        self.config = config
        self.params = params
        self.velocity = (
            velocity
            if velocity is not None
            else {name: np.zeros_like(p) for name, p in params.items()}
        )
        self._cache: list | None = None

    def param_names(self) -> list[str]:
        return list(self.params.keys())


def build_model(config: ModelConfig, seed: int) -> Model:
    """He-initialized model; bit-identical for identical (config, seed)."""
    layer_summary(config)  # validates the pooling stack up front
    params: dict[str, np.ndarray] = {}
    for index, (name, shape) in enumerate(_param_shapes(config).items()):
        if name.endswith("/weight"):
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            params[name] = he_init(shape, fan_in, derive_seed(seed, index))
        else:
            params[name] = np.zeros(shape, dtype=np.float32)
    return Model(config, params)


def parameter_count(model: Model) -> int:
    return sum(p.size for p in model.params.values())


def _get_params(params, layer: str) -> tuple[np.ndarray, np.ndarray]:
    try:
        return params[f"{layer}/weight"], params[f"{layer}/bias"]
    except KeyError:
        raise ModelError(f"missing parameters for layer {layer!r}")


def _fire_forward_cached(x, spec: FireSpec, params, prefix: str):
    convs = _fire_conv_specs(spec, x.shape[1])
    sw, sb = _get_params(params, f"{prefix}_squeeze")
    if sw.shape != (spec.squeeze_1x1, x.shape[1], 1, 1):
        raise ModelError(
            f"{prefix} squeeze weight shape {sw.shape} does not match input {x.shape[1]} channels"
        )
    sq_z = conv2d_forward(x, sw, sb, convs["squeeze"])
    sq_a = relu(sq_z)
    e1w, e1b = _get_params(params, f"{prefix}_expand1x1")
    e3w, e3b = _get_params(params, f"{prefix}_expand3x3")
    e1_z = conv2d_forward(sq_a, e1w, e1b, convs["expand1x1"])
    e3_z = conv2d_forward(sq_a, e3w, e3b, convs["expand3x3"])
    out = channel_concat(relu(e1_z), relu(e3_z))
    return out, (x, sq_z, sq_a, e1_z, e3_z)


def fire_forward(x: np.ndarray, spec: FireSpec, params, prefix: str = "fire") -> np.ndarray:
    """relu(squeeze) into parallel relu(expand1x1), relu(expand3x3), concatenated.

    Spatial dims are preserved; output has spec.out_channels channels.
    """
    out, _ = _fire_forward_cached(x, spec, params, prefix)
    return out


def _fire_backward(cache, spec: FireSpec, params, prefix: str, d_out):
    x, sq_z, sq_a, e1_z, e3_z = cache
    convs = _fire_conv_specs(spec, x.shape[1])
    grads: dict[str, np.ndarray] = {}

    d_e1, d_e3 = channel_split(d_out, spec.expand_1x1)
    e1w, _ = _get_params(params, f"{prefix}_expand1x1")
    e3w, _ = _get_params(params, f"{prefix}_expand3x3")
    g1 = conv2d_backward(sq_a, e1w, convs["expand1x1"], relu_backward(e1_z, d_e1))
    g3 = conv2d_backward(sq_a, e3w, convs["expand3x3"], relu_backward(e3_z, d_e3))
    grads[f"{prefix}_expand1x1/weight"] = g1.d_weight
    grads[f"{prefix}_expand1x1/bias"] = g1.d_bias
    grads[f"{prefix}_expand3x3/weight"] = g3.d_weight
    grads[f"{prefix}_expand3x3/bias"] = g3.d_bias

    d_sq_a = g1.d_input + g3.d_input
    sw, _ = _get_params(params, f"{prefix}_squeeze")
    gs = conv2d_backward(x, sw, convs["squeeze"], relu_backward(sq_z, d_sq_a))
    grads[f"{prefix}_squeeze/weight"] = gs.d_weight
    grads[f"{prefix}_squeeze/bias"] = gs.d_bias
    return gs.d_input, grads


def model_forward(
    model: Model,
    batch: np.ndarray,
    training: bool = False,
    dropout_seed: int | None = None,
) -> np.ndarray:
    """Probabilities [N, num_classes] for an NCHW batch at the configured size.

    With training=True intermediate activations are retained on the model for
    model_backward.  Dropout fires only when training and a dropout_seed is
    given, so evaluation passes stay deterministic.
    """
    size = model.config.input_size
    if batch.ndim != 4 or batch.shape[1:] != (3, size, size):
        raise ShapeError(f"batch shape {batch.shape}, expected [N,3,{size},{size}]")
    cache: list = []
    x = batch
    for step in layer_plan(model.config):
        if step.kind == "conv":
            w, b = _get_params(model.params, step.name)
            z = conv2d_forward(x, w, b, step.conv)
            cache.append((x, z))
            x = relu(z) if step.apply_relu else z
        elif step.kind == "pool":
            cache.append(x)
            x = maxpool2d(x, POOL_KERNEL, POOL_STRIDE)
        elif step.kind == "fire":
            x, fire_cache = _fire_forward_cached(x, step.fire, model.params, step.name)
            cache.append(fire_cache)
        elif step.kind == "gap":
            cache.append(x.shape[2:])
            x = global_avg_pool(x)
        elif step.kind == "dense":
            w, b = _get_params(model.params, step.name)
            z = dense_forward(x, w, b)
            cache.append((x, z))
            x = relu(z) if step.apply_relu else z
        elif step.kind == "dropout":
            rate = model.config.dropout_rate
            if training and dropout_seed is not None and rate > 0.0:
                mask = dropout_mask(x.shape, rate, dropout_seed)
                cache.append(mask)
                x = x * mask
            else:
                cache.append(None)
        else:  # softmax
            cache.append(None)
            x = softmax(x)
    model._cache = cache if training else None
    return x


def model_backward(model: Model, d_logits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient per parameter given the loss gradient at the pre-softmax logits."""
    if model._cache is None:
        raise StateError("model_backward needs a preceding forward pass with training=True")
    steps = layer_plan(model.config)
    grads: dict[str, np.ndarray] = {}
    d = d_logits
    for step, cached in zip(reversed(steps), reversed(model._cache)):
        if step.kind == "softmax":
            continue  # gradient arrives at the logits, softmax is fused into the loss
        if step.kind == "dense":
            x, z = cached
            if step.apply_relu:
                d = relu_backward(z, d)
            g = dense_backward(x, model.params[f"{step.name}/weight"], d)
            grads[f"{step.name}/weight"] = g.d_weight
            grads[f"{step.name}/bias"] = g.d_bias
            d = g.d_input
        elif step.kind == "dropout":
            if cached is not None:
                d = d * cached
        elif step.kind == "gap":
            h, w = cached
            d = global_avg_pool_backward(d, h, w)
        elif step.kind == "fire":
            d, fire_grads = _fire_backward(cached, step.fire, model.params, step.name, d)
            grads.update(fire_grads)
        elif step.kind == "pool":
            d = maxpool2d_backward(cached, POOL_KERNEL, POOL_STRIDE, d)
        elif step.kind == "conv":
            x, z = cached
            if step.apply_relu:
                d = relu_backward(z, d)
            g = conv2d_backward(x, model.params[f"{step.name}/weight"], step.conv, d)
            grads[f"{step.name}/weight"] = g.d_weight
            grads[f"{step.name}/bias"] = g.d_bias
            d = g.d_input
    return grads


def clone_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {name: p.copy() for name, p in params.items()}


def expected_param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every parameter the config implies, in build order."""
    return _param_shapes(config)
