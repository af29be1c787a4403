"""Layer specifications, model graphs and the graph text format.

Graph files are line oriented. Blank lines and ``#`` comments are ignored.
The first two statements give the input shape and the class count, then one
layer per line in execution order::

    input 1 256 65
    classes 10
    conv2d in=1 out=16 kernel=3,3 stride=2,2 padding=1,1 bias=false
    batchnorm2d channels=16
    relu
    avg_pool2d kernel=2,2 stride=2,2
    global_avg_pool
    linear in=16 out=10

conv2d keys: ``in``, ``out``, ``kernel`` (required), ``stride`` (1,1),
``padding`` (0,0), ``groups`` (1), ``bias`` (true). avg_pool2d keys:
``kernel`` (required), ``stride`` (defaults to kernel). linear keys: ``in``,
``out``, ``bias`` (true). batchnorm2d takes ``channels``. Pairs may be written
as a single integer, meaning the same value for both axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import GraphParseError, GraphValidationError
from .layers import conv_output_size

KINDS = ("conv2d", "batchnorm2d", "relu", "avg_pool2d", "global_avg_pool", "linear")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: tuple[int, int] = (1, 1)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    groups: int = 1
    bias: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphValidationError(f"unknown layer kind {self.kind!r}")
        if min(self.kernel) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise GraphValidationError(f"{self.kind}: kernel/stride must be >= 1 and padding >= 0")
        if self.kind == "conv2d":
            if self.in_channels < 1 or self.out_channels < 1 or self.groups < 1:
                raise GraphValidationError("conv2d: channels and groups must be >= 1")
            if self.in_channels % self.groups or self.out_channels % self.groups:
                raise GraphValidationError(
                    f"conv2d: groups={self.groups} must divide in={self.in_channels} "
                    f"and out={self.out_channels}"
                )
        elif self.kind == "batchnorm2d" and self.in_channels < 1:
            raise GraphValidationError("batchnorm2d: channels must be >= 1")
        elif self.kind == "linear" and (self.in_channels < 1 or self.out_channels < 1):
            raise GraphValidationError("linear: in and out must be >= 1")

    @classmethod
    def conv2d(cls, in_ch, out_ch, kernel, stride=(1, 1), padding=(0, 0), groups=1, bias=True):
        return cls("conv2d", in_ch, out_ch, _pair(kernel), _pair(stride), _pair(padding), groups, bias)

    @classmethod
    def batchnorm2d(cls, channels):
        return cls("batchnorm2d", channels, channels)

    @classmethod
    def relu(cls):
        return cls("relu")

    @classmethod
    def avg_pool2d(cls, kernel, stride=None):
        kernel = _pair(kernel)
        return cls("avg_pool2d", kernel=kernel, stride=_pair(stride) if stride is not None else kernel)

    @classmethod
    def global_avg_pool(cls):
        return cls("global_avg_pool")

    @classmethod
    def linear(cls, in_features, out_features, bias=True):
        return cls("linear", in_features, out_features, bias=bias)

    def output_shape(self, shape):
        """Shape (C, F, T) or (features,) after this layer, validating the input."""
        kind = self.kind
        if kind == "linear":
            flat = 1
            for d in shape:
                flat *= d
            if flat != self.in_channels:
                raise GraphValidationError(f"linear expects {self.in_channels} inputs, got {flat}")
            return (self.out_channels,)
        if len(shape) != 3:
            raise GraphValidationError(f"{kind} needs a (C, F, T) input, got {shape}")
        c, f, t = shape
        if kind == "conv2d":
            if c != self.in_channels:
                raise GraphValidationError(f"conv2d expects {self.in_channels} channels, got {c}")
            of = conv_output_size(f, self.kernel[0], self.stride[0], self.padding[0])
            ot = conv_output_size(t, self.kernel[1], self.stride[1], self.padding[1])
            if of < 1 or ot < 1:
                raise GraphValidationError(f"conv2d kernel {self.kernel} larger than padded input {f}x{t}")
            return (self.out_channels, of, ot)
        if kind == "batchnorm2d":
            if c != self.in_channels:
                raise GraphValidationError(f"batchnorm2d expects {self.in_channels} channels, got {c}")
            return shape
        if kind == "relu":
            return shape
        if kind == "avg_pool2d":
            kf, kt = self.kernel
            if kf > f or kt > t:
                raise GraphValidationError(f"pool window {self.kernel} larger than input {f}x{t}")
            return (c, (f - kf) // self.stride[0] + 1, (t - kt) // self.stride[1] + 1)
        return (c, 1, 1)

    def to_line(self) -> str:
        k = self.kind
        if k == "conv2d":
            return (
                f"conv2d in={self.in_channels} out={self.out_channels} "
                f"kernel={_fmt(self.kernel)} stride={_fmt(self.stride)} "
                f"padding={_fmt(self.padding)} groups={self.groups} bias={str(self.bias).lower()}"
            )
        if k == "batchnorm2d":
            return f"batchnorm2d channels={self.in_channels}"
        if k == "avg_pool2d":
            return f"avg_pool2d kernel={_fmt(self.kernel)} stride={_fmt(self.stride)}"
        if k == "linear":
            return f"linear in={self.in_channels} out={self.out_channels} bias={str(self.bias).lower()}"
        return k


@dataclass(frozen=True)
class ModelGraph:
    """Ordered layer list with a fixed input shape (C, F, T) and class count.

    Construction checks that shapes chain from the input to ``(class_count,)``.
    """

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]
    class_count: int
    shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "shapes", self.infer_shapes(self.input_shape))
        if self.shapes[-1] != (self.class_count,):
            raise GraphValidationError(
                f"graph ends in shape {self.shapes[-1]}, expected ({self.class_count},)"
            )

    def infer_shapes(self, input_shape):
        """Activation shapes before the first layer and after every layer."""
        if len(input_shape) != 3 or min(input_shape) < 1:
            raise GraphValidationError(f"input shape must be (C, F, T) with positive dims, got {input_shape}")
        shapes = [tuple(input_shape)]
        for i, layer in enumerate(self.layers):
            try:
                shapes.append(layer.output_shape(shapes[-1]))
            except GraphValidationError as exc:
                raise GraphValidationError(f"layer {i} ({layer.kind}): {exc}") from None
        return tuple(shapes)

    def with_input(self, input_shape) -> "ModelGraph":
        return replace(self, input_shape=tuple(input_shape))

    def to_text(self) -> str:
        lines = [
            "input " + " ".join(str(d) for d in self.input_shape),
            f"classes {self.class_count}",
        ]
        lines += [layer.to_line() for layer in self.layers]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _pair(v):
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def _fmt(pair):
    return f"{pair[0]},{pair[1]}"


_LAYER_KEYS = {
    "conv2d": {"in", "out", "kernel", "stride", "padding", "groups", "bias"},
    "batchnorm2d": {"channels"},
    "relu": set(),
    "avg_pool2d": {"kernel", "stride"},
    "global_avg_pool": set(),
    "linear": {"in", "out", "bias"},
}


def _parse_value(key, raw, lineno, path):
    try:
        if key in ("kernel", "stride", "padding"):
            parts = [int(p) for p in raw.split(",")]
            if len(parts) == 1:
                return (parts[0], parts[0])
            if len(parts) == 2:
                return tuple(parts)
            raise ValueError
        if key == "bias":
            if raw.lower() not in ("true", "false"):
                raise ValueError
            return raw.lower() == "true"
        return int(raw)
    except ValueError:
        raise GraphParseError(f"bad value {raw!r} for {key!r}", lineno, path) from None


def parse_graph(text: str, path=None) -> ModelGraph:
    input_shape = None
    classes = None
    layers = []
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head == "input":
            try:
                input_shape = tuple(int(v) for v in rest)
            except ValueError:
                raise GraphParseError("input needs three integers C F T", lineno, path) from None
            if len(input_shape) != 3:
                raise GraphParseError("input needs three integers C F T", lineno, path)
            continue
        if head == "classes":
            if len(rest) != 1 or not rest[0].isdigit():
                raise GraphParseError("classes needs one integer", lineno, path)
            classes = int(rest[0])
            continue
        if head not in _LAYER_KEYS:
            raise GraphParseError(f"unknown statement {head!r}", lineno, path)
        kv = {}
        for token in rest:
            if "=" not in token:
                raise GraphParseError(f"expected key=value, got {token!r}", lineno, path)
            key, value = token.split("=", 1)
            if key not in _LAYER_KEYS[head]:
                raise GraphParseError(f"{head} does not take {key!r}", lineno, path)
            kv[key] = _parse_value(key, value, lineno, path)
        try:
            layers.append(_build_layer(head, kv))
        except KeyError as exc:
            raise GraphParseError(f"{head} is missing required key {exc.args[0]!r}", lineno, path) from None
        except GraphValidationError as exc:
            raise GraphParseError(str(exc), lineno, path) from None
    if input_shape is None:
        raise GraphParseError("missing 'input' statement", None, path)
    if classes is None:
        raise GraphParseError("missing 'classes' statement", None, path)
    return ModelGraph(tuple(layers), input_shape, classes)


def _build_layer(kind, kv):
    if kind == "conv2d":
        return LayerSpec.conv2d(
            kv["in"], kv["out"], kv["kernel"], kv.get("stride", (1, 1)),
            kv.get("padding", (0, 0)), kv.get("groups", 1), kv.get("bias", True),
        )
    if kind == "batchnorm2d":
        return LayerSpec.batchnorm2d(kv["channels"])
    if kind == "avg_pool2d":
        return LayerSpec.avg_pool2d(kv["kernel"], kv.get("stride"))
    if kind == "linear":
        return LayerSpec.linear(kv["in"], kv["out"], kv.get("bias", True))
    return LayerSpec(kind)


def load_graph(path) -> ModelGraph:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise GraphParseError(f"cannot read graph file ({exc.strerror})", None, path) from None
    return parse_graph(text, path)


def factorized_cnn(widths=(96, 112, 144), stem=48, groups=(8, 16, 16), mel_bins=256, frames=65, classes=10):
    """The factorized CNN used by the baseline pipeline.

    A strided 3x3 stem, then one block per entry of ``widths``: a grouped
    (3,1) conv with frequency stride, a grouped (1,3) conv with time stride,
    and a 1x1 channel-mixing conv, each followed by batch norm and ReLU.
    Global average pooling feeds a linear classifier.
    """
    L = LayerSpec
    layers = [L.conv2d(1, stem, 3, 2, 1, bias=False), L.batchnorm2d(stem), L.relu()]
    c = stem
    for w, g in zip(widths, groups):
        layers += [
            L.conv2d(c, w, (3, 1), (2, 1), (1, 0), groups=g, bias=False), L.batchnorm2d(w), L.relu(),
            L.conv2d(w, w, (1, 3), (1, 2), (0, 1), groups=g, bias=False), L.batchnorm2d(w), L.relu(),
            L.conv2d(w, w, 1, bias=False), L.batchnorm2d(w), L.relu(),
        ]
        c = w
    layers += [L.global_avg_pool(), L.linear(c, classes)]
    return ModelGraph(tuple(layers), (1, mel_bins, frames), classes)


def reference_graph(classes=10) -> ModelGraph:
    """Full-size model: 27.06 M MACs and 63,050 parameters on a (1, 256, 65) input."""
    return factorized_cnn((96, 112, 144), 48, (8, 16, 16), classes=classes)


def desk_graph(classes=10) -> ModelGraph:
    """Narrow variant for quick CPU experiments: 4.72 M MACs, 21,450 parameters."""
    return factorized_cnn((24, 48, 96), 16, (4, 8, 8), classes=classes)


NAMED_GRAPHS = {"reference": reference_graph, "desk": desk_graph}
