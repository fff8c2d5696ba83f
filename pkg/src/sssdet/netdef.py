"""Darknet-style network configs: parsing, shape inference, cost accounting."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError

HEADER_BYTES = 20
FLOAT_BYTES = 4

DEFAULT_ANCHORS = ((1.2, 1.7), (2.5, 4.0), (5.0, 6.5), (9.0, 10.0))


@dataclass(frozen=True)
class NetSpec:
    width: int
    height: int
    channels: int = 3
    batch: int = 4
    learning_rate: float = 0.001
    momentum: float = 0.9
    decay: float = 0.0005
    max_batches: int = 50000
    steps: tuple = (20000,)
    scales: tuple = (0.1,)
    burn_in: int = 0
    power: float = 4.0
    leaky_slope: float = 0.1
    bn_epsilon: float = 1e-5


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    filters: int
    size: int
    batch_normalize: bool
    activation: str
    line: int = 0
    kind: str = field(default="conv", init=False)

    @property
    def weight_count(self):
        return self.size * self.size * self.in_channels * self.filters

    @property
    def float_count(self):
        return self.weight_count + (4 * self.filters if self.batch_normalize else 0)


@dataclass(frozen=True)
class MaxPoolSpec:
    line: int = 0
    kind: str = field(default="maxpool", init=False)


@dataclass(frozen=True)
class RegionSpec:
    anchors: tuple
    classes: int
    coord_scale: float = 1.0
    object_scale: float = 5.0
    noobject_scale: float = 1.0
    class_scale: float = 1.0
    thresh: float = 0.6
    line: int = 0
    kind: str = field(default="region", init=False)

    @property
    def num_anchors(self):
        return len(self.anchors)

    @property
    def depth(self):
        return self.num_anchors * (5 + self.classes)


@dataclass(frozen=True)
class NetworkDef:
    """Validated layer graph.

    ``shapes[i]`` is the ``(channels, height, width)`` output of
    ``layers[i]``; the input shape is ``(net.channels, net.height, net.width)``.
    """

    net: NetSpec
    layers: tuple
    shapes: tuple

    @property
    def input_shape(self):
        return (self.net.channels, self.net.height, self.net.width)

    @property
    def convs(self):
        return [l for l in self.layers if l.kind == "conv"]

    @property
    def region(self):
        return self.layers[-1]

    @property
    def output_shape(self):
        return self.shapes[-1]

    @property
    def grid_size(self):
        return self.output_shape[1]

    def input_of(self, index):
        return self.input_shape if index == 0 else self.shapes[index - 1]


# --------------------------------------------------------------------------
# parsing

_NET_KEYS = {
    "width": int, "height": int, "channels": int, "batch": int,
    "learning_rate": float, "momentum": float, "decay": float,
    "max_batches": int, "steps": "ints", "scales": "floats",
    "burn_in": int, "power": float,
    "leaky_slope": float, "bn_epsilon": float,
}
_CONV_KEYS = {
    "filters": int, "size": int, "stride": int, "pad": int,
    "batch_normalize": int, "activation": str,
}
_POOL_KEYS = {"size": int, "stride": int}
_REGION_KEYS = {
    "anchors": "floats", "classes": int, "num": int,
    "coord_scale": float, "object_scale": float, "noobject_scale": float,
    "class_scale": float, "thresh": float,
}
_SECTIONS = {
    "net": _NET_KEYS, "network": _NET_KEYS,
    "convolutional": _CONV_KEYS, "conv": _CONV_KEYS,
    "maxpool": _POOL_KEYS, "region": _REGION_KEYS,
}


def _convert(kind, raw, key, line):
    try:
        if kind == "ints":
            return tuple(int(v) for v in raw.split(",") if v.strip())
        if kind == "floats":
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind is str:
            return raw
        return kind(raw)
    except ValueError:
        raise ConfigError(f"non-numeric value {raw!r} for key {key!r}", line=line) from None


def _sections(text):
    sections = []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {line!r}", line=lineno)
            name = line[1:-1].strip().lower()
            if name not in _SECTIONS:
                raise ConfigError(f"unknown section [{name}]", line=lineno)
            sections.append((name, lineno, {}))
            continue
        if not sections:
            raise ConfigError("key outside of any section", line=lineno)
        if "=" not in line:
            raise ConfigError(f"expected key=value, got {line!r}", line=lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        name, _, values = sections[-1]
        allowed = _SECTIONS[name]
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{name}]", line=lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", line=lineno)
        values[key] = (_convert(allowed[key], raw, key, lineno), lineno)
    return sections


def parse_config(text):
    """Parse config text into a :class:`NetworkDef`, inferring every shape."""
    sections = _sections(text)
    if not sections or sections[0][0] not in ("net", "network"):
        raise ConfigError("config must start with a [net] section", line=sections[0][1] if sections else None)
    _, net_line, net_vals = sections[0]
    net_kwargs = {k: v for k, (v, _) in net_vals.items()}
    for req in ("width", "height"):
        if req not in net_kwargs:
            raise ConfigError(f"[net] is missing {req!r}", line=net_line)
    net = NetSpec(**net_kwargs)
    if min(net.width, net.height, net.channels) < 1:
        raise ConfigError("input dimensions must be >= 1", line=net_line)
    if len(net.steps) != len(net.scales):
        raise ConfigError("steps and scales must have equal length", line=net_line)

    body = sections[1:]
    if not body:
        raise ConfigError("config has no layers", line=net_line)

    layers, shapes = [], []
    c, h, w = net.channels, net.height, net.width
    for i, (name, lineno, vals) in enumerate(body):
        get = {k: v for k, (v, _) in vals.items()}
        if name in ("convolutional", "conv"):
            if get.get("stride", 1) != 1:
                raise ConfigError("only stride=1 convolutions are supported", line=vals["stride"][1])
            size = get.get("size", 1)
            if size < 1 or size % 2 == 0:
                raise ConfigError(f"kernel size must be odd, got {size}", line=lineno)
            if "pad" in get and get["pad"] != 1:
                raise ConfigError("only same padding (pad=1) is supported", line=vals["pad"][1])
            if "filters" not in get or get["filters"] < 1:
                raise ConfigError("convolutional layer needs filters >= 1", line=lineno)
            act = get.get("activation", "leaky")
            if act not in ("leaky", "linear"):
                raise ConfigError(f"unsupported activation {act!r}", line=vals["activation"][1])
            layer = ConvSpec(
                in_channels=c, filters=get["filters"], size=size,
                batch_normalize=bool(get.get("batch_normalize", 0)),
                activation=act, line=lineno,
            )
            c = layer.filters
        elif name == "maxpool":
            if get.get("size", 2) != 2 or get.get("stride", 2) != 2:
                raise ConfigError("only 2x2 stride-2 maxpool is supported", line=lineno)
            if h % 2 or w % 2:
                raise ConfigError(f"maxpool needs even input size, got {h}x{w}", line=lineno, layer=i)
            layer = MaxPoolSpec(line=lineno)
            h, w = h // 2, w // 2
        else:
            if i != len(body) - 1:
                raise ConfigError("region layer must be the last layer", line=lineno)
            anchors = get.get("anchors")
            if anchors is None:
                anchors = tuple(v for a in DEFAULT_ANCHORS for v in a)
            if len(anchors) % 2:
                raise ConfigError("anchors must be (w, h) pairs", line=lineno)
            pairs = tuple(zip(anchors[0::2], anchors[1::2]))
            if any(a <= 0 for pair in pairs for a in pair):
                raise ConfigError("anchor dimensions must be positive", line=lineno)
            if "num" in get and get["num"] != len(pairs):
                raise ConfigError(f"num={get['num']} but {len(pairs)} anchor pairs given", line=lineno)
            if "classes" not in get or get["classes"] < 1:
                raise ConfigError("region layer needs classes >= 1", line=lineno)
            extra = {k: get[k] for k in ("coord_scale", "object_scale", "noobject_scale",
                                         "class_scale", "thresh") if k in get}
            layer = RegionSpec(anchors=pairs, classes=get["classes"], line=lineno, **extra)
            if any(v < 0 for v in (layer.coord_scale, layer.object_scale,
                                   layer.noobject_scale, layer.class_scale)):
                raise ConfigError("loss scales must be >= 0", line=lineno)
            if not layers or layers[-1].kind != "conv":
                raise ConfigError("region layer must follow a convolutional layer", line=lineno)
            if c != layer.depth:
                raise ConfigError(
                    f"final conv filters ({c}) must equal num_anchors*(5+classes) "
                    f"= {layer.num_anchors}*(5+{layer.classes}) = {layer.depth}", line=lineno)
        layers.append(layer)
        shapes.append((c, h, w))

    if layers[-1].kind != "region":
        raise ConfigError("config must end with a [region] layer", line=body[-1][1])
    return NetworkDef(net=net, layers=tuple(layers), shapes=tuple(shapes))


def load_config(path):
    path = Path(path)
    return parse_config(path.read_text())


def reference_config_text(name="sssdet.cfg"):
    return (resources.files("sssdet") / "cfg" / name).read_text()


def reference_config(name="sssdet.cfg"):
    """The shipped reference architecture (``sssdet.cfg``) or a sibling asset."""
    return parse_config(reference_config_text(name))


# --------------------------------------------------------------------------
# accounting


@dataclass(frozen=True)
class LayerCost:
    index: int
    kind: str
    description: str
    out_shape: tuple
    params: int
    flops: int


@dataclass(frozen=True)
class ComplexityReport:
    layers: tuple
    params: int
    flops: int
    model_bytes: int

    @property
    def bflops(self):
        return self.flops / 1e9

    @property
    def counts(self):
        out = {}
        for l in self.layers:
            out[l.kind] = out.get(l.kind, 0) + 1
        return out


def account(defn):
    """Per-layer and total parameters, FLOPs (multiply-add = 2) and file bytes."""
    rows = []
    for i, layer in enumerate(defn.layers):
        c, h, w = defn.shapes[i]
        if layer.kind == "conv":
            params = layer.float_count
            flops = 2 * layer.weight_count * h * w
            desc = (f"conv {layer.size}x{layer.size} {layer.in_channels}->{layer.filters}"
                    f"{' bn' if layer.batch_normalize else ''} {layer.activation}")
        elif layer.kind == "maxpool":
            params, flops, desc = 0, 0, "maxpool 2x2/2"
        else:
            params, flops = 0, 0
            desc = f"region anchors={layer.num_anchors} classes={layer.classes}"
        rows.append(LayerCost(i, layer.kind, desc, (h, w, c), params, flops))
    params = sum(r.params for r in rows)
    return ComplexityReport(
        layers=tuple(rows),
        params=params,
        flops=sum(r.flops for r in rows),
        model_bytes=HEADER_BYTES + FLOAT_BYTES * params,
    )


def summarize(defn, csv=False):
    """Per-layer table plus a totals row, as text."""
    rep = account(defn)
    if csv:
        lines = ["index,kind,description,out_h,out_w,out_c,params,flops"]
        for r in rep.layers:
            lines.append(f"{r.index},{r.kind},{r.description},{r.out_shape[0]},"
                         f"{r.out_shape[1]},{r.out_shape[2]},{r.params},{r.flops}")
        lines.append(f"total,,,,,,{rep.params},{rep.flops}")
        return "\n".join(lines) + "\n"

    c, h, w = defn.input_shape
    lines = [
        f"input {h} x {w} x {c}",
        f"{'#':>3}  {'layer':<34} {'output':>16} {'params':>12} {'BFLOPs':>10}",
    ]
    for r in rep.layers:
        shape = "x".join(str(v) for v in r.out_shape)
        lines.append(f"{r.index:>3}  {r.description:<34} {shape:>16} {r.params:>12,} {r.flops / 1e9:>10.3f}")
    counts = rep.counts
    lines.append(
        f"total: {counts.get('conv', 0)} conv, {counts.get('maxpool', 0)} maxpool, "
        f"{rep.params:,} params, {rep.bflops:.3f} BFLOPs, "
        f"{rep.model_bytes:,} bytes ({rep.model_bytes / 1e6:.2f} MB)"
    )
    return "\n".join(lines) + "\n"
