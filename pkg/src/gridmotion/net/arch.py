"""Network graph and the named architectures.

A network is an ordered list of nodes, each applying one layer to the outputs
of earlier nodes. The segmentation path ends in logits at the input
resolution ("seg"); optional regression heads replicate the upsampling
structure and emit bounded sin/cos maps ("sin", "cos").

Named architectures:

    TOY-32s/16s/8s    five conv blocks of widths 8/16/32/32/32 with 2x pools
                      (stride-32 pattern) at desk-scale channel widths
    FCN-32s/16s/8s    the 16-layer reference stack (widths 64..512, 4096-wide
                      head convs), same-size padding, skips from pool4/pool3
    ALEX-32s/16s/4s   the 7-layer reference stack (11x11 stride-4 entry),
                      skips from pool2 and the stride-4 entry feature map

All strides multiply to 32; the deep-jet variants fuse 1x1 score maps of the
named skip sources (zero-initialized) into progressively finer upsampling.
Upsampling weights start as (and by default stay) fixed bilinear kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import Conv, CropTo, Deconv, FuseSum, Layer, MaxPool, ReLU, Tanh, softmax


class ArchError(ValueError):
    pass


def conv_output_edge(m: int, n: int, p: int, s: int) -> int:
    """Output edge of a (filter n, pad p, stride s) layer on an m-wide map.

    Raises ArchError unless the division is exact and the result positive.
    """
    num = m - n + 2 * p
    if num < 0 or num % s != 0:
        raise ArchError(f"edge {m} with filter {n}, pad {p}, stride {s} "
                        f"gives a non-integral output")
    edge = num // s + 1
    if edge <= 0:
        raise ArchError("non-positive output edge")
    return edge


@dataclass
class Node:
    name: str
    layer: Layer
    inputs: list[str] = field(default_factory=lambda: ["_prev"])


class Network:
    """Ordered single-sample computation graph over (C, H, W) arrays."""

    def __init__(self, name: str, nodes: list[Node], outputs: dict[str, str],
                 in_channels: int = 3, dtype=np.float32):
        self.name = name
        self.nodes = nodes
        self.outputs = outputs  # head name -> node name
        self.in_channels = in_channels
        self.dtype = dtype
        self._values = None
        known = {"input"}
        for node in nodes:
            for src in node.inputs:
                if src not in known:
                    raise ArchError(f"node {node.name} consumes unknown '{src}'")
            known.add(node.name)

    @property
    def has_heads(self) -> bool:
        return "sin" in self.outputs

    def forward(self, x: np.ndarray) -> dict[str, np.ndarray]:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 3 or x.shape[0] != self.in_channels:
            raise ArchError(f"expected ({self.in_channels}, H, W) input, got {x.shape}")
        values = {"input": x}
        for node in self.nodes:
            args = [values[src] for src in node.inputs]
            values[node.name] = node.layer.forward(*args)
        self._values = values
        return {head: values[src] for head, src in self.outputs.items()}

    def backward(self, out_grads: dict[str, np.ndarray]) -> None:
        """Accumulate parameter gradients for the given output gradients."""
        if self._values is None:
            raise RuntimeError("backward requires a preceding forward")
        grads: dict[str, np.ndarray] = {}
        for head, g in out_grads.items():
            name = self.outputs[head]
            grads[name] = grads.get(name, 0) + g
        for node in reversed(self.nodes):
            g = grads.pop(node.name, None)
            if g is None:
                continue
            dxs = node.layer.backward(g)
            if not isinstance(dxs, tuple):
                dxs = (dxs,)
            for src, dx in zip(node.inputs, dxs):
                if dx is None or src == "input":
                    continue
                if src in grads:
                    grads[src] = grads[src] + dx
                else:
                    grads[src] = dx

    def zero_grads(self) -> None:
        for _, layer in self.param_layers():
            layer.dW[...] = 0
            if hasattr(layer, "db"):
                layer.db[...] = 0

    def param_layers(self):
        """(node name, layer) for every parameterized layer, graph order."""
        for node in self.nodes:
            if node.layer.params():
                yield node.name, node.layer

    def param_arrays(self):
        """(key, value array, grad array) triples for every learnable tensor."""
        for name, layer in self.param_layers():
            yield f"{name}.W", layer.W, layer.dW
            if hasattr(layer, "db"):
                yield f"{name}.b", layer.b, layer.db

    def predict(self, x: np.ndarray) -> dict[str, np.ndarray]:
        """Forward plus derived maps: class probabilities and argmax labels."""
        out = self.forward(x)
        prob = softmax(out["seg"].astype(np.float64))
        result = {"logits": out["seg"], "prob_dynamic": prob[1],
                  "pred": prob.argmax(axis=0).astype(np.int8)}
        if self.has_heads:
            result["sin"] = out["sin"][0]
            result["cos"] = out["cos"][0]
        return result

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for name, layer in self.param_layers():
            state[f"{name}.W"] = layer.W.copy()
            if hasattr(layer, "db"):
                state[f"{name}.b"] = layer.b.copy()
        return state

    def load_state(self, state: dict[str, np.ndarray], strict=True) -> None:
        for name, layer in self.param_layers():
            for pname, arr in (("W", layer.W), ("b", getattr(layer, "b", None))):
                if arr is None:
                    continue
                key = f"{name}.{pname}"
                if key not in state:
                    if strict:
                        raise ArchError(f"missing parameter {key}")
                    continue
                if state[key].shape != arr.shape:
                    raise ArchError(f"shape mismatch for {key}: "
                                    f"{state[key].shape} vs {arr.shape}")
                arr[...] = state[key].astype(arr.dtype)


# -- named architecture builders -----------------------------------------------------


def _jet(nodes, *, prefix, skips, final_factor, out_ch, rng, dtype, squash):
    """Wire score -> stepwise upsampling with skip fusions -> full-size output.

    skips: list of (source node, source channels, upsampling step factor).
    """
    prev = f"{prefix}score"
    for i, (skip_src, skip_ch, step) in enumerate(skips, start=1):
        # skip score conv is zero-initialized: fusing it is initially a no-op
        skip = f"{prefix}skip{i}"
        nodes.append(Node(skip, Conv(skip_ch, out_ch, 1, rng=rng, dtype=dtype,
                                     zero_init=True), [skip_src]))
        up = f"{prefix}up{i}"
        nodes.append(Node(up, Deconv(out_ch, out_ch, step, dtype=dtype), [prev]))
        crop = f"{up}c"
        nodes.append(Node(crop, CropTo(), [up, skip]))
        fuse = f"{prefix}fuse{i}"
        nodes.append(Node(fuse, FuseSum(), [skip, crop]))
        prev = fuse
    up_final = f"{prefix}upfinal"
    nodes.append(Node(up_final, Deconv(out_ch, out_ch, final_factor, dtype=dtype),
                      [prev]))
    out_name = f"{prefix}out"
    nodes.append(Node(out_name, CropTo(), [up_final, "input"]))
    if squash:
        nodes.append(Node(f"{prefix}squash", Tanh(), [out_name]))
        out_name = f"{prefix}squash"
    return out_name


def _build_backbone(kind: str, in_channels: int, rng, dtype):
    """Conv/pool stack; returns (nodes, feature node, feature ch, skip points).

    skip points: {stride: (node name, channels)} for the deep-jet variants.
    """
    nodes: list[Node] = []
    prev = "input"

    def conv(name, cin, cout, k, s=1, p=0):
        nonlocal prev
        nodes.append(Node(name, Conv(cin, cout, k, s, p, rng=rng, dtype=dtype), [prev]))
        nodes.append(Node(name + "r", ReLU(), [name]))
        prev = name + "r"
        return cout

    def pool(name, k=2, s=2, p=0):
        nonlocal prev
        nodes.append(Node(name, MaxPool(k, s, p), [prev]))
        prev = name

    skips = {}
    if kind == "TOY":
        widths = [8, 16, 32, 32, 32]
        cin = in_channels
        for i, wd in enumerate(widths, start=1):
            cin = conv(f"conv{i}", cin, wd, 3, 1, 1)
            pool(f"pool{i}")
            skips[2 ** i] = (f"pool{i}", wd)
        cin = conv("head6", cin, 64, 3, 1, 1)
        return nodes, prev, cin, skips
    if kind == "FCN":
        plan = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)]
        cin = in_channels
        for bi, (wd, reps) in enumerate(plan, start=1):
            for ri in range(1, reps + 1):
                cin = conv(f"conv{bi}_{ri}", cin, wd, 3, 1, 1)
            pool(f"pool{bi}")
            skips[2 ** bi] = (f"pool{bi}", wd)
        cin = conv("fc6", cin, 4096, 7, 1, 3)
        cin = conv("fc7", cin, 4096, 1)
        return nodes, prev, cin, skips
    if kind == "ALEX":
        cin = conv("conv1", in_channels, 96, 11, 4, 5)
        skips[4] = (prev, 96)  # stride-4 entry features
        pool("pool1", 3, 2, 1)
        cin = conv("conv2", cin, 256, 5, 1, 2)
        pool("pool2", 3, 2, 1)
        skips[16] = ("pool2", 256)
        cin = conv("conv3", cin, 384, 3, 1, 1)
        cin = conv("conv4", cin, 384, 3, 1, 1)
        cin = conv("conv5", cin, 256, 3, 1, 1)
        pool("pool5", 3, 2, 1)
        cin = conv("fc6", cin, 4096, 3, 1, 1)
        cin = conv("fc7", cin, 4096, 1)
        return nodes, prev, cin, skips
    raise ArchError(f"unknown backbone kind {kind}")


# name -> (backbone kind, [(skip stride, ...)], final upsampling factor)
NAMED_ARCHS = {
    "TOY-32s": ("TOY", [], 32),
    "TOY-16s": ("TOY", [16], 16),
    "TOY-8s": ("TOY", [16, 8], 8),
    "FCN-32s": ("FCN", [], 32),
    "FCN-16s": ("FCN", [16], 16),
    "FCN-8s": ("FCN", [16, 8], 8),
    "ALEX-32s": ("ALEX", [], 32),
    "ALEX-16s": ("ALEX", [16], 16),
    "ALEX-4s": ("ALEX", [16, 4], 4),
}


def build_network(arch: str, in_channels: int = 3, heads: bool = False,
                  rng_seed: int = 0, dtype=np.float32) -> Network:
    """Construct a named architecture with fresh parameters."""
    if arch not in NAMED_ARCHS:
        raise ArchError(f"unknown architecture '{arch}' "
                        f"(known: {sorted(NAMED_ARCHS)})")
    kind, skip_strides, final_factor = NAMED_ARCHS[arch]
    rng = np.random.default_rng(rng_seed)
    nodes, feat, feat_ch, skip_points = _build_backbone(kind, in_channels, rng, dtype)

    def head_path(prefix, out_ch, squash):
        nodes.append(Node(f"{prefix}score",
                          Conv(feat_ch, out_ch, 1, rng=rng, dtype=dtype), [feat]))
        steps = []
        cur = 32
        for target in skip_strides:
            steps.append((skip_points[target][0], skip_points[target][1],
                          cur // target))
            cur = target
        return _jet(nodes, prefix=prefix, skips=steps, final_factor=final_factor,
                    out_ch=out_ch, rng=rng, dtype=dtype, squash=squash)

    outputs = {"seg": head_path("", 2, squash=False)}
    if heads:
        outputs["sin"] = head_path("sin_", 1, squash=True)
        outputs["cos"] = head_path("cos_", 1, squash=True)
    return Network(arch, nodes, outputs, in_channels=in_channels, dtype=dtype)
