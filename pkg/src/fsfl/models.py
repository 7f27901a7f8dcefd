"""Model container, presets, and parameter-set utilities.

A model's full state (weights, biases, batch-norm buffers, scaling factors)
round-trips through a flat ``ParamSet``: an ordered dict mapping qualified
names to float64 arrays. Federated protocol code works exclusively on
ParamSets; model objects exist to run forward/backward passes.
"""

from __future__ import annotations

import struct
from typing import Iterable, Optional, Sequence

import numpy as np

from .autograd import Tensor
from .layers import (
    GROUP_BIAS_BN,
    GROUP_SCALING,
    GROUP_WEIGHTS,
    BatchNorm2d,
    Conv2d,
    Dense,
    Flatten,
    MaxPool2d,
    ReLU,
)

ParamSet = dict

SCALING_POLICIES = ("all_layers", "listed_layers", "partial_classifier_only")


class ManifestMismatchError(ValueError):
    """Two parameter sets do not share the same name/shape manifest."""


class Model:
    """Ordered stack of layers with group bookkeeping and freeze masks."""

    def __init__(self, name: str, layers: Sequence, classifier_layers: Iterable[str] = ()):
        self.name = name
        self.layers = list(layers)
        self.classifier_layers = tuple(classifier_layers)
        self.frozen_groups: set[str] = set()
        stateful = {}
        for layer in self.layers:
            if isinstance(layer, (Conv2d, Dense, BatchNorm2d)):
                if layer.name in stateful:
                    raise ValueError(f"duplicate layer name {layer.name!r}")
                stateful[layer.name] = layer
        self._by_name = stateful

    # -- forward ----------------------------------------------------------

    def forward(self, x, train: bool = False) -> Tensor:
        t = x if isinstance(x, Tensor) else Tensor(x)
        for layer in self.layers:
            t = layer.forward(t, train)
        return t

    __call__ = forward

    # -- parameter access --------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for layer in self.layers:
            for name, tensor, _group in layer.named_params():
                out[name] = tensor
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for layer in self.layers:
            for name, arr in layer.named_buffers():
                out[name] = arr
        return out

    def param_groups(self) -> dict[str, str]:
        """Qualified name -> group label; buffers count as bias_bn."""
        groups = {}
        for layer in self.layers:
            for name, _tensor, group in layer.named_params():
                groups[name] = group
            for name, _arr in layer.named_buffers():
                groups[name] = GROUP_BIAS_BN
        return groups

    def structured_weight_names(self) -> set[str]:
        """Conv/dense weight tensors, the ones with filter/row structure."""
        return {
            name
            for layer in self.layers
            if isinstance(layer, (Conv2d, Dense))
            for name, _t, group in layer.named_params()
            if group == GROUP_WEIGHTS
        }

    def update_scope(self, partial: bool) -> set[str]:
        """Names taking part in training and transmission.

        Partial mode restricts everything to the designated classifier
        layers; the rest of the network is excluded from updates entirely.
        """
        if not partial:
            return set(self.manifest())
        if not self.classifier_layers:
            raise ValueError(
                f"model {self.name!r} has no classifier layers for partial updates"
            )
        scope = set()
        groups = self.param_groups()
        for name in groups:
            layer = name.rsplit(".", 1)[0]
            if layer in self.classifier_layers:
                scope.add(name)
        return scope

    def count_scaling_params(self) -> int:
        return sum(
            t.size
            for layer in self.layers
            for _n, t, g in layer.named_params()
            if g == GROUP_SCALING
        )

    # -- freezing ----------------------------------------------------------

    def set_frozen(self, groups: Iterable[str]):
        """Freeze parameter groups; freezing bias_bn pins batch-norm stats."""
        self.frozen_groups = set(groups)
        unknown = self.frozen_groups - {GROUP_WEIGHTS, GROUP_SCALING, GROUP_BIAS_BN}
        if unknown:
            raise ValueError(f"unknown parameter groups: {sorted(unknown)}")
        bn_frozen = GROUP_BIAS_BN in self.frozen_groups
        for layer in self.layers:
            if isinstance(layer, BatchNorm2d):
                layer.stats_frozen = bn_frozen

    def trainable_parameters(self, scope: Optional[set[str]] = None) -> dict[str, Tensor]:
        out = {}
        for layer in self.layers:
            for name, tensor, group in layer.named_params():
                if group in self.frozen_groups:
                    continue
                if scope is not None and name not in scope:
                    continue
                out[name] = tensor
        return out

    def zero_grad(self):
        for tensor in self.named_parameters().values():
            tensor.zero_grad()

    # -- state -------------------------------------------------------------

    def manifest(self) -> dict[str, tuple]:
        shapes = {name: t.data.shape for name, t in self.named_parameters().items()}
        shapes.update({name: a.shape for name, a in self.named_buffers().items()})
        return shapes

    def state(self) -> ParamSet:
        ps = {name: t.data.copy() for name, t in self.named_parameters().items()}
        ps.update({name: a.copy() for name, a in self.named_buffers().items()})
        return ps

    def load_state(self, ps: ParamSet):
        check_manifests(self.manifest(), {k: v.shape for k, v in ps.items()})
        params = self.named_parameters()
        for name, tensor in params.items():
            tensor.data = np.array(ps[name], dtype=np.float64)
        for layer in self.layers:
            for name, _arr in layer.named_buffers():
                key = name.split(".", 1)[1] if "." in name else name
                layer.set_buffer(key, np.asarray(ps[name], dtype=np.float64))


# ---------------------------------------------------------------------------
# ParamSet arithmetic
# ---------------------------------------------------------------------------

def check_manifests(a: dict, b: dict):
    for name in a:
        if name not in b:
            raise ManifestMismatchError(f"parameter {name!r} missing from counterpart")
    for name in b:
        if name not in a:
            raise ManifestMismatchError(f"unexpected parameter {name!r}")
        if tuple(a[name]) != tuple(b[name]):
            raise ManifestMismatchError(
                f"shape mismatch for {name!r}: {tuple(a[name])} vs {tuple(b[name])}"
            )


def param_diff(new: ParamSet, old: ParamSet, scope: Optional[set[str]] = None) -> ParamSet:
    """Elementwise new - old over a shared manifest (optionally restricted)."""
    check_manifests(
        {k: v.shape for k, v in new.items()},
        {k: v.shape for k, v in old.items()},
    )
    names = new.keys() if scope is None else [k for k in new if k in scope]
    return {name: new[name] - old[name] for name in names}


def param_add(base: ParamSet, delta: ParamSet) -> ParamSet:
    """base + delta; delta may cover a subset of base's manifest."""
    for name, arr in delta.items():
        if name not in base:
            raise ManifestMismatchError(f"unexpected parameter {name!r}")
        if arr.shape != base[name].shape:
            raise ManifestMismatchError(
                f"shape mismatch for {name!r}: {base[name].shape} vs {arr.shape}"
            )
    return {
        name: (arr + delta[name] if name in delta else arr.copy())
        for name, arr in base.items()
    }


def zeros_like_params(ps: ParamSet) -> ParamSet:
    return {name: np.zeros_like(arr) for name, arr in ps.items()}


# ---------------------------------------------------------------------------
# checkpoint container: (name, shape, raw little-endian float64 payload)
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"FSPS"
_CKPT_VERSION = 1


def dump_params(ps: ParamSet) -> bytes:
    parts = [_CKPT_MAGIC, struct.pack("<HI", _CKPT_VERSION, len(ps))]
    for name, arr in ps.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    return b"".join(parts)


def parse_params(blob: bytes) -> ParamSet:
    if blob[:4] != _CKPT_MAGIC:
        raise ValueError("not a parameter checkpoint")
    version, count = struct.unpack_from("<HI", blob, 4)
    if version != _CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 10
    ps: ParamSet = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{rank}I", blob, pos)
        pos += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).reshape(shape)
        pos += 8 * n
        ps[name] = arr.astype(np.float64)
    return ps


def save_params(ps: ParamSet, path):
    with open(path, "wb") as fh:
        fh.write(dump_params(ps))


def load_params(path) -> ParamSet:
    with open(path, "rb") as fh:
        return parse_params(fh.read())


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _scaled(policy: str, layer_name: str, listed: Iterable[str],
            classifier: Iterable[str]) -> bool:
    if policy == "all_layers":
        return True
    if policy == "listed_layers":
        return layer_name in set(listed)
    if policy == "partial_classifier_only":
        return layer_name in set(classifier)
    raise ValueError(f"unknown scaling policy {policy!r}")


def tiny_cnn(rng: np.random.Generator, scaling_policy: str = "all_layers",
             listed_layers: Iterable[str] = ()) -> Model:
    """Two conv blocks plus a small dense head, for fast experiments."""
    classifier = ("fc1", "fc2")

    def eq(name):
        return _scaled(scaling_policy, name, listed_layers, classifier)

    layers = [
        Conv2d("conv1", 3, 8, 3, padding=1, scaled=eq("conv1"), rng=rng),
        BatchNorm2d("bn1", 8),
        ReLU(),
        MaxPool2d(),
        Conv2d("conv2", 8, 16, 3, padding=1, scaled=eq("conv2"), rng=rng),
        BatchNorm2d("bn2", 16),
        ReLU(),
        MaxPool2d(),
        Flatten(),
        Dense("fc1", 16 * 8 * 8, 32, scaled=eq("fc1"), rng=rng),
        ReLU(),
        Dense("fc2", 32, 10, scaled=eq("fc2"), rng=rng),
    ]
    return Model("tiny_cnn", layers, classifier_layers=("bn2",) + classifier)


VGG11_THINNED_FILTERS = (32, 64, 128, 128, 128, 128, 128, 128)


def vgg11_thinned(rng: np.random.Generator, scaling_policy: str = "all_layers",
                  listed_layers: Iterable[str] = ()) -> Model:
    """VGG11 thinned to (32, 64, 128...) filters with a 128-wide dense head."""
    classifier = ("fc1", "fc2")

    def eq(name):
        return _scaled(scaling_policy, name, listed_layers, classifier)

    pool_after = {1, 2, 4, 6, 8}
    layers: list = []
    in_ch = 3
    for i, out_ch in enumerate(VGG11_THINNED_FILTERS, start=1):
        name = f"conv{i}"
        layers.append(Conv2d(name, in_ch, out_ch, 3, padding=1, scaled=eq(name), rng=rng))
        layers.append(BatchNorm2d(f"bn{i}", out_ch))
        layers.append(ReLU())
        if i in pool_after:
            layers.append(MaxPool2d())
        in_ch = out_ch
    layers.append(Flatten())
    layers.append(Dense("fc1", 128, 128, scaled=eq("fc1"), rng=rng))
    layers.append(ReLU())
    layers.append(Dense("fc2", 128, 10, scaled=eq("fc2"), rng=rng))
    return Model("vgg11_thinned", layers, classifier_layers=("bn8",) + classifier)


def vgg11_thinned_partial(rng: np.random.Generator, **_ignored) -> Model:
    """The thinned VGG11 set up for classifier-only partial updates."""
    model = vgg11_thinned(rng, scaling_policy="partial_classifier_only")
    model.name = "vgg11_thinned_partial"
    return model


PRESETS = {
    "tiny_cnn": tiny_cnn,
    "vgg11_thinned": vgg11_thinned,
    "vgg11_thinned_partial": vgg11_thinned_partial,
}


def build_preset(name: str, rng: np.random.Generator,
                 scaling_policy: str = "all_layers",
                 listed_layers: Iterable[str] = ()) -> Model:
    if name not in PRESETS:
        raise ValueError(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}")
    if scaling_policy not in SCALING_POLICIES:
        raise ValueError(
            f"unknown scaling policy {scaling_policy!r}; choose from {SCALING_POLICIES}"
        )
    return PRESETS[name](rng, scaling_policy=scaling_policy, listed_layers=listed_layers)
