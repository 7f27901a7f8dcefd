"""Sparsification of differential updates.

Three schemes over named float delta tensors:

* ``thresholded``: per-tensor Gaussian-approximation threshold
  (|mean| + delta * std, floored at step_size / 2) plus, for tensors with
  filter/row structure, a structured threshold on per-filter update means.
* ``fixed_rate``: per-tensor magnitude top-k keeping a (1 - rate) fraction.
* ``ternary``: top-k followed by ternarization of the survivors to
  sign(x) * mean(|survivors|).

Elements and filters strictly below a threshold are zeroed; ties survive,
so a zero threshold is a no-op.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MODES = ("thresholded", "fixed_rate", "ternary")


@dataclass
class SparsifyConfig:
    mode: str = "thresholded"
    delta: float = 0.0
    gamma: float = 0.0
    rate: float = 0.96
    step_size: float = 4.88e-4

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown sparsify mode {self.mode!r}")
        if self.delta < 0 or self.gamma < 0:
            raise ValueError("delta and gamma must be non-negative")
        if not 0.0 < self.rate <= 1.0:
            raise ValueError("rate must lie in (0, 1]")
        return self


@dataclass
class SparsityReport:
    per_tensor: dict = field(default_factory=dict)
    overall: float = 0.0


def unstructured_threshold(values: np.ndarray, delta: float, step_size: float) -> float:
    """Magnitude threshold from the update's mean/std (population convention),
    floored at half the quantization step so the dead zone is never undercut."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("cannot compute threshold of an empty tensor")
    mean = values.mean()
    std = values.std()
    theta = max(abs(mean - delta * std), abs(mean + delta * std))
    return max(theta, step_size / 2.0)


def structured_threshold(layer: np.ndarray, gamma: float) -> float:
    """Mean of |per-output-element update means|, scaled by gamma.

    Output element m is filter m (conv, 4-D) or row m (dense, 2-D).
    """
    layer = np.asarray(layer, dtype=np.float64)
    if layer.ndim < 2 or layer.shape[0] < 1:
        raise ValueError(f"layer with output-element structure expected, got shape {layer.shape}")
    filter_means = layer.reshape(layer.shape[0], -1).mean(axis=1)
    return gamma * np.abs(filter_means).mean()


def _top_k_mask(values: np.ndarray, k: int) -> np.ndarray:
    """Boolean keep-mask of the k largest magnitudes; ties go to the lowest
    flat index."""
    flat = np.abs(values.ravel())
    mask = np.zeros(flat.size, dtype=bool)
    if k > 0:
        order = np.argsort(-flat, kind="stable")
        mask[order[:k]] = True
    return mask.reshape(values.shape)


def _keep_count(n: int, rate: float) -> int:
    return int(np.floor((1.0 - rate) * n + 0.5))


def _sparsify_tensor(values: np.ndarray, cfg: SparsifyConfig, structured: bool) -> np.ndarray:
    if cfg.mode == "thresholded":
        keep = np.ones(values.shape, dtype=bool)
        if structured:
            theta_s = structured_threshold(values, cfg.gamma)
            filter_means = values.reshape(values.shape[0], -1).mean(axis=1)
            dead = np.abs(filter_means) < theta_s
            keep[dead] = False
        theta_u = unstructured_threshold(values, cfg.delta, cfg.step_size)
        keep &= np.abs(values) >= theta_u
        return np.where(keep, values, 0.0)

    k = _keep_count(values.size, cfg.rate)
    mask = _top_k_mask(values, k)
    if cfg.mode == "fixed_rate":
        return np.where(mask, values, 0.0)

    # ternary: survivors collapse to +/- mean magnitude
    out = np.zeros_like(values)
    if k > 0:
        mu = np.abs(values[mask]).mean()
        out[mask] = np.sign(values[mask]) * mu
    return out


def sparsify(delta: dict, cfg: SparsifyConfig,
             structured_names: set | None = None) -> tuple[dict, SparsityReport]:
    """Sparsify every tensor of a delta; returns the result and a report.

    ``structured_names`` marks tensors with filter/row structure (conv and
    dense weights); only those see the structured threshold. When omitted,
    ``.weight`` tensors of rank 2 or 4 are treated as structured.
    """
    cfg.validate()
    out = {}
    report = SparsityReport()
    total_zero = 0
    total = 0
    for name, values in delta.items():
        if structured_names is None:
            structured = name.endswith(".weight") and values.ndim in (2, 4)
        else:
            structured = name in structured_names
        sparse = _sparsify_tensor(np.asarray(values, dtype=np.float64), cfg, structured)
        out[name] = sparse
        zeros = int(np.count_nonzero(sparse == 0.0))
        report.per_tensor[name] = zeros / sparse.size if sparse.size else 1.0
        total_zero += zeros
        total += sparse.size
    report.overall = total_zero / total if total else 1.0
    return out, report


def measure_sparsity(delta: dict) -> SparsityReport:
    """Exact zero fraction per tensor and element-weighted overall."""
    report = SparsityReport()
    total_zero = 0
    total = 0
    for name, values in delta.items():
        arr = np.asarray(values)
        zeros = int(np.count_nonzero(arr == 0.0))
        report.per_tensor[name] = zeros / arr.size if arr.size else 1.0
        total_zero += zeros
        total += arr.size
    report.overall = total_zero / total if total else 1.0
    return report
