"""Federated orchestration: local training, compression, aggregation, sync.

Implements five protocols over a shared round skeleton:

* ``fedavg``        - raw float updates, no compression (4 bytes/element wire
                      accounting), uniform server averaging.
* ``fedavg_coded``  - FedAvg plus uniform quantization and entropy coding.
* ``sparse_only``   - sparsified, quantized, coded updates; no scaling.
* ``stc``           - per-tensor top-k + ternarization with error
                      accumulation always on, then quantization and coding.
* ``fsfl``          - sparsified updates plus validation-gated per-filter
                      scaling training in E sub-epochs; scaling-factor
                      updates that never match the pre-scaling validation
                      score are discarded.

Clients within a round are independent (no shared mutable state); every
cross-party exchange flows through a transport hook as an encoded byte
buffer, so byte accounting is the length of real containers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .autograd import assert_finite, softmax_cross_entropy
from .codec import (
    FINE_STEP,
    WEIGHT_STEP_BIDIRECTIONAL,
    WEIGHT_STEP_UNIDIRECTIONAL,
    decode,
    dequantize_tensors,
    encode,
    quantize_delta,
)
from .data import Dataset, iter_batches, partition_pool
from .layers import GROUP_BIAS_BN, GROUP_SCALING, GROUP_WEIGHTS, BatchNorm2d
from .models import (
    Model,
    dump_params,
    param_add,
    param_diff,
    parse_params,
    zeros_like_params,
)
from .optim import make_optimizer
from .schedules import Schedule
from .sparsify import SparsifyConfig, measure_sparsity, sparsify

ALGORITHMS = ("fedavg", "fedavg_coded", "stc", "fsfl", "sparse_only")


class TrainingDiverged(RuntimeError):
    """Raised when a training loss goes non-finite mid-run."""


@dataclass
class ProtocolConfig:
    algorithm: str = "fsfl"
    num_clients: int = 2
    rounds: int = 15
    sub_epochs: int = 2
    bidirectional: bool = False
    partial_update: bool = False
    residuals: bool = False
    scaling: Optional[bool] = None  # None: per-algorithm default
    sparsify: SparsifyConfig = field(default_factory=SparsifyConfig)
    weight_step: float = WEIGHT_STEP_UNIDIRECTIONAL
    weight_step_down: float = WEIGHT_STEP_BIDIRECTIONAL
    fine_step: float = FINE_STEP
    weights_optimizer: str = "adam"
    weights_lr: float = 1e-5
    scaling_optimizer: str = "adam"
    scaling_momentum: float = 0.9
    schedule_kind: str = "cawr"
    scaling_lr_max: float = 1e-3
    scaling_lr_min: float = 0.0
    batch_size: int = 64
    eval_batch_size: int = 64
    augment: bool = True

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.rounds < 1 or self.sub_epochs < 1 or self.num_clients < 1:
            raise ValueError("rounds, sub_epochs and num_clients must be >= 1")
        self.sparsify.validate()
        if self.scaling is False and self.algorithm == "fsfl":
            raise ValueError("fsfl requires scaling; use sparse_only to disable it")
        if self.scaling is True and self.algorithm in ("fedavg", "fedavg_coded", "sparse_only"):
            raise ValueError(f"{self.algorithm} does not support scaling sub-epochs")
        if self.bidirectional and self.algorithm == "fedavg":
            raise ValueError("bidirectional compression requires a coded algorithm")
        return self

    def scaling_enabled(self) -> bool:
        if self.scaling is not None:
            return self.scaling
        return self.algorithm == "fsfl"

    def residuals_enabled(self) -> bool:
        return True if self.algorithm == "stc" else self.residuals


@dataclass
class ClientRow:
    epoch: int
    client_id: int
    direction: str  # "up" | "down"
    bytes_raw: int
    bytes_compressed: int
    sparsity: float
    scaling_accepted: bool = False
    best_subepoch: int = 0


@dataclass
class ServerRow:
    epoch: int
    metric: float
    cumulative_bytes: int


@dataclass
class RoundLog:
    epoch: int
    client_rows: list
    server_row: ServerRow


class LoopbackTransport:
    """In-process byte-buffer transport; swap in a socket-backed version by
    implementing the same two methods."""

    def uplink(self, client_id: int, data: bytes) -> bytes:
        return data

    def downlink(self, client_id: int, data: bytes) -> bytes:
        return data


@dataclass
class ClientState:
    cid: int
    model: Model
    base: dict
    residual: dict
    train_idx: np.ndarray
    val_idx: np.ndarray
    w_opt: object
    s_opt: object
    schedule: Schedule
    rng: np.random.Generator


def aggregate_deltas(deltas: list[dict], expected: int) -> dict:
    """Uniform unweighted mean of client deltas (full participation)."""
    if len(deltas) != expected:
        raise ValueError(f"expected {expected} client deltas, got {len(deltas)}")
    first = deltas[0]
    for d in deltas[1:]:
        if d.keys() != first.keys():
            raise ValueError("client delta manifests disagree")
        for k in first:
            if d[k].shape != first[k].shape:
                raise ValueError(f"client delta shape mismatch for {k!r}")
    return {k: sum(d[k] for d in deltas) / len(deltas) for k in first}


def evaluate_accuracy(model: Model, x: np.ndarray, y: np.ndarray,
                      indices: np.ndarray, batch_size: int = 64) -> float:
    """Top-1 accuracy, eval-mode batch norm, no augmentation."""
    if indices.size == 0:
        raise ValueError("cannot evaluate on an empty split")
    correct = 0
    for xb, yb in iter_batches(x, y, indices, batch_size):
        logits = model.forward(xb, train=False)
        correct += int((logits.data.argmax(axis=1) == yb).sum())
    return correct / indices.size


class FederatedRunner:
    """Owns the server state and all client states for one experiment."""

    def __init__(self, config: ProtocolConfig, dataset: Dataset,
                 model_factory: Callable[[np.random.Generator], Model],
                 seed, transport: Optional[LoopbackTransport] = None):
        self.config = config.validate()
        self.dataset = dataset
        self.transport = transport or LoopbackTransport()
        self.cumulative_bytes = 0
        self.last_uplinks: dict[int, bytes] = {}

        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        children = ss.spawn(2 + config.num_clients)
        init_rng = np.random.default_rng(children[0])
        part_rng = np.random.default_rng(children[1])

        self.server_model = model_factory(init_rng)
        self.server_state = self.server_model.state()
        self.scope = self.server_model.update_scope(config.partial_update)
        self.structured = self.server_model.structured_weight_names() & self.scope
        self.groups = self.server_model.param_groups()
        if config.scaling_enabled() and not any(
            self.groups[n] == GROUP_SCALING for n in self.scope
        ):
            raise ValueError("scaling sub-epochs require scaling-equipped layers in scope")

        train_parts = partition_pool(dataset.train_idx, config.num_clients, part_rng)
        val_parts = partition_pool(dataset.val_idx, config.num_clients, part_rng)

        self.clients: list[ClientState] = []
        for i in range(config.num_clients):
            model = model_factory(np.random.default_rng(0))
            model.load_state(self.server_state)
            batches_per_subepoch = max(
                1, int(np.ceil(train_parts[i].size / config.batch_size))
            )
            cycle = batches_per_subepoch * config.sub_epochs
            schedule = Schedule(
                kind=config.schedule_kind,
                lr_max=config.scaling_lr_max,
                lr_min=config.scaling_lr_min,
                total_steps=cycle * config.rounds,
                steps_per_cycle=cycle,
            )
            self.clients.append(ClientState(
                cid=i,
                model=model,
                base={k: v.copy() for k, v in self.server_state.items()},
                residual=zeros_like_params(self.server_state),
                train_idx=train_parts[i],
                val_idx=val_parts[i],
                w_opt=make_optimizer(config.weights_optimizer, config.weights_lr),
                s_opt=make_optimizer(config.scaling_optimizer, config.scaling_lr_max,
                                     config.scaling_momentum),
                schedule=schedule,
                rng=np.random.default_rng(children[2 + i]),
            ))

    # -- helpers -----------------------------------------------------------

    def _step_for(self, name: str) -> float:
        if self.groups[name] in (GROUP_SCALING, GROUP_BIAS_BN):
            return self.config.fine_step
        return self.config.weight_step

    def _step_for_down(self, name: str) -> float:
        if self.groups[name] in (GROUP_SCALING, GROUP_BIAS_BN):
            return self.config.fine_step
        return self.config.weight_step_down

    def _apply_freeze(self, model: Model, frozen_groups: set):
        model.set_frozen(frozen_groups)
        if self.config.partial_update:
            # batch-norm modules outside the update scope never advance
            # their running statistics, or clients would silently desync
            for layer in model.layers:
                if isinstance(layer, BatchNorm2d):
                    if f"{layer.name}.gamma" not in self.scope:
                        layer.stats_frozen = True

    def _sparsify_cfg(self) -> SparsifyConfig:
        cfg = self.config.sparsify
        if self.config.algorithm == "stc":
            cfg = replace(cfg, mode="ternary")
        return replace(cfg, step_size=self.config.weight_step)

    def _evaluate(self, model: Model, indices: np.ndarray) -> float:
        return evaluate_accuracy(model, self.dataset.x, self.dataset.y, indices,
                                 self.config.eval_batch_size)

    # -- local training ----------------------------------------------------

    def _train_weights(self, client: ClientState):
        """One local epoch over the client's split with scaling frozen."""
        cfg = self.config
        self._apply_freeze(client.model, {GROUP_SCALING})
        params = client.model.trainable_parameters(self.scope)
        for xb, yb in iter_batches(self.dataset.x, self.dataset.y, client.train_idx,
                                   cfg.batch_size, client.rng, cfg.augment):
            logits = client.model.forward(xb, train=True)
            loss = softmax_cross_entropy(logits, yb)
            try:
                assert_finite(loss, "training loss")
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc)) from None
            client.model.zero_grad()
            loss.backward()
            client.w_opt.step(params)

    def _train_scaling(self, client: ClientState) -> tuple[bool, int]:
        """E sub-epochs of scaling-only training, keeping the best-validation
        variant; everything else is frozen and batch norm runs in eval mode.
        Returns (any sub-epoch accepted, index of the kept sub-epoch)."""
        cfg = self.config
        self._apply_freeze(client.model, {GROUP_WEIGHTS, GROUP_BIAS_BN})
        params = client.model.trainable_parameters(self.scope)
        if cfg.schedule_kind == "cawr":
            client.schedule.restart()
        perf = self._evaluate(client.model, client.val_idx)
        best_state = client.model.state()
        accepted = False
        best_e = 0
        for e in range(1, cfg.sub_epochs + 1):
            for xb, yb in iter_batches(self.dataset.x, self.dataset.y,
                                       client.train_idx, cfg.batch_size,
                                       client.rng, cfg.augment):
                logits = client.model.forward(xb, train=True)
                loss = softmax_cross_entropy(logits, yb)
                try:
                    assert_finite(loss, "scaling training loss")
                except FloatingPointError as exc:
                    raise TrainingDiverged(str(exc)) from None
                client.model.zero_grad()
                loss.backward()
                client.s_opt.step(params, lr=client.schedule.next_lr())
            score = self._evaluate(client.model, client.val_idx)
            if score >= perf:  # ties accept; later sub-epoch wins
                perf = score
                best_state = client.model.state()
                accepted = True
                best_e = e
        client.model.load_state(best_state)
        return accepted, best_e

    # -- round -------------------------------------------------------------

    def _client_round(self, client: ClientState, t: int) -> tuple[ClientRow, bytes]:
        cfg = self.config
        algo = cfg.algorithm
        w_old = {k: v.copy() for k, v in client.base.items()}
        client.model.load_state(w_old)

        self._train_weights(client)
        raw = param_diff(client.model.state(), w_old, self.scope)
        if cfg.residuals_enabled():
            acc = {k: raw[k] + client.residual[k] for k in raw}
        else:
            acc = raw

        accepted = False
        best_e = 0
        if algo in ("fsfl", "sparse_only", "stc"):
            sparse_delta, _ = sparsify(acc, self._sparsify_cfg(), self.structured)
        else:
            sparse_delta = acc

        if cfg.scaling_enabled():
            client.model.load_state(param_add(w_old, sparse_delta))
            accepted, best_e = self._train_scaling(client)
            final_delta = param_diff(client.model.state(), w_old, self.scope)
        else:
            final_delta = sparse_delta

        n_elems = sum(arr.size for arr in final_delta.values())
        bytes_raw = 4 * n_elems  # accounting convention: 32-bit floats on the wire
        if algo == "fedavg":
            blob = dump_params(final_delta)
            bytes_compressed = bytes_raw
            transmitted = final_delta
        else:
            qts = quantize_delta(final_delta, self._step_for)
            blob = encode(qts)
            bytes_compressed = len(blob)
            transmitted = dequantize_tensors(qts)

        if cfg.residuals_enabled():
            for name in transmitted:
                if self.groups[name] == GROUP_SCALING:
                    continue  # scaling changes are fully transmitted, never lost
                client.residual[name] = acc[name] - transmitted[name]

        sparsity = measure_sparsity(transmitted).overall
        row = ClientRow(t, client.cid, "up", bytes_raw, bytes_compressed,
                        sparsity, accepted, best_e)
        return row, blob

    def run_round(self, t: int) -> RoundLog:
        cfg = self.config
        rows: list[ClientRow] = []
        blobs: dict[int, bytes] = {}
        for client in self.clients:
            row, blob = self._client_round(client, t)
            rows.append(row)
            blobs[client.cid] = blob
        self.last_uplinks = blobs

        deltas = []
        for client in self.clients:
            data = self.transport.uplink(client.cid, blobs[client.cid])
            if cfg.algorithm == "fedavg":
                deltas.append(parse_params(data))
            else:
                deltas.append(dequantize_tensors(decode(data)))
        server_delta = aggregate_deltas(deltas, cfg.num_clients)

        if cfg.bidirectional:
            down_cfg = replace(self._sparsify_cfg(), step_size=cfg.weight_step_down)
            if cfg.algorithm == "fedavg_coded":
                down_delta = server_delta
            else:
                down_delta, _ = sparsify(server_delta, down_cfg, self.structured)
            down_blob = encode(quantize_delta(down_delta, self._step_for_down))
            down_raw = 4 * sum(a.size for a in server_delta.values())
            applied = None
            for client in self.clients:
                data = self.transport.downlink(client.cid, down_blob)
                applied = dequantize_tensors(decode(data))
                client.base = param_add(client.base, applied)
                rows.append(ClientRow(t, client.cid, "down", down_raw,
                                      len(down_blob),
                                      measure_sparsity(applied).overall))
            # the server adopts the same compressed broadcast it sent, so
            # server and clients stay bit-identical at sync points
            self.server_state = param_add(self.server_state, applied)
        else:
            for client in self.clients:
                client.base = param_add(client.base, server_delta)
            self.server_state = param_add(self.server_state, server_delta)

        self.cumulative_bytes += sum(r.bytes_compressed for r in rows)
        self.server_model.load_state(self.server_state)
        metric = self._evaluate(self.server_model, self.dataset.test_idx)
        return RoundLog(t, rows, ServerRow(t, metric, self.cumulative_bytes))

    def run(self, on_round: Optional[Callable[[RoundLog], None]] = None) -> list[RoundLog]:
        logs = []
        for t in range(1, self.config.rounds + 1):
            log = self.run_round(t)
            logs.append(log)
            if on_round is not None:
                on_round(log)
        return logs
