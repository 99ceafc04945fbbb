"""The round-of-learning loop.

A round trains every client locally, reads each client's parameters through a
``ParamAccess`` (optionally noised and charged to a privacy filter), fuses
them with the aggregator, pushes the result back to every client and
evaluates it. Only parameter vectors and metrics cross the client boundary.
"""

from __future__ import annotations

import copy
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .accountant import Decision, FilterState, PrivacySpend, filter_step
from .aggregators import coop_merge
from .data import FederatedPartition, LabeledDataset
from .dp import DpCost, SensitivityNorm, gaussian_mechanism, gaussian_sigma, laplace_mechanism
from .models import Metrics, Model, ParamVector, ShapeError, pool_metrics

Aggregator = Callable[[Sequence[ParamVector], Sequence[int]], ParamVector]


def derive_seed(master_seed: int, *keys: int) -> int:
    """Stable 63-bit seed derived from a master seed and integer keys."""
    state = np.random.SeedSequence([master_seed, *keys]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


@dataclass(eq=False)
class ClientNode:
    id: int
    train_set: LabeledDataset
    model: Model
    test_set: LabeledDataset | None = None
    eval_set: LabeledDataset | None = None
    rng_seed: int = 0

    def __repr__(self) -> str:
        return f"ClientNode(id={self.id}, n_train={len(self.train_set)})"


def make_clients(
    partition: FederatedPartition,
    model_factory: Callable[[int], Model],
    master_seed: int,
    test_partition: FederatedPartition | None = None,
) -> list[ClientNode]:
    """One node per shard; ``model_factory`` receives the client's derived seed."""
    if test_partition is not None and len(test_partition) != len(partition):
        raise ValueError("test partition must have one shard per client")
    clients = []
    for i, shard in enumerate(partition.shards):
        seed = derive_seed(master_seed, i)
        clients.append(
            ClientNode(
                id=i,
                train_set=shard,
                model=model_factory(seed),
                test_set=None if test_partition is None else test_partition.shards[i],
                rng_seed=seed,
            )
        )
    return clients


class AccessMode(str, enum.Enum):
    PLAIN = "plain"
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"


class ChargeMode(str, enum.Enum):
    PER_READ = "per_read"
    PER_ROUND = "per_round"


@dataclass
class ParamAccess:
    """How the server reads client parameters.

    With ``PER_ROUND`` charging the reads of one round, which touch disjoint
    client databases, are charged as a single invocation of the mechanism.
    Without a filter the charges still go to a private ledger.
    """

    mode: AccessMode = AccessMode.PLAIN
    sensitivity: float = 0.0
    epsilon: float | None = None
    delta: float = 0.0
    filter: FilterState | None = None
    charge: ChargeMode = ChargeMode.PER_ROUND
    _ledger: PrivacySpend = field(default_factory=PrivacySpend, repr=False)

    def __post_init__(self):
        self.mode = AccessMode(self.mode)
        self.charge = ChargeMode(self.charge)
        if self.mode is not AccessMode.PLAIN:
            if self.epsilon is None or not self.epsilon > 0:
                raise ValueError("a private access mode needs a positive epsilon")
            SensitivityNorm.l1(self.sensitivity)
            self.cost()
            if self.mode is AccessMode.GAUSSIAN:
                gaussian_sigma(self.sensitivity, self.epsilon, self.delta)

    @classmethod
    def plain(cls) -> ParamAccess:
        return cls()

    @classmethod
    def laplace(cls, sensitivity: float, epsilon: float, filter: FilterState | None = None,
                charge: ChargeMode | str = ChargeMode.PER_ROUND) -> ParamAccess:
        return cls(AccessMode.LAPLACE, sensitivity, epsilon, 0.0, filter, charge)

    @classmethod
    def gaussian(cls, sensitivity: float, epsilon: float, delta: float,
                 filter: FilterState | None = None,
                 charge: ChargeMode | str = ChargeMode.PER_ROUND) -> ParamAccess:
        return cls(AccessMode.GAUSSIAN, sensitivity, epsilon, delta, filter, charge)

    @property
    def private(self) -> bool:
        return self.mode is not AccessMode.PLAIN

    @property
    def ledger(self) -> PrivacySpend:
        return self.filter.spend if self.filter is not None else self._ledger

    def cost(self) -> DpCost | None:
        if not self.private:
            return None
        return DpCost(self.epsilon, self.delta if self.mode is AccessMode.GAUSSIAN else 0.0)

    def admit(self, **labels) -> Decision:
        """Charge one invocation; HALT means the read must not happen."""
        if not self.private:
            return Decision.CONT
        if self.filter is not None:
            return filter_step(self.filter, self.cost(), self.mode.value, **labels)
        self._ledger.record(self.cost(), self.mode.value, **labels)
        return Decision.CONT

    def release(self, params: ParamVector, rng: np.random.Generator) -> ParamVector:
        if self.mode is AccessMode.PLAIN:
            return params
        if self.mode is AccessMode.LAPLACE:
            noisy, cost = laplace_mechanism(
                params.values, SensitivityNorm.l1(self.sensitivity), self.epsilon, rng
            )
        else:
            noisy, cost = gaussian_mechanism(
                params.values, SensitivityNorm.l2(self.sensitivity), self.epsilon, self.delta, rng
            )
        assert cost == self.cost()
        return params.with_values(noisy)


@dataclass
class RoundReport:
    round: int
    per_client: list[Metrics]
    global_metrics: Metrics | None
    ledger_snapshot: dict | None
    halted: bool = False
    run: int | None = None

    def to_dict(self) -> dict:
        return {
            "run": self.run,
            "round": self.round,
            "halted": self.halted,
            "per_client": [m.to_dict() for m in self.per_client],
            "global": None if self.global_metrics is None else self.global_metrics.to_dict(),
            "ledger_snapshot": self.ledger_snapshot,
        }


def _evaluate_params(model: Model, params: ParamVector, ds: LabeledDataset) -> Metrics:
    scratch = copy.deepcopy(model)
    scratch.set_params(params)
    return scratch.evaluate(ds)


def evaluate_federated(
    clients: Sequence[ClientNode],
    global_params: ParamVector,
    global_test: LabeledDataset | None = None,
) -> tuple[list[Metrics], Metrics]:
    """Per-client metrics of the global model on local test shards, plus global metrics.

    Global metrics come from ``global_test`` when given, otherwise from pooling
    the per-client results (summed confusion matrices, pooled squared errors).
    Client models are not modified.
    """
    if not clients:
        raise ValueError("no clients")
    per_client = [
        _evaluate_params(c.model, global_params, c.test_set)
        for c in clients
        if c.test_set is not None and len(c.test_set) > 0
    ]
    if global_test is not None:
        overall = _evaluate_params(clients[0].model, global_params, global_test)
    elif per_client:
        overall = pool_metrics(per_client)
    else:
        raise ValueError("no client holds a test set and no global test set was given")
    return per_client, overall


def _train_all(clients: Sequence[ClientNode], workers: int) -> None:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(lambda c: c.model.train(c.train_set), clients))
    else:
        for c in clients:
            c.model.train(c.train_set)


def _snapshot(access: ParamAccess | None) -> dict | None:
    if access is None or not access.private:
        return None
    return access.ledger.summary()


def run_rounds(
    clients: Sequence[ClientNode],
    aggregator: Aggregator,
    access: ParamAccess | None = None,
    n_rounds: int = 1,
    global_test: LabeledDataset | None = None,
    seed: int = 0,
    run_index: int | None = None,
    workers: int = 1,
) -> list[RoundReport]:
    """Synchronous federated rounds.

    A filter HALT abandons the round: client models are restored to their
    state before the round, a final report with ``halted=True`` and no metrics
    is appended, and the loop stops. Noise for client ``i`` in round ``r``
    comes from a generator seeded by ``(seed, r, i)``.
    """
    if not clients:
        raise ValueError("at least one client is required")
    if n_rounds < 0:
        raise ValueError("n_rounds must be nonnegative")
    tags = {c.model.shape_tag for c in clients}
    if len(tags) != 1:
        raise ShapeError(f"client models have mismatched shapes: {sorted(map(str, tags))}")
    access = access or ParamAccess.plain()
    reports: list[RoundReport] = []
    for r in range(n_rounds):
        before = [c.model.get_params() for c in clients]
        _train_all(clients, workers)

        halted = False
        if access.private and access.charge is ChargeMode.PER_ROUND:
            halted = access.admit(round=r, run=run_index) is Decision.HALT
        shared = []
        for c in clients if not halted else ():
            if access.charge is ChargeMode.PER_READ:
                if access.admit(round=r, client=c.id, run=run_index) is Decision.HALT:
                    halted = True
                    break
            rng = np.random.default_rng(np.random.SeedSequence([seed, r, c.id]))
            shared.append(access.release(c.model.get_params(), rng))
        if halted:
            for c, p in zip(clients, before):
                c.model.set_params(p)
            reports.append(RoundReport(r, [], None, _snapshot(access), True, run_index))
            break

        global_params = aggregator(shared, [len(c.train_set) for c in clients])
        for c in clients:
            c.model.set_params(global_params)
        per_client, overall = evaluate_federated(clients, global_params, global_test)
        reports.append(RoundReport(r, per_client, overall, _snapshot(access), False, run_index))
    return reports


def run_coop(
    clients: Sequence[ClientNode],
    schedule: Sequence[tuple[int, int]],
    access: ParamAccess | None = None,
    global_test: LabeledDataset | None = None,
    seed: int = 0,
    initial_age: int = 0,
    run_index: int | None = None,
) -> tuple[list[RoundReport], ParamVector | None]:
    """Replay an asynchronous CO-OP schedule of ``(client_id, age_at_submit)`` pairs.

    ``age_at_submit`` is the global model age the client last pulled; the
    client starts from that global model (when one existed) and trains
    locally before submitting. The first submission replaces the empty global
    model. Each submission is one private read, whatever the charge mode.
    Returns one report per processed submission and the final global model.
    """
    if not schedule:
        raise ValueError("schedule is empty")
    by_id = {c.id: c for c in clients}
    access = access or ParamAccess.plain()
    history: dict[int, ParamVector] = {}
    global_params: ParamVector | None = None
    age = initial_age
    reports: list[RoundReport] = []
    for step, (cid, submit_age) in enumerate(schedule):
        if cid not in by_id:
            raise KeyError(f"unknown client id {cid}")
        if not 0 <= submit_age <= age:
            raise ValueError(
                f"submission {step}: age {submit_age} is outside [0, current global age {age}]"
            )
        client = by_id[cid]
        if submit_age in history:
            client.model.set_params(history[submit_age])
        client.model.train(client.train_set)
        if access.admit(round=step, client=cid, run=run_index) is Decision.HALT:
            reports.append(RoundReport(step, [], None, _snapshot(access), True, run_index))
            break
        rng = np.random.default_rng(np.random.SeedSequence([seed, step, cid]))
        incoming = access.release(client.model.get_params(), rng)
        if global_params is None:
            global_params, age = incoming, age + 1
        else:
            global_params, age = coop_merge(global_params, age, incoming, submit_age)
        history[age] = global_params

        per_client = []
        if client.test_set is not None and len(client.test_set) > 0:
            per_client.append(_evaluate_params(client.model, global_params, client.test_set))
        _, overall = evaluate_federated(clients, global_params, global_test)
        reports.append(RoundReport(step, per_client, overall, _snapshot(access), False, run_index))
    return reports, global_params
