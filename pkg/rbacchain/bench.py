#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import asyncio
import csv
import os
import random
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

# Libs
import numpy as np

# Custom
from . import contract as engine
from . import crypto, ledger
from .config import (
    BASELINE_SCHEDULE,
    BENCH_REFERENCE_ATTRIBUTES,
    BENCH_REPETITIONS,
    BENCH_SEED,
    PROPOSED_SCHEDULE,
    ROLE_ACM,
    ROLE_BAM,
    ROLE_BDM,
    ROLE_OWNER
)
from .contract import GasSchedule
from .datastore import DataRecord
from .errors import BenchError
from .fabric import BAMNode, Fabric, FabricConfig, LatencyModel, Network, StageDenial
from .general import SysmetricLogger
from .rbac import AccessRequest, RegisteredUser

##################
# Configurations #
##################

_logger = SysmetricLogger(logger_name="bench").initialise()

EXPERIMENTS = ["gas_roles", "concurrent_requests", "deploy_verify_rights", "chain_generation"]

CSV_COLUMNS = ["experiment", "series", "parameter", "median", "min", "max", "units"]

STATUSES = ["ok", "pending", "rework", "scrapped"]
QUALITIES = ["A", "B", "C"]

################
# Domain Types #
################

@dataclass
class BenchSpec:
    """ One benchmark invocation

    Attributes:
        experiment (str): One of EXPERIMENTS
        sweep (list(int)): Swept parameter values
        repetitions (int): Samples per sweep point, at least 3
        seed (int): Seed for every generated workload
        options (dict): Experiment-specific extras e.g. node counts
    """
    experiment: str
    sweep: List[int]
    repetitions: int = BENCH_REPETITIONS
    seed: int = BENCH_SEED
    options: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise BenchError(f"Unknown experiment '{self.experiment}'")
        if not self.sweep:
            raise BenchError("A sweep needs at least one value")
        if self.repetitions < 3:
            raise BenchError("At least 3 repetitions are needed for a meaningful median")


@dataclass(frozen=True)
class BenchRow:
    experiment: str
    series: str
    parameter: int
    median: float
    min: float
    max: float
    units: str

    def __post_init__(self):
        if not self.min <= self.median <= self.max:
            raise BenchError(f"Row violates min <= median <= max: {self}")

###########
# Helpers #
###########

def parse_sweep(text: str) -> List[int]:
    """ Parses "a..b[:step]" or a comma list into sweep values. Without an
        explicit step, a range steps by `a` when a > 1 and by 1 otherwise,
        so "10000..50000" gives 10000, 20000, .., 50000.
    """
    text = text.strip()
    try:
        if ".." in text:
            bounds, _, step_text = text.partition(":")
            low_text, high_text = bounds.split("..", 1)
            low, high = int(low_text), int(high_text)
            step = int(step_text) if step_text else (low if low > 1 else 1)
            if step <= 0 or high < low:
                raise BenchError(f"Empty or malformed sweep '{text}'")
            return list(range(low, high + 1, step))
        return [int(value) for value in text.split(",") if value.strip()]
    except ValueError as error:
        raise BenchError(f"Unreadable sweep '{text}'") from error


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float, float]:
    """ Least-squares line through (xs, ys)

    Returns:
        slope (float)
        intercept (float)
        r2 (float): Coefficient of determination, 1.0 for a flat series
    """
    if len(xs) != len(ys) or len(xs) < 2:
        raise BenchError("A linear fit needs at least two paired points")
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.sum((y - (slope * x + intercept)) ** 2))
    total = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if total == 0 else 1.0 - residual / total
    return float(slope), float(intercept), r2


def summarise(
    experiment: str,
    series: str,
    parameter: int,
    samples: Sequence[float],
    units: str
) -> BenchRow:
    row = BenchRow(
        experiment=experiment,
        series=series,
        parameter=parameter,
        median=float(statistics.median(samples)),
        min=float(min(samples)),
        max=float(max(samples)),
        units=units
    )
    _logger.info("bench.row", **asdict(row))
    return row


def _elapsed_ms(start: float) -> float:
    return (time.perf_counter() - start) * 1000


def generate_corpus(
    count: int,
    seed: int = BENCH_SEED,
    attributes: Sequence[str] = BENCH_REFERENCE_ATTRIBUTES
) -> List[DataRecord]:
    """ Seeded manufacturing records over the reference catalog """
    rng = random.Random(seed)
    values = {
        'product_id': lambda i: f"P{i % 50:03d}",
        'status': lambda i: rng.choice(STATUSES),
        'quantity': lambda i: rng.randint(1, 500),
        'quality': lambda i: rng.choice(QUALITIES)
    }
    return [
        DataRecord(
            record_id=f"rec-{i:06d}",
            attributes={att: values[att](i) for att in attributes if att in values}
        )
        for i in range(count)
    ]


@dataclass
class BenchActors:
    owner: crypto.KeyPair
    bam: crypto.KeyPair
    acm: crypto.KeyPair
    bdm: crypto.KeyPair

    def authorities(self) -> List[ledger.Authority]:
        return [
            ledger.authority(ROLE_OWNER, self.owner),
            ledger.authority(ROLE_BAM, self.bam),
            ledger.authority(ROLE_ACM, self.acm),
            ledger.authority(ROLE_BDM, self.bdm)
        ]

    @classmethod
    def generate(cls) -> "BenchActors":
        return cls(*(crypto.key_gen() for _ in range(4)))


def deploy(chain: ledger.Chain, actors: BenchActors, model) -> engine.SmartContract:
    contract = engine.compile_contract(model, owner=actors.owner.actor_id)
    chain.mine(
        ledger.build_contract_tx(
            contract,
            actors.owner,
            recipient=actors.bam.actor_id,
            nonce=chain.state.next_nonce(actors.owner.actor_id),
            schedule=chain.schedule
        )
    )
    return contract

##################
# Core Functions #
##################

def bench_gas_roles(
    role_counts: Sequence[int],
    schedule: Optional[GasSchedule] = None,
    series: str = PROPOSED_SCHEDULE
) -> List[BenchRow]:
    """ Deployment gas of the reference contract per role count. Gas is
        deterministic, so min = median = max.
    """
    schedule = schedule or engine.default_schedule()
    rows = []
    for roles in role_counts:
        contract = engine.compile_contract(engine.reference_model(roles), owner="bench")
        gas = engine.gas_of_deployment(contract, schedule).gas_used
        rows.append(summarise("gas_roles", series, roles, [gas], "gas"))
    return rows


def bench_gas_compare(
    role_counts: Sequence[int],
    schedules: Dict[str, GasSchedule]
) -> List[BenchRow]:
    """ Proposed and baseline curves plus their per-role ratio """
    proposed = bench_gas_roles(role_counts, schedules[PROPOSED_SCHEDULE], PROPOSED_SCHEDULE)
    baseline = bench_gas_roles(role_counts, schedules[BASELINE_SCHEDULE], BASELINE_SCHEDULE)
    ratios = [
        summarise("gas_roles", "ratio", ours.parameter, [ours.median / theirs.median], "ratio")
        for ours, theirs in zip(proposed, baseline)
    ]
    return proposed + baseline + ratios


async def _drive_requests(
    request_counts: Sequence[int],
    repetitions: int,
    seed: int,
    config: FabricConfig
) -> List[BenchRow]:
    fabric = Fabric(config)
    await fabric.start()
    try:
        await fabric.deploy_policy(engine.reference_model(roles=2))
        await fabric.ingest(generate_corpus(20, seed))
        users = [
            await fabric.register_user("operator", ["role_1", "role_2"])
            for _ in range(4)
        ]

        rng = random.Random(seed)
        rows = []
        for count in request_counts:
            samples = []
            for _ in range(repetitions):
                batch = [
                    (rng.choice(users), [("product_id", f"P{rng.randrange(20):03d}")])
                    for _ in range(count)
                ]
                start = time.perf_counter()
                responses = await asyncio.gather(
                    *(fabric.request(user, params) for user, params in batch)
                )
                samples.append(_elapsed_ms(start))

                failures = [r for r in responses if isinstance(r, StageDenial)]
                if failures:
                    raise BenchError(
                        f"{len(failures)} of {count} requests failed, first at stage "
                        f"'{failures[0].stage}': {failures[0].reason}"
                    )
            rows.append(summarise("concurrent_requests", "drain", count, samples, "ms"))

        for chain in fabric.chains():
            if not ledger.verify_chain(chain):
                raise BenchError("A replica failed verification after the request benchmark")
        return rows
    finally:
        await fabric.stop()


def bench_concurrent_requests(
    request_counts: Sequence[int],
    repetitions: int = BENCH_REPETITIONS,
    seed: int = BENCH_SEED,
    latency: Optional[LatencyModel] = None,
    schedule: Optional[GasSchedule] = None,
    logging_variant: str = "basic"
) -> List[BenchRow]:
    """ Wall time to drain N simultaneous end-to-end requests """
    config = FabricConfig(
        latency=latency or LatencyModel(seed=seed),
        schedule=schedule,
        logging_variant=logging_variant
    )
    return asyncio.run(_drive_requests(request_counts, repetitions, seed, config))


def _register_bench_user(chain: ledger.Chain, actors: BenchActors, roles: Sequence[str]) -> RegisteredUser:
    user_key = crypto.key_gen()
    user = RegisteredUser(user_id=user_key.actor_id, user_type="operator", roles=frozenset(roles))
    chain.mine(
        ledger.build_registration_tx(
            user,
            user_key.public_key,
            actors.owner,
            recipient=actors.bdm.actor_id,
            nonce=chain.state.next_nonce(actors.owner.actor_id),
            schedule=chain.schedule
        )
    )
    return user


def bench_deploy_verify_rights(
    rights_counts: Sequence[int],
    repetitions: int = BENCH_REPETITIONS,
    seed: int = BENCH_SEED,
    schedule: Optional[GasSchedule] = None
) -> List[BenchRow]:
    """ Deployment (compile, Tx_SC, mine) against verification per
        rights-per-role count. Verification covers a registered user's
        whole path: the ACM builds the Tx_V, the BAM mines it and executes
        validate_role, and the signed rights are checked against the BAM's
        key.
    """
    rng = random.Random(seed)
    rows = []
    for rights in rights_counts:
        model = engine.reference_model(roles=1, rights_per_role=rights)
        deploy_samples, verify_samples = [], []
        for _ in range(repetitions):
            actors = BenchActors.generate()
            chain = ledger.Chain.create(actors.authorities(), schedule=schedule)
            bam = BAMNode("bench_bam", actors.bam, Network(), chain)

            start = time.perf_counter()
            contract = deploy(chain, actors, model)
            deploy_samples.append(_elapsed_ms(start))

            user = _register_bench_user(chain, actors, ["role_1"])
            visible = engine.get_rights(contract, user).visible(model.catalog)
            request = AccessRequest(user_id=user.user_id, params=((rng.choice(visible), "x"),))

            start = time.perf_counter()
            tx = ledger.build_validation_tx(
                contract.contract_id,
                request,
                user.roles,
                actors.acm,
                recipient=actors.bam.actor_id,
                nonce=chain.state.next_nonce(actors.acm.actor_id),
                schedule=chain.schedule
            )
            _, outcome = bam.process_tx(tx)
            granted = outcome.rights is not None and engine.verify_rights(
                user.user_id, outcome.rights, outcome.signed_rights, actors.bam.public_key
            )
            verify_samples.append(_elapsed_ms(start))

            if not granted:
                raise BenchError(f"Bench user was not granted verifiable rights at {rights} rights per role")

        rows.append(summarise("deploy_verify_rights", "deployment", rights, deploy_samples, "ms"))
        rows.append(summarise("deploy_verify_rights", "verification", rights, verify_samples, "ms"))
    return rows


def build_record_chain(
    records: int,
    seed: int = BENCH_SEED,
    schedule: Optional[GasSchedule] = None
) -> ledger.Chain:
    actors = BenchActors.generate()
    chain = ledger.Chain.create(actors.authorities(), schedule=schedule)
    deploy(chain, actors, engine.reference_model(roles=1))
    ledger.ingest_records(chain, generate_corpus(records, seed), actors.owner)
    return chain


def _ship(blobs: Sequence[bytes], targets: int, schedule: Optional[GasSchedule]) -> None:
    """ Every target receives the encoded chain and verifies it block by
        block while folding it in
    """
    for _ in range(targets):
        ledger.receive_blocks(ledger.Chain(schedule), blobs)


def bench_chain_generation(
    record_counts: Sequence[int],
    node_counts: Sequence[int],
    repetitions: int = BENCH_REPETITIONS,
    seed: int = BENCH_SEED,
    fixed_nodes: int = 4,
    fixed_records: int = 10000,
    schedule: Optional[GasSchedule] = None
) -> List[BenchRow]:
    """ (a) chain build plus replication across `fixed_nodes` nodes per
        record count; (b) replication of a `fixed_records` chain per node
        count. Replicating to a node means that node receives the encoded
        blocks and verifies each one itself, so the node series is built
        and encoded once, outside the timed region.
    """
    rows = []
    for records in record_counts:
        samples = []
        for _ in range(repetitions):
            start = time.perf_counter()
            source = build_record_chain(records, seed, schedule)
            _ship(ledger.encode_blocks(source), fixed_nodes - 1, schedule)
            samples.append(_elapsed_ms(start))
        rows.append(summarise("chain_generation", "records", records, samples, "ms"))

    if node_counts:
        blobs = ledger.encode_blocks(build_record_chain(fixed_records, seed, schedule))
        for nodes in node_counts:
            samples = []
            for _ in range(repetitions):
                start = time.perf_counter()
                _ship(blobs, max(nodes - 1, 0), schedule)
                samples.append(_elapsed_ms(start))
            rows.append(summarise("chain_generation", "nodes", nodes, samples, "ms"))
    return rows


def run(spec: BenchSpec, schedules: Optional[Dict[str, GasSchedule]] = None) -> List[BenchRow]:
    """ Dispatches a BenchSpec to its experiment """
    schedules = schedules or engine.load_gas_schedules()
    schedule = schedules[PROPOSED_SCHEDULE]
    options = spec.options

    if spec.experiment == "gas_roles":
        if options.get('compare'):
            return bench_gas_compare(spec.sweep, schedules)
        series = BASELINE_SCHEDULE if options.get('baseline') else PROPOSED_SCHEDULE
        return bench_gas_roles(spec.sweep, schedules[series], series)

    if spec.experiment == "concurrent_requests":
        return bench_concurrent_requests(
            spec.sweep,
            spec.repetitions,
            spec.seed,
            options.get('latency'),
            schedule,
            logging_variant=options.get('logging_variant', "basic")
        )

    if spec.experiment == "deploy_verify_rights":
        return bench_deploy_verify_rights(spec.sweep, spec.repetitions, spec.seed, schedule)

    return bench_chain_generation(
        spec.sweep,
        options.get('nodes', []),
        spec.repetitions,
        spec.seed,
        fixed_nodes=options.get('fixed_nodes', 4),
        fixed_records=options.get('fixed_records', 10000),
        schedule=schedule
    )


def emit_csv(rows: Sequence[BenchRow], path: str) -> None:
    """ Writes a header plus one line per row, columns in CSV_COLUMNS order

    Raises:
        BenchError: if there are no rows (no file is created)
        OSError: if the path is unwritable
    """
    if not rows:
        raise BenchError("Refusing to emit an empty benchmark table")

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as csv_file:
        writer = csv.DictWriter(csv_file, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))
    _logger.info("bench.csv_written", path=path, rows=len(rows))
