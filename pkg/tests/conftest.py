#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import asyncio
import contextlib
import itertools
import json
import logging
import random
from string import Template
from typing import Callable, Dict, List, Optional, Sequence, Tuple

# Libs
import pytest
import structlog

# Custom
import rbacchain
from rbacchain import contract as engine
from rbacchain import crypto, datastore, ledger
from rbacchain.config import ROLE_ACM, ROLE_BAM, ROLE_BDM, ROLE_CSP, ROLE_OWNER
from rbacchain.fabric import Fabric, FabricConfig
from rbacchain.rbac import (
    AccessRequest,
    RbacModel,
    RegisteredUser,
    Right,
    Role,
    UserType,
    SEMANTIC_ATTRIBUTES,
    SEMANTIC_RIGHTS,
    SEMANTIC_ROLE,
    SEMANTIC_USER_TYPE,
    build_model
)

##################
# Configurations #
##################

HOST = "127.0.0.1"
PORT = 12201 # default port for general unittesting

DEFAULT_SUPPORTED_METADATA = [
    'event', 'logger', 'level', 'level_number',
    'timestamp', 'file_path', 'log_level', 'actor_id'
]
SYSMETRIC_SUPPORTED_METADATA = DEFAULT_SUPPORTED_METADATA + [
    'cpu_percent', 'memory_total', 'memory_available', 'memory_used'
]

DEFAULT_TRACKERS = [
    structlog.stdlib.add_logger_name,
    structlog.stdlib.add_log_level,
    structlog.stdlib.add_log_level_number,
    structlog.stdlib.filter_by_level,
    structlog.stdlib.PositionalArgumentsFormatter(),
    structlog.processors.format_exc_info,
    structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M.%S"),
    structlog.processors.StackInfoRenderer(),
    structlog.processors.UnicodeDecoder(),
]
SYSMETRIC_TRACKERS = DEFAULT_TRACKERS + [
    rbacchain.utils.StructlogUtils.track_cpu_stats,
    rbacchain.utils.StructlogUtils.track_memory_stats
]

TRIALS = 20
EVENT_TEMPLATE = Template("This is Test no. $trial_idx!")

SEED = 1234
CATALOG = ("product_id", "status", "quantity", "quality")
UNCATALOGUED = "supplier"

FABRIC_STAGE_TIMEOUT = 0.5
FABRIC_REQUEST_TIMEOUT = 1.5

###########
# Helpers #
###########

def extract_name(callable: Callable) -> str:
    """ Given a callable that could be either a class or a function, retrieve
        its name at runtime for subsequent use

    Args:
        callable (Callable): Callable whose name is to be extracted
    Return:
        Name of callable (str)
    """
    try:
        return callable.__name__
    except AttributeError:
        return type(callable).__name__


@contextlib.contextmanager
def reconfigure_global_structlog_params(syn_logger):
    """ Takes in a customised logger and applies its params to the global
        context, since logs cannot be captured from a custom wrapped logger
        otherwise

    Args:
        syn_logger (rbacchain.base.RootLogger): Initialised "test" logger
    """
    # Save settings for subsequent restoration
    saved_config = structlog.get_config()

    # Extract custom processors in preparation for global override
    custom_processors = syn_logger.synlog._processors

    try:
        structlog.reset_defaults()
        structlog.configure(
            processors=custom_processors,
            wrapper_class=structlog.stdlib.BoundLogger,
            context_class=dict
        )
        logging.basicConfig(level=syn_logger.logging_level)
        logging_renderer = custom_processors[-1]
        yield logging_renderer.entries

    finally:
        # back to normal behavior
        structlog.configure(**saved_config)


def valid_test_filter(_, __, event_dict):
    """ Well-formed structlog processor; marks the event with is_valid=True """
    event_dict['is_valid'] = True
    return event_dict


def invalid_test_filter_wrong_params(event_dict):
    """ Violates the (logger, method, event_dict) processor signature, and is
        supposed to raise a TypeError
    """
    return event_dict


def invalid_test_filter_wrong_outputs(_, __, event_dict):
    """ Returns something other than the event_dict, which breaks the
        processor chain
    """
    return "some test string that violates the supposed proposed output"


def counting_clock(start: int = 1_000) -> Callable[[], int]:
    """ Deterministic millisecond clock: start, start + 1, .. """
    ticks = itertools.count(start)
    return lambda: next(ticks)


def run_fabric(scenario, **options):
    """ Starts a fresh fabric, runs `scenario(fabric)` and always stops it.
        Timeouts default to FABRIC_STAGE_TIMEOUT / FABRIC_REQUEST_TIMEOUT.
    """
    settings = {
        'stage_timeout': FABRIC_STAGE_TIMEOUT,
        'request_timeout': FABRIC_REQUEST_TIMEOUT,
        'logging_variant': "test"
    }
    settings.update(options)

    async def main():
        fabric = Fabric(FabricConfig(**settings))
        await fabric.start()
        try:
            return await scenario(fabric)
        finally:
            await fabric.stop()
    return asyncio.run(main())


async def provision(fabric, model, records, roles=("line",)) -> crypto.KeyPair:
    """ Deploys the policy, registers an operator and ingests records """
    await fabric.deploy_policy(model)
    user = await fabric.register_user("operator", list(roles))
    await fabric.ingest(records)
    return user

###########
# Oracles #
###########

def oracle_mask(model: RbacModel, roles: Sequence[str]) -> Tuple[bool, ...]:
    """ Effective rights by enumerating every (role, right) pair """
    mask = [False] * len(model.catalog)
    for role_id, right_id in itertools.product(sorted(model.roles), sorted(model.rights)):
        if role_id in roles and right_id in model.roles[role_id].rights:
            for index, bit in enumerate(model.rights[right_id].mask):
                if bit:
                    mask[index] = True
    return tuple(mask)


def oracle_decision(
    model: RbacModel,
    user: Optional[RegisteredUser],
    request: AccessRequest
) -> Tuple[Optional[int], Optional[Tuple[bool, ...]]]:
    """ Straight-line reading of the accessibility semantics

    Returns:
        semantic (int): First violated semantic, None when granted
        mask (tuple(bool)): Effective mask when granted, else None
    """
    if user is None or user.user_type not in model.user_types or user.user_id != request.user_id:
        return SEMANTIC_USER_TYPE, None
    if any(role not in model.user_types[user.user_type].roles for role in user.roles):
        return SEMANTIC_ROLE, None
    if any(
        right not in model.rights
        for role in user.roles
        for right in model.roles[role].rights
    ):
        return SEMANTIC_RIGHTS, None

    mask = oracle_mask(model, user.roles)
    for att, _ in request.params:
        if att not in model.catalog.attributes:
            return SEMANTIC_ATTRIBUTES, None
        if not mask[model.catalog.attributes.index(att)]:
            return SEMANTIC_ATTRIBUTES, None
    return None, mask


def oracle_query(records: Sequence[datastore.DataRecord], params) -> List[str]:
    """ Linear scan with type-strict equality """
    return sorted(
        record.record_id
        for record in records
        if all(
            name in record.attributes and
            type(record.attributes[name]) is type(value) and
            record.attributes[name] == value
            for name, value in params
        )
    )

##############
# Generators #
##############

def random_model(
    rng: random.Random,
    max_types: int = 4,
    max_roles: int = 4,
    max_rights: int = 4,
    max_attributes: int = 4
) -> RbacModel:
    """ Referentially closed random model within the given dimensions """
    attributes = [f"att_{i}" for i in range(rng.randint(1, max_attributes))]
    rights = [
        Right(f"g{i}", tuple(rng.random() < 0.5 for _ in attributes))
        for i in range(rng.randint(1, max_rights))
    ]
    roles = [
        Role(f"r{i}", frozenset(right.id for right in rights if rng.random() < 0.5))
        for i in range(rng.randint(1, max_roles))
    ]
    user_types = [
        UserType(f"u{i}", frozenset(role.id for role in roles if rng.random() < 0.6))
        for i in range(rng.randint(1, max_types))
    ]
    return build_model(attributes, rights, roles, user_types)


def all_users(model: RbacModel, user_id: str = "p") -> List[RegisteredUser]:
    """ Every (user type, role subset) combination, role subsets drawn from
        all roles of the model so that invalid holdings are included too
    """
    role_ids = sorted(model.roles)
    users = []
    for user_type in sorted(model.user_types) + ["unknown_type"]:
        for size in range(len(role_ids) + 1):
            for roles in itertools.combinations(role_ids, size):
                users.append(RegisteredUser(user_id, user_type, frozenset(roles)))
    return users


def all_requests(model: RbacModel, user_id: str = "p") -> List[AccessRequest]:
    """ Every non-empty subset of the catalog, plus one uncatalogued attribute """
    attributes = list(model.catalog.attributes)
    requests = [AccessRequest(user_id, ((UNCATALOGUED, "x"),))]
    for size in range(1, len(attributes) + 1):
        for subset in itertools.combinations(attributes, size):
            requests.append(AccessRequest(user_id, tuple((att, 1) for att in subset)))
    return requests


def random_records(
    rng: random.Random,
    count: int,
    attributes: Sequence[str] = CATALOG
) -> List[datastore.DataRecord]:
    """ Small value domains so that conjunctive queries actually hit """
    domains = {
        'product_id': [f"P{i:03d}" for i in range(5)],
        'status': ["ok", "pending", "rework"],
        'quantity': [1, 2, 3, 4],
        'quality': ["A", "B"]
    }
    records = []
    for i in range(count):
        present = [att for att in attributes if rng.random() < 0.9]
        records.append(
            datastore.DataRecord(
                record_id=f"r{i:04d}",
                attributes={
                    att: rng.choice(domains.get(att, ["x", "y", 7]))
                    for att in present
                }
            )
        )
    return records

#####################
# Identity Fixtures #
#####################

@pytest.fixture(scope="session")
def actors() -> Dict[str, crypto.KeyPair]:
    return {
        name: crypto.key_gen()
        for name in ("owner", "bam", "acm", "bdm", "csp", "intruder", "user", "other_user")
    }


@pytest.fixture
def authorities(actors) -> List[ledger.Authority]:
    return [
        ledger.authority(ROLE_OWNER, actors["owner"]),
        ledger.authority(ROLE_BAM, actors["bam"]),
        ledger.authority(ROLE_ACM, actors["acm"]),
        ledger.authority(ROLE_BDM, actors["bdm"]),
        ledger.authority(ROLE_CSP, actors["csp"])
    ]

##################
# Model Fixtures #
##################

@pytest.fixture
def factory_model() -> RbacModel:
    """ Manufacturing policy: auditors see everything, line operators only
        product and status, quality engineers product and quality
    """
    return build_model(
        catalog=CATALOG,
        rights=[
            Right("see_product", (True, False, False, False)),
            Right("see_status", (False, True, False, False)),
            Right("see_quantity", (False, False, True, False)),
            Right("see_quality", (False, False, False, True))
        ],
        roles=[
            Role("line", frozenset({"see_product", "see_status"})),
            Role("quality", frozenset({"see_product", "see_quality"})),
            Role("stock", frozenset({"see_quantity"}))
        ],
        user_types=[
            UserType("operator", frozenset({"line", "quality"})),
            UserType("auditor", frozenset({"line", "quality", "stock"}))
        ]
    )


@pytest.fixture
def factory_contract(factory_model, actors) -> engine.SmartContract:
    return engine.compile_contract(factory_model, owner=actors["owner"].actor_id)


@pytest.fixture
def factory_records() -> List[datastore.DataRecord]:
    return [
        datastore.DataRecord("rec-1", {'product_id': "P001", 'status': "ok", 'quantity': 10, 'quality': "A"}),
        datastore.DataRecord("rec-2", {'product_id': "P001", 'status': "rework", 'quantity': 3, 'quality': "C"}),
        datastore.DataRecord("rec-3", {'product_id': "P002", 'status': "ok", 'quantity': 7, 'quality': "B"})
    ]


@pytest.fixture
def policy_file(tmp_path, factory_model) -> str:
    path = tmp_path / "policy.json"
    path.write_text(json.dumps(rbacchain.rbac.model_to_dict(factory_model)))
    return str(path)

##################
# Chain Fixtures #
##################

@pytest.fixture
def genesis_chain(authorities) -> ledger.Chain:
    return ledger.Chain.create(authorities, clock=counting_clock())


@pytest.fixture
def deployed_chain(genesis_chain, factory_contract, actors) -> ledger.Chain:
    genesis_chain.mine(
        ledger.build_contract_tx(
            factory_contract,
            actors["owner"],
            recipient=actors["bam"].actor_id,
            nonce=1
        )
    )
    return genesis_chain


@pytest.fixture
def populated_chain(deployed_chain, factory_records, actors) -> ledger.Chain:
    """ Contract, one registered operator ("user") and three records """
    owner = actors["owner"]
    user = RegisteredUser(actors["user"].actor_id, "operator", frozenset({"line"}))
    deployed_chain.mine(
        ledger.build_registration_tx(
            user,
            actors["user"].public_key,
            owner,
            recipient=actors["bdm"].actor_id,
            nonce=deployed_chain.state.next_nonce(owner.actor_id)
        )
    )
    ledger.ingest_records(deployed_chain, factory_records, owner)
    return deployed_chain

#############################
# Logger Component Fixtures #
#############################

@pytest.fixture
def connect_kwargs():
    return {'server': HOST, 'port': PORT}


@pytest.fixture
def test_kwargs():
    random_base = random.randint(0, 10000000)
    return {
        'kwargs_test_str': f"test_string_{random_base}",
        'kwargs_test_int': 42 * random_base,
        'kwargs_test_float': 69.69 * random_base
    }


@pytest.fixture
def event_kwargs(connect_kwargs, test_kwargs):
    return {**connect_kwargs, **test_kwargs}


@pytest.fixture
def structlog_utils_default_params():
    return rbacchain.utils.StructlogUtils()


@pytest.fixture
def structlog_utils():
    return rbacchain.utils.StructlogUtils(
        file_path="/path/to/testfile",
        actor_id="ab" * 20
    )


@pytest.fixture
def structlog_utils_with_censors(connect_kwargs, test_kwargs):
    all_keys = list(connect_kwargs.keys()) + list(test_kwargs.keys())
    keys_to_censor = random.sample(all_keys, 3)
    return rbacchain.utils.StructlogUtils(
        censor_keys=keys_to_censor,
        file_path="/path/to/testfile"
    )


@pytest.fixture
def root_logger_default_params():
    return rbacchain.base.RootLogger(logging_variant="basic")


@pytest.fixture
def root_logger_local():
    return rbacchain.base.RootLogger(
        logger_name="test_local_logger",
        logging_variant="test"
    )


@pytest.fixture
def root_logger_remote(connect_kwargs):
    return rbacchain.base.RootLogger(
        **connect_kwargs,
        logger_name="test_remote_logger",
        logging_variant="graylog"
    )


@pytest.fixture
def root_logger_custom_filters_valid():
    return rbacchain.base.RootLogger(
        logger_name="test_custom_logger_valid_filter",
        logging_variant="test",
        filter_functions=[valid_test_filter]
    )


@pytest.fixture
def root_logger_custom_filters_wrong_params():
    return rbacchain.base.RootLogger(
        logger_name="test_custom_logger_wrong_params",
        logging_variant="test",
        filter_functions=[invalid_test_filter_wrong_params]
    )


@pytest.fixture
def root_logger_custom_filters_wrong_outputs():
    return rbacchain.base.RootLogger(
        logger_name="test_custom_logger_wrong_outputs",
        logging_variant="test",
        filter_functions=[invalid_test_filter_wrong_outputs]
    )


@pytest.fixture
def component_logger():
    return rbacchain.general.ComponentLogger(logger_name="Test_component_logger")


@pytest.fixture
def sysmetric_logger_default_params():
    return rbacchain.general.SysmetricLogger(
        logger_name="Test_source_logger_default",
        logging_variant="basic"
    )


@pytest.fixture
def sysmetric_logger():
    return rbacchain.general.SysmetricLogger(
        server=HOST,
        logger_name="Test_source_logger",
        logging_variant="test"
    )
