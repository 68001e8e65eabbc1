#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import functools
import hashlib
import json
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

# Libs
import rlp
from rlp.sedes import CountableList, big_endian_int, boolean, text

# Custom
from . import crypto
from .config import (
    BENCH_REFERENCE_ATTRIBUTES,
    CONTRACT_OPERATIONS,
    DIGEST_LENGTH,
    GAS_SCHEDULE_PATH,
    OP_GET_RIGHTS,
    OP_LIST_ROLES,
    OP_VALIDATE_ROLE,
    PROPOSED_SCHEDULE
)
from .errors import ContractError, ContractNotFound, ModelValidationError
from .general import ComponentLogger
from .rbac import (
    AccessRequest,
    Denial,
    EffectiveRights,
    RbacModel,
    RegisteredUser,
    Right,
    Role,
    UserType,
    SEMANTIC_ROLE,
    build_model,
    check_accessibility_rules,
    effective_mask,
    model_to_dict
)

##################
# Configurations #
##################

_logger = ComponentLogger(logger_name="contract").initialise()

FULL_PATH_CHECKS = 4

######################
# Serialisable Rules #
######################

class RightEntry(rlp.Serializable):
    fields = [
        ('id', text),
        ('mask', CountableList(boolean))
    ]


class RoleEntry(rlp.Serializable):
    fields = [
        ('id', text),
        ('rights', CountableList(text))
    ]


class UserTypeEntry(rlp.Serializable):
    fields = [
        ('id', text),
        ('roles', CountableList(text))
    ]


class ContractRules(rlp.Serializable):
    """ The accessibility rules AR embedded in a contract: the catalog, G,
        the right associations and the role assignments, in canonical
        (id-sorted) order
    """
    fields = [
        ('attributes', CountableList(text)),
        ('rights', CountableList(RightEntry)),
        ('roles', CountableList(RoleEntry)),
        ('user_types', CountableList(UserTypeEntry))
    ]


class SmartContract(rlp.Serializable):
    """ SC = <Op, AR>, owned by the data owner and content-addressed: the
        contract ID is a digest over every field below.
    """
    fields = [
        ('operations', CountableList(text)),
        ('rules', ContractRules),
        ('owner', text),
        ('version', big_endian_int)
    ]

    @property
    def contract_id(self) -> str:
        return _contract_id(self)

    @property
    def model(self) -> RbacModel:
        return _contract_model(self)


class RightsStatement(rlp.Serializable):
    """ Canonical form of (p, p.rights) that BAM signs """
    fields = [
        ('user_id', text),
        ('mask', CountableList(boolean))
    ]


@functools.lru_cache(maxsize=1024)
def _contract_id(contract: SmartContract) -> str:
    return hashlib.sha256(rlp.encode(contract)).digest()[:DIGEST_LENGTH].hex()


@functools.lru_cache(maxsize=1024)
def _contract_model(contract: SmartContract) -> RbacModel:
    return model_from_rules(contract.rules)

################
# Gas Metering #
################

@dataclass(frozen=True)
class GasSchedule:
    """ Unit costs for deterministic gas metering

    Attributes:
        name (str): Schedule name e.g. "proposed", "baseline"
        deploy_*: G_BASE, G_ROLE, G_RIGHT, G_BYTE of contract deployment
        validate_*: V_BASE, V_CHECK, V_ATTR of role validation
        register_*: base and per-role cost of user registration
        record_*: base and per-byte cost of a data record transaction
    """
    name: str
    deploy_base: int
    deploy_role: int
    deploy_right: int
    deploy_byte: int
    validate_base: int
    validate_check: int
    validate_attribute: int
    register_base: int
    register_role: int
    record_base: int
    record_byte: int


@dataclass(frozen=True)
class GasReceipt:
    gas_used: int
    op: str
    contract_id: str = ""


def _variable_deploy_cost(rules: ContractRules, deploy_role: int, deploy_right: int, deploy_byte: int) -> int:
    return (
        deploy_role * len(rules.roles) +
        deploy_right * len(rules.rights) +
        deploy_byte * len(rlp.encode(rules))
    )


def schedule_from_dict(name: str, entry: Dict) -> GasSchedule:
    """ Builds a schedule from its JSON entry. An entry may give
        `deploy_anchor` instead of `deploy_base`: the base is then calibrated
        so that the one-role reference contract costs exactly the anchor.
    """
    entry = dict(entry)
    if 'deploy_base' not in entry:
        anchor = entry.pop('deploy_anchor')
        reference = rules_from_model(reference_model(roles=1))
        entry['deploy_base'] = anchor - _variable_deploy_cost(
            reference,
            entry['deploy_role'],
            entry['deploy_right'],
            entry['deploy_byte']
        )
    else:
        entry.pop('deploy_anchor', None)
    return GasSchedule(name=name, **entry)


def load_gas_schedules(path: Optional[str] = None) -> Dict[str, GasSchedule]:
    """ Loads every named schedule from a gas schedule file

    Args:
        path (str): JSON file; defaults to the packaged schedules
    Returns:
        Schedules by name (dict(str, GasSchedule))
    """
    with open(path or GAS_SCHEDULE_PATH, "r", encoding="utf-8") as schedule_file:
        entries = json.load(schedule_file)
    return {name: schedule_from_dict(name, entry) for name, entry in entries.items()}


@functools.lru_cache(maxsize=None)
def default_schedule() -> GasSchedule:
    return load_gas_schedules()[PROPOSED_SCHEDULE]


def gas_of_deployment(
    contract: SmartContract,
    schedule: Optional[GasSchedule] = None
) -> GasReceipt:
    """ gas = G_BASE + G_ROLE * m + G_RIGHT * k + G_BYTE * |serialised AR| """
    schedule = schedule or default_schedule()
    gas_used = schedule.deploy_base + _variable_deploy_cost(
        contract.rules,
        schedule.deploy_role,
        schedule.deploy_right,
        schedule.deploy_byte
    )
    return GasReceipt(gas_used=gas_used, op="deploy", contract_id=contract.contract_id)


def gas_of_validation(
    contract: SmartContract,
    request: AccessRequest,
    semantics_evaluated: int = FULL_PATH_CHECKS,
    schedule: Optional[GasSchedule] = None
) -> GasReceipt:
    """ gas = V_BASE + V_CHECK * (semantics evaluated) + V_ATTR * q, where the
        per-attribute term is only charged once the attribute semantic is
        reached

    Args:
        contract (SmartContract): Contract executing the validation
        request (AccessRequest): Request being validated
        semantics_evaluated (int): Number of semantics that ran (1-4).
            Default: 4, i.e. the full path and therefore the gas ceiling
        schedule (GasSchedule): Unit costs. Default: proposed schedule
    Returns:
        GasReceipt
    """
    gas_used = validation_gas(request.q, semantics_evaluated, schedule)
    return GasReceipt(gas_used=gas_used, op=OP_VALIDATE_ROLE, contract_id=contract.contract_id)


def validation_gas(
    q: int,
    semantics_evaluated: int = FULL_PATH_CHECKS,
    schedule: Optional[GasSchedule] = None
) -> int:
    """ Raw validation cost; with the defaults this is the ceiling cost_V
        that a Tx_V carries
    """
    schedule = schedule or default_schedule()
    gas_used = schedule.validate_base + schedule.validate_check * semantics_evaluated
    if semantics_evaluated >= FULL_PATH_CHECKS:
        gas_used += schedule.validate_attribute * q
    return gas_used


def gas_of_registration(role_count: int, schedule: Optional[GasSchedule] = None) -> int:
    schedule = schedule or default_schedule()
    return schedule.register_base + schedule.register_role * role_count


def gas_of_record(byte_count: int, schedule: Optional[GasSchedule] = None) -> int:
    schedule = schedule or default_schedule()
    return schedule.record_base + schedule.record_byte * byte_count

###########################
# Rules <-> Model Mapping #
###########################

def rules_from_model(model: RbacModel) -> ContractRules:
    return ContractRules(
        attributes=list(model.catalog.attributes),
        rights=[
            RightEntry(id=right.id, mask=list(right.mask))
            for right in sorted(model.rights.values(), key=lambda r: r.id)
        ],
        roles=[
            RoleEntry(id=role.id, rights=sorted(role.rights))
            for role in sorted(model.roles.values(), key=lambda r: r.id)
        ],
        user_types=[
            UserTypeEntry(id=user_type.id, roles=sorted(user_type.roles))
            for user_type in sorted(model.user_types.values(), key=lambda u: u.id)
        ]
    )


def model_from_rules(rules: ContractRules) -> RbacModel:
    return build_model(
        catalog=tuple(rules.attributes),
        rights=[Right(entry.id, tuple(entry.mask)) for entry in rules.rights],
        roles=[Role(entry.id, frozenset(entry.rights)) for entry in rules.roles],
        user_types=[UserType(entry.id, frozenset(entry.roles)) for entry in rules.user_types]
    )


def reference_model(
    roles: int,
    rights_per_role: int = 1,
    attributes: Sequence[str] = BENCH_REFERENCE_ATTRIBUTES
) -> RbacModel:
    """ Workload used for gas calibration and the deployment benchmarks: one
        user type "operator" holding `roles` roles, each role associated with
        `rights_per_role` rights of its own
    """
    width = len(attributes)
    rights, role_entries = [], []
    for i in range(1, roles + 1):
        right_ids = []
        for j in range(1, rights_per_role + 1):
            right_id = f"right_{i}_{j}"
            mask = tuple(b == 0 or b == (i + j) % width for b in range(width))
            rights.append(Right(right_id, mask))
            right_ids.append(right_id)
        role_entries.append(Role(f"role_{i}", frozenset(right_ids)))

    return build_model(
        catalog=tuple(attributes),
        rights=rights,
        roles=role_entries,
        user_types=[UserType("operator", frozenset(role.id for role in role_entries))]
    )

##################
# Core Functions #
##################

@dataclass(frozen=True)
class Evaluation:
    """ Key-less result of running validate_role: what the ledger records """
    decision: object
    gas: GasReceipt

    @property
    def rights(self) -> Optional[EffectiveRights]:
        return self.decision if self.decision.granted else None


@dataclass(frozen=True)
class ValidationOutcome:
    """ Result of role validation as returned by BAM

    Attributes:
        user_id (str): Validated user p
        rights (EffectiveRights): p.rights, None when any semantic failed
        signed_rights (Signature): Sign(p.rights, PR_BAM), None when denied
        gas (GasReceipt): Metered validation cost
        denial (Denial): Violated semantic, None when granted
    """
    user_id: str
    rights: Optional[EffectiveRights]
    signed_rights: Optional[crypto.Signature]
    gas: GasReceipt
    denial: Optional[Denial] = None


def compile_contract(model: RbacModel, owner: str, version: int = 1) -> SmartContract:
    """ Embeds a validated RBAC model as the rules of a new contract

    Args:
        model (RbacModel): Accessibility rules
        owner (str): ActorId of the data owner (ID_DO)
        version (int): Contract version; upgrades deploy version + 1
    Returns:
        Content-addressed contract (SmartContract)
    """
    if not isinstance(model, RbacModel):
        raise ModelValidationError("model", "compile_contract expects a built RbacModel")
    rules = rules_from_model(model)
    model_from_rules(rules)      # re-validates exactly what gets embedded
    contract = SmartContract(
        operations=sorted(CONTRACT_OPERATIONS),
        rules=rules,
        owner=owner,
        version=version
    )
    _logger.debug(
        "contract.compiled",
        contract_id=contract.contract_id,
        owner=owner,
        version=version,
        roles=model.m,
        rights=model.k
    )
    return contract


def evaluate(
    contract: Optional[SmartContract],
    user: Optional[RegisteredUser],
    request: AccessRequest,
    claimed_roles: Optional[Iterable[str]] = None,
    schedule: Optional[GasSchedule] = None
) -> Evaluation:
    """ Runs validate_role without signing. A role claim (Sign(p.role, ..)
        carried by Tx_V) that differs from the registered roles fails the
        role semantic.

    Raises:
        ContractNotFound: if no contract is given
    """
    if contract is None:
        raise ContractNotFound("No contract to execute validate_role against")

    model = contract.model
    decision = check_accessibility_rules(model, user, request)
    if (
        decision.granted and
        claimed_roles is not None and
        frozenset(claimed_roles) != user.roles
    ):
        decision = Denial(SEMANTIC_ROLE, "Claimed roles differ from registered roles")

    evaluated = FULL_PATH_CHECKS if decision.granted else decision.semantics_evaluated
    gas = gas_of_validation(contract, request, evaluated, schedule)
    return Evaluation(decision=decision, gas=gas)


def rights_message(user_id: str, rights: EffectiveRights) -> bytes:
    return rlp.encode(RightsStatement(user_id=user_id, mask=list(rights.mask)))


def verify_rights(
    user_id: str,
    rights: EffectiveRights,
    signature: Optional[crypto.Signature],
    bam_public_key: bytes
) -> bool:
    if signature is None:
        return False
    return crypto.verify(rights_message(user_id, rights), signature, bam_public_key)


def execute_validation(
    contract: Optional[SmartContract],
    user: Optional[RegisteredUser],
    request: AccessRequest,
    bam_key: bytes,
    claimed_roles: Optional[Iterable[str]] = None,
    schedule: Optional[GasSchedule] = None
) -> ValidationOutcome:
    """ Smart-contract based user role validation: checks p.type, then the
        role consistency, then the rights and requested attributes. Granted
        rights come back signed by BAM; a failed check yields NULL rights.

    Args:
        contract (SmartContract): Deployed contract holding AR
        user (RegisteredUser): Registered user, None if p is unregistered
        request (AccessRequest): req(p, param)
        bam_key (bytes): PR_BAM
        claimed_roles (iterable(str)): Role claim carried by Tx_V, if any
        schedule (GasSchedule): Unit costs. Default: proposed schedule
    Returns:
        ValidationOutcome
    """
    evaluation = evaluate(contract, user, request, claimed_roles, schedule)
    rights = evaluation.rights
    signed_rights = (
        crypto.sign(rights_message(request.user_id, rights), bam_key)
        if rights is not None else None
    )
    return ValidationOutcome(
        user_id=request.user_id,
        rights=rights,
        signed_rights=signed_rights,
        gas=evaluation.gas,
        denial=None if rights is not None else evaluation.decision
    )


def get_rights(contract: SmartContract, user: Optional[RegisteredUser]) -> EffectiveRights:
    return effective_mask(contract.model, user)


def list_roles(contract: SmartContract, user_type: str) -> List[str]:
    assigned = contract.model.user_types.get(user_type)
    return sorted(assigned.roles) if assigned else []


OPERATIONS = {
    OP_VALIDATE_ROLE: execute_validation,
    OP_GET_RIGHTS: get_rights,
    OP_LIST_ROLES: list_roles
}


def invoke(contract: SmartContract, operation: str, *args, **kwargs):
    """ Dispatches one of the contract's fixed entry points by name

    Raises:
        ContractError: if the contract does not expose the operation
    """
    if operation not in contract.operations or operation not in OPERATIONS:
        raise ContractError(f"Contract {contract.contract_id} has no operation '{operation}'")
    return OPERATIONS[operation](contract, *args, **kwargs)


def describe(contract: SmartContract) -> Dict:
    """ JSON-friendly dump of a contract for inspection """
    return {
        'contract_id': contract.contract_id,
        'owner': contract.owner,
        'version': contract.version,
        'operations': list(contract.operations),
        'rules': model_to_dict(contract.model)
    }
