#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import json
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

# Libs


# Custom
from .errors import (
    InvalidUserType,
    MaskLengthError,
    ModelValidationError,
    RequestError,
    RoleNotPermitted,
    UnknownUser
)
from .general import ComponentLogger

##################
# Configurations #
##################

_logger = ComponentLogger(logger_name="rbac").initialise()

Value = Union[str, int]

# Accessibility semantics, in evaluation order
SEMANTIC_USER_TYPE = 2
SEMANTIC_ROLE = 3
SEMANTIC_RIGHTS = 4
SEMANTIC_ATTRIBUTES = 5

################
# Domain Types #
################

@dataclass(frozen=True)
class AttributeCatalog:
    """ Ordered attribute names att_1..att_l of the transaction records. The
        position of an attribute is its bit index in every right's mask.
    """
    attributes: Tuple[str, ...]

    def __post_init__(self):
        attributes = tuple(self.attributes)
        object.__setattr__(self, 'attributes', attributes)
        if not attributes:
            raise ModelValidationError("catalog", "at least one attribute is required")
        if len(set(attributes)) != len(attributes):
            raise ModelValidationError("catalog", "attribute names must be unique")

    def __len__(self) -> int:
        return len(self.attributes)

    def __contains__(self, name: str) -> bool:
        return name in self.attributes

    def index_of(self, name: str) -> int:
        return self.attributes.index(name)


@dataclass(frozen=True)
class Right:
    """ g_i: boolean accessibility vector over the attribute catalog """
    id: str
    mask: Tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, 'mask', tuple(bool(bit) for bit in self.mask))


@dataclass(frozen=True)
class Role:
    """ r_i with its right association A_{r_i,g'} """
    id: str
    rights: FrozenSet[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, 'rights', frozenset(self.rights))


@dataclass(frozen=True)
class UserType:
    """ u_i with its role assignment A_{u_i,r'} """
    id: str
    roles: FrozenSet[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, 'roles', frozenset(self.roles))


@dataclass(frozen=True, eq=True)
class RbacModel:
    """ RBAC_M = <A_{U,R}, A_{R,G}, G> over an attribute catalog. Build it
        with `build_model`, which enforces referential closure.
    """
    catalog: AttributeCatalog
    rights: Mapping[str, Right] = field(default_factory=dict)
    roles: Mapping[str, Role] = field(default_factory=dict)
    user_types: Mapping[str, UserType] = field(default_factory=dict)

    __hash__ = None

    @property
    def n(self) -> int:
        return len(self.user_types)

    @property
    def m(self) -> int:
        return len(self.roles)

    @property
    def k(self) -> int:
        return len(self.rights)


@dataclass(frozen=True)
class RegisteredUser:
    """ A registered user p with type p.type and roles R'_p """
    user_id: str
    user_type: str
    roles: FrozenSet[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, 'roles', frozenset(self.roles))


@dataclass(frozen=True)
class AccessRequest:
    """ req(p, param) with param = ((att_1, val_1), .., (att_q, val_q)) """
    user_id: str
    params: Tuple[Tuple[str, Value], ...]

    def __post_init__(self):
        params = tuple((str(att), val) for att, val in self.params)
        object.__setattr__(self, 'params', params)
        if not params:
            raise RequestError("A request needs at least one (attribute, value) pair")

    @property
    def attributes(self) -> List[str]:
        """ Requested attribute names param.Att', in first-seen order """
        return list(dict.fromkeys(att for att, _ in self.params))

    @property
    def q(self) -> int:
        return len(self.params)

    @classmethod
    def parse(cls, user_id: str, query: str) -> "AccessRequest":
        """ Parses 'att=val,att=val'. Values that read as integers become
            integers, anything else stays a string.
        """
        params = []
        for pair in filter(None, (chunk.strip() for chunk in query.split(","))):
            if "=" not in pair:
                raise RequestError(f"Query term '{pair}' is not of the form att=val")
            att, raw = (part.strip() for part in pair.split("=", 1))
            try:
                value = int(raw)
            except ValueError:
                value = raw
            params.append((att, value))
        return cls(user_id=user_id, params=tuple(params))

    def check_catalog(self, catalog: AttributeCatalog) -> None:
        unknown = [att for att in self.attributes if att not in catalog]
        if unknown:
            raise RequestError(f"Attributes not in catalog: {unknown}")


@dataclass(frozen=True)
class EffectiveRights:
    """ p.rights materialised as the union of the user's right masks """
    mask: Tuple[bool, ...]

    granted = True

    def __post_init__(self):
        object.__setattr__(self, 'mask', tuple(bool(bit) for bit in self.mask))

    def visible(self, catalog: AttributeCatalog) -> List[str]:
        return [att for att, bit in zip(catalog.attributes, self.mask) if bit]


@dataclass(frozen=True)
class Denial:
    """ Structured refusal naming the first violated accessibility semantic

    Attributes:
        semantic (int): 2 (user type), 3 (roles), 4 (rights), 5 (attributes)
        reason (str): Human readable cause
    """
    semantic: int
    reason: str

    granted = False

    @property
    def semantics_evaluated(self) -> int:
        return self.semantic - 1


AccessDecision = Union[EffectiveRights, Denial]

##################
# Core Functions #
##################

def build_model(
    catalog: Union[AttributeCatalog, Sequence[str]],
    rights: Iterable[Right] = (),
    roles: Iterable[Role] = (),
    user_types: Iterable[UserType] = ()
) -> RbacModel:
    """ Validates and assembles an RBAC model

    Args:
        catalog: Attribute catalog, or the ordered attribute names
        rights (iterable(Right)): G
        roles (iterable(Role)): R with their right associations
        user_types (iterable(UserType)): U with their role assignments
    Returns:
        Validated model (RbacModel)
    Raises:
        MaskLengthError: if a right's mask does not have l entries
        ModelValidationError: on duplicate ids or dangling references
    """
    if not isinstance(catalog, AttributeCatalog):
        catalog = AttributeCatalog(tuple(catalog))

    def index(items, kind) -> Dict:
        indexed = {}
        for item in items:
            if item.id in indexed:
                raise ModelValidationError(item.id, f"duplicate {kind} id")
            indexed[item.id] = item
        return indexed

    rights_by_id = index(rights, "right")
    roles_by_id = index(roles, "role")
    types_by_id = index(user_types, "user type")

    for right in rights_by_id.values():
        if len(right.mask) != len(catalog):
            raise MaskLengthError(
                right.id,
                f"mask has {len(right.mask)} bits, catalog has {len(catalog)} attributes"
            )

    for role in roles_by_id.values():
        for right_id in sorted(role.rights):
            if right_id not in rights_by_id:
                raise ModelValidationError(right_id, f"unknown right referenced by role {role.id}")

    for user_type in types_by_id.values():
        for role_id in sorted(user_type.roles):
            if role_id not in roles_by_id:
                raise ModelValidationError(role_id, f"unknown role referenced by user type {user_type.id}")

    return RbacModel(
        catalog=catalog,
        rights=rights_by_id,
        roles=roles_by_id,
        user_types=types_by_id
    )


def register_user(
    model: RbacModel,
    user_id: str,
    user_type_id: str,
    role_ids: Iterable[str]
) -> RegisteredUser:
    """ Builds and checks a user record; persisting it is the job of a Tx_UR

    Raises:
        InvalidUserType: if the user type is not in U
        RoleNotPermitted: if a role is not assigned to the user type
    """
    user_type = model.user_types.get(user_type_id)
    if user_type is None:
        raise InvalidUserType(f"Unknown user type '{user_type_id}'")

    roles = frozenset(role_ids)
    not_permitted = sorted(roles - user_type.roles)
    if not_permitted:
        raise RoleNotPermitted(
            f"Roles {not_permitted} are not assigned to user type '{user_type_id}'"
        )

    return RegisteredUser(user_id=user_id, user_type=user_type_id, roles=roles)


def effective_mask(model: RbacModel, user: Optional[RegisteredUser]) -> EffectiveRights:
    """ Element-wise OR of every right mask reachable through the user's
        roles; all-false for a user holding no roles

    Raises:
        UnknownUser: if no registered user is given
    """
    if user is None:
        raise UnknownUser("User is not registered")

    mask = [False] * len(model.catalog)
    for role_id in user.roles:
        role = model.roles.get(role_id)
        if role is None:
            continue
        for right_id in role.rights:
            right = model.rights.get(right_id)
            if right is None:
                continue
            mask = [held or bit for held, bit in zip(mask, right.mask)]
    return EffectiveRights(mask=tuple(mask))


def check_accessibility_rules(
    model: RbacModel,
    user: Optional[RegisteredUser],
    request: AccessRequest
) -> AccessDecision:
    """ Evaluates the accessibility rules in order and stops at the first
        violated semantic:
            (2) p.type is a user type of the model
            (3) p.role is a subset of the roles assigned to p.type
            (4) every right reachable from p.role is in G
            (5) every requested attribute is catalogued and visible

    Args:
        model (RbacModel): Accessibility rules to evaluate against
        user (RegisteredUser): Requesting user, None when unregistered
        request (AccessRequest): The data access request
    Returns:
        EffectiveRights on success, otherwise a Denial (AccessDecision)
    """
    if user is None or user.user_type not in model.user_types:
        return Denial(SEMANTIC_USER_TYPE, "Invalid User: unknown user type")

    if request.user_id != user.user_id:
        return Denial(SEMANTIC_USER_TYPE, "Invalid User: request issued for another user")

    permitted = model.user_types[user.user_type].roles
    if not user.roles <= permitted:
        return Denial(
            SEMANTIC_ROLE,
            f"Roles {sorted(user.roles - permitted)} not assigned to '{user.user_type}'"
        )

    for role_id in sorted(user.roles):
        missing = sorted(model.roles[role_id].rights - set(model.rights))
        if missing:
            return Denial(SEMANTIC_RIGHTS, f"Rights {missing} of role '{role_id}' are undefined")

    rights = effective_mask(model, user)
    for att in request.attributes:
        if att not in model.catalog:
            return Denial(SEMANTIC_ATTRIBUTES, f"Attribute '{att}' is not catalogued")
        if not rights.mask[model.catalog.index_of(att)]:
            return Denial(SEMANTIC_ATTRIBUTES, f"Attribute '{att}' is not accessible")

    return rights

##########################
# Policy File Ingestion  #
##########################

def model_from_dict(policy: Mapping) -> RbacModel:
    """ Builds a model from {attributes, rights, roles, user_types} """
    try:
        return build_model(
            catalog=policy['attributes'],
            rights=[Right(r['id'], tuple(r['mask'])) for r in policy.get('rights', [])],
            roles=[Role(r['id'], frozenset(r.get('rights', []))) for r in policy.get('roles', [])],
            user_types=[
                UserType(u['id'], frozenset(u.get('roles', [])))
                for u in policy.get('user_types', [])
            ]
        )
    except (KeyError, TypeError) as error:
        raise ModelValidationError("policy", f"malformed policy document ({error})") from error


def model_to_dict(model: RbacModel) -> Dict:
    """ Inverse of `model_from_dict`, with ids sorted for stable output """
    return {
        'attributes': list(model.catalog.attributes),
        'rights': [
            {'id': right.id, 'mask': list(right.mask)}
            for right in sorted(model.rights.values(), key=lambda r: r.id)
        ],
        'roles': [
            {'id': role.id, 'rights': sorted(role.rights)}
            for role in sorted(model.roles.values(), key=lambda r: r.id)
        ],
        'user_types': [
            {'id': user_type.id, 'roles': sorted(user_type.roles)}
            for user_type in sorted(model.user_types.values(), key=lambda u: u.id)
        ]
    }


def load_policy(path: str) -> RbacModel:
    with open(path, "r", encoding="utf-8") as policy_file:
        policy = json.load(policy_file)
    model = model_from_dict(policy)
    _logger.info(
        "policy.loaded",
        path=path,
        user_types=model.n,
        roles=model.m,
        rights=model.k,
        attributes=len(model.catalog)
    )
    return model


def validate_policy_file(path: str) -> Dict[str, int]:
    """ Loads a policy file purely to check it

    Returns:
        Model dimensions (dict(str, int))
    Raises:
        ModelValidationError: if the policy does not build
    """
    try:
        model = load_policy(path)
    except json.JSONDecodeError as error:
        raise ModelValidationError(path, f"not a JSON document ({error})") from error
    return {
        'user_types': model.n,
        'roles': model.m,
        'rights': model.k,
        'attributes': len(model.catalog)
    }
