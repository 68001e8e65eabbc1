#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import functools
import hashlib
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

# Libs
import rlp
from rlp.exceptions import RLPException
from rlp.sedes import CountableList, big_endian_int, binary, text

# Custom
from . import contract as engine
from . import crypto
from .config import (
    GENESIS_TIMESTAMP,
    ROLE_ACM,
    ROLE_BAM,
    ROLE_BDM,
    ROLE_OWNER,
    ZERO_HASH
)
from .contract import GasSchedule, SmartContract
from .datastore import (
    AttributeEntry,
    AttributeValue,
    DataRecord,
    RecordBody,
    RecordIndex,
    check_schema,
    decode_attributes
)
from .errors import (
    ChainFormatError,
    RbacChainError,
    RejectReason,
    RequestError,
    SchemaError,
    SyncRefused,
    TransactionRejected
)
from .general import ComponentLogger
from .rbac import AccessRequest, AttributeCatalog, RbacModel, RegisteredUser, register_user

##################
# Configurations #
##################

_logger = ComponentLogger(logger_name="ledger").initialise()

KIND_GENESIS = "GEN"
KIND_CONTRACT = "SC"
KIND_REGISTRATION = "UR"
KIND_VALIDATION = "V"
KIND_RECORD = "DR"
TX_KINDS = [KIND_GENESIS, KIND_CONTRACT, KIND_REGISTRATION, KIND_VALIDATION, KIND_RECORD]

# Which authority role may submit each kind, and to whom it is addressed
SUBMITTERS = {
    KIND_CONTRACT: (ROLE_OWNER, ROLE_BAM),
    KIND_REGISTRATION: (ROLE_OWNER, ROLE_BDM),
    KIND_VALIDATION: (ROLE_ACM, ROLE_BAM),
    KIND_RECORD: (ROLE_OWNER, ROLE_BDM)
}

LENGTH_PREFIX = 4

############################
# Serialisable Ledger Data #
############################

class Transaction(rlp.Serializable):
    """ Signed ledger transaction. The signature covers the canonical
        encoding of the transaction with an empty signature field.
    """
    fields = [
        ('kind', text),
        ('sender', text),
        ('recipient', text),
        ('cost', big_endian_int),
        ('nonce', big_endian_int),
        ('payload', binary),
        ('signature', binary)
    ]

    @property
    def tx_id(self) -> str:
        return hashlib.sha256(canonical_bytes(self)).hexdigest()


class BlockHeader(rlp.Serializable):
    fields = [
        ('height', big_endian_int),
        ('prev_hash', binary),
        ('tx_root', binary),
        ('timestamp', big_endian_int),
        ('producer', text)
    ]


class Block(rlp.Serializable):
    fields = [
        ('height', big_endian_int),
        ('prev_hash', binary),
        ('tx_root', binary),
        ('timestamp', big_endian_int),
        ('producer', text),
        ('transactions', CountableList(Transaction)),
        ('block_hash', binary)
    ]

    def header(self) -> BlockHeader:
        return BlockHeader(
            height=self.height,
            prev_hash=self.prev_hash,
            tx_root=self.tx_root,
            timestamp=self.timestamp,
            producer=self.producer
        )


class Authority(rlp.Serializable):
    """ One entry of the genesis authority directory """
    fields = [
        ('role', text),
        ('actor_id', text),
        ('public_key', binary)
    ]


class GenesisPayload(rlp.Serializable):
    fields = [
        ('authorities', CountableList(Authority))
    ]


class ContractPayload(rlp.Serializable):
    """ Tx_SC body: the contract together with Sign(SC, PR_DO) """
    fields = [
        ('contract', SmartContract),
        ('owner_signature', binary)
    ]


class UserProfile(rlp.Serializable):
    """ U_pro: the user p with its type, roles R'_p and public key """
    fields = [
        ('user_id', text),
        ('user_type', text),
        ('roles', CountableList(text)),
        ('public_key', binary)
    ]


class RegistrationPayload(rlp.Serializable):
    """ Tx_UR body: U_pro together with Sign(U_pro, PR_DO) """
    fields = [
        ('profile', UserProfile),
        ('owner_signature', binary)
    ]


class RoleClaim(rlp.Serializable):
    """ p.role as signed by the ACM """
    fields = [
        ('user_id', text),
        ('roles', CountableList(text))
    ]


class ValidationPayload(rlp.Serializable):
    """ Tx_V body: ID_SC, the request and Sign(p.role, PR_ACM) """
    fields = [
        ('contract_id', text),
        ('claim', RoleClaim),
        ('params', CountableList(AttributeEntry)),
        ('acm_signature', binary)
    ]

    def request(self) -> AccessRequest:
        return AccessRequest(
            user_id=self.claim.user_id,
            params=tuple((entry.name, entry.value.unwrap()) for entry in self.params)
        )


PAYLOAD_SEDES = {
    KIND_GENESIS: GenesisPayload,
    KIND_CONTRACT: ContractPayload,
    KIND_REGISTRATION: RegistrationPayload,
    KIND_VALIDATION: ValidationPayload,
    KIND_RECORD: RecordBody
}

###########
# Helpers #
###########

def canonical_bytes(tx: Transaction) -> bytes:
    """ Field-ordered, length-prefixed (RLP) encoding of a transaction """
    return rlp.encode(tx)


def signing_bytes(tx: Transaction) -> bytes:
    return rlp.encode(tx.copy(signature=b""))


def sign_transaction(tx: Transaction, private_key: bytes) -> Transaction:
    return tx.copy(signature=crypto.sign(signing_bytes(tx), private_key).data)


def tx_root_of(transactions: Sequence[Transaction]) -> bytes:
    """ Single-transaction blocks make this a degenerate Merkle root """
    digest = hashlib.sha256()
    for tx in transactions:
        digest.update(canonical_bytes(tx))
    return digest.digest()


def header_hash(block: Block) -> bytes:
    return hashlib.sha256(rlp.encode(block.header())).digest()


@functools.lru_cache(maxsize=4096)
def _decode_payload(kind: str, payload: bytes):
    return rlp.decode(payload, PAYLOAD_SEDES[kind])


def decode_payload(tx: Transaction):
    """ Decodes the kind-specific body of a transaction

    Raises:
        TransactionRejected: MalformedPayload if the body does not decode
    """
    if tx.kind not in PAYLOAD_SEDES:
        raise TransactionRejected(RejectReason.MALFORMED_PAYLOAD, f"Unknown kind '{tx.kind}'")
    try:
        return _decode_payload(tx.kind, tx.payload)
    except (RLPException, ValueError, TypeError) as error:
        raise TransactionRejected(RejectReason.MALFORMED_PAYLOAD, str(error)) from error

################
# Domain Types #
################

@dataclass(frozen=True)
class Verdict:
    """ Accept or reject(reason) decision of ledger validation """
    accepted: bool
    reason: Optional[RejectReason] = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.accepted


ACCEPT = Verdict(accepted=True)


@dataclass(frozen=True)
class ValidationRecord:
    """ On-chain outcome of one Tx_V

    Attributes:
        tx_id (str): Hash of the Tx_V
        height (int): Height of the block recording the outcome
        user_id (str): Validated user
        contract_id (str): Contract executing validate_role
        rights (tuple(bool)): Granted mask, None when denied
        semantic (int): First violated semantic, None when granted
        gas_used (int): Metered validation cost
    """
    tx_id: str
    height: int
    user_id: str
    contract_id: str
    rights: Optional[Tuple[bool, ...]]
    semantic: Optional[int]
    gas_used: int


@dataclass(frozen=True)
class ChainCheck:
    """ Result of full-chain verification; `height` is the first corrupt
        height, None when the chain verifies
    """
    height: Optional[int] = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.height is None

    def __bool__(self) -> bool:
        return self.ok


@dataclass
class ChainState:
    """ Indices derived from the blocks. Only ever changed by `apply`, so
        folding the same blocks always yields an equal state.
    """
    schedule: GasSchedule = field(default_factory=engine.default_schedule)
    height: int = -1
    directory: Dict[str, Authority] = field(default_factory=dict)
    nonces: Dict[str, int] = field(default_factory=dict)
    contracts: Dict[str, SmartContract] = field(default_factory=dict)
    latest_contract: Optional[str] = None
    users: Dict[str, RegisteredUser] = field(default_factory=dict)
    user_keys: Dict[str, bytes] = field(default_factory=dict)
    records: RecordIndex = field(default_factory=RecordIndex)
    validations: Dict[str, ValidationRecord] = field(default_factory=dict)

    ###########
    # Getters #
    ###########

    def key_of(self, actor_id: str) -> Optional[bytes]:
        authority = self.directory.get(actor_id)
        return authority.public_key if authority else None

    def role_of(self, actor_id: str) -> Optional[str]:
        authority = self.directory.get(actor_id)
        return authority.role if authority else None

    def actors_of(self, role: str) -> List[str]:
        return sorted(
            actor_id for actor_id, authority in self.directory.items()
            if authority.role == role
        )

    def first_of(self, role: str) -> str:
        actors = self.actors_of(role)
        if not actors:
            raise ChainFormatError(f"No {role} in the authority directory")
        return actors[0]

    def next_nonce(self, actor_id: str) -> int:
        return self.nonces.get(actor_id, 0) + 1

    def contract(self, contract_id: Optional[str] = None) -> Optional[SmartContract]:
        return self.contracts.get(self.latest_contract if contract_id is None else contract_id)

    def model(self) -> Optional[RbacModel]:
        latest = self.contract()
        return latest.model if latest else None

    def catalog(self) -> Optional[AttributeCatalog]:
        model = self.model()
        return model.catalog if model else None

    ############
    # Checkers #
    ############

    def check(self, tx: Transaction) -> Verdict:
        """ Ledger validation of a transaction against this state

        Args:
            tx (Transaction): Candidate for the next block
        Returns:
            Verdict
        """
        try:
            self._check(tx)
        except TransactionRejected as rejection:
            return Verdict(accepted=False, reason=rejection.reason, detail=rejection.detail)
        return ACCEPT


    def _check(self, tx: Transaction) -> None:
        if tx.kind not in TX_KINDS:
            raise TransactionRejected(RejectReason.MALFORMED_PAYLOAD, f"Unknown kind '{tx.kind}'")

        if tx.kind == KIND_GENESIS or self.height < 0:
            return self._check_genesis(tx)

        public_key = self.key_of(tx.sender)
        if public_key is None:
            raise TransactionRejected(
                RejectReason.UNAUTHORIZED_SENDER,
                f"Sender {tx.sender} is not in the authority directory"
            )
        if not crypto.verify(signing_bytes(tx), tx.signature, public_key):
            raise TransactionRejected(RejectReason.BAD_SIGNATURE, f"Bad signature on {tx.kind}")

        submitter_role, recipient_role = SUBMITTERS[tx.kind]
        if self.role_of(tx.sender) != submitter_role:
            raise TransactionRejected(
                RejectReason.UNAUTHORIZED_SENDER,
                f"Only {submitter_role} may submit {tx.kind}"
            )
        if self.role_of(tx.recipient) != recipient_role:
            raise TransactionRejected(
                RejectReason.MALFORMED_PAYLOAD,
                f"{tx.kind} must be addressed to the {recipient_role}"
            )

        expected = self.next_nonce(tx.sender)
        if tx.nonce != expected:
            raise TransactionRejected(
                RejectReason.BAD_NONCE,
                f"Expected nonce {expected}, got {tx.nonce}"
            )

        payload = decode_payload(tx)
        PAYLOAD_CHECKS = {
            KIND_CONTRACT: self._check_contract,
            KIND_REGISTRATION: self._check_registration,
            KIND_VALIDATION: self._check_validation,
            KIND_RECORD: self._check_record
        }
        PAYLOAD_CHECKS[tx.kind](tx, payload, public_key)


    def _check_genesis(self, tx: Transaction) -> None:
        if tx.kind != KIND_GENESIS or self.height >= 0:
            raise TransactionRejected(
                RejectReason.MALFORMED_PAYLOAD,
                "Genesis must be the first and only GEN transaction"
            )
        payload = decode_payload(tx)
        roles = [authority.role for authority in payload.authorities]
        if roles.count(ROLE_BAM) != 1 or roles.count(ROLE_ACM) != 1 or ROLE_OWNER not in roles:
            raise TransactionRejected(
                RejectReason.MALFORMED_PAYLOAD,
                "Genesis needs exactly one BAM, one ACM and at least one DO"
            )
        for authority in payload.authorities:
            if authority.actor_id != crypto.actor_id_of(authority.public_key):
                raise TransactionRejected(
                    RejectReason.MALFORMED_PAYLOAD,
                    f"ActorId {authority.actor_id} does not match its public key"
                )


    def _check_cost(self, tx: Transaction, expected: int) -> None:
        if tx.cost != expected:
            raise TransactionRejected(
                RejectReason.MALFORMED_PAYLOAD,
                f"{tx.kind} declares cost {tx.cost}, schedule requires {expected}"
            )


    def _check_contract(self, tx: Transaction, payload: ContractPayload, public_key: bytes) -> None:
        contract = payload.contract
        if contract.owner != tx.sender:
            raise TransactionRejected(
                RejectReason.UNAUTHORIZED_SENDER,
                "Contract owner differs from the submitting data owner"
            )
        if not crypto.verify(rlp.encode(contract), payload.owner_signature, public_key):
            raise TransactionRejected(RejectReason.BAD_SIGNATURE, "Contract not signed by its owner")
        try:
            contract.model
        except RbacChainError as error:
            raise TransactionRejected(RejectReason.MALFORMED_PAYLOAD, str(error)) from error
        self._check_cost(tx, engine.gas_of_deployment(contract, self.schedule).gas_used)


    def _check_registration(self, tx: Transaction, payload: RegistrationPayload, public_key: bytes) -> None:
        profile = payload.profile
        if not crypto.verify(rlp.encode(profile), payload.owner_signature, public_key):
            raise TransactionRejected(RejectReason.BAD_SIGNATURE, "U_pro not signed by the data owner")

        latest = self.contract()
        if latest is None:
            raise TransactionRejected(RejectReason.UNKNOWN_CONTRACT, "No contract deployed yet")
        if profile.user_id != crypto.actor_id_of(profile.public_key):
            raise TransactionRejected(
                RejectReason.MALFORMED_PAYLOAD,
                f"User id {profile.user_id} does not match its public key"
            )
        try:
            register_user(latest.model, profile.user_id, profile.user_type, profile.roles)
        except RbacChainError as error:
            raise TransactionRejected(RejectReason.MALFORMED_PAYLOAD, str(error)) from error
        self._check_cost(tx, engine.gas_of_registration(len(profile.roles), self.schedule))


    def _check_validation(self, tx: Transaction, payload: ValidationPayload, public_key: bytes) -> None:
        latest = self.contract(payload.contract_id)
        if latest is None:
            raise TransactionRejected(
                RejectReason.UNKNOWN_CONTRACT,
                f"No deployed contract {payload.contract_id}"
            )
        if not crypto.verify(rlp.encode(payload.claim), payload.acm_signature, public_key):
            raise TransactionRejected(RejectReason.BAD_SIGNATURE, "Role claim not signed by the ACM")
        try:
            request = payload.request()
        except (RequestError, SchemaError) as error:
            raise TransactionRejected(RejectReason.MALFORMED_PAYLOAD, str(error)) from error
        self._check_cost(tx, engine.validation_gas(request.q, schedule=self.schedule))


    def _check_record(self, tx: Transaction, payload: RecordBody, public_key: bytes) -> None:
        catalog = self.catalog()
        if catalog is None:
            raise TransactionRejected(RejectReason.UNKNOWN_CONTRACT, "No contract deployed yet")
        try:
            record = DataRecord.from_body(payload, owner=tx.sender)
        except SchemaError as error:
            raise TransactionRejected(RejectReason.MALFORMED_PAYLOAD, str(error)) from error
        unknown = sorted(name for name in record.attributes if name not in catalog)
        if unknown:
            raise TransactionRejected(
                RejectReason.MALFORMED_PAYLOAD,
                f"Uncatalogued attributes {unknown}"
            )
        if record.record_id in self.records:
            raise TransactionRejected(
                RejectReason.MALFORMED_PAYLOAD,
                f"Duplicate record_id '{record.record_id}'"
            )
        self._check_cost(tx, engine.gas_of_record(len(tx.payload), self.schedule))

    ##################
    # Core Functions #
    ##################

    def apply(self, tx: Transaction, height: int) -> None:
        """ Folds an accepted transaction into the indices """
        payload = decode_payload(tx)

        if tx.kind == KIND_GENESIS:
            for authority in payload.authorities:
                self.directory[authority.actor_id] = authority

        elif tx.kind == KIND_CONTRACT:
            self.contracts[payload.contract.contract_id] = payload.contract
            self.latest_contract = payload.contract.contract_id

        elif tx.kind == KIND_REGISTRATION:
            profile = payload.profile
            self.users[profile.user_id] = RegisteredUser(
                user_id=profile.user_id,
                user_type=profile.user_type,
                roles=frozenset(profile.roles)
            )
            self.user_keys[profile.user_id] = profile.public_key

        elif tx.kind == KIND_VALIDATION:
            deployed = self.contracts[payload.contract_id]
            evaluation = engine.evaluate(
                deployed,
                self.users.get(payload.claim.user_id),
                payload.request(),
                claimed_roles=payload.claim.roles,
                schedule=self.schedule
            )
            rights = evaluation.rights
            self.validations[tx.tx_id] = ValidationRecord(
                tx_id=tx.tx_id,
                height=height,
                user_id=payload.claim.user_id,
                contract_id=payload.contract_id,
                rights=rights.mask if rights else None,
                semantic=None if rights else evaluation.decision.semantic,
                gas_used=evaluation.gas.gas_used
            )

        elif tx.kind == KIND_RECORD:
            self.records.add(DataRecord.from_body(payload, owner=tx.sender, height=height))

        if tx.kind != KIND_GENESIS:
            self.nonces[tx.sender] = tx.nonce
        self.height = height

    @classmethod
    def fold(cls, blocks: Iterable[Block], schedule: Optional[GasSchedule] = None) -> "ChainState":
        """ Recomputes the state of already-verified blocks from scratch """
        state = cls(schedule=schedule or engine.default_schedule())
        for block in blocks:
            for tx in block.transactions:
                state.apply(tx, block.height)
        return state

#####################################
# Organisation Core Class - Chain #
#####################################

class Chain:
    """ Append-only, hash-linked chain with auto-mine consensus: every
        accepted transaction is sealed into its own block immediately.

    Attributes:
        blocks (list(Block)): Blocks from genesis upwards
        state (ChainState): Indices folded from the blocks
        schedule (GasSchedule): Gas schedule for cost checks
        clock (callable): Millisecond clock used for block timestamps
    """
    def __init__(
        self,
        schedule: Optional[GasSchedule] = None,
        clock: Optional[Callable[[], int]] = None
    ):
        self.schedule = schedule or engine.default_schedule()
        self.clock = clock or (lambda: time.time_ns() // 1_000_000)
        self.blocks: List[Block] = []
        self.state = ChainState(schedule=self.schedule)

    ###########
    # Getters #
    ###########

    @property
    def height(self) -> int:
        """ Height of the tip block, -1 for an empty chain """
        return len(self.blocks) - 1

    @property
    def tip(self) -> Optional[Block]:
        return self.blocks[-1] if self.blocks else None

    @property
    def tip_hash(self) -> bytes:
        return self.tip.block_hash if self.blocks else ZERO_HASH

    @property
    def producer(self) -> str:
        return self.state.first_of(ROLE_BAM)

    def transaction_log(self) -> List[Tuple[Transaction, int]]:
        return [(block.transactions[0], block.timestamp) for block in self.blocks]

    ##################
    # Core Functions #
    ##################

    @classmethod
    def create(
        cls,
        authorities: Iterable[Authority],
        schedule: Optional[GasSchedule] = None,
        clock: Optional[Callable[[], int]] = None
    ) -> "Chain":
        """ Starts a chain whose genesis block holds the authority directory """
        chain = cls(schedule=schedule, clock=clock)
        chain.mine(genesis_transaction(authorities), timestamp=GENESIS_TIMESTAMP)
        return chain


    def validate(self, tx: Transaction) -> Verdict:
        return self.state.check(tx)


    def mine(self, tx: Transaction, timestamp: Optional[int] = None) -> Block:
        """ Validates the transaction and seals it into a new tip block

        Args:
            tx (Transaction): Transaction to include
            timestamp (int): Pinned block timestamp in ms (replay only)
        Returns:
            The new Block
        Raises:
            TransactionRejected: if ledger validation fails
        """
        verdict = self.validate(tx)
        if not verdict:
            _logger.warning(
                "tx.rejected",
                tx_kind=tx.kind,
                sender=tx.sender,
                reason=verdict.reason.value,
                detail=verdict.detail
            )
            raise TransactionRejected(verdict.reason, verdict.detail)

        height = len(self.blocks)
        if tx.kind == KIND_GENESIS:
            producer = next(
                authority.actor_id
                for authority in decode_payload(tx).authorities
                if authority.role == ROLE_BAM
            )
            stamp = GENESIS_TIMESTAMP if timestamp is None else timestamp
        else:
            producer = self.producer
            stamp = self.clock() if timestamp is None else timestamp

        unsealed = Block(
            height=height,
            prev_hash=self.tip_hash,
            tx_root=tx_root_of([tx]),
            timestamp=stamp,
            producer=producer,
            transactions=[tx],
            block_hash=b""
        )
        block = unsealed.copy(block_hash=header_hash(unsealed))
        self._extend(block)

        _logger.debug(
            "block.mined",
            height=height,
            tx_kind=tx.kind,
            block_hash=block.block_hash.hex()
        )
        return block


    def append_block(self, block: Block) -> None:
        """ Appends a block produced elsewhere after checking it fully

        Raises:
            ChainFormatError: on a broken link, height or hash
            TransactionRejected: if its transaction is invalid here
        """
        problem = _check_block(block, len(self.blocks), self.tip_hash, self.state)
        if problem:
            raise ChainFormatError(f"Block {block.height} refused: {problem}")
        self._extend(block)


    def _extend(self, block: Block) -> None:
        for tx in block.transactions:
            self.state.apply(tx, block.height)
        self.blocks.append(block)


    def reset(self) -> None:
        self.blocks = []
        self.state = ChainState(schedule=self.schedule)

    @classmethod
    def replay(
        cls,
        log: Iterable[Tuple[Transaction, int]],
        schedule: Optional[GasSchedule] = None
    ) -> "Chain":
        """ Rebuilds a chain on a fresh node from a transaction log with
            pinned timestamps
        """
        chain = cls(schedule=schedule)
        for tx, timestamp in log:
            chain.mine(tx, timestamp=timestamp)
        return chain

    @classmethod
    def from_blocks(cls, blocks: Iterable[Block], schedule: Optional[GasSchedule] = None) -> "Chain":
        chain = cls(schedule=schedule)
        for block in blocks:
            chain.append_block(block)
        return chain

#########################
# Transaction Builders #
#########################

def genesis_transaction(authorities: Iterable[Authority]) -> Transaction:
    payload = GenesisPayload(authorities=sorted(authorities, key=lambda a: (a.role, a.actor_id)))
    return Transaction(
        kind=KIND_GENESIS,
        sender="",
        recipient="",
        cost=0,
        nonce=0,
        payload=rlp.encode(payload),
        signature=b""
    )


def authority(role: str, key_pair: crypto.KeyPair) -> Authority:
    return Authority(role=role, actor_id=key_pair.actor_id, public_key=key_pair.public_key)


def build_contract_tx(
    contract: SmartContract,
    owner_key: crypto.KeyPair,
    recipient: str,
    nonce: int,
    schedule: Optional[GasSchedule] = None
) -> Transaction:
    """ Tx_SC = {ID_DO, ID_BAM, cost_SC, Sign(SC, PR_DO)} """
    payload = ContractPayload(
        contract=contract,
        owner_signature=crypto.sign(rlp.encode(contract), owner_key.private_key).data
    )
    tx = Transaction(
        kind=KIND_CONTRACT,
        sender=owner_key.actor_id,
        recipient=recipient,
        cost=engine.gas_of_deployment(contract, schedule).gas_used,
        nonce=nonce,
        payload=rlp.encode(payload),
        signature=b""
    )
    return sign_transaction(tx, owner_key.private_key)


def build_registration_tx(
    user: RegisteredUser,
    user_public_key: bytes,
    owner_key: crypto.KeyPair,
    recipient: str,
    nonce: int,
    schedule: Optional[GasSchedule] = None
) -> Transaction:
    """ Tx_UR = {ID_DO, ID_BDM, cost_UR, Sign(U_pro, PR_DO)} """
    profile = UserProfile(
        user_id=user.user_id,
        user_type=user.user_type,
        roles=sorted(user.roles),
        public_key=user_public_key
    )
    payload = RegistrationPayload(
        profile=profile,
        owner_signature=crypto.sign(rlp.encode(profile), owner_key.private_key).data
    )
    tx = Transaction(
        kind=KIND_REGISTRATION,
        sender=owner_key.actor_id,
        recipient=recipient,
        cost=engine.gas_of_registration(len(user.roles), schedule),
        nonce=nonce,
        payload=rlp.encode(payload),
        signature=b""
    )
    return sign_transaction(tx, owner_key.private_key)


def build_validation_tx(
    contract_id: str,
    request: AccessRequest,
    claimed_roles: Iterable[str],
    acm_key: crypto.KeyPair,
    recipient: str,
    nonce: int,
    schedule: Optional[GasSchedule] = None
) -> Transaction:
    """ Tx_V = {ID_ACM, ID_BAM, cost_V, ID_SC, Sign(p.role, PR_ACM)} """
    claim = RoleClaim(user_id=request.user_id, roles=sorted(claimed_roles))
    payload = ValidationPayload(
        contract_id=contract_id,
        claim=claim,
        params=[
            AttributeEntry(name=name, value=AttributeValue.wrap(value))
            for name, value in request.params
        ],
        acm_signature=crypto.sign(rlp.encode(claim), acm_key.private_key).data
    )
    tx = Transaction(
        kind=KIND_VALIDATION,
        sender=acm_key.actor_id,
        recipient=recipient,
        cost=engine.validation_gas(request.q, schedule=schedule),
        nonce=nonce,
        payload=rlp.encode(payload),
        signature=b""
    )
    return sign_transaction(tx, acm_key.private_key)


def build_record_tx(
    record: DataRecord,
    owner_key: crypto.KeyPair,
    recipient: str,
    nonce: int,
    schedule: Optional[GasSchedule] = None
) -> Transaction:
    payload = rlp.encode(record.body())
    tx = Transaction(
        kind=KIND_RECORD,
        sender=owner_key.actor_id,
        recipient=recipient,
        cost=engine.gas_of_record(len(payload), schedule),
        nonce=nonce,
        payload=payload,
        signature=b""
    )
    return sign_transaction(tx, owner_key.private_key)


def ingest_records(
    chain: "Chain",
    records: Iterable[DataRecord],
    owner_key: crypto.KeyPair,
    recipient: Optional[str] = None
) -> List[int]:
    """ Appends each record through its own owner-signed record transaction

    Args:
        chain (Chain): Chain the records are mined into
        records (iterable(DataRecord)): Catalog-consistent records
        owner_key (KeyPair): Data owner's keys
        recipient (str): ActorId of the receiving BDM; defaults to the
            first BDM of the chain's authority directory
    Returns:
        Heights of the blocks carrying the records (list(int))
    Raises:
        SchemaError: if a record violates the deployed catalog
        TransactionRejected: if the ledger rejects a record transaction
    """
    catalog = chain.state.catalog()
    recipient = recipient or chain.state.first_of(ROLE_BDM)
    heights = []
    for record in records:
        if catalog is None:
            raise SchemaError("No contract deployed, so there is no attribute catalog")
        check_schema(record, catalog)
        tx = build_record_tx(
            record=record,
            owner_key=owner_key,
            recipient=recipient,
            nonce=chain.state.next_nonce(owner_key.actor_id),
            schedule=chain.schedule
        )
        heights.append(chain.mine(tx).height)

    _logger.info("records.ingested", count=len(heights), owner=owner_key.actor_id)
    return heights

################
# Verification #
################

def _check_block(block: Block, height: int, prev_hash: bytes, state: ChainState) -> str:
    """ Returns what is wrong with a block at `height`, "" if nothing """
    if block.height != height:
        return f"height {block.height} where {height} was expected"
    if block.prev_hash != prev_hash:
        return "prev_hash does not link to the preceding block"
    if len(block.transactions) != 1:
        return "auto-mine blocks carry exactly one transaction"
    if block.tx_root != tx_root_of(block.transactions):
        return "tx_root mismatch"
    if block.block_hash != header_hash(block):
        return "block_hash mismatch"
    if height == 0 and (block.timestamp != GENESIS_TIMESTAMP or block.prev_hash != ZERO_HASH):
        return "malformed genesis header"
    if height > 0 and block.producer != state.first_of(ROLE_BAM):
        return "block not produced by the BAM"

    verdict = state.check(block.transactions[0])
    if not verdict:
        return f"{verdict.reason.value}: {verdict.detail}"
    if height == 0:
        genesis_bam = next(
            a.actor_id for a in decode_payload(block.transactions[0]).authorities
            if a.role == ROLE_BAM
        )
        if block.producer != genesis_bam:
            return "genesis not produced by the BAM it names"
    return ""


def verify_blocks(blocks: Sequence[Block], schedule: Optional[GasSchedule] = None) -> ChainCheck:
    """ Replays blocks from genesis into a fresh state, re-checking every
        hash link, tx_root, signature, authority, nonce and payload

    Args:
        blocks (list(Block)): Blocks from genesis upwards
        schedule (GasSchedule): Gas schedule the chain was built with
    Returns:
        ChainCheck naming the first corrupt height, if any
    """
    state = ChainState(schedule=schedule or engine.default_schedule())
    prev_hash = ZERO_HASH
    for height, block in enumerate(blocks):
        try:
            problem = _check_block(block, height, prev_hash, state)
        except (RLPException, ChainFormatError, TransactionRejected, ValueError, TypeError) as error:
            problem = str(error) or type(error).__name__
        if problem:
            return ChainCheck(height, problem)
        for tx in block.transactions:
            state.apply(tx, height)
        prev_hash = block.block_hash
    return ChainCheck()


def verify_chain(chain: Chain) -> ChainCheck:
    """ Total verification of a chain held in memory """
    return verify_blocks(chain.blocks, chain.schedule)


def verify_encoded(blobs: Sequence[bytes], schedule: Optional[GasSchedule] = None) -> ChainCheck:
    """ Verifies raw block encodings; an undecodable or non-canonical blob
        is reported at its own height
    """
    blocks = []
    for height, blob in enumerate(blobs):
        try:
            block = rlp.decode(blob, Block)
        except (RLPException, ValueError, TypeError) as error:
            return ChainCheck(height, f"undecodable block ({type(error).__name__})")
        if rlp.encode(block) != blob:
            return ChainCheck(height, "non-canonical encoding")
        blocks.append(block)
    return verify_blocks(blocks, schedule)

###############
# Persistence #
###############

def encode_blocks(chain: Chain) -> List[bytes]:
    return [rlp.encode(block) for block in chain.blocks]


def _frame(blob: bytes) -> bytes:
    return len(blob).to_bytes(LENGTH_PREFIX, "big") + blob


def save_chain(chain: Chain, path: str) -> None:
    with open(path, "wb") as chain_file:
        for blob in encode_blocks(chain):
            chain_file.write(_frame(blob))
    _logger.info("chain.saved", path=path, height=chain.height)


def append_block_file(path: str, block: Block) -> None:
    with open(path, "ab") as chain_file:
        chain_file.write(_frame(rlp.encode(block)))


def read_block_blobs(path: str) -> List[bytes]:
    """ Splits a chain file into raw block encodings

    Raises:
        ChainFormatError: if the file is truncated
    """
    with open(path, "rb") as chain_file:
        content = chain_file.read()

    blobs, offset = [], 0
    while offset < len(content):
        if offset + LENGTH_PREFIX > len(content):
            raise ChainFormatError(f"Truncated length prefix at byte {offset}")
        size = int.from_bytes(content[offset:offset + LENGTH_PREFIX], "big")
        offset += LENGTH_PREFIX
        if offset + size > len(content):
            raise ChainFormatError(f"Truncated block {len(blobs)} at byte {offset}")
        blobs.append(content[offset:offset + size])
        offset += size
    return blobs


def load_chain(path: str, schedule: Optional[GasSchedule] = None) -> Chain:
    """ Loads and fully verifies a persisted chain

    Raises:
        ChainFormatError: if the file is truncated or fails verification
    """
    blobs = read_block_blobs(path)
    check = verify_encoded(blobs, schedule)
    if not check:
        raise ChainFormatError(f"{path}: corrupt at height {check.height} ({check.detail})")
    chain = Chain(schedule=schedule)
    for blob in blobs:
        chain._extend(rlp.decode(blob, Block))
    return chain


def describe_transaction(tx: Transaction) -> Dict:
    entry = {
        'tx_id': tx.tx_id,
        'kind': tx.kind,
        'sender': tx.sender,
        'recipient': tx.recipient,
        'cost': tx.cost,
        'nonce': tx.nonce,
        'signature': tx.signature.hex()
    }
    try:
        payload = decode_payload(tx)
    except TransactionRejected:
        entry['payload'] = tx.payload.hex()
        return entry

    if tx.kind == KIND_GENESIS:
        entry['authorities'] = [
            {'role': a.role, 'actor_id': a.actor_id, 'public_key': a.public_key.hex()}
            for a in payload.authorities
        ]
    elif tx.kind == KIND_CONTRACT:
        entry['contract'] = engine.describe(payload.contract)
    elif tx.kind == KIND_REGISTRATION:
        entry['user'] = {
            'user_id': payload.profile.user_id,
            'user_type': payload.profile.user_type,
            'roles': list(payload.profile.roles)
        }
    elif tx.kind == KIND_VALIDATION:
        entry['validation'] = {
            'contract_id': payload.contract_id,
            'user_id': payload.claim.user_id,
            'roles': list(payload.claim.roles),
            'params': decode_attributes(payload.params)
        }
    elif tx.kind == KIND_RECORD:
        entry['record'] = {
            'record_id': payload.record_id,
            'attributes': decode_attributes(payload.attributes)
        }
    return entry


def export_json(chain: Chain) -> List[Dict]:
    """ Human-readable dump of every block """
    return [
        {
            'height': block.height,
            'block_hash': block.block_hash.hex(),
            'prev_hash': block.prev_hash.hex(),
            'tx_root': block.tx_root.hex(),
            'timestamp': block.timestamp,
            'producer': block.producer,
            'transactions': [describe_transaction(tx) for tx in block.transactions]
        }
        for block in chain.blocks
    ]

###############
# Replication #
###############

def _common_prefix(source: Chain, target: Chain) -> int:
    shared = 0
    for ours, theirs in zip(source.blocks, target.blocks):
        if ours.block_hash != theirs.block_hash:
            break
        shared += 1
    return shared


def _sync(source: Chain, target: Chain) -> Chain:
    shared = _common_prefix(source, target)
    if shared < len(target.blocks):
        if len(target.blocks) > len(source.blocks) and verify_chain(target):
            _logger.warning(
                "replica.divergent_kept",
                source_height=source.height,
                target_height=target.height
            )
            return target
        target.reset()
        shared = 0

    # The source has been verified, so its blocks are folded as they are
    for block in source.blocks[shared:]:
        target._extend(block)
    return target


def replicate(source: Chain, target: Chain) -> Chain:
    """ Brings `target` in line with a verified `source`

    Args:
        source (Chain): Chain to copy from
        target (Chain): Possibly empty prefix (or divergent copy) of source
    Returns:
        The synced target (Chain)
    Raises:
        SyncRefused: if the source fails verification
    """
    return replicate_all(source, [target])[0]


def replicate_all(source: Chain, targets: Iterable[Chain]) -> List[Chain]:
    """ Verifies the source once, then syncs every target from it """
    check = verify_chain(source)
    if not check:
        _logger.warning("sync.refused", height=check.height, detail=check.detail)
        raise SyncRefused(check.height)

    synced = [_sync(source, target) for target in targets]
    _logger.info("chain.replicated", height=source.height, targets=len(synced))
    return synced




def receive_blocks(target: Chain, blobs: Sequence[bytes]) -> Chain:
    """ Appends encoded blocks shipped by another node. Every block is
        decoded and checked against the target's own state before it is
        folded in, so nothing of the sender is trusted.

    Args:
        target (Chain): Prefix of the sender's chain, possibly empty
        blobs (list(bytes)): The sender's full block encodings
    Returns:
        The extended target (Chain)
    Raises:
        ChainFormatError: on an undecodable, broken or misplaced block
        TransactionRejected: if a shipped transaction is invalid here
    """
    for height, blob in enumerate(blobs[len(target.blocks):], start=len(target.blocks)):
        try:
            block = rlp.decode(blob, Block)
        except (RLPException, ValueError, TypeError) as error:
            raise ChainFormatError(f"Block {height} undecodable ({type(error).__name__})")
        target.append_block(block)
    return target
