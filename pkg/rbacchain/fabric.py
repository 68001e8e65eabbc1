#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import asyncio
import json
import random
import secrets
import uuid
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

# Libs
import rlp
from rlp.exceptions import RLPException
from rlp.sedes import CountableList, big_endian_int, binary, boolean, text

# Custom
from . import contract as engine
from . import crypto, datastore, ledger
from .abstract import AbstractNode
from .config import (
    BENCH_SEED,
    OP_VALIDATE_ROLE,
    REQUEST_TIMEOUT,
    ROLE_ACM,
    ROLE_BAM,
    ROLE_BDM,
    ROLE_CSP,
    ROLE_OWNER,
    ROLE_PEER,
    STAGE_TIMEOUT
)
from .contract import GasSchedule, SmartContract, ValidationOutcome
from .datastore import AttributeEntry, AttributeValue, DataRecord, QueryResult
from .errors import (
    QueryRefused,
    RbacChainError,
    RejectReason,
    TransactionRejected,
    ValidationTimeout,
    ValidationUntrusted
)
from .general import NodeLogger
from .rbac import AccessRequest, Denial, EffectiveRights, RbacModel, RegisteredUser, register_user

##################
# Configurations #
##################

ACCESS_REQUEST = "ACCESS_REQUEST"
ACCESS_GRANTED = "ACCESS_GRANTED"
ACCESS_DENIED = "ACCESS_DENIED"
ROLE_VALIDATION = "ROLE_VALIDATION"
VALIDATION_RESULT = "VALIDATION_RESULT"
SUBMIT_TX = "SUBMIT_TX"
TX_ACK = "TX_ACK"
QUERY_EXEC = "QUERY_EXEC"
QUERY_RESULT = "QUERY_RESULT"
QUERY_REFUSED = "QUERY_REFUSED"
SYNC = "SYNC"
SYNC_REQUEST = "SYNC_REQUEST"

STAGE_AUTHENTICATION = "authentication"
STAGE_VALIDATION = "validation"
STAGE_QUERY = "query"

CHALLENGE_LENGTH = 32

#####################
# Envelopes & Bodies #
#####################

class Envelope(rlp.Serializable):
    """ Signed unit of transfer between nodes. The signature covers the
        encoding with an empty signature field.
    """
    fields = [
        ('sender', text),
        ('recipient', text),
        ('kind', text),
        ('correlation', text),
        ('body', binary),
        ('signature', binary)
    ]

    def signing_bytes(self) -> bytes:
        return rlp.encode(self.copy(signature=b""))


class AccessRequestBody(rlp.Serializable):
    fields = [
        ('user_id', text),
        ('params', CountableList(AttributeEntry))
    ]

    @classmethod
    def of(cls, request: AccessRequest) -> "AccessRequestBody":
        return cls(
            user_id=request.user_id,
            params=[
                AttributeEntry(name=name, value=AttributeValue.wrap(value))
                for name, value in request.params
            ]
        )

    def request(self) -> AccessRequest:
        return AccessRequest(
            user_id=self.user_id,
            params=tuple((entry.name, entry.value.unwrap()) for entry in self.params)
        )


class ValidationResultBody(rlp.Serializable):
    """ BAM's answer to a Tx_V. `rejected` marks a ledger rejection, in
        which case `reason` carries the RejectReason value.
    """
    fields = [
        ('tx_id', text),
        ('height', big_endian_int),
        ('rejected', boolean),
        ('granted', boolean),
        ('mask', CountableList(boolean)),
        ('semantic', big_endian_int),
        ('reason', text),
        ('gas_used', big_endian_int),
        ('rights_signature', binary)
    ]


class QueryExecBody(rlp.Serializable):
    fields = [
        ('request', AccessRequestBody),
        ('mask', CountableList(boolean)),
        ('rights_signature', binary),
        ('height', big_endian_int),
        ('reply_to', text)
    ]


class TxAckBody(rlp.Serializable):
    fields = [
        ('tx_id', text),
        ('height', big_endian_int),
        ('accepted', boolean),
        ('reason', text),
        ('detail', text)
    ]


class DenialBody(rlp.Serializable):
    fields = [
        ('stage', text),
        ('reason', text)
    ]


class SyncRequestBody(rlp.Serializable):
    fields = [
        ('from_height', big_endian_int)
    ]

################
# Domain Types #
################

@dataclass(frozen=True)
class StageDenial:
    """ Structured refusal of an end-to-end request

    Attributes:
        stage (str): "authentication", "validation" or "query"
        reason (str): Human readable cause
    """
    stage: str
    reason: str

    granted = False


Response = Union[QueryResult, StageDenial]


@dataclass
class LatencyModel:
    """ Per-link delivery delay in milliseconds, either fixed (`low_ms`) or
        drawn uniformly from [low_ms, high_ms] with a seeded generator
    """
    kind: str = "fixed"
    low_ms: float = 0.0
    high_ms: float = 0.0
    seed: int = BENCH_SEED

    def __post_init__(self):
        if self.kind not in ("fixed", "uniform"):
            raise ValueError(f"Unknown latency model '{self.kind}'")
        self._random = random.Random(self.seed)

    def delay(self) -> float:
        """ Next delay, in seconds """
        if self.kind == "uniform":
            return self._random.uniform(self.low_ms, self.high_ms) / 1000
        return self.low_ms / 1000

    @classmethod
    def from_dict(cls, entry: Dict) -> "LatencyModel":
        return cls(
            kind=entry.get('kind', "fixed"),
            low_ms=float(entry.get('low_ms', 0.0)),
            high_ms=float(entry.get('high_ms', entry.get('low_ms', 0.0))),
            seed=int(entry.get('seed', BENCH_SEED))
        )

    @classmethod
    def parse(cls, text: str, seed: int = BENCH_SEED) -> "LatencyModel":
        """ Reads "fixed:<ms>" or "uniform:<low_ms>:<high_ms>"

        Raises:
            ValueError: on any other shape, a negative delay or low > high
        """
        kind, _, bounds = text.strip().partition(":")
        values = [float(value) for value in bounds.split(":")] if bounds else []
        if (kind, len(values)) not in (("fixed", 1), ("uniform", 2)):
            raise ValueError(f"Latency '{text}' is neither fixed:<ms> nor uniform:<low_ms>:<high_ms>")
        if min(values) < 0 or values[0] > values[-1]:
            raise ValueError(f"Latency '{text}' needs non-negative bounds with low <= high")
        return cls(kind=kind, low_ms=values[0], high_ms=values[-1], seed=seed)

#######################################
# Organisation Core Class - Network #
#######################################

class Network:
    """ In-process transport carrying fully serialised envelopes. Delivery
        is FIFO per (sender, recipient) link.

    Attributes:
        latency (LatencyModel): Delay applied to every envelope
        disabled (set(str)): ActorIds whose traffic is silently dropped
        tamper (callable): Test hook `(Envelope, bytes) -> bytes` that may
            rewrite an envelope in flight
    """
    def __init__(self, latency: Optional[LatencyModel] = None):
        self.latency = latency or LatencyModel()
        self.nodes: Dict[str, "Node"] = {}
        self.disabled = set()
        self.tamper: Optional[Callable[[Envelope, bytes], bytes]] = None
        self._links: Dict[Tuple[str, str], asyncio.Queue] = {}
        self._pumps: List[asyncio.Task] = []
        self._last_delivery: Dict[Tuple[str, str], float] = {}

    def register(self, node: "Node") -> None:
        self.nodes[node.actor_id] = node

    def disable(self, actor_id: str) -> None:
        self.disabled.add(actor_id)

    def enable(self, actor_id: str) -> None:
        self.disabled.discard(actor_id)


    def send(self, envelope: Envelope) -> None:
        data = rlp.encode(envelope)
        if self.tamper is not None:
            data = self.tamper(envelope, data)

        link = (envelope.sender, envelope.recipient)
        if link not in self._links:
            self._links[link] = asyncio.Queue()
            self._pumps.append(asyncio.create_task(self._pump(link)))

        loop = asyncio.get_running_loop()
        deliver_at = max(loop.time() + self.latency.delay(), self._last_delivery.get(link, 0.0))
        self._last_delivery[link] = deliver_at
        self._links[link].put_nowait((deliver_at, data))


    async def _pump(self, link: Tuple[str, str]) -> None:
        loop = asyncio.get_running_loop()
        queue = self._links[link]
        sender, recipient = link
        while True:
            deliver_at, data = await queue.get()
            wait = deliver_at - loop.time()
            if wait > 0:
                await asyncio.sleep(wait)
            node = self.nodes.get(recipient)
            if node is None or recipient in self.disabled or sender in self.disabled:
                continue
            node.deliver(data)


    async def close(self) -> None:
        for pump in self._pumps:
            pump.cancel()
        await asyncio.gather(*self._pumps, return_exceptions=True)
        self._pumps.clear()
        self._links.clear()
        self._last_delivery.clear()

########################################
# Organisation Base Class - Node #
########################################

class Node(AbstractNode):
    """ An actor holding a replica of the shared chain. Envelopes arrive in
        a serial inbox; kinds listed in `SERIAL_KINDS` are handled in
        arrival order, every other kind in its own task.

    Attributes:
        role (str): One of config.NODE_ROLES
        name (str): Human readable node name e.g. "bdm_1"
        key_pair (KeyPair): Node identity
        network (Network): Transport the node is registered on
        chain (Chain): Local replica
    """
    role = ROLE_PEER
    SERIAL_KINDS = {SYNC, SYNC_REQUEST}

    def __init__(
        self,
        name: str,
        key_pair: crypto.KeyPair,
        network: Network,
        chain: ledger.Chain,
        logging_variant: str = "basic"
    ):
        self.name = name
        self.key_pair = key_pair
        self.network = network
        self.chain = chain
        self.inbox: Optional[asyncio.Queue] = None
        self._loop_task: Optional[asyncio.Task] = None
        self._tasks = set()
        self._pending: Dict[str, asyncio.Future] = {}
        self._height_changed: Optional[asyncio.Condition] = None
        self._logger = NodeLogger(
            role=self.role,
            logger_name=name,
            actor_id=key_pair.actor_id,
            logging_variant=logging_variant
        ).initialise()
        network.register(self)

    @property
    def actor_id(self) -> str:
        return self.key_pair.actor_id

    @property
    def bam_id(self) -> str:
        return self.chain.state.first_of(ROLE_BAM)

    ###########
    # Helpers #
    ###########

    def deliver(self, data: bytes) -> None:
        if self.inbox is not None:
            self.inbox.put_nowait(data)


    def send(self, recipient: str, kind: str, body: bytes, correlation: str = "") -> None:
        envelope = Envelope(
            sender=self.actor_id,
            recipient=recipient,
            kind=kind,
            correlation=correlation,
            body=body,
            signature=b""
        )
        signature = crypto.sign(envelope.signing_bytes(), self.key_pair.private_key)
        self.network.send(envelope.copy(signature=signature.data))


    def _open(self, data: bytes) -> Optional[Envelope]:
        """ Decodes and authenticates an incoming envelope; None if it
            should be dropped
        """
        try:
            envelope = rlp.decode(data, Envelope)
        except (RLPException, ValueError, TypeError):
            self._logger.warning("envelope.dropped", reason="undecodable")
            return None

        public_key = self.chain.state.key_of(envelope.sender)
        if (
            envelope.recipient != self.actor_id or
            public_key is None or
            not crypto.verify(envelope.signing_bytes(), envelope.signature, public_key)
        ):
            self._logger.warning(
                "envelope.dropped",
                reason="unverifiable",
                kind=envelope.kind,
                sender=envelope.sender
            )
            return None
        return envelope


    def _expect(self, correlation: str) -> asyncio.Future:
        future = asyncio.get_running_loop().create_future()
        self._pending[correlation] = future
        return future


    def _resolve(self, correlation: str, value) -> None:
        future = self._pending.pop(correlation, None)
        if future is not None and not future.done():
            future.set_result(value)


    async def wait_for_height(self, height: int, timeout: float = STAGE_TIMEOUT) -> None:
        """ Blocks until the local replica holds `height`

        Raises:
            asyncio.TimeoutError: if the block does not arrive in time
        """
        async def reached():
            async with self._height_changed:
                await self._height_changed.wait_for(lambda: self.chain.height >= height)
        await asyncio.wait_for(reached(), timeout)


    async def _notify_height(self) -> None:
        async with self._height_changed:
            self._height_changed.notify_all()

    ##################
    # Core Functions #
    ##################

    async def start(self) -> None:
        self.inbox = asyncio.Queue()
        self._height_changed = asyncio.Condition()
        self._loop_task = asyncio.create_task(self._run())
        self._logger.info("node.started", name=self.name, height=self.chain.height)


    async def stop(self) -> None:
        tasks = [self._loop_task, *self._tasks] if self._loop_task else list(self._tasks)
        for task in tasks:
            task.cancel()
        await asyncio.gather(*tasks, return_exceptions=True)
        self._tasks.clear()
        self._loop_task = None
        self._logger.info("node.stopped", name=self.name, height=self.chain.height)


    async def _run(self) -> None:
        while True:
            data = await self.inbox.get()
            envelope = self._open(data)
            if envelope is None:
                continue
            if envelope.kind in self.SERIAL_KINDS:
                await self._dispatch(envelope)
            else:
                task = asyncio.create_task(self._dispatch(envelope))
                self._tasks.add(task)
                task.add_done_callback(self._tasks.discard)


    async def _dispatch(self, envelope: Envelope) -> None:
        try:
            await self.handle(envelope)
        except asyncio.CancelledError:
            raise
        except (RbacChainError, RLPException, ValueError) as error:
            self._logger.warning(
                "envelope.failed",
                kind=envelope.kind,
                sender=envelope.sender,
                error=str(error)
            )


    async def handle(self, envelope: Envelope) -> None:
        if envelope.kind == SYNC:
            await self._on_sync(envelope)
        else:
            self._logger.debug("envelope.ignored", kind=envelope.kind)


    async def _on_sync(self, envelope: Envelope) -> None:
        block = rlp.decode(envelope.body, ledger.Block)
        if block.height <= self.chain.height:
            return
        if block.height > self.chain.height + 1:
            self.send(
                self.bam_id,
                SYNC_REQUEST,
                rlp.encode(SyncRequestBody(from_height=self.chain.height + 1))
            )
            return
        self.chain.append_block(block)
        self._logger.debug("block.synced", height=block.height)
        await self._notify_height()

#################################
# Organisation Core Class - BAM #
#################################

class BAMNode(Node):
    """ Blockchain authentication manager: the single block producer. Its
        inbox is strictly serial, so blocks follow arrival order.
    """
    role = ROLE_BAM
    SERIAL_KINDS = {SYNC, SYNC_REQUEST, ROLE_VALIDATION, SUBMIT_TX}

    def broadcast(self, block: ledger.Block) -> None:
        body = rlp.encode(block)
        for actor_id in self.network.nodes:
            if actor_id != self.actor_id:
                self.send(actor_id, SYNC, body)


    def process_tx(self, tx: ledger.Transaction) -> Tuple[ledger.Block, Optional[ValidationOutcome]]:
        """ Mines a submitted transaction; Tx_V additionally runs
            execute_validation against the referenced contract. The block is
            on chain before anything is returned.

        Args:
            tx (Transaction): Tx_SC, Tx_UR, Tx_V or record transaction
        Returns:
            block (Block)
            outcome (ValidationOutcome): Signed outcome for Tx_V, else None
        Raises:
            TransactionRejected: on any ledger rejection
        """
        block = self.chain.mine(tx)
        outcome = None
        if tx.kind == ledger.KIND_VALIDATION:
            payload = ledger.decode_payload(tx)
            outcome = engine.execute_validation(
                self.chain.state.contract(payload.contract_id),
                self.chain.state.users.get(payload.claim.user_id),
                payload.request(),
                self.key_pair.private_key,
                claimed_roles=payload.claim.roles,
                schedule=self.chain.schedule
            )
        self._logger.info("tx.processed", tx_kind=tx.kind, height=block.height, cost=tx.cost)
        return block, outcome


    async def handle(self, envelope: Envelope) -> None:
        if envelope.kind == ROLE_VALIDATION:
            await self._on_validation(envelope)
        elif envelope.kind == SUBMIT_TX:
            await self._on_submit(envelope)
        elif envelope.kind == SYNC_REQUEST:
            start = rlp.decode(envelope.body, SyncRequestBody).from_height
            for block in self.chain.blocks[start:]:
                self.send(envelope.sender, SYNC, rlp.encode(block))
        else:
            await super().handle(envelope)


    async def _on_validation(self, envelope: Envelope) -> None:
        tx = rlp.decode(envelope.body, ledger.Transaction)
        try:
            block, outcome = self.process_tx(tx)
        except TransactionRejected as rejection:
            body = ValidationResultBody(
                tx_id=tx.tx_id, height=0, rejected=True, granted=False, mask=[],
                semantic=0, reason=rejection.reason.value, gas_used=0, rights_signature=b""
            )
            self.send(envelope.sender, VALIDATION_RESULT, rlp.encode(body), envelope.correlation)
            return

        self.broadcast(block)
        granted = outcome.rights is not None
        body = ValidationResultBody(
            tx_id=tx.tx_id,
            height=block.height,
            rejected=False,
            granted=granted,
            mask=list(outcome.rights.mask) if granted else [],
            semantic=0 if granted else outcome.denial.semantic,
            reason="" if granted else outcome.denial.reason,
            gas_used=outcome.gas.gas_used,
            rights_signature=outcome.signed_rights.data if granted else b""
        )
        self.send(envelope.sender, VALIDATION_RESULT, rlp.encode(body), envelope.correlation)


    async def _on_submit(self, envelope: Envelope) -> None:
        tx = rlp.decode(envelope.body, ledger.Transaction)
        try:
            block, _ = self.process_tx(tx)
        except TransactionRejected as rejection:
            ack = TxAckBody(
                tx_id=tx.tx_id, height=0, accepted=False,
                reason=rejection.reason.value, detail=rejection.detail
            )
        else:
            self.broadcast(block)
            ack = TxAckBody(tx_id=tx.tx_id, height=block.height, accepted=True, reason="", detail="")
        self.send(envelope.sender, TX_ACK, rlp.encode(ack), envelope.correlation)

#################################
# Organisation Core Class - ACM #
#################################

class ACMNode(Node):
    """ Access control manager: turns access requests into Tx_V and only
        trusts rights that carry BAM's signature.

        Nonces are handed out locally. Once a Tx_V times out or is rejected
        the local counter is stale; no new nonce is issued until every Tx_V
        in flight has been answered and the replica holds every block the
        BAM reported, after which the counter is re-read from the replica.
    """
    role = ROLE_ACM

    def __init__(self, *args, stage_timeout: float = STAGE_TIMEOUT, **kwargs):
        super().__init__(*args, **kwargs)
        self.stage_timeout = stage_timeout
        self._nonce = self.chain.state.nonces.get(self.actor_id, 0)
        self._in_flight = 0
        self._stale_nonce = False
        self._accepted_height = self.chain.height
        self._drained: Optional[asyncio.Event] = None

    async def start(self) -> None:
        self._drained = asyncio.Event()
        self._drained.set()
        await super().start()


    def resync_nonce(self) -> None:
        self._nonce = self.chain.state.nonces.get(self.actor_id, 0)
        self._logger.info("nonce.resynced", nonce=self._nonce)


    async def _next_nonce(self) -> int:
        while self._stale_nonce:
            await self._drained.wait()
            try:
                await self.wait_for_height(self._accepted_height, self.stage_timeout)
            except asyncio.TimeoutError:
                self._logger.warning("nonce.replica_lagging", height=self._accepted_height)
            # Another waiter may have resynced while this one was waiting
            if self._stale_nonce and self._in_flight == 0:
                self.resync_nonce()
                self._stale_nonce = False

        self._nonce += 1
        self._in_flight += 1
        self._drained.clear()
        return self._nonce


    def _settle_nonce(self, consumed: bool) -> None:
        if not consumed:
            self._stale_nonce = True
        self._in_flight -= 1
        if self._in_flight == 0:
            self._drained.set()


    def _note_result(self, body: ValidationResultBody) -> None:
        if not body.rejected:
            self._accepted_height = max(self._accepted_height, body.height)


    def outcome_from(self, request: AccessRequest, contract_id: str, body: ValidationResultBody) -> ValidationOutcome:
        """ Rebuilds BAM's outcome, refusing rights BAM did not sign

        Raises:
            ValidationUntrusted: if granted rights fail BAM's signature
        """
        gas = engine.GasReceipt(gas_used=body.gas_used, op=OP_VALIDATE_ROLE, contract_id=contract_id)
        if not body.granted:
            return ValidationOutcome(
                user_id=request.user_id,
                rights=None,
                signed_rights=None,
                gas=gas,
                denial=Denial(body.semantic, body.reason)
            )

        rights = EffectiveRights(mask=tuple(body.mask))
        signature = crypto.Signature(data=body.rights_signature, signer=self.bam_id)
        bam_key = self.chain.state.key_of(self.bam_id)
        if not engine.verify_rights(request.user_id, rights, signature, bam_key):
            raise ValidationUntrusted(f"Rights for {request.user_id} are not signed by the BAM")
        return ValidationOutcome(
            user_id=request.user_id,
            rights=rights,
            signed_rights=signature,
            gas=gas
        )


    async def validate_role(self, request: AccessRequest) -> Tuple[ValidationOutcome, int]:
        """ Submits Tx_V for the request and awaits BAM's verdict

        Args:
            request (AccessRequest): req(p, param) forwarded by the CSP
        Returns:
            outcome (ValidationOutcome): rights are None (NULL) on denial
            height (int): Height of the block recording the validation
        Raises:
            ValidationTimeout: if BAM does not answer within stage_timeout
            ValidationUntrusted: if granted rights are not BAM-signed
            TransactionRejected: if the ledger rejected the Tx_V
        """
        state = self.chain.state
        if state.latest_contract is None:
            raise TransactionRejected(RejectReason.UNKNOWN_CONTRACT, "No contract deployed yet")
        user = state.users.get(request.user_id)

        nonce = await self._next_nonce()
        consumed = False
        try:
            tx = ledger.build_validation_tx(
                contract_id=state.latest_contract,
                request=request,
                claimed_roles=user.roles if user else [],
                acm_key=self.key_pair,
                recipient=self.bam_id,
                nonce=nonce,
                schedule=self.chain.schedule
            )
            correlation = uuid.uuid4().hex
            future = self._expect(correlation)
            self.send(self.bam_id, ROLE_VALIDATION, rlp.encode(tx), correlation)

            try:
                body = await asyncio.wait_for(future, self.stage_timeout)
            except asyncio.TimeoutError as error:
                self._pending.pop(correlation, None)
                raise ValidationTimeout(f"BAM did not answer within {self.stage_timeout}s") from error

            if body.rejected:
                raise TransactionRejected(RejectReason(body.reason), "Tx_V rejected by the BAM")
            consumed = True
        finally:
            self._settle_nonce(consumed)
        return self.outcome_from(request, tx_contract_id(tx), body), body.height


    async def handle(self, envelope: Envelope) -> None:
        if envelope.kind == ACCESS_REQUEST:
            await self._on_access_request(envelope)
        elif envelope.kind == VALIDATION_RESULT:
            body = rlp.decode(envelope.body, ValidationResultBody)
            self._note_result(body)
            self._resolve(envelope.correlation, body)
        else:
            await super().handle(envelope)


    async def _on_access_request(self, envelope: Envelope) -> None:
        request_body = rlp.decode(envelope.body, AccessRequestBody)
        request = request_body.request()

        def deny(reason: str) -> None:
            self._logger.info("access.denied", user_id=request.user_id, reason=reason)
            body = DenialBody(stage=STAGE_VALIDATION, reason=reason)
            self.send(envelope.sender, ACCESS_DENIED, rlp.encode(body), envelope.correlation)

        try:
            outcome, height = await self.validate_role(request)
        except (ValidationTimeout, ValidationUntrusted, TransactionRejected) as error:
            return deny(f"{type(error).__name__}: {error}")

        if outcome.rights is None:
            return deny(outcome.denial.reason)

        self._logger.info("access.granted", user_id=request.user_id, height=height)
        self.send(envelope.sender, ACCESS_GRANTED, b"", envelope.correlation)
        query = QueryExecBody(
            request=request_body,
            mask=list(outcome.rights.mask),
            rights_signature=outcome.signed_rights.data,
            height=height,
            reply_to=envelope.sender
        )
        self.send(self.chain.state.first_of(ROLE_BDM), QUERY_EXEC, rlp.encode(query), envelope.correlation)


def tx_contract_id(tx: ledger.Transaction) -> str:
    return ledger.decode_payload(tx).contract_id

#################################
# Organisation Core Class - BDM #
#################################

class BDMNode(Node):
    """ Blockchain data manager: answers queries from its replica and relays
        data owner transactions to the BAM
    """
    role = ROLE_BDM

    def __init__(self, *args, stage_timeout: float = STAGE_TIMEOUT, **kwargs):
        super().__init__(*args, **kwargs)
        self.stage_timeout = stage_timeout

    def execute_query(
        self,
        request: AccessRequest,
        rights: EffectiveRights,
        rights_signature: crypto.Signature
    ) -> QueryResult:
        """ Evaluates the query over on-chain records, masks every record
            to the rights and signs the result

        Raises:
            QueryRefused: if the rights do not carry BAM's signature
        """
        bam_key = self.chain.state.key_of(self.bam_id)
        if not engine.verify_rights(request.user_id, rights, rights_signature, bam_key):
            raise QueryRefused(f"Rights for {request.user_id} are not signed by the BAM")

        catalog = self.chain.state.catalog()
        result = datastore.run_query(self.chain.state.records, catalog, request.params, rights)
        self._logger.debug("query.executed", user_id=request.user_id, matches=len(result.records))
        return datastore.sign_result(result, self.key_pair.private_key)


    async def handle(self, envelope: Envelope) -> None:
        if envelope.kind == QUERY_EXEC:
            await self._on_query(envelope)
        elif envelope.kind == SUBMIT_TX:
            await self._on_submit(envelope)
        elif envelope.kind == TX_ACK:
            self._resolve(envelope.correlation, rlp.decode(envelope.body, TxAckBody))
        else:
            await super().handle(envelope)


    async def _on_query(self, envelope: Envelope) -> None:
        body = rlp.decode(envelope.body, QueryExecBody)
        request = body.request.request()
        try:
            await self.wait_for_height(body.height, self.stage_timeout)
            result = self.execute_query(
                request,
                EffectiveRights(mask=tuple(body.mask)),
                crypto.Signature(data=body.rights_signature, signer=self.bam_id)
            )
        except (QueryRefused, asyncio.TimeoutError) as error:
            reason = str(error) or "validation block never arrived"
            self._logger.warning("query.refused", user_id=request.user_id, reason=reason)
            refusal = DenialBody(stage=STAGE_QUERY, reason=reason)
            self.send(body.reply_to, QUERY_REFUSED, rlp.encode(refusal), envelope.correlation)
            return
        self.send(body.reply_to, QUERY_RESULT, rlp.encode(result), envelope.correlation)


    async def _on_submit(self, envelope: Envelope) -> None:
        correlation = uuid.uuid4().hex
        future = self._expect(correlation)
        self.send(self.bam_id, SUBMIT_TX, envelope.body, correlation)
        try:
            ack = await asyncio.wait_for(future, self.stage_timeout)
            if ack.accepted:
                await self.wait_for_height(ack.height, self.stage_timeout)
        except asyncio.TimeoutError:
            self._pending.pop(correlation, None)
            return
        self.send(envelope.sender, TX_ACK, rlp.encode(ack), envelope.correlation)

#################################
# Organisation Core Class - CSP #
#################################

class CSPNode(Node):
    """ Cloud service provider: authenticates end users and relays their
        requests and results
    """
    role = ROLE_CSP

    def __init__(self, *args, request_timeout: float = REQUEST_TIMEOUT, **kwargs):
        super().__init__(*args, **kwargs)
        self.request_timeout = request_timeout
        self._granted = set()

    def authenticate(self, user_id: str, answer: Callable[[bytes], crypto.Signature]) -> bool:
        """ Challenge-response check against the user's registered key """
        public_key = self.chain.state.user_keys.get(user_id)
        if public_key is None:
            return False
        challenge = secrets.token_bytes(CHALLENGE_LENGTH)
        return crypto.verify(challenge, answer(challenge), public_key)


    async def handle_request(
        self,
        request: AccessRequest,
        answer: Callable[[bytes], crypto.Signature]
    ) -> Response:
        """ Runs a request through authentication, validation and query

        Args:
            request (AccessRequest): req(p, param)
            answer (callable): The end user's challenge signer
        Returns:
            BDM-signed QueryResult, or the StageDenial of the failing stage
        """
        if not self.authenticate(request.user_id, answer):
            self._logger.info("request.unauthenticated", user_id=request.user_id)
            return StageDenial(STAGE_AUTHENTICATION, "Challenge response does not verify")

        correlation = uuid.uuid4().hex
        future = self._expect(correlation)
        self.send(
            self.chain.state.first_of(ROLE_ACM),
            ACCESS_REQUEST,
            rlp.encode(AccessRequestBody.of(request)),
            correlation
        )
        try:
            return await asyncio.wait_for(future, self.request_timeout)
        except asyncio.TimeoutError:
            self._pending.pop(correlation, None)
            stage = STAGE_QUERY if correlation in self._granted else STAGE_VALIDATION
            return StageDenial(stage, "Request timed out")
        finally:
            self._granted.discard(correlation)


    async def handle(self, envelope: Envelope) -> None:
        if envelope.kind == ACCESS_GRANTED:
            self._granted.add(envelope.correlation)
        elif envelope.kind in (ACCESS_DENIED, QUERY_REFUSED):
            denial = rlp.decode(envelope.body, DenialBody)
            self._resolve(envelope.correlation, StageDenial(denial.stage, denial.reason))
        elif envelope.kind == QUERY_RESULT:
            result = rlp.decode(envelope.body, QueryResult)
            public_key = self.chain.state.key_of(envelope.sender)
            if not datastore.verify_result(result, public_key):
                result = StageDenial(STAGE_QUERY, "Result signature does not verify")
            self._resolve(envelope.correlation, result)
        else:
            await super().handle(envelope)

####################################
# Organisation Core Class - Others #
####################################

class PeerNode(Node):
    """ Plain replica; only follows the chain """
    role = ROLE_PEER


class DataOwnerNode(Node):
    """ The data owner DO: deploys contracts through the BAM, and registers
        users and ingests records through the BDM
    """
    role = ROLE_OWNER

    def __init__(self, *args, stage_timeout: float = STAGE_TIMEOUT, **kwargs):
        super().__init__(*args, **kwargs)
        self.stage_timeout = stage_timeout

    async def handle(self, envelope: Envelope) -> None:
        if envelope.kind == TX_ACK:
            self._resolve(envelope.correlation, rlp.decode(envelope.body, TxAckBody))
        else:
            await super().handle(envelope)


    async def submit(self, tx: ledger.Transaction, recipient: str) -> TxAckBody:
        """ Sends a transaction and waits until the local replica holds it

        Raises:
            TransactionRejected: if the ledger rejects it
            ValidationTimeout: if no acknowledgement arrives in time
        """
        correlation = uuid.uuid4().hex
        future = self._expect(correlation)
        self.send(recipient, SUBMIT_TX, rlp.encode(tx), correlation)
        try:
            ack = await asyncio.wait_for(future, self.stage_timeout)
        except asyncio.TimeoutError as error:
            self._pending.pop(correlation, None)
            raise ValidationTimeout(f"No acknowledgement for {tx.kind}") from error
        if not ack.accepted:
            raise TransactionRejected(RejectReason(ack.reason), ack.detail)
        await self.wait_for_height(ack.height, self.stage_timeout)
        return ack


    async def deploy(self, model: RbacModel) -> SmartContract:
        version = len(self.chain.state.contracts) + 1
        contract = engine.compile_contract(model, owner=self.actor_id, version=version)
        tx = ledger.build_contract_tx(
            contract,
            self.key_pair,
            recipient=self.bam_id,
            nonce=self.chain.state.next_nonce(self.actor_id),
            schedule=self.chain.schedule
        )
        await self.submit(tx, self.bam_id)
        self._logger.info("contract.deployed", contract_id=contract.contract_id, version=version)
        return contract


    async def register(self, user: RegisteredUser, user_public_key: bytes) -> None:
        register_user(self.chain.state.model(), user.user_id, user.user_type, user.roles)
        bdm_id = self.chain.state.first_of(ROLE_BDM)
        tx = ledger.build_registration_tx(
            user,
            user_public_key,
            self.key_pair,
            recipient=bdm_id,
            nonce=self.chain.state.next_nonce(self.actor_id),
            schedule=self.chain.schedule
        )
        await self.submit(tx, bdm_id)
        self._logger.info("user.registered", user_id=user.user_id, user_type=user.user_type)


    async def ingest(self, records: Iterable[DataRecord]) -> List[int]:
        catalog = self.chain.state.catalog()
        bdm_id = self.chain.state.first_of(ROLE_BDM)
        heights = []
        for record in records:
            datastore.check_schema(record, catalog)
            tx = ledger.build_record_tx(
                record,
                self.key_pair,
                recipient=bdm_id,
                nonce=self.chain.state.next_nonce(self.actor_id),
                schedule=self.chain.schedule
            )
            heights.append((await self.submit(tx, bdm_id)).height)
        return heights

###########################################
# Organisation Core Class - Fabric #
###########################################

@dataclass
class FabricConfig:
    """ Deployment description of a fabric

    Attributes:
        bdms (int): Number of BDM nodes (>= 1)
        peers (int): Number of plain replicas (>= 0)
        latency (LatencyModel): Per-link delay model
        request_timeout (float): CSP deadline per request, in seconds
        stage_timeout (float): Deadline for a single stage, in seconds
        keyfiles (dict(str, str)): Optional node name -> keyfile path
        schedule (GasSchedule): Gas schedule; None for the packaged default
        logging_variant (str): Logging variant for every node
    """
    bdms: int = 1
    peers: int = 0
    latency: LatencyModel = field(default_factory=LatencyModel)
    request_timeout: float = REQUEST_TIMEOUT
    stage_timeout: float = STAGE_TIMEOUT
    keyfiles: Dict[str, str] = field(default_factory=dict)
    schedule: Optional[GasSchedule] = None
    logging_variant: str = "basic"

    def __post_init__(self):
        if self.bdms < 1 or self.peers < 0:
            raise ValueError("A fabric needs at least one BDM and a non-negative peer count")

    @classmethod
    def from_dict(cls, entry: Dict, schedule: Optional[GasSchedule] = None) -> "FabricConfig":
        nodes = entry.get('nodes', [])
        keyfiles = {node['name']: node['keyfile'] for node in nodes if node.get('keyfile')}
        roles = [node.get('role') for node in nodes]
        return cls(
            bdms=max(1, roles.count(ROLE_BDM)) if nodes else int(entry.get('bdms', 1)),
            peers=roles.count(ROLE_PEER) if nodes else int(entry.get('peers', 0)),
            latency=LatencyModel.from_dict(entry.get('latency', {})),
            request_timeout=float(entry.get('request_timeout', REQUEST_TIMEOUT)),
            stage_timeout=float(entry.get('stage_timeout', STAGE_TIMEOUT)),
            keyfiles=keyfiles,
            schedule=schedule,
            logging_variant=entry.get('logging_variant', "basic")
        )


class Fabric:
    """ Wires one CSP, ACM, BAM and data owner, `bdms` BDMs and `peers`
        replicas onto a shared network, all starting from the same genesis

    Attributes:
        config (FabricConfig): Deployment description
        network (Network): Shared transport
        nodes (dict(str, Node)): Nodes by name
    """
    def __init__(self, config: Optional[FabricConfig] = None):
        self.config = config or FabricConfig()
        self.network = Network(self.config.latency)

        layout = [("csp", ROLE_CSP, CSPNode), ("acm", ROLE_ACM, ACMNode), ("bam", ROLE_BAM, BAMNode)]
        layout += [(f"bdm_{i}", ROLE_BDM, BDMNode) for i in range(1, self.config.bdms + 1)]
        layout += [(f"peer_{i}", ROLE_PEER, PeerNode) for i in range(1, self.config.peers + 1)]
        layout += [("owner", ROLE_OWNER, DataOwnerNode)]

        keys = {name: self._key_for(name) for name, _, _ in layout}
        genesis = ledger.genesis_transaction(
            ledger.authority(role, keys[name]) for name, role, _ in layout
        )

        self.nodes: Dict[str, Node] = {}
        for name, _, node_class in layout:
            chain = ledger.Chain(schedule=self.config.schedule)
            chain.mine(genesis)
            options = {}
            if node_class is CSPNode:
                options['request_timeout'] = self.config.request_timeout
            elif node_class in (ACMNode, BDMNode, DataOwnerNode):
                options['stage_timeout'] = self.config.stage_timeout
            self.nodes[name] = node_class(
                name, keys[name], self.network, chain,
                logging_variant=self.config.logging_variant,
                **options
            )

    def _key_for(self, name: str) -> crypto.KeyPair:
        path = self.config.keyfiles.get(name)
        return crypto.load_keyfile(path)[1] if path else crypto.key_gen()

    ###########
    # Getters #
    ###########

    @property
    def csp(self) -> CSPNode:
        return self.nodes["csp"]

    @property
    def acm(self) -> ACMNode:
        return self.nodes["acm"]

    @property
    def bam(self) -> BAMNode:
        return self.nodes["bam"]

    @property
    def bdm(self) -> BDMNode:
        return self.nodes["bdm_1"]

    @property
    def owner(self) -> DataOwnerNode:
        return self.nodes["owner"]

    def chains(self) -> List[ledger.Chain]:
        return [node.chain for node in self.nodes.values()]

    ##################
    # Core Functions #
    ##################

    async def start(self) -> None:
        for node in self.nodes.values():
            await node.start()


    async def stop(self) -> None:
        for node in self.nodes.values():
            await node.stop()
        await self.network.close()


    async def settle(self) -> None:
        """ Waits until every running replica holds the BAM's tip """
        height = self.bam.chain.height
        await asyncio.gather(
            *(
                node.wait_for_height(height, self.config.stage_timeout)
                for node in self.nodes.values()
                if node.actor_id not in self.network.disabled
            )
        )


    async def deploy_policy(self, model: RbacModel) -> str:
        contract = await self.owner.deploy(model)
        await self.settle()
        return contract.contract_id


    async def register_user(
        self,
        user_type: str,
        roles: Iterable[str],
        key_pair: Optional[crypto.KeyPair] = None
    ) -> crypto.KeyPair:
        """ Registers a new end user; returns the user's key pair """
        key_pair = key_pair or crypto.key_gen()
        user = RegisteredUser(user_id=key_pair.actor_id, user_type=user_type, roles=frozenset(roles))
        await self.owner.register(user, key_pair.public_key)
        await self.settle()
        return key_pair


    async def ingest(self, records: Iterable[DataRecord]) -> List[int]:
        heights = await self.owner.ingest(records)
        await self.settle()
        return heights


    async def request(
        self,
        user_key: crypto.KeyPair,
        params: Sequence[Tuple[str, object]]
    ) -> Response:
        request = AccessRequest(user_id=user_key.actor_id, params=tuple(params))
        return await self.csp.handle_request(
            request,
            lambda challenge: crypto.sign(challenge, user_key.private_key)
        )

    @classmethod
    def from_config(cls, path: str, schedule: Optional[GasSchedule] = None) -> "Fabric":
        with open(path, "r", encoding="utf-8") as config_file:
            entry = json.load(config_file)
        return cls(FabricConfig.from_dict(entry, schedule))
