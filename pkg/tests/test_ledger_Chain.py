#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import random

# Libs
import pytest

# Custom
from conftest import SEED, counting_clock, random_records
from rbacchain import contract as engine
from rbacchain import crypto, datastore, ledger
from rbacchain.config import GENESIS_TIMESTAMP, ROLE_ACM, ROLE_OWNER, ZERO_HASH
from rbacchain.errors import RejectReason, TransactionRejected
from rbacchain.rbac import AccessRequest, RegisteredUser, SEMANTIC_ATTRIBUTES, SEMANTIC_ROLE, SEMANTIC_USER_TYPE

##################
# Configurations #
##################

NON_OWNERS = ("intruder", "bam", "acm", "bdm", "csp")

###########
# Helpers #
###########

def rejection_of(chain: ledger.Chain, tx: ledger.Transaction) -> RejectReason:
    """ Mines a transaction expected to fail and returns the rejection reason,
        checking that the chain did not move
    """
    height = chain.height
    with pytest.raises(TransactionRejected) as rejection:
        chain.mine(tx)
    assert chain.height == height
    return rejection.value.reason


def validation_tx(chain, actors, user_id, params, claimed_roles):
    acm = actors["acm"]
    return ledger.build_validation_tx(
        contract_id=chain.state.latest_contract,
        request=AccessRequest(user_id, params),
        claimed_roles=claimed_roles,
        acm_key=acm,
        recipient=actors["bam"].actor_id,
        nonce=chain.state.next_nonce(acm.actor_id)
    )


def grow_chain(chain: ledger.Chain, rng: random.Random, actors, steps: int, tag: str) -> None:
    """ Appends a random mix of registrations, records and validations """
    owner = actors["owner"]
    model = chain.state.model()
    registered = []
    records = iter(random_records(rng, steps))
    for _ in range(steps):
        action = rng.choice(("register", "record", "validate"))
        if action == "register" or (action == "validate" and not registered):
            user_key = crypto.key_gen()
            user_type = rng.choice(sorted(model.user_types))
            permitted = sorted(model.user_types[user_type].roles)
            roles = frozenset(role for role in permitted if rng.random() < 0.5)
            user = RegisteredUser(user_key.actor_id, user_type, roles)
            chain.mine(
                ledger.build_registration_tx(
                    user,
                    user_key.public_key,
                    owner,
                    recipient=actors["bdm"].actor_id,
                    nonce=chain.state.next_nonce(owner.actor_id)
                )
            )
            registered.append(user)
        elif action == "record":
            record = next(records)
            ledger.ingest_records(
                chain,
                [datastore.DataRecord(f"{tag}-{record.record_id}", record.attributes)],
                owner
            )
        else:
            user = rng.choice(registered)
            params = tuple(
                (att, 1) for att in model.catalog.attributes if rng.random() < 0.5
            ) or (("status", "ok"),)
            chain.mine(validation_tx(chain, actors, user.user_id, params, user.roles))

#################
# Tests - Chain #
#################

def test_Chain_genesis(genesis_chain, authorities, actors):
    """
    Tests the genesis block and its authority directory

    # C1: Genesis sits at height 0, links to the zero hash, pinned timestamp
    # C2: Genesis is produced by the BAM it names
    # C3: The directory resolves every authority's role
    # C4: A second genesis transaction is refused
    # C5: A genesis without a BAM is refused on an empty chain
    # C6: Any other kind on an empty chain is refused
    """
    genesis = genesis_chain.tip
    # C1
    assert genesis_chain.height == 0
    assert genesis.prev_hash == ZERO_HASH
    assert genesis.timestamp == GENESIS_TIMESTAMP
    # C2
    assert genesis.producer == actors["bam"].actor_id
    # C3
    assert genesis_chain.state.role_of(actors["owner"].actor_id) == ROLE_OWNER
    assert genesis_chain.state.role_of(actors["acm"].actor_id) == ROLE_ACM
    assert genesis_chain.state.role_of(actors["intruder"].actor_id) is None
    # C4
    assert rejection_of(
        genesis_chain, ledger.genesis_transaction(authorities)
    ) == RejectReason.MALFORMED_PAYLOAD
    # C5
    without_bam = [entry for entry in authorities if entry.actor_id != actors["bam"].actor_id]
    assert rejection_of(
        ledger.Chain(), ledger.genesis_transaction(without_bam)
    ) == RejectReason.MALFORMED_PAYLOAD
    # C6
    assert rejection_of(
        ledger.Chain(),
        ledger.build_record_tx(
            datastore.DataRecord("rec-0", {'status': "ok"}),
            actors["owner"],
            recipient=actors["bdm"].actor_id,
            nonce=1
        )
    ) == RejectReason.MALFORMED_PAYLOAD


def test_Chain_mine_links_blocks(populated_chain, factory_contract, actors):
    """
    Tests that auto-mining seals one transaction per hash-linked block

    # C1: Heights run 0..5 for genesis, contract, registration, 3 records
    # C2: Every block links to its predecessor's hash
    # C3: Timestamps come from the chain clock and strictly increase
    # C4: Every non-genesis block is produced by the BAM
    # C5: The deployed contract is the latest one in the state
    # C6: Owner nonces advanced once per accepted transaction
    """
    blocks = populated_chain.blocks
    # C1
    assert [block.height for block in blocks] == list(range(6))
    # C2
    assert all(later.prev_hash == earlier.block_hash for earlier, later in zip(blocks, blocks[1:]))
    # C3
    stamps = [block.timestamp for block in blocks[1:]]
    assert all(low < high for low, high in zip(stamps, stamps[1:]))
    # C4
    assert all(block.producer == actors["bam"].actor_id for block in blocks)
    # C5
    assert populated_chain.state.contract().contract_id == factory_contract.contract_id
    # C6
    assert populated_chain.state.next_nonce(actors["owner"].actor_id) == 6


def test_Chain_rejection_reasons(deployed_chain, actors):
    """
    Tests the structured rejection reasons of ledger validation

    # C1: A forged transaction signature is BadSignature
    # C2: A skipped nonce is BadNonce
    # C3: A replayed nonce is BadNonce
    # C4: A record addressed to the ACM is MalformedPayload
    # C5: A declared cost differing from the schedule is MalformedPayload
    # C6: An unknown transaction kind is MalformedPayload
    # C7: A validation against an undeployed contract is UnknownContract
    # C8: A record with an uncatalogued attribute is MalformedPayload
    """
    owner = actors["owner"]
    bdm_id = actors["bdm"].actor_id
    record = datastore.DataRecord("rec-9", {'status': "ok"})
    valid = ledger.build_record_tx(record, owner, recipient=bdm_id, nonce=2)
    # C1
    assert rejection_of(deployed_chain, valid.copy(signature=b"\x00" * 64)) == RejectReason.BAD_SIGNATURE
    # C2
    skipped = ledger.build_record_tx(record, owner, recipient=bdm_id, nonce=5)
    assert rejection_of(deployed_chain, skipped) == RejectReason.BAD_NONCE
    # C3
    replayed = ledger.build_record_tx(record, owner, recipient=bdm_id, nonce=1)
    assert rejection_of(deployed_chain, replayed) == RejectReason.BAD_NONCE
    # C4
    misrouted = ledger.build_record_tx(record, owner, recipient=actors["acm"].actor_id, nonce=2)
    assert rejection_of(deployed_chain, misrouted) == RejectReason.MALFORMED_PAYLOAD
    # C5
    underpaid = ledger.sign_transaction(valid.copy(cost=valid.cost - 1), owner.private_key)
    assert rejection_of(deployed_chain, underpaid) == RejectReason.MALFORMED_PAYLOAD
    # C6
    unknown = ledger.sign_transaction(valid.copy(kind="XX"), owner.private_key)
    assert rejection_of(deployed_chain, unknown) == RejectReason.MALFORMED_PAYLOAD
    # C7
    orphan = ledger.build_validation_tx(
        contract_id="00" * 20,
        request=AccessRequest("p", (("status", "ok"),)),
        claimed_roles=["line"],
        acm_key=actors["acm"],
        recipient=actors["bam"].actor_id,
        nonce=1
    )
    assert rejection_of(deployed_chain, orphan) == RejectReason.UNKNOWN_CONTRACT
    # C8
    stray = ledger.build_record_tx(
        datastore.DataRecord("rec-9", {'supplier': "ACME"}), owner, recipient=bdm_id, nonce=2
    )
    assert rejection_of(deployed_chain, stray) == RejectReason.MALFORMED_PAYLOAD
    # the valid transaction still goes through afterwards
    assert deployed_chain.mine(valid).height == 2


def test_Chain_requires_contract(genesis_chain, actors):
    """
    Tests that registrations and records wait for a deployed contract

    # C1: A registration before any deployment is UnknownContract
    # C2: A record before any deployment is UnknownContract
    """
    owner = actors["owner"]
    user = RegisteredUser(actors["user"].actor_id, "operator", frozenset({"line"}))
    # C1
    registration = ledger.build_registration_tx(
        user, actors["user"].public_key, owner, recipient=actors["bdm"].actor_id, nonce=1
    )
    assert rejection_of(genesis_chain, registration) == RejectReason.UNKNOWN_CONTRACT
    # C2
    record = ledger.build_record_tx(
        datastore.DataRecord("rec-1", {'status': "ok"}), owner, recipient=actors["bdm"].actor_id, nonce=1
    )
    assert rejection_of(genesis_chain, record) == RejectReason.UNKNOWN_CONTRACT


def test_Chain_registration_checks(deployed_chain, actors):
    """
    Tests payload checks on user registration

    # C1: A role outside the user type is MalformedPayload
    # C2: A user id that is not the ActorId of the user key is MalformedPayload
    # C3: A valid registration lands in the user index
    """
    owner = actors["owner"]
    bdm_id = actors["bdm"].actor_id
    user_key = actors["user"]
    # C1
    overreach = RegisteredUser(user_key.actor_id, "operator", frozenset({"stock"}))
    assert rejection_of(
        deployed_chain,
        ledger.build_registration_tx(overreach, user_key.public_key, owner, bdm_id, nonce=2)
    ) == RejectReason.MALFORMED_PAYLOAD
    # C2
    impostor = RegisteredUser(user_key.actor_id, "operator", frozenset({"line"}))
    assert rejection_of(
        deployed_chain,
        ledger.build_registration_tx(impostor, actors["other_user"].public_key, owner, bdm_id, nonce=2)
    ) == RejectReason.MALFORMED_PAYLOAD
    # C3
    deployed_chain.mine(
        ledger.build_registration_tx(impostor, user_key.public_key, owner, bdm_id, nonce=2)
    )
    assert deployed_chain.state.users[user_key.actor_id] == impostor
    assert deployed_chain.state.user_keys[user_key.actor_id] == user_key.public_key


def test_Chain_rejects_non_owner_submissions(deployed_chain, factory_contract, actors):
    """
    Tests 100 randomized contract and registration transactions signed by
    keys other than the data owner's

    # C1: Every one is rejected with UnauthorizedSender
    # C2: The chain height never changes
    """
    rng = random.Random(SEED)
    height = deployed_chain.height
    user_key = actors["user"]
    user = RegisteredUser(user_key.actor_id, "operator", frozenset({"line"}))
    for trial in range(100):
        name = rng.choice(NON_OWNERS)
        signer = actors[name] if rng.random() < 0.8 else crypto.key_gen()
        nonce = deployed_chain.state.next_nonce(signer.actor_id)
        if rng.random() < 0.5:
            contract = engine.compile_contract(factory_contract.model, signer.actor_id, version=trial + 2)
            tx = ledger.build_contract_tx(contract, signer, actors["bam"].actor_id, nonce)
        else:
            tx = ledger.build_registration_tx(user, user_key.public_key, signer, actors["bdm"].actor_id, nonce)
        # C1
        assert rejection_of(deployed_chain, tx) == RejectReason.UNAUTHORIZED_SENDER
    # C2
    assert deployed_chain.height == height


def test_Chain_rejects_forged_senders(populated_chain, factory_contract, actors):
    """
    Tests 100 randomized transactions naming an authority as sender while
    signed by some other key

    # C1: Every one is rejected with BadSignature, whether the signature
        was made before or after the sender was swapped
    # C2: The chain height never changes
    """
    rng = random.Random(SEED)
    chain = populated_chain
    height = chain.height
    owner, acm = actors["owner"], actors["acm"]
    user_key = actors["user"]
    user = RegisteredUser(user_key.actor_id, "operator", frozenset({"line"}))
    for trial in range(100):
        name = rng.choice(NON_OWNERS)
        signer = actors[name] if rng.random() < 0.8 else crypto.key_gen()
        kind = rng.choice(
            (ledger.KIND_CONTRACT, ledger.KIND_REGISTRATION, ledger.KIND_RECORD, ledger.KIND_VALIDATION)
        )
        if kind == ledger.KIND_CONTRACT:
            contract = engine.compile_contract(factory_contract.model, owner.actor_id, version=trial + 2)
            tx = ledger.build_contract_tx(contract, signer, actors["bam"].actor_id, 1)
        elif kind == ledger.KIND_REGISTRATION:
            tx = ledger.build_registration_tx(user, user_key.public_key, signer, actors["bdm"].actor_id, 1)
        elif kind == ledger.KIND_RECORD:
            record = datastore.DataRecord(f"forged-{trial}", {'status': "ok"})
            tx = ledger.build_record_tx(record, signer, actors["bdm"].actor_id, 1)
        else:
            tx = ledger.build_validation_tx(
                chain.state.latest_contract,
                AccessRequest(user.user_id, (("status", "ok"),)),
                user.roles,
                signer,
                actors["bam"].actor_id,
                1
            )
        claimed = acm if kind == ledger.KIND_VALIDATION else owner
        if claimed.actor_id == signer.actor_id:
            continue
        nonce = chain.state.next_nonce(claimed.actor_id)
        swapped = tx.copy(sender=claimed.actor_id, nonce=nonce)
        resigned = ledger.sign_transaction(swapped.copy(signature=b""), signer.private_key)
        # C1
        assert rejection_of(chain, swapped) == RejectReason.BAD_SIGNATURE
        assert rejection_of(chain, resigned) == RejectReason.BAD_SIGNATURE
    # C2
    assert chain.height == height


def test_Chain_records_validation_outcomes(populated_chain, actors):
    """
    Tests that validate_role outcomes are recorded on chain

    # C1: A permitted request records the effective mask and no semantic
    # C2: An invisible attribute records semantic (5) and no rights
    # C3: A widened role claim records semantic (3)
    # C4: An unregistered user records semantic (2)
    # C5: Recorded gas follows the validation formula
    # C6: The ACM nonce advances once per validation
    """
    user_id = actors["user"].actor_id
    acm_id = actors["acm"].actor_id
    outcomes = {}
    cases = {
        'granted': (user_id, (("status", "ok"),), ["line"]),
        'hidden': (user_id, (("quantity", 3),), ["line"]),
        'widened': (user_id, (("status", "ok"),), ["line", "quality"]),
        'unknown': ("nobody", (("status", "ok"),), ["line"])
    }
    for case, (subject, params, claim) in cases.items():
        tx = validation_tx(populated_chain, actors, subject, params, claim)
        populated_chain.mine(tx)
        outcomes[case] = populated_chain.state.validations[tx.tx_id]
    # C1
    assert outcomes['granted'].rights == (True, True, False, False)
    assert outcomes['granted'].semantic is None
    # C2
    assert outcomes['hidden'].rights is None
    assert outcomes['hidden'].semantic == SEMANTIC_ATTRIBUTES
    # C3
    assert outcomes['widened'].semantic == SEMANTIC_ROLE
    # C4
    assert outcomes['unknown'].semantic == SEMANTIC_USER_TYPE
    # C5
    assert outcomes['granted'].gas_used == engine.validation_gas(1)
    assert outcomes['unknown'].gas_used == engine.validation_gas(1, 1)
    # C6
    assert populated_chain.state.next_nonce(acm_id) == 5


def test_Chain_fold_matches_incremental_state(populated_chain, actors):
    """
    Tests that the state is a pure fold over the blocks

    # C1: Refolding the blocks from scratch gives an equal state
    """
    grow_chain(populated_chain, random.Random(SEED), actors, steps=15, tag="fold")
    # C1
    assert ledger.ChainState.fold(populated_chain.blocks) == populated_chain.state


def test_Chain_replay_is_deterministic(authorities, factory_contract, actors):
    """
    Tests rebuilding chains from their transaction logs on fresh nodes

    # C1: For 20 random logs, the replayed tip hash is identical
    # C2: The replayed state equals the original state
    """
    for trial in range(20):
        rng = random.Random(SEED + trial)
        chain = ledger.Chain.create(authorities, clock=counting_clock(rng.randint(1, 10**6)))
        chain.mine(
            ledger.build_contract_tx(factory_contract, actors["owner"], actors["bam"].actor_id, nonce=1)
        )
        grow_chain(chain, rng, actors, steps=rng.randint(1, 12), tag=f"t{trial}")

        replayed = ledger.Chain.replay(chain.transaction_log())
        # C1
        assert replayed.tip_hash == chain.tip_hash
        # C2
        assert replayed.state == chain.state
