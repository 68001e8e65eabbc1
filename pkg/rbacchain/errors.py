#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
from enum import Enum

# Libs


# Custom


##################
# Configurations #
##################


#####################
# Root Error Family #
#####################

class RbacChainError(Exception):
    """ Base class of every error raised by this package """

###########################
# Identity & Key Handling #
###########################

class KeyGenerationError(RbacChainError):
    """ Entropy source failed while generating a key pair """


class MalformedKeyError(RbacChainError):
    """ Key material is not a valid Ed25519 key """

##############
# RBAC Model #
##############

class ModelValidationError(RbacChainError):
    """ A role, right or user type reference does not resolve

    Attributes:
        name (str): Offending identifier
    """
    def __init__(self, name: str, detail: str = ""):
        self.name = name
        self.detail = detail
        super().__init__(f"{name}: {detail}" if detail else name)


class MaskLengthError(ModelValidationError):
    """ A right's mask does not span the attribute catalog """


class InvalidUserType(RbacChainError):
    pass


class RoleNotPermitted(RbacChainError):
    pass


class UnknownUser(RbacChainError):
    pass


class RequestError(RbacChainError):
    """ Access request is malformed (empty or uncatalogued params) """

##################
# Smart Contract #
##################

class ContractNotFound(RbacChainError):
    pass


class ContractError(RbacChainError):
    """ Unsupported operation invoked on a contract """

##########
# Ledger #
##########

class RejectReason(Enum):
    BAD_SIGNATURE = "BadSignature"
    UNAUTHORIZED_SENDER = "UnauthorizedSender"
    BAD_NONCE = "BadNonce"
    UNKNOWN_CONTRACT = "UnknownContract"
    MALFORMED_PAYLOAD = "MalformedPayload"


class TransactionRejected(RbacChainError):
    """ Raised when a transaction fails ledger validation

    Attributes:
        reason (RejectReason): Structured rejection cause
        detail (str): Human readable elaboration
    """
    def __init__(self, reason: RejectReason, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason.value}: {detail}")


class SyncRefused(RbacChainError):
    """ Replication source failed chain verification

    Attributes:
        height (int): First corrupt height of the refused source
    """
    def __init__(self, height: int):
        self.height = height
        super().__init__(f"Source chain corrupt at height {height}")


class ChainFormatError(RbacChainError):
    """ Persisted chain file is truncated or undecodable """

#############
# Datastore #
#############

class SchemaError(RbacChainError):
    """ Record attributes disagree with the attribute catalog """

##########
# Fabric #
##########

class ValidationUntrusted(RbacChainError):
    """ BAM's signature over returned rights does not verify """


class ValidationTimeout(RbacChainError):
    pass


class QueryRefused(RbacChainError):
    """ BDM refused to query because rights are not BAM-signed """

#########
# Bench #
#########

class BenchError(RbacChainError):
    pass
