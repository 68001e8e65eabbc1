#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import hashlib
import json
from dataclasses import dataclass
from typing import Tuple, Union

# Libs
from nacl.exceptions import BadSignatureError, CryptoError
from nacl.signing import SigningKey, VerifyKey

# Custom
from .config import DIGEST_LENGTH
from .errors import KeyGenerationError, MalformedKeyError
from .general import ComponentLogger

##################
# Configurations #
##################

_logger = ComponentLogger(logger_name="crypto").initialise()

SIGNATURE_LENGTH = 64
KEY_LENGTH = 32

#################
# Domain Types  #
#################

@dataclass(frozen=True)
class Signature:
    """ Ed25519 signature together with the ActorId of its signer

    Attributes:
        data (bytes): 64-byte detached signature
        signer (str): ActorId of the signing key pair
    """
    data: bytes
    signer: str


@dataclass(frozen=True)
class KeyPair:
    """ An actor's Ed25519 key pair (PK, PR). The private key is the 32-byte
        seed, from which signing is fully deterministic.
    """
    public_key: bytes
    private_key: bytes

    @property
    def actor_id(self) -> str:
        return actor_id_of(self.public_key)


    def __repr__(self) -> str:
        return f"KeyPair(actor_id={self.actor_id})"

##################
# Core Functions #
##################

def key_gen() -> KeyPair:
    """ Generates a fresh Ed25519 key pair from the OS entropy source

    Returns:
        Key pair (KeyPair)
    Raises:
        KeyGenerationError: if the entropy source is unavailable
    """
    try:
        signing_key = SigningKey.generate()
    except (OSError, CryptoError) as error:
        raise KeyGenerationError(str(error)) from error

    return KeyPair(
        public_key=signing_key.verify_key.encode(),
        private_key=signing_key.encode()
    )


def key_pair_from_private(private_key: bytes) -> KeyPair:
    """ Rebuilds a key pair from its 32-byte private seed """
    signing_key = _signing_key(private_key)
    return KeyPair(
        public_key=signing_key.verify_key.encode(),
        private_key=signing_key.encode()
    )


def _signing_key(private_key: bytes) -> SigningKey:
    if not isinstance(private_key, bytes) or len(private_key) != KEY_LENGTH:
        raise MalformedKeyError("Ed25519 private key must be 32 bytes")
    try:
        return SigningKey(private_key)
    except (CryptoError, TypeError, ValueError) as error:
        raise MalformedKeyError(str(error)) from error


def sign(message: bytes, private_key: bytes) -> Signature:
    """ Signs a message. Ed25519 is deterministic, so repeated calls over the
        same (message, key) yield byte-identical signatures.

    Args:
        message (bytes): Canonical bytes to be signed
        private_key (bytes): 32-byte private seed
    Returns:
        Signature
    Raises:
        MalformedKeyError: if the private key is not a valid seed
    """
    signing_key = _signing_key(private_key)
    signed = signing_key.sign(bytes(message))
    return Signature(
        data=signed.signature,
        signer=actor_id_of(signing_key.verify_key.encode())
    )


def verify(
    message: bytes,
    signature: Union[Signature, bytes],
    public_key: bytes
) -> bool:
    """ Checks a detached signature. Total: malformed keys or signature
        bytes yield False instead of raising.

    Args:
        message (bytes): Bytes that were supposedly signed
        signature (Signature or bytes): Signature to check
        public_key (bytes): Signer's 32-byte public key
    Returns:
        True iff the signature is valid for message under public_key (bool)
    """
    data = signature.data if isinstance(signature, Signature) else signature
    try:
        if len(data) != SIGNATURE_LENGTH:
            return False
        VerifyKey(bytes(public_key)).verify(bytes(message), bytes(data))
        return True
    except (BadSignatureError, CryptoError, TypeError, ValueError):
        return False


def actor_id_of(public_key: bytes) -> str:
    """ Derives an ActorId: the first 20 bytes of SHA-256 over the public
        key, hex-encoded

    Args:
        public_key (bytes): Actor's public key
    Returns:
        ActorId (str) of 2 * DIGEST_LENGTH hex characters
    """
    return hashlib.sha256(bytes(public_key)).digest()[:DIGEST_LENGTH].hex()

############
# Keyfiles #
############

def save_keyfile(path: str, actor_name: str, key_pair: KeyPair) -> None:
    """ Persists a key pair as {actor_name, public_key_hex, private_key_hex}

    Args:
        path (str): Destination of the JSON keyfile
        actor_name (str): Human-readable name of the actor
        key_pair (KeyPair): Keys to persist
    """
    with open(path, "w", encoding="utf-8") as keyfile:
        json.dump(
            {
                'actor_name': actor_name,
                'public_key_hex': key_pair.public_key.hex(),
                'private_key_hex': key_pair.private_key.hex()
            },
            keyfile,
            indent=2
        )
    _logger.info(
        "keyfile.saved",
        actor_name=actor_name,
        actor_id=key_pair.actor_id,
        path=path
    )


def load_keyfile(path: str) -> Tuple[str, KeyPair]:
    """ Loads a keyfile written by `save_keyfile`

    Args:
        path (str): Location of the JSON keyfile
    Returns:
        actor_name (str)
        key_pair (KeyPair)
    Raises:
        MalformedKeyError: if the stored keys are inconsistent
    """
    with open(path, "r", encoding="utf-8") as keyfile:
        content = json.load(keyfile)

    try:
        private_key = bytes.fromhex(content['private_key_hex'])
        public_key = bytes.fromhex(content['public_key_hex'])
    except (KeyError, ValueError) as error:
        raise MalformedKeyError(f"Unreadable keyfile {path}") from error

    key_pair = key_pair_from_private(private_key)
    if key_pair.public_key != public_key:
        raise MalformedKeyError(f"Public key in {path} does not match its private key")

    return content.get('actor_name', ""), key_pair
