#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import os
from string import Template

# Lib


# Custom


##################
# Configurations #
##################

LOGGING_FORMAT = Template("[$name] %(message)s")

# Default string used to censor sensitive values
CENSOR = "*CENSORED*"

# Keys that are always censored, regardless of user-declared censor keys
SENSITIVE_KEYS = ["private_key", "private_key_hex", "seed"]

# Default logger prefixes to faciliate role detection
CSP_PREFIX = "CSP"
ACM_PREFIX = "ACM"
BAM_PREFIX = "BAM"
BDM_PREFIX = "BDM"
PEER_PREFIX = "PER"
OWNER_PREFIX = "DO"
COMPONENT_PREFIX = "LIB"
SYSMETRICS_PREFIX = "SYS"

NODE_NAME_TEMPLATE = Template("${prefix}_$name")
COMPONENT_NAME_TEMPLATE = Template(f"{COMPONENT_PREFIX}_$name")
SYSMETRICS_NAME_TEMPLATE = Template(f"{SYSMETRICS_PREFIX}_$name")

# Default logging ports to be created in a graylog server. All logs from
# multiple nodes of the same role are matched to a single port i.e. all peer
# replicas will publish to the allocated PEER_PORT.
SYSMETRICS_PORT = 9100
CSP_PORT = 9200
ACM_PORT = 9300
BAM_PORT = 9400
BDM_PORT = 9500
PEER_PORT = 9600
OWNER_PORT = 9700
COMPONENT_PORT = 9800

# Actor roles participating in a deployment
ROLE_CSP = "CSP"
ROLE_ACM = "ACM"
ROLE_BAM = "BAM"
ROLE_BDM = "BDM"
ROLE_PEER = "PEER"
ROLE_OWNER = "DO"
NODE_ROLES = [ROLE_CSP, ROLE_ACM, ROLE_BAM, ROLE_BDM, ROLE_PEER, ROLE_OWNER]

ROLE_PREFIXES = {
    ROLE_CSP: CSP_PREFIX,
    ROLE_ACM: ACM_PREFIX,
    ROLE_BAM: BAM_PREFIX,
    ROLE_BDM: BDM_PREFIX,
    ROLE_PEER: PEER_PREFIX,
    ROLE_OWNER: OWNER_PREFIX
}
ROLE_PORTS = {
    ROLE_CSP: CSP_PORT,
    ROLE_ACM: ACM_PORT,
    ROLE_BAM: BAM_PORT,
    ROLE_BDM: BDM_PORT,
    ROLE_PEER: PEER_PORT,
    ROLE_OWNER: OWNER_PORT
}

# Identity & hashing
HASH_NAME = "sha256"
DIGEST_LENGTH = 20      # bytes of SHA-256 kept for actor & contract IDs
BLOCK_HASH_LENGTH = 32
ZERO_HASH = b"\x00" * BLOCK_HASH_LENGTH
GENESIS_TIMESTAMP = 0

# Contract operation set (no general-purpose VM)
OP_VALIDATE_ROLE = "validate_role"
OP_GET_RIGHTS = "get_rights"
OP_LIST_ROLES = "list_roles"
CONTRACT_OPERATIONS = [OP_GET_RIGHTS, OP_LIST_ROLES, OP_VALIDATE_ROLE]

# Gas schedules shipped with the package
SRC_DIR = os.path.dirname(os.path.abspath(__file__))
GAS_SCHEDULE_PATH = os.path.join(SRC_DIR, "gas_schedules.json")
PROPOSED_SCHEDULE = "proposed"
BASELINE_SCHEDULE = "baseline"

# Fabric timeouts (seconds)
REQUEST_TIMEOUT = 30.0
STAGE_TIMEOUT = 10.0

# Benchmark defaults
BENCH_REPETITIONS = 3
BENCH_SEED = 42
BENCH_REFERENCE_ATTRIBUTES = ["product_id", "status", "quantity", "quality"]
