#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in


# Libs


# Custom
from . import base, config, errors, general
from . import crypto, rbac, contract, datastore, ledger, fabric, bench
