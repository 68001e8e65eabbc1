#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import logging
from typing import Callable, List

# Lib


# Custom
from .base import RootLogger
from .config import (
    COMPONENT_NAME_TEMPLATE,
    COMPONENT_PORT,
    NODE_NAME_TEMPLATE,
    ROLE_PORTS,
    ROLE_PREFIXES,
    SYSMETRICS_NAME_TEMPLATE,
    SYSMETRICS_PORT
)
from .utils import StructlogUtils

##################
# Configurations #
##################


#############################################
# Organisation Core Class - ComponentLogger #
#############################################

class ComponentLogger(RootLogger):
    """ Logger for library components (ledger, contract engine, datastore)
        that run outside of any fabric node
    """
    def __init__(
        self,
        logger_name: str,
        logging_variant: str = "basic",
        server: str = None,
        port: int = None,
        logging_level: int = logging.INFO,
        debugging_fields: bool = False,
        filter_functions: List[Callable] = [],
        censor_keys: list = [],
        file_path: str = ""
    ):
        super().__init__(
            server=server,
            port=port if port else COMPONENT_PORT,
            logger_name=COMPONENT_NAME_TEMPLATE.safe_substitute(name=logger_name),
            logging_level=logging_level,
            logging_variant=logging_variant,
            debugging_fields=debugging_fields,
            filter_functions=filter_functions,
            censor_keys=censor_keys,
            file_path=file_path
        )

########################################
# Organisation Core Class - NodeLogger #
########################################

class NodeLogger(RootLogger):
    """ Logger for a fabric node. The node's role decides the logger prefix
        (and graylog port), so that all replicas of one role can be streamed
        together while the stamped actor_id keeps them apart.

    Attributes:
        role (str): One of config.NODE_ROLES
    """
    def __init__(
        self,
        role: str,
        logger_name: str,
        actor_id: str = "",
        logging_variant: str = "basic",
        server: str = None,
        port: int = None,
        logging_level: int = logging.INFO,
        debugging_fields: bool = False,
        filter_functions: List[Callable] = [],
        censor_keys: list = [],
        file_path: str = ""
    ):
        if role not in ROLE_PREFIXES:
            raise ValueError(f"Unknown node role '{role}'")

        self.role = role
        NODE_NAME = NODE_NAME_TEMPLATE.safe_substitute(
            prefix=ROLE_PREFIXES[role],
            name=logger_name
        )

        super().__init__(
            server=server,
            port=port if port else ROLE_PORTS[role],
            logger_name=NODE_NAME,
            logging_level=logging_level,
            logging_variant=logging_variant,
            debugging_fields=debugging_fields,
            filter_functions=filter_functions,
            censor_keys=censor_keys,
            file_path=file_path,
            actor_id=actor_id
        )

#############################################
# Organisation Core Class - SysmetricLogger #
#############################################

class SysmetricLogger(RootLogger):
    """
    Logger for the benchmark harness. Every event is enriched with the host's
    CPU and memory load, so that each sweep point carries the conditions it
    was measured under.
    """
    def __init__(
        self,
        logger_name: str,
        logging_variant: str = "basic",
        server: str = None,
        port: int = None,
        logging_level: int = logging.INFO,
        debugging_fields: bool = False,
        filter_functions: List[Callable] = [],
        censor_keys: list = [],
        file_path: str = ""
    ):
        super().__init__(
            server=server,
            port=port if port else SYSMETRICS_PORT,
            logger_name=SYSMETRICS_NAME_TEMPLATE.safe_substitute(name=logger_name),
            logging_level=logging_level,
            logging_variant=logging_variant,
            debugging_fields=debugging_fields,
            filter_functions=filter_functions,
            censor_keys=censor_keys,
            file_path=file_path
        )

    ###########
    # Helpers #
    ###########

    def _configure_processors(self) -> List[Callable]:
        """ Overrides parent's _configure_processors() to add in system
            tracking filters

        Returns:
            Structlog Processes (list(callable))
        """
        structlog_utils = StructlogUtils(
            censor_keys=self.censor_keys,
            file_path=self.file_path
        )

        # The parent's chain ends with the renderer, so the hardware
        # trackers go right after its level filter and never after the
        # renderer.
        generic_processors = super()._configure_processors()
        hardware_processors = [
            structlog_utils.track_cpu_stats,
            structlog_utils.track_memory_stats
        ]
        return generic_processors[:1] + hardware_processors + generic_processors[1:]
