#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
from typing import List, Tuple

# Lib
import psutil

# Custom
from rbacchain.config import CENSOR, SENSITIVE_KEYS

##################
# Configurations #
##################


################################################
# Organisational Helper Class - StructlogUtils #
################################################

class StructlogUtils:
    """
    Structlog processors shared by every logger in the package

    Attributes:
        censor_keys (list(str)): Censor any logs with the specified keys with
            the value "*CENSORED*". Key material listed in SENSITIVE_KEYS is
            always censored on top of these.
        file_path (str): File location where logging is called
        actor_id (str): Ledger identity of the emitting node, if any
    """
    def __init__(
        self,
        censor_keys: List[str] = [],
        file_path: str = "",
        actor_id: str = ""
    ):
        self.censor_keys = list(censor_keys)
        self.file_path = file_path
        self.actor_id = actor_id

    ###########
    # Helpers #
    ###########

    def censor_logging(self, _, __, event_dict: dict) -> dict:
        """ Censor log information based on the keys in "censor_keys" and
            the package-wide sensitive keys

        Args:
            event_dict (dict): Logging metadata accumulated
        Returns:
            Censored event metadata (dict)
        """
        for key in set(self.censor_keys + SENSITIVE_KEYS):
            if event_dict.get(key):
                event_dict[key] = CENSOR
        return event_dict


    def get_file_path(self, _, __, event_dict: dict) -> dict:
        """ Updates logging metadata with the path to script from which logging
            events were accumulated from

        Args:
            event_dict (dict): Logging metadata accumulated
        Returns:
            Updated event metadata (dict)
        """
        event_dict['file_path'] = self.file_path
        return event_dict


    def add_actor_id(self, _, __, event_dict: dict) -> dict:
        """ Stamps events with the emitting node's ActorId so that logs from
            replicas of the same role stay distinguishable

        Args:
            event_dict (dict): Logging metadata accumulated
        Returns:
            Updated event metadata (dict)
        """
        event_dict.setdefault('actor_id', self.actor_id)
        return event_dict


    def track_cpu_stats(self, _, __, event_dict: dict) -> dict:
        """ Logs the % of CPU used by system

        Args:
            event_dict (dict): Logging metadata accumulated
        Returns:
            Updated event metadata (dict)
        """
        event_dict['cpu_percent'] = psutil.cpu_percent(interval=None)
        return event_dict


    def track_memory_stats(self, _, __, event_dict: dict) -> dict:
        """ Logs the following memory statistics of the system:
            1) memory_total (int): Total memory of system
            2) memory_available (int): Available memory for use by system
            3) memory_used (int): Memory used by system

        Args:
            event_dict (dict): Logging metadata accumulated
        Returns:
            Updated event metadata (dict)
        """
        memory = psutil.virtual_memory()
        event_dict['memory_total'] = memory.total
        event_dict['memory_available'] = memory.available
        event_dict['memory_used'] = memory.used
        return event_dict


    def graypy_structlog_processor(
        self, _, __,
        event_dict: dict
    ) -> Tuple[Tuple[str], dict]:
        """ Assembles arguments to pass to graypy's GELF handler

        Args:
            event_dict (dict): Logging metadata accumulated
        Returns:
            args (tuple(str))
            kwargs (dict)
        """
        args = (event_dict.get('event', ''),)
        kwargs = {'extra': event_dict}

        # Blank out graypy's default debugging fields; the handler's
        # debugging_fields toggle covers the rest
        for field in ['pid', 'process_name', 'thread_name', 'file', 'function']:
            kwargs['extra'][field] = ""

        return args, kwargs
