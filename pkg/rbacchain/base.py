#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import logging
import sys
from typing import Callable, List

# Lib
import graypy
import structlog

# Custom
from .abstract import AbstractLogger
from .config import LOGGING_FORMAT
from .utils import StructlogUtils

##################
# Configurations #
##################

LOGGING_VARIANTS = ["basic", "console", "graylog", "test"]

########################################
# Organisation Base Class - RootLogger #
########################################

class RootLogger(AbstractLogger):
    """
    Initialises configuration for a structlog logger wrapped around a stdlib
    logger. Custom filters can be applied for more context-driven logs, and
    MUST take on the following parameter signature, in accordance to
    Structlog standards:

        def <function_name>(logger, log_method, event_dict):
            ...
            return event_dict

    Attributes:
        logger_name (str): Logger ID by name e.g. BAM_bam_1, LIB_ledger
        logging_variant: Type of logging to use. There are 4 options:
            1. "basic" -> JSON rendering into a NullHandler (silent)
            2. "console" -> human readable rendering onto stderr
            3. "graylog" -> GELF logging to a graylog server
            4. "test" -> captured in memory for assertions
            Default: "basic"
        server (str): Host address of the logging server e.g. 127.0.0.1
            to be specified if logging_variant == 'graylog'. Default: None
        port (int): Port of the logging server, to be specified if
            logging_variant == 'graylog'. Default: None
        logging_level (int): logging.DEBUG, logging.INFO, logging.WARNING
            etc. Default: logging.INFO (i.e. 20)
        debugging_fields (bool): Toggles adding debug fields from the log
            record into the GELF logs to be sent to Graylog. Default: False
        filter_functions (list(callable)): List of callables to be applied for
            filtering. Default: []
        censor_keys (list(str)): Extra keys to censor on top of key material,
            which is always censored. Default: []
        file_path (str): File location where logging is called
        actor_id (str): Ledger identity of the node emitting the logs
    """
    def __init__(
        self,
        logger_name: str = "std_log",
        logging_variant: str = "basic",
        server: str = None,
        port: int = None,
        logging_level: int = logging.INFO,
        debugging_fields: bool = False,
        filter_functions: List[Callable] = [],
        censor_keys: list = [],
        file_path: str = "",
        actor_id: str = ""
    ):
        if logging_variant not in LOGGING_VARIANTS:
            raise ValueError(f"Unsupported logging variant '{logging_variant}'")

        # General attributes
        self.logger_name = logger_name
        self.logging_level = logging_level
        self.logging_variant = logging_variant
        self.debugging_fields = debugging_fields
        self.filter_functions = list(filter_functions)

        # Network attributes
        self.server = server
        self.port = port

        # Data attributes
        self.censor_keys = list(censor_keys)
        self.actor_id = actor_id
        self.synlog = None

        # Export Attributes
        self.file_path = file_path

    ############
    # Checkers #
    ############

    def is_initialised(self) -> bool:
        """ Checks if logger has already been initialised to enforce
            idempotence

        Returns:
            State (bool)
        """
        return self.synlog is not None

    ###########
    # Helpers #
    ###########

    def _create_handler(self) -> logging.Handler:
        """ Builds the stdlib handler matching the logging variant """
        if self.logging_variant == 'graylog':
            # `debugging_fields` toggle default debugging fields such as
            # "function", "pid", "process_name", "thread_name", etc.
            return graypy.GELFTCPHandler(
                host=self.server,
                port=self.port,
                debugging_fields=self.debugging_fields,
                facility="",
                level_names=True
            )

        elif self.logging_variant == 'console':
            return logging.StreamHandler(stream=sys.stderr)

        return logging.NullHandler()


    def _configure_processors(self) -> List[Callable]:
        """ Assembles a list of processors to be use as filters during logging

        Returns:
            Structlog Processes (list(callable))
        """
        structlog_utils = StructlogUtils(
            censor_keys=self.censor_keys,
            file_path=self.file_path,
            actor_id=self.actor_id
        )
        RENDER_MAP = {
            'basic': structlog.processors.JSONRenderer(sort_keys=True),
            'console': structlog.dev.ConsoleRenderer(colors=False),
            'graylog': structlog_utils.graypy_structlog_processor,
            'test': structlog.testing.LogCapture()
        }
        logging_renderer = RENDER_MAP[self.logging_variant]

        ###########################
        # Implementation Footnote #
        ###########################

        # [Cause]
        # A structlog processor chain is parsed in order, each processor
        # receiving the event_dict returned by its predecessor.

        # [Problems]
        # The graylog renderer re-casts the event_dict into (args, kwargs)
        # for graypy, which no downstream processor can consume. Ledger and
        # fabric hot paths also log per block/per envelope at DEBUG, so
        # level filtering has to happen before any enrichment work.

        # [Solution]
        # Filter by level first and keep the renderer as the LAST element of
        # the processor chain.

        processors = [
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.stdlib.add_log_level_number,
            structlog.stdlib.PositionalArgumentsFormatter(),
            structlog.processors.format_exc_info,
            structlog.processors.TimeStamper(fmt="%Y-%m-%d %H:%M.%S"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.UnicodeDecoder(),
            *self.filter_functions,             # apply custom filters
            structlog_utils.get_file_path,
            structlog_utils.add_actor_id,
            structlog_utils.censor_logging,     # censor secrets - 2nd last!
            logging_renderer                    # IMPT - MUST BE LAST!
        ]

        return processors

    ##################
    # Core Functions #
    ##################

    def initialise(self, **kwargs) -> structlog.stdlib.BoundLogger:
        """ Initialise configuration for structlog (& graypy) for logging

            e.g. logging a block commit
            >>> logger.info("block.mined", height=3)
            {
                "event": "block.mined",
                "height": 3,
                "logger": "LIB_ledger",
                "level": "info",
                "timestamp": "2026-10-21 05:09.10"
            }

        Args:
            kwargs: Miscellaneous values for compatibility
        Returns:
            synlog: A structlog logger
        """
        core_logger = logging.getLogger(self.logger_name)
        core_logger.setLevel(level=self.logging_level)

        if not self.is_initialised():

            # Handlers accumulate on named stdlib loggers; clear them so that
            # repeated initialisation does not duplicate log entries.
            if core_logger.hasHandlers():
                core_logger.handlers.clear()

            handler = self._create_handler()
            format = LOGGING_FORMAT.safe_substitute({'name': self.logger_name})
            handler.setFormatter(logging.Formatter(format))
            core_logger.addHandler(handler)

        # Allows for dynamic reconfiguration for filtering processors
        processors = self._configure_processors()
        self.synlog = structlog.wrap_logger(
            logger=core_logger,
            processors=processors,
            wrapper_class=structlog.stdlib.BoundLogger,
            context_class=dict,
            cache_logger_on_first_use=True
        )
        return self.synlog
