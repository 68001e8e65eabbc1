#!/usr/bin/env python

####################
# Required Modules #
####################

# Generic/Built-in
import abc

# Libs


# Custom


##################
# Configurations #
##################


###########################################
# Logging Abstract Class - AbstractLogger #
###########################################

class AbstractLogger(abc.ABC):

    @abc.abstractmethod
    def initialise(self):
        """ Builds and returns a structlog logger bound to this component's
            processors and handlers
        """
        pass

#######################################
# Fabric Abstract Class - AbstractNode #
#######################################

class AbstractNode(abc.ABC):

    @abc.abstractmethod
    async def start(self):
        """ Begins draining the node's inbox """
        pass


    @abc.abstractmethod
    async def stop(self):
        """ Stops the inbox loop and cancels in-flight handlers """
        pass


    @abc.abstractmethod
    async def handle(self, envelope):
        """ Processes a single verified envelope addressed to this node

        Args:
            envelope (Envelope): Decoded, signature-checked message
        """
        pass
