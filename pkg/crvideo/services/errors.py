from typing import Dict, List, Optional


class SimulationError(Exception):
    pass


class ScenarioError(SimulationError):
    """Raised when a scenario document violates the schema or references unknown ids.

    ``errors`` maps dotted field paths (``channels.defaults.gamma``) to the
    messages produced by validation.
    """

    def __init__(self, message: str, errors: Optional[Dict[str, List[str]]] = None) -> None:
        super().__init__(message)
        self.errors = errors or {}


class ChannelModelError(SimulationError):
    """Raised for transition probabilities outside [0, 1] or an unknown occupancy state."""
    pass


class SensingError(SimulationError):
    """Raised for sensing error rates outside (0, 1) or votes that exceed the observer count."""
    pass


class VideoModelError(SimulationError):
    pass


class BaseLayerMissingError(VideoModelError):
    """Raised when a rate below R^b is evaluated; the PSNR model is undefined there."""
    pass


class LinearProgramError(SimulationError):
    pass


class PathSelectionError(SimulationError):
    pass


class InstanceTooLargeError(SimulationError):
    """Raised when an exhaustive search is asked to handle an instance beyond its caps."""
    pass


class SchemeError(SimulationError):
    """Raised for an unknown scheme name or a scheme that does not apply to the scenario mode."""
    pass
