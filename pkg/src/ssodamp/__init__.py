"""Adaptive damping of subsynchronous oscillations from a grid-following converter."""
from .analysis import dissipativity_monitor, linearize, modal_analysis, simulate_error_dynamics
from .config import load_config
from .controller import AdaptiveGains, adaptive_control, state_feedback_control
from .events import Event
from .plant import PlantParams, steady_state_init
from .simulation import ControllerConfig, simulate
from .synthesis import Certificate, DesignSpec, synthesize

__all__ = [
    "AdaptiveGains", "Certificate", "ControllerConfig", "DesignSpec", "Event", "PlantParams",
    "adaptive_control", "dissipativity_monitor", "linearize", "load_config", "modal_analysis",
    "simulate", "simulate_error_dynamics", "state_feedback_control", "steady_state_init", "synthesize",
]
