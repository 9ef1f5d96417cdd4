"""Spiking-network unidimensional SLAM: engine, connectome, world, codecs."""

from .engine import (
    CompartmentParams,
    Engine,
    NetworkSpec,
    NeuronSpec,
    PlasticityRule,
    SpikeRaster,
    SynapseSpec,
    SynapseState,
    apply_plasticity,
    compile,
    record,
)
from .network import SlamConfig, SlamPopulations, assemble
from .world import Environment, builtin_environments, raycast, step_world

__all__ = [
    "CompartmentParams",
    "Engine",
    "NetworkSpec",
    "NeuronSpec",
    "PlasticityRule",
    "SpikeRaster",
    "SynapseSpec",
    "SynapseState",
    "apply_plasticity",
    "compile",
    "record",
    "SlamConfig",
    "SlamPopulations",
    "assemble",
    "Environment",
    "builtin_environments",
    "raycast",
    "step_world",
]
