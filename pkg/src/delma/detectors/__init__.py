"""Detector contract, reference detectors and the default registry.

Algorithm ids 1-12 are reserved for the standard detector numbering; three simplified
families ship (connected-region energy, template matching, pulse trains).
"""
from .base import (
    BlockData,
    DetectionEvent,
    Detector,
    DetectorConfigError,
    DetectorRegistry,
    DetectorSpec,
    JobContext,
    RegistrationError,
    register_detector,
)
from .connected import CONNECTED_REGION_DEFAULTS, ConnectedRegionDetector, detect_connected_region
from .pulse_train import PULSE_TRAIN_DEFAULTS, PulseTrainDetector, detect_pulse_train
from .synthetic import SYNTHETIC_DEFAULTS, CpuBoundDetector
from .template import (
    TEMPLATE_DEFAULTS,
    SpectrogramTemplate,
    TemplateDetector,
    detect_template,
    load_template,
    save_template,
)

RESERVED_IDS = range(1, 13)
CONNECTED_REGION_ID = 4
TEMPLATE_ID = 8
PULSE_TRAIN_ID = 11
CPU_BOUND_ID = 100

CONNECTED_REGION_SPEC = DetectorSpec(
    CONNECTED_REGION_ID, "connected_region", "pulse", CONNECTED_REGION_DEFAULTS
)
TEMPLATE_SPEC = DetectorSpec(
    TEMPLATE_ID, "template", "sweep", TEMPLATE_DEFAULTS, path_params=frozenset({"template"})
)
PULSE_TRAIN_SPEC = DetectorSpec(PULSE_TRAIN_ID, "pulse_train", "pulse_train", PULSE_TRAIN_DEFAULTS)
CPU_BOUND_SPEC = DetectorSpec(CPU_BOUND_ID, "cpu_bound", "pulse", SYNTHETIC_DEFAULTS)


def default_registry() -> DetectorRegistry:
    """A fresh registry holding the shipped detectors."""
    registry = DetectorRegistry()
    registry.register(CONNECTED_REGION_SPEC, ConnectedRegionDetector)
    registry.register(TEMPLATE_SPEC, TemplateDetector)
    registry.register(PULSE_TRAIN_SPEC, PulseTrainDetector)
    registry.register(CPU_BOUND_SPEC, CpuBoundDetector)
    return registry


__all__ = [
    "BlockData", "DetectionEvent", "Detector", "DetectorConfigError", "DetectorRegistry",
    "DetectorSpec", "JobContext", "RegistrationError", "register_detector",
    "ConnectedRegionDetector", "TemplateDetector", "PulseTrainDetector", "CpuBoundDetector",
    "SpectrogramTemplate", "detect_connected_region", "detect_template", "detect_pulse_train",
    "load_template", "save_template", "default_registry",
    "CONNECTED_REGION_ID", "TEMPLATE_ID", "PULSE_TRAIN_ID", "CPU_BOUND_ID", "RESERVED_IDS",
]
