"""Context leakage through observable adaptations: simulate, attack, detect, mitigate."""

from .attacker import AttackOptions, AttackReport, attack_pipeline, kmeans, select_k, silhouette
from .core import AdaptationRecord, TickSeries, record_adaptation, tick_expand
from .harness import ExperimentConfig, run_experiment, sweep
from .infodetect import (
    DetectionConfig,
    JointHistogram,
    SuspicionLedger,
    classify_observers,
    entropy,
    fp_fn_sweep,
    mutual_information,
    normalized_mi,
    note_observation,
    update_mi_tables,
)
from .mitigation import (
    Delay,
    FeatureMask,
    Ladder,
    Mediator,
    NoMitigation,
    RowMask,
    Suppression,
    controller_step,
    effective_mi,
)
from .registry import Registry, build_protection_lists, init_mi_tables, parse_registry, serialize_registry
from .scenario import Scenario, build_phone_preset, build_smart_home_preset, simulate

__version__ = "0.1.0"

__all__ = [
    "AdaptationRecord",
    "AttackOptions",
    "AttackReport",
    "Delay",
    "DetectionConfig",
    "ExperimentConfig",
    "FeatureMask",
    "JointHistogram",
    "Ladder",
    "Mediator",
    "NoMitigation",
    "Registry",
    "RowMask",
    "Scenario",
    "Suppression",
    "SuspicionLedger",
    "TickSeries",
    "attack_pipeline",
    "build_phone_preset",
    "build_protection_lists",
    "build_smart_home_preset",
    "classify_observers",
    "controller_step",
    "effective_mi",
    "entropy",
    "fp_fn_sweep",
    "init_mi_tables",
    "kmeans",
    "mutual_information",
    "normalized_mi",
    "note_observation",
    "parse_registry",
    "record_adaptation",
    "run_experiment",
    "select_k",
    "serialize_registry",
    "silhouette",
    "simulate",
    "sweep",
    "tick_expand",
    "update_mi_tables",
]
