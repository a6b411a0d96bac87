"""Learning multi-scale entangled (MERA) states from local measurements on a simulator."""

from .circuit import Gate, Layer, MeraCircuit, identity_mera, random_mera, validate
from .learner import CertificationReport, LearnOptions, StepRecord, certify, learn_mera, learn_mera_no_postselect
from .renormalize import learn_mera_indirect
from .statevector import StateVector, generate_state

__all__ = [
    "Gate", "Layer", "MeraCircuit", "identity_mera", "random_mera", "validate",
    "CertificationReport", "LearnOptions", "StepRecord", "certify", "learn_mera", "learn_mera_no_postselect",
    "learn_mera_indirect", "StateVector", "generate_state",
]
