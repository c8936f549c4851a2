"""Gender-dependent, text-dependent speaker identification with prosodic
suprasegmental HMMs fused to continuous-density acoustic HMMs."""
from __future__ import annotations

from .corpus import SynthSpec, UtteranceRecord, generate_synthetic_corpus, load_manifest
from .frontend import AudioClip, FeatureBundle, FrontendConfig, extract_features, read_wav
from .harness import ExperimentConfig, prepare, relative_improvement, run_experiment, sweep_alpha
from .hmm import AcousticHmm, TrainConfig, log_likelihood, train_hmm, viterbi
from .recognizer import ModelConfig, enroll_gender, enroll_speakers, identify, load_bundle, save_bundle
from .suprasegmental import SuprasegmentalModel, fuse, log_likelihood_supra, train_suprasegmental

__version__ = "0.1.0"

__all__ = [
    "AcousticHmm",
    "AudioClip",
    "ExperimentConfig",
    "FeatureBundle",
    "FrontendConfig",
    "ModelConfig",
    "SuprasegmentalModel",
    "SynthSpec",
    "TrainConfig",
    "UtteranceRecord",
    "enroll_gender",
    "enroll_speakers",
    "extract_features",
    "fuse",
    "generate_synthetic_corpus",
    "identify",
    "load_bundle",
    "load_manifest",
    "prepare",
    "log_likelihood",
    "log_likelihood_supra",
    "read_wav",
    "relative_improvement",
    "run_experiment",
    "save_bundle",
    "sweep_alpha",
    "train_hmm",
    "train_suprasegmental",
    "viterbi",
]
