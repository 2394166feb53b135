"""Bundled experiments, shipped as config files so they diff as data."""

from importlib import resources

from ..config import ExperimentConfig, parse_config

BUNDLED = {
    "entropy-balance": "entropy_balance.cfg",
    "kalman-baseline": "kalman_baseline.cfg",
    "sign-threshold-easy": "sign_threshold_easy.cfg",
    "sign-threshold-hard": "sign_threshold_hard.cfg",
    "modulo-counterexample": "modulo_counterexample.cfg",
    "shrinking-noise": "shrinking_noise.cfg",
    "stable-baseline": "stable_baseline.cfg",
}


def bundled_names() -> list:
    return sorted(BUNDLED)


def bundled_text(name: str) -> str:
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled experiment {name!r}; known: {bundled_names()}")
    return (resources.files(__package__) / BUNDLED[name]).read_text(encoding="utf-8")


def load_bundled(name: str) -> ExperimentConfig:
    return parse_config(bundled_text(name))
