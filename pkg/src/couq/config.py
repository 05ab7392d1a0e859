"""Experiment configuration: TOML schema, strict validation, defaults.

Unknown keys anywhere in the file are rejected outright; silent typos in
experiment configs are the main reproducibility hazard.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .featstore import SyntheticSpec

METHODS = (
    "couq",
    "couq_unsup",
    "couq_nop",
    "al_top",
    "al_rand",
    "no_iters",
    "gt_sup",
    "er_entropy",
    "er_margin",
    "er_softmax",
    "pseudoer_entropy",
    "pseudoer_margin",
    "pseudoer_softmax",
    "dfm",
    "incdfm",
    "oracle_upper",
)


@dataclass(frozen=True)
class NetSection:
    hidden: int
    lr: float
    batch_size: int
    max_epochs: int


@dataclass(frozen=True)
class ExperimentConfig:
    # dataset
    dataset_path: str | None
    synthetic: SyntheticSpec | None
    synthetic_seed: int
    # stream
    schedule: list[set[int]]
    mix_ratio: float
    holdout_frac: float
    test_frac: float
    # couq engine
    budget_fraction: float
    alpha: float
    variance_retained: float
    delta: float
    epsilon: float
    max_iterations: int
    novel_k: int | str
    k_max: int
    stop_rel_change: float
    standardize: bool
    # nets
    mapper_net: NetSection
    classifier_net: NetSection
    buffer_capacity: int
    # run matrix
    methods: list[str]
    seeds: list[int]


_DEFAULTS = {
    "stream": {"mix_ratio": 2.0, "holdout_frac": 0.35, "test_frac": 0.1},
    "couq": {
        "budget_fraction": 0.0125,
        "alpha": 0.2,
        "variance_retained": 0.995,
        "delta": 0.25,
        "epsilon": 1e-8,
        "max_iterations": 5,
        "novel_k": "auto",
        "k_max": 8,
        "stop_rel_change": 0.02,
        "standardize": False,
    },
    "mapper": {"hidden": 256, "lr": 1e-3, "batch_size": 64, "max_epochs": 200},
    "classifier": {
        "hidden": 4096,
        "lr": 1e-3,
        "batch_size": 64,
        "max_epochs": 100,
        "buffer": 2500,
    },
}


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc)


def parse_config(doc: dict) -> ExperimentConfig:
    _check_keys(doc, {"dataset", "stream", "couq", "mapper", "classifier", "run"}, "top level")

    dataset = doc.get("dataset", {})
    _check_keys(dataset, {"path", "synthetic"}, "dataset")
    path = dataset.get("path")
    synthetic = None
    synthetic_seed = 0
    if "synthetic" in dataset:
        syn = dataset["synthetic"]
        _check_keys(
            syn,
            {"n_classes", "dim", "per_class", "cluster_spread", "center_spread", "seed"},
            "dataset.synthetic",
        )
        try:
            synthetic = SyntheticSpec(
                n_classes=int(syn["n_classes"]),
                dim=int(syn["dim"]),
                per_class=int(syn["per_class"]),
                cluster_spread=float(syn["cluster_spread"]),
                center_spread=float(syn["center_spread"]),
            )
        except KeyError as exc:
            raise ConfigError(f"dataset.synthetic missing key {exc}") from exc
        synthetic_seed = int(syn.get("seed", 0))
    if (path is None) == (synthetic is None):
        raise ConfigError("dataset needs exactly one of 'path' or 'synthetic'")

    stream = {**_DEFAULTS["stream"], **doc.get("stream", {})}
    _check_keys(stream, {"schedule", "mix_ratio", "holdout_frac", "test_frac"}, "stream")
    if "schedule" not in stream:
        raise ConfigError("stream.schedule is required")
    schedule_raw = stream["schedule"]
    if not isinstance(schedule_raw, list) or not all(
        isinstance(entry, list) for entry in schedule_raw
    ):
        raise ConfigError("stream.schedule must be a list of class-id lists")
    schedule = [set(int(c) for c in entry) for entry in schedule_raw]
    if len(schedule) < 2:
        raise ConfigError("stream.schedule needs an initial entry plus at least one task")

    couq = {**_DEFAULTS["couq"], **doc.get("couq", {})}
    _check_keys(couq, set(_DEFAULTS["couq"]), "couq")
    for key in ("budget_fraction", "alpha", "holdout_frac", "test_frac"):
        value = couq.get(key, stream.get(key))
        if not 0 < float(value) <= 1:
            raise ConfigError(f"{key} must lie in (0, 1], got {value}")
    if not 0 < float(couq["variance_retained"]) <= 1:
        raise ConfigError("variance_retained must lie in (0, 1]")
    if not 0 <= float(couq["delta"]) < 1:
        raise ConfigError("delta must lie in [0, 1)")
    if int(couq["max_iterations"]) < 1:
        raise ConfigError("max_iterations must be >= 1")
    novel_k = couq["novel_k"]
    if novel_k != "auto":
        novel_k = int(novel_k)
        if novel_k < 1:
            raise ConfigError("novel_k must be 'auto' or a positive integer")

    mapper = {**_DEFAULTS["mapper"], **doc.get("mapper", {})}
    _check_keys(mapper, set(_DEFAULTS["mapper"]), "mapper")
    classifier = {**_DEFAULTS["classifier"], **doc.get("classifier", {})}
    _check_keys(classifier, set(_DEFAULTS["classifier"]), "classifier")

    run = doc.get("run", {})
    _check_keys(run, {"methods", "seeds"}, "run")
    methods = list(run.get("methods", ["couq"]))
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; valid: {', '.join(METHODS)}")
    seeds = [int(s) for s in run.get("seeds", [0])]
    if not seeds or not methods:
        raise ConfigError("run.methods and run.seeds must be non-empty")

    return ExperimentConfig(
        dataset_path=path,
        synthetic=synthetic,
        synthetic_seed=synthetic_seed,
        schedule=schedule,
        mix_ratio=float(stream["mix_ratio"]),
        holdout_frac=float(stream["holdout_frac"]),
        test_frac=float(stream["test_frac"]),
        budget_fraction=float(couq["budget_fraction"]),
        alpha=float(couq["alpha"]),
        variance_retained=float(couq["variance_retained"]),
        delta=float(couq["delta"]),
        epsilon=float(couq["epsilon"]),
        max_iterations=int(couq["max_iterations"]),
        novel_k=novel_k,
        k_max=int(couq["k_max"]),
        stop_rel_change=float(couq["stop_rel_change"]),
        standardize=bool(couq["standardize"]),
        mapper_net=NetSection(
            int(mapper["hidden"]), float(mapper["lr"]),
            int(mapper["batch_size"]), int(mapper["max_epochs"]),
        ),
        classifier_net=NetSection(
            int(classifier["hidden"]), float(classifier["lr"]),
            int(classifier["batch_size"]), int(classifier["max_epochs"]),
        ),
        buffer_capacity=int(classifier["buffer"]),
        methods=methods,
        seeds=seeds,
    )


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a table")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
