"""Pipeline configuration: one JSON document drives every subcommand.

Unknown keys are rejected, recursively, with the offending path named.
A config file that parses but contains a typo must fail loudly, not
silently run with defaults.

All randomness in one pipeline run derives from the single top-level
seed: the generator uses it directly, the dataset split uses seed + 1,
class rebalancing seed + 2, forest training seed + 3, and retraining
for registry version v uses seed + 1000 * v. Runs with the same config
are therefore bit-for-bit reproducible.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .errors import ConfigError
from .lifecycle import DriftThresholds
from .models import FOREST_DEFAULTS, LOGISTIC_DEFAULTS, TREE_DEFAULTS
from .streamproc import DEFAULT_HIGH_RISK_TYPES, RuleConfig
from .txgen import GeneratorConfig

SPLIT_SEED_OFFSET = 1
OVERSAMPLE_SEED_OFFSET = 2
FOREST_SEED_OFFSET = 3
RETRAIN_SEED_STRIDE = 1000

_GENERATOR_KEYS = frozenset(
    {
        "count",
        "start_day",
        "payment_type_weights",
        "fraud_rate_by_type",
        "currency_weights",
        "location_weights",
        "base_amount",
        "seasonal_amplitude",
    }
)


def _take(section: str, raw: dict, allowed) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    unknown = set(raw) - set(allowed)
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"unknown config key {section}.{name}")
    return dict(raw)


@dataclass
class TopicSettings:
    name: str = "transactions"
    partitions: int = 4

    def validate(self) -> None:
        if not self.name:
            raise ConfigError("topic.name must be non-empty")
        if self.partitions < 1:
            raise ConfigError("topic.partitions must be at least 1")


@dataclass
class StreamSettings:
    cadence: int = 1000  # ticks between drains in paced feeds
    batch_max: int = 1000
    alert_threshold: float = 0.5

    def validate(self) -> None:
        if self.cadence < 1:
            raise ConfigError("stream.cadence must be at least 1")
        if self.batch_max < 1:
            raise ConfigError("stream.batch_max must be at least 1")
        if not 0.0 <= self.alert_threshold <= 1.0:
            raise ConfigError("stream.alert_threshold must lie in [0, 1]")


@dataclass
class DriftSettings:
    psi_threshold: float = 0.2
    accuracy_drop: float = 0.02
    min_feedback: int = 200
    window: int = 10_000
    f1_guard: float = 0.005

    def validate(self) -> None:
        if self.psi_threshold <= 0:
            raise ConfigError("drift.psi_threshold must be positive")
        if self.accuracy_drop < 0:
            raise ConfigError("drift.accuracy_drop must be non-negative")
        if self.min_feedback < 1:
            raise ConfigError("drift.min_feedback must be at least 1")
        if self.window < 10:
            raise ConfigError("drift.window must be at least 10")
        if self.f1_guard < 0:
            raise ConfigError("drift.f1_guard must be non-negative")

    def thresholds(self) -> DriftThresholds:
        return DriftThresholds(
            psi=self.psi_threshold,
            accuracy_drop=self.accuracy_drop,
            min_feedback=self.min_feedback,
        )


@dataclass
class RuleSettings:
    high_risk_types: list = field(default_factory=lambda: sorted(DEFAULT_HIGH_RISK_TYPES))
    enable_high_risk: bool = True
    enable_corridor: bool = True
    enable_velocity: bool = True
    velocity_max_count: int = 5
    velocity_window_ticks: int = 1000

    def rule_config(self) -> RuleConfig:
        cfg = RuleConfig(
            high_risk_types=frozenset(self.high_risk_types),
            enable_high_risk=self.enable_high_risk,
            enable_corridor=self.enable_corridor,
            enable_velocity=self.enable_velocity,
            velocity_max_count=self.velocity_max_count,
            velocity_window_ticks=self.velocity_window_ticks,
        )
        cfg.validate()
        return cfg


@dataclass
class ModelSettings:
    """Per-kind hyperparameter overrides, validated against the defaults."""

    logistic_regression: dict = field(default_factory=dict)
    decision_tree: dict = field(default_factory=dict)
    random_forest: dict = field(default_factory=dict)

    def validate(self) -> None:
        for kind, defaults in (
            ("logistic_regression", LOGISTIC_DEFAULTS),
            ("decision_tree", TREE_DEFAULTS),
            ("random_forest", FOREST_DEFAULTS),
        ):
            overrides = getattr(self, kind)
            unknown = set(overrides) - set(defaults)
            if unknown:
                raise ConfigError(
                    f"unknown hyperparameter models.{kind}.{sorted(unknown)[0]}"
                )

    def overrides_for(self, kind: str) -> dict:
        return dict(getattr(self, kind))


@dataclass
class PipelineConfig:
    data_dir: str = "./data"
    report_dir: str = "./reports"
    seed: int = 7
    generator: dict = field(default_factory=dict)
    topic: TopicSettings = field(default_factory=TopicSettings)
    rules: RuleSettings = field(default_factory=RuleSettings)
    stream: StreamSettings = field(default_factory=StreamSettings)
    models: ModelSettings = field(default_factory=ModelSettings)
    drift: DriftSettings = field(default_factory=DriftSettings)
    corr_max_rows: int = 200_000

    def validate(self) -> None:
        if not self.data_dir:
            raise ConfigError("data_dir must be non-empty")
        if not self.report_dir:
            raise ConfigError("report_dir must be non-empty")
        unknown = set(self.generator) - _GENERATOR_KEYS
        if unknown:
            raise ConfigError(f"unknown config key generator.{sorted(unknown)[0]}")
        self.topic.validate()
        self.stream.validate()
        self.drift.validate()
        self.models.validate()
        self.rules.rule_config()
        if self.corr_max_rows < 2:
            raise ConfigError("corr_max_rows must be at least 2")

    # -- seeds ---------------------------------------------------------------

    @property
    def split_seed(self) -> int:
        return self.seed + SPLIT_SEED_OFFSET

    @property
    def oversample_seed(self) -> int:
        return self.seed + OVERSAMPLE_SEED_OFFSET

    @property
    def forest_seed(self) -> int:
        return self.seed + FOREST_SEED_OFFSET

    def retrain_seed(self, version: int) -> int:
        return self.seed + RETRAIN_SEED_STRIDE * version

    # -- section builders ----------------------------------------------------

    def generator_config(self, count: int | None = None) -> GeneratorConfig:
        overrides = dict(self.generator)
        if count is not None:
            overrides["count"] = count
        if "count" not in overrides:
            raise ConfigError("generator.count is required (or pass --count)")
        cfg = GeneratorConfig(seed=self.seed, **overrides)
        cfg.validate()
        return cfg

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        top = _take(
            "config",
            raw,
            {
                "data_dir",
                "report_dir",
                "seed",
                "generator",
                "topic",
                "rules",
                "stream",
                "models",
                "drift",
                "corr_max_rows",
            },
        )
        kwargs = {}
        for key in ("data_dir", "report_dir", "seed", "corr_max_rows"):
            if key in top:
                kwargs[key] = top[key]
        if "generator" in top:
            kwargs["generator"] = _take("generator", top["generator"], _GENERATOR_KEYS)
        for key, section_cls in (
            ("topic", TopicSettings),
            ("rules", RuleSettings),
            ("stream", StreamSettings),
            ("models", ModelSettings),
            ("drift", DriftSettings),
        ):
            if key in top:
                fields = section_cls.__dataclass_fields__
                kwargs[key] = section_cls(**_take(key, top[key], fields))
        config = cls(**kwargs)
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str) -> "PipelineConfig":
        with open(path, "r", encoding="utf-8") as handle:
            try:
                raw = json.load(handle)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config root must be a JSON object")
        return cls.from_dict(raw)
