"""Run configuration: a flat key=value config file with CLI overrides."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .em import EmConfig

# accepted spellings -> canonical variant name
VARIANT_ALIASES = {
    "asal": "asal",
    "fte_hmm": "fte_hmm",
    "fte+hmm": "fte_hmm",
    "actionshuffle_inithmm": "actionshuffle_inithmm",
    "actionshuffle+inithmm": "actionshuffle_inithmm",
    "actionshuffle_viterbi": "actionshuffle_viterbi",
    "actionshuffle+viterbi": "actionshuffle_viterbi",
}


def normalize_variant(name):
    key = str(name).strip().lower()
    if key not in VARIANT_ALIASES:
        raise ValueError(
            f"unknown variant {name!r}; expected one of ASAL, FTE_HMM, "
            "ActionShuffle_initHMM, ActionShuffle_Viterbi"
        )
    return VARIANT_ALIASES[key]


@dataclass
class RunConfig:
    n_actions: int = 5
    variant: str = "asal"
    multi_activity: bool = False
    n_activities: int = 10
    seed: int = 0
    # stage 1 (frame-level embedding + clustering)
    s1_epochs: int = 30
    s1_learning_rate: float = 0.01
    s1_batch_size: int = 512
    embed_dim: int = 20
    hidden_dim: int = 40
    kmeans_restarts: int = 10
    # stage 2 (alternating learning)
    max_epochs: int = 20
    epsilon: float = 1e-3
    learning_rate: float = 0.001
    momentum: float = 0.9
    mlp_epochs: int = 200
    mlp_learning_rate: float = 0.5
    mlp_batch_size: int = 1 << 30
    ssl_warmup_epochs: int = 60
    max_len_policy: str = "auto"

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        if self.n_actions < 2:
            raise ValueError("n_actions must be at least 2")

    def em_config(self, seed=None, ssl_enabled=True, update_lengths=True,
                  force_full_transcript=False):
        return EmConfig(
            max_epochs=self.max_epochs,
            epsilon=self.epsilon,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            seed=self.seed if seed is None else seed,
            max_len_policy=self.max_len_policy,
            mlp_epochs=self.mlp_epochs,
            mlp_learning_rate=self.mlp_learning_rate,
            mlp_batch_size=self.mlp_batch_size,
            ssl_warmup_epochs=self.ssl_warmup_epochs,
            ssl_enabled=ssl_enabled,
            update_lengths=update_lengths,
            force_full_transcript=force_full_transcript,
        )


def parse_kv_file(path):
    """Parse a line-oriented key=value file; '#' starts a comment."""
    values = {}
    with open(path) as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _coerce(field_type, value):
    if field_type is bool:
        lowered = str(value).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return field_type(value)


def make_run_config(file_values=None, overrides=None):
    """Build a RunConfig from config-file values and CLI overrides.

    Overrides win over file values; unknown keys are rejected with the
    offending name.
    """
    merged = dict(file_values or {})
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    by_name = {f.name: f for f in fields(RunConfig)}
    kwargs = {}
    for key, value in merged.items():
        if key not in by_name:
            raise ValueError(f"unknown config key {key!r}")
        field_type = by_name[key].type
        if isinstance(field_type, str):
            field_type = {"int": int, "float": float, "bool": bool, "str": str}[field_type]
        try:
            kwargs[key] = value if isinstance(value, field_type) and field_type is not bool \
                else _coerce(field_type, value)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"config key {key!r}: {exc}") from exc
    return RunConfig(**kwargs)
