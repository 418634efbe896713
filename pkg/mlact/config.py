"""
YAML configuration files for the dataclass configs (OptimizerConfig,
ComparisonConfig, SyntheticConfig).
"""
import dataclasses

import yaml


def load_config(path, cls):
    """Builds `cls` from a YAML mapping; unknown keys are rejected"""
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ValueError("invalid YAML in %s: %s" % (path, e))

    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ValueError("%s must contain a mapping of settings" % path)

    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValueError("unknown settings in %s: %s" % (path, ", ".join(unknown)))

    try:
        return cls(**data)
    except TypeError as e:
        raise ValueError("invalid settings in %s: %s" % (path, e))


def with_overrides(config, **overrides):
    """Copy of a config with the non-None overrides applied (CLI flags win
    over file values)
    """
    return dataclasses.replace(
        config, **{k: v for k, v in overrides.items() if v is not None}
    )
