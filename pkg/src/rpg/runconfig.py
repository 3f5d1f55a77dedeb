"""Declarative run-config files: sections of `key = value` -> TrainConfig.

The dialect is deliberately tiny so a config diff reads like a config diff:
`[section]` headers, one `key = value` per line, `#`/`;` comments, blank
lines. Unknown sections or keys are rejected, every parse or validation
error is anchored to the line it came from, and the message names the
offending field.

Sections and keys (defaults in parentheses are TrainConfig's):

    [run]     variant (baseline) | total_steps | update_interval |
              policy_lr | gamma | seed | gradient_backend |
              eval_episodes | buffer_capacity | explore_sigma
    [env]     kind (lqr) plus the chosen environment's parameters:
              a, b, q, r, horizon, noise_scale   (lqr)
              objective, dim                     (landscape)
              horizon, dt                        (pointmass)
    [metric]  probe_count | probe_episodes | kappa (none = half the
              policy step) | m_tilde | metric_iters | metric_lr |
              kick_scale | gate_enabled (none = on for variant T) |
              freeze_phi
"""

import dataclasses

from .errors import ConfigError
from .training import TrainConfig

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _int(raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}")


def _float(raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}")


def _bool(raw):
    low = raw.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _str(raw):
    return raw


def _float_or_none(raw):
    return None if raw.lower() == "none" else _float(raw)


def _bool_or_none(raw):
    return None if raw.lower() == "none" else _bool(raw)


# (section, key) -> (TrainConfig field, converter); env params are handled
# separately because they fan into the env_params dict
_FIELDS = {
    ("run", "variant"): ("variant", _str),
    ("run", "total_steps"): ("total_steps", _int),
    ("run", "update_interval"): ("update_interval", _int),
    ("run", "policy_lr"): ("policy_lr", _float),
    ("run", "gamma"): ("gamma", _float),
    ("run", "seed"): ("seed", _int),
    ("run", "gradient_backend"): ("gradient_backend", _str),
    ("run", "eval_episodes"): ("eval_episodes", _int),
    ("run", "buffer_capacity"): ("buffer_capacity", _int),
    ("run", "explore_sigma"): ("explore_sigma", _float),
    ("metric", "probe_count"): ("probe_count", _int),
    ("metric", "probe_episodes"): ("probe_episodes", _int),
    ("metric", "kappa"): ("kappa", _float_or_none),
    ("metric", "m_tilde"): ("m_tilde", _int),
    ("metric", "metric_iters"): ("metric_iters", _int),
    ("metric", "metric_lr"): ("metric_lr", _float),
    ("metric", "kick_scale"): ("kick_scale", _float),
    ("metric", "gate_enabled"): ("gate_enabled", _bool_or_none),
    ("metric", "freeze_phi"): ("freeze_phi", _bool),
}

_ENV_PARAMS = {
    "a": _float, "b": _float, "q": _float, "r": _float,
    "horizon": _int, "noise_scale": _float,
    "objective": _str, "dim": _int, "dt": _float,
}

_SECTIONS = ("run", "env", "metric")


def _parse_lines(text):
    """Yield (lineno, section, key, raw_value) for every assignment."""
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";")):
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"line {lineno}: unterminated section "
                                  f"header {stripped!r}")
            section = stripped[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section "
                                  f"[{section}] (expected one of "
                                  f"{', '.join(_SECTIONS)})")
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', "
                              f"got {stripped!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: assignment before any "
                              f"[section] header")
        key, _, raw = stripped.partition("=")
        yield lineno, section, key.strip(), raw.strip()


def parse_config_text(text):
    """Parse config text into a validated TrainConfig.

    Raises ConfigError with a line-anchored, field-naming message on any
    syntax, schema, or value problem.
    """
    kwargs = {}
    env_params = {}
    lines_by_field = {}
    seen = set()
    for lineno, section, key, raw in _parse_lines(text):
        if (section, key) in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} "
                              f"in [{section}]")
        seen.add((section, key))
        if section == "env":
            if key == "kind":
                kwargs["env_kind"] = raw
                lines_by_field["env_kind"] = lineno
                continue
            conv = _ENV_PARAMS.get(key)
            if conv is None:
                raise ConfigError(f"line {lineno}: unknown key {key!r} "
                                  f"in [env]")
            try:
                env_params[key] = conv(raw)
            except ConfigError as err:
                raise ConfigError(f"line {lineno}: {key}: {err}")
            lines_by_field[key] = lineno
            continue
        spec = _FIELDS.get((section, key))
        if spec is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r} "
                              f"in [{section}]")
        field, conv = spec
        try:
            kwargs[field] = conv(raw)
        except ConfigError as err:
            raise ConfigError(f"line {lineno}: {field}: {err}")
        lines_by_field[field] = lineno
    if env_params:
        kwargs["env_params"] = env_params
    try:
        return TrainConfig(**kwargs)
    except ValueError as err:
        raise ConfigError(_anchor_validation_error(str(err), lines_by_field))


def _anchor_validation_error(message, lines_by_field):
    # the validator names the offending field first; fall back to any
    # config-supplied field the message mentions (cross-field rules may
    # blame a defaulted field the file never set)
    for token in message.replace(",", " ").split():
        if token in lines_by_field:
            return f"line {lines_by_field[token]}: {message}"
    return message


def load_config(path, seed=None):
    """Read, parse, and validate a config file; optionally override the seed."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}")
    cfg = parse_config_text(text)
    if seed is not None:
        try:
            cfg = dataclasses.replace(cfg, seed=int(seed))
        except ValueError as err:
            raise ConfigError(str(err))
    return cfg


def default_config_text():
    """A complete, commented config with every key at its default value.

    Comments sit on their own lines: the dialect has no inline comments.
    """
    cfg = TrainConfig()
    return "\n".join([
        "# training run configuration (defaults shown)",
        "[run]",
        "; baseline | J | T",
        f"variant = {cfg.variant}",
        f"total_steps = {cfg.total_steps}",
        f"update_interval = {cfg.update_interval}",
        f"policy_lr = {cfg.policy_lr}",
        f"gamma = {cfg.gamma}",
        f"seed = {cfg.seed}",
        "; empty = analytic where available, else: analytic | reinforce",
        "gradient_backend =",
        f"eval_episodes = {cfg.eval_episodes}",
        f"buffer_capacity = {cfg.buffer_capacity}",
        f"explore_sigma = {cfg.explore_sigma}",
        "",
        "[env]",
        "; lqr | landscape | pointmass",
        f"kind = {cfg.env_kind}",
        "# a = 1.0",
        "# b = 1.0",
        "# q = 1.0",
        "# r = 1.0",
        "# horizon = 50",
        "",
        "[metric]",
        f"probe_count = {cfg.probe_count}",
        f"probe_episodes = {cfg.probe_episodes}",
        "; none = half the policy step",
        "kappa = none",
        "; 0 = auto",
        f"m_tilde = {cfg.m_tilde}",
        f"metric_iters = {cfg.metric_iters}",
        f"metric_lr = {cfg.metric_lr}",
        f"kick_scale = {cfg.kick_scale}",
        "; none = on for variant T",
        "gate_enabled = none",
        f"freeze_phi = {str(cfg.freeze_phi).lower()}",
        "",
    ])
