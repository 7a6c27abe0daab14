"""Flat ``key = value`` experiment configuration with ``[section]`` headers.

Grammar, one item per line::

    # comment            (also ';' comments; blank lines ignored)
    [section]
    key = value          (value runs to end of line; inline '#' starts a comment)

Lists are comma-separated. Every key belongs to a known section; unknown
sections or keys, duplicates and bad values raise :class:`ConfigError`
carrying the line number and key.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, RetraceError
from .traces import TraceSpec

MODES = ("evaluate", "control", "verify", "variance", "scores")
DEFAULT_LAMBDAS = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0)


def _int(text):
    return int(text, 0)


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _list(conv):
    def parse(text):
        items = [t.strip() for t in text.split(",")]
        if not items or any(not t for t in items):
            raise ValueError("empty list item")
        return [conv(t) for t in items]

    return parse


def _choice(*options):
    def parse(text):
        t = text.strip().lower()
        if t not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return t

    return parse


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError("expected true or false")


def _str(text):
    return text.strip()


# section -> key -> (parser, default); a default of ``...`` marks a required key
SCHEMA = {
    "experiment": {
        "mode": (_choice(*MODES), ...),
        "name": (_str, None),
        "seeds": (_list(_int), [0]),
        "episodes": (_int, 1000),
        "iterations": (_int, 20),
        "log_interval": (_int, 100),
        "max_len": (_int, 1000),
        "samples": (_int, 10_000),
        "horizon": (_int, 30),
        "input": (_str, None),
    },
    "mdp": {
        "source": (_choice("chain", "garnet", "file"), "chain"),
        "path": (_str, None),
        "n_states": (_int, 5),
        "n_actions": (_int, 2),
        "branching": (_int, 2),
        "termination": (_float, 0.1),
        "reward_sparsity": (_float, 0.5),
        "seed": (_int, 0),
        "gamma": (_float, 0.9),
    },
    "trace": {
        "families": (_list(_str), ["retrace"]),
        "lambdas": (_list(_float), list(DEFAULT_LAMBDAS)),
        "enumeration_horizon": (_int, None),
    },
    "policy": {
        "target": (_choice("epsilon_greedy", "softmax", "uniform"), "epsilon_greedy"),
        "epsilon0": (_float, 1.0),
        "decay": (_choice("constant", "inverse"), "inverse"),
        "beta0": (_float, 0.0),
        "beta_rate": (_float, 1.0),
        "behavior": (_choice("mixture", "uniform", "target", "epsilon_greedy"), "mixture"),
        "eps_mix": (_float, 0.3),
        "behavior_epsilon": (_float, 0.5),
    },
    "step": {
        "alpha0": (_float, 0.5),
        "exponent": (_float, 0.75),
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated configuration; ``values[section][key]`` holds parsed values."""

    values: dict
    text: str = ""
    source: str = "<string>"
    lines: dict = field(default_factory=dict)

    def __getitem__(self, section):
        return self.values[section]

    @property
    def mode(self) -> str:
        return self.values["experiment"]["mode"]

    @property
    def name(self) -> str:
        name = self.values["experiment"]["name"]
        if name:
            return name
        return Path(self.source).stem if self.source != "<string>" else "experiment"

    @property
    def seeds(self) -> list:
        return list(self.values["experiment"]["seeds"])

    @property
    def traces(self) -> list:
        """Declared ``(family, lambda)`` cells in declaration order."""
        t = self.values["trace"]
        return [(f, lam) for f in t["families"] for lam in t["lambdas"]]

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    def with_mode(self, mode: str) -> "ExperimentConfig":
        values = {s: dict(v) for s, v in self.values.items()}
        values["experiment"]["mode"] = mode
        return ExperimentConfig(values, self.text, self.source, self.lines)


def _strip_comment(line: str) -> str:
    for mark in ("#", ";"):
        i = line.find(mark)
        if i >= 0:
            line = line[:i]
    return line.strip()


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    raw: dict = {}
    lines: dict = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = _strip_comment(line)
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]"):
                raise ConfigError(f"malformed section header {body!r}", lineno)
            section = body[1:-1].strip().lower()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno, section)
            continue
        key, eq, value = body.partition("=")
        key = key.strip().lower()
        if not eq or not key:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno)
        if section is None:
            raise ConfigError(f"key '{key}' appears before any [section] header", lineno, key)
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key '{key}' in [{section}]", lineno, key)
        if (section, key) in lines:
            first = lines[(section, key)]
            raise ConfigError(f"duplicate key '{key}' (first set on line {first})", lineno, key)
        parser = SCHEMA[section][key][0]
        try:
            raw[(section, key)] = parser(value.strip())
        except ValueError as exc:
            raise ConfigError(f"bad value for '{key}': {exc}", lineno, key) from None
        lines[(section, key)] = lineno
    values = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (_, default) in keys.items():
            if (sec, key) in raw:
                values[sec][key] = raw[(sec, key)]
            elif default is ...:
                raise ConfigError(f"missing required key '{key}' in [{sec}]", None, key)
            else:
                values[sec][key] = list(default) if isinstance(default, list) else default
    config = ExperimentConfig(values, text, source, lines)
    _validate(config)
    return config


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def _validate(config: ExperimentConfig):
    def fail(section, key, message):
        raise ConfigError(message, config.lines.get((section, key)), key)

    exp, mdp, trace = config["experiment"], config["mdp"], config["trace"]
    pol, step = config["policy"], config["step"]
    for key in ("episodes", "iterations", "log_interval", "max_len", "horizon"):
        minimum = 0 if key in ("episodes", "iterations") else 1
        if exp[key] < minimum:
            fail("experiment", key, f"'{key}' must be at least {minimum}")
    if exp["samples"] < 2:
        fail("experiment", "samples", "'samples' must be at least 2")
    if not exp["seeds"]:
        fail("experiment", "seeds", "'seeds' must not be empty")
    if any(not 0 <= s < 2**64 for s in exp["seeds"]):
        fail("experiment", "seeds", "'seeds' must be unsigned 64-bit integers")
    if config.mode == "scores" and not exp["input"]:
        fail("experiment", "input", "scores mode needs 'input'")
    if mdp["source"] == "file" and not mdp["path"]:
        fail("mdp", "path", "source = file needs 'path'")
    if not 0.0 <= mdp["gamma"] < 1.0:
        fail("mdp", "gamma", "'gamma' must lie in [0, 1)")
    if mdp["source"] == "chain" and mdp["n_states"] < 2:
        fail("mdp", "n_states", "a chain needs n_states >= 2")
    if mdp["source"] == "garnet":
        if mdp["n_states"] < 1 or mdp["n_actions"] < 1:
            fail("mdp", "n_states", "'n_states' and 'n_actions' must be positive")
        if not 1 <= mdp["branching"] <= mdp["n_states"]:
            fail("mdp", "branching", "'branching' must lie in [1, n_states]")
        if not 0.0 < mdp["termination"] <= 1.0:
            fail("mdp", "termination", "'termination' must lie in (0, 1]")
        if not 0.0 <= mdp["reward_sparsity"] <= 1.0:
            fail("mdp", "reward_sparsity", "'reward_sparsity' must lie in [0, 1]")
    for fam in trace["families"]:
        for lam in trace["lambdas"]:
            try:
                TraceSpec.parse(fam, lam)
            except RetraceError as exc:
                key = "families" if "family" in str(exc) else "lambdas"
                fail("trace", key, str(exc))
    if trace["enumeration_horizon"] is not None and trace["enumeration_horizon"] < 1:
        fail("trace", "enumeration_horizon", "'enumeration_horizon' must be at least 1")
    if not 0.0 <= pol["epsilon0"] <= 1.0:
        fail("policy", "epsilon0", "'epsilon0' must lie in [0, 1]")
    if pol["beta0"] < 0.0 or pol["beta_rate"] < 0.0:
        fail("policy", "beta0", "'beta0' and 'beta_rate' must be non-negative")
    if not 0.0 <= pol["eps_mix"] < 1.0:
        fail("policy", "eps_mix", "'eps_mix' must lie in [0, 1)")
    if not 0.0 <= pol["behavior_epsilon"] <= 1.0:
        fail("policy", "behavior_epsilon", "'behavior_epsilon' must lie in [0, 1]")
    if step["alpha0"] <= 0.0:
        fail("step", "alpha0", "'alpha0' must be positive")
    if not 0.5 < step["exponent"] <= 1.0:
        fail("step", "exponent", "'exponent' must lie in (0.5, 1]")
