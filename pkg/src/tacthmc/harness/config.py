"""Experiment configuration: a flat ``[section]`` / ``key = value`` text format.

Values are Python literals (numbers, quoted or bare strings, lists, ``None``,
``true``/``false``). ``#`` starts a comment. Every key has a default; unknown
sections or keys are rejected with the offending key named.
"""

import ast
import dataclasses
from dataclasses import dataclass, field, fields

from ..errors import ConfigError

__all__ = [
    "ModelSection",
    "SamplerSection",
    "RunSection",
    "DiagnosticsSection",
    "TuneSection",
    "ExperimentSpec",
    "METHODS",
    "TARGETS",
    "parse_config",
    "parse_config_text",
    "apply_overrides",
    "serialize_config",
    "format_value",
]

METHODS = ("tact", "sgld", "sghmc", "sgnht", "ablation_no_thermostat", "ablation_no_tempering")
TARGETS = ("three_mode", "two_mode", "standard_normal", "mixture", "conjugate", "logistic")
IGNORED_SECTIONS = ("manifest",)


@dataclass
class ModelSection:
    target: str = "three_mode"
    dim: int = 1
    # explicit mixture (target = mixture)
    weights: list = None
    means: list = None
    variances: list = None
    separation: float = 8.0
    # data models
    n_data: int = 200
    dataset: str = None
    prior_mean: float = 0.0
    prior_variance: float = 1.0
    observation_variance: float = 1.0
    true_theta: float = 0.5
    n_features: int = 2
    data_seed: int = 0
    batch_size: int = 0
    potential_noise_std: float = 0.0
    force_noise_std: float = 0.0

    def validate(self):
        _choice(self, "target", TARGETS)
        _positive(self, "dim", integer=True)
        if self.target == "mixture":
            for key in ("weights", "means", "variances"):
                if getattr(self, key) is None:
                    raise ConfigError(f"model.{key} is required for target = mixture", f"model.{key}")
        for key in ("prior_variance", "observation_variance", "separation"):
            _positive(self, key)
        _positive(self, "n_data", integer=True)
        _positive(self, "n_features", integer=True)
        _nonneg(self, "batch_size", integer=True)
        _nonneg(self, "potential_noise_std")
        _nonneg(self, "force_noise_std")
        if self.batch_size and self.target not in ("conjugate", "logistic"):
            raise ConfigError("model.batch_size needs a data model (conjugate or logistic)",
                              "model.batch_size")
        if self.batch_size > self.n_data and self.dataset is None:
            raise ConfigError("model.batch_size exceeds model.n_data", "model.batch_size")


@dataclass
class SamplerSection:
    method: str = "tact"
    # [eta_theta, eta_xi, c_theta, c_xi, gamma_theta, gamma_xi, K]; baselines read
    # step size, friction / noise level, thermal inertia and thinning from it
    tuple: list = field(default_factory=lambda: [0.0015, 0.0015, 0.05, 0.05, 1.0, 1.0, 50])
    xi0: float = 1.0 / 3.0
    xi1: float = 1.0
    n: int = 3
    W0: float = 5.0 / 3.0
    T: float = 1.0
    bias_mode: str = "abf_paper"
    J: int = 100
    h_A: float = 0.01
    resample_momenta: bool = True
    theta0: list = None

    def validate(self):
        _choice(self, "method", METHODS)
        t = self.tuple
        if not isinstance(t, (list, tuple)) or len(t) != 7:
            raise ConfigError("sampler.tuple must hold 7 numbers", "sampler.tuple")
        names = ("eta_theta", "eta_xi", "c_theta", "c_xi", "gamma_theta", "gamma_xi", "K")
        for name, v in zip(names, t):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"sampler.tuple entry {name} must be a number", "sampler.tuple")
        for i in (0, 1, 4, 5):
            if not t[i] > 0:
                raise ConfigError(f"sampler.tuple entry {names[i]} must be positive", "sampler.tuple")
        for i in (2, 3):
            if not t[i] >= 0:
                raise ConfigError(f"sampler.tuple entry {names[i]} must be non-negative", "sampler.tuple")
        if int(t[6]) != t[6] or t[6] < 1:
            raise ConfigError("sampler.tuple entry K must be an integer >= 1", "sampler.tuple")
        _choice(self, "bias_mode", ("abf_paper", "abf_per_bin", "metadynamics", "none"))
        _positive(self, "J", integer=True)
        _positive(self, "h_A")
        _positive(self, "xi0")
        if not self.xi1 > self.xi0:
            raise ConfigError("sampler.xi1 must exceed sampler.xi0", "sampler.xi1")
        if int(self.n) != self.n or self.n < 2:
            raise ConfigError("sampler.n must be an integer >= 2", "sampler.n")
        if not self.W0 > self.xi0:
            raise ConfigError("sampler.W0 must exceed sampler.xi0", "sampler.W0")
        _positive(self, "T")

    @property
    def eta_theta(self):
        return self.tuple[0]


@dataclass
class RunSection:
    n_steps: int = 100000
    burn_in: int = None  # None: first 20% of steps
    n_chains: int = 1
    seed: int = 0
    trace_stride: int = 100
    output_dir: str = "runs/default"
    workers: int = 0  # 0: all available CPUs
    warm_start: str = None  # bias_table.csv from an earlier run

    def validate(self):
        _positive(self, "n_steps", integer=True)
        if self.burn_in is not None:
            _nonneg(self, "burn_in", integer=True)
            if self.burn_in >= self.n_steps:
                raise ConfigError("run.burn_in must be smaller than run.n_steps", "run.burn_in")
        _positive(self, "n_chains", integer=True)
        _nonneg(self, "seed", integer=True)
        _nonneg(self, "trace_stride", integer=True)
        _nonneg(self, "workers", integer=True)


@dataclass
class DiagnosticsSection:
    bins: int = 200
    lo: float = None  # histogram range; None: analytic range of the target
    hi: float = None
    max_lag: int = 5000
    tv_max: float = None
    ess_min: float = None
    ess_max: float = None
    unity_min: float = None
    unity_max: float = None
    flatness_max: float = None
    mean_atol: float = None
    variance_rtol: float = None
    # ablation summary
    tv_ratio_min: float = 2.0
    far_mode_max: float = 0.05
    basin_min: float = 0.2

    def validate(self):
        _positive(self, "bins", integer=True)
        _positive(self, "max_lag", integer=True)
        if self.lo is not None and self.hi is not None and not self.hi > self.lo:
            raise ConfigError("diagnostics.hi must exceed diagnostics.lo", "diagnostics.hi")


@dataclass
class TuneSection:
    baselines: list = field(default_factory=lambda: ["sgld", "sghmc", "sgnht"])
    step_sizes: list = field(default_factory=lambda: [0.003, 0.01, 0.03])
    frictions: list = field(default_factory=lambda: [0.05, 0.2])
    n_steps: int = None  # None: run.n_steps

    def validate(self):
        for name in self.baselines:
            if name not in ("sgld", "sghmc", "sgnht"):
                raise ConfigError(f"tune.baselines: unknown baseline {name!r}", "tune.baselines")
        for key in ("step_sizes", "frictions"):
            vals = getattr(self, key)
            if not isinstance(vals, list) or not all(isinstance(v, (int, float)) for v in vals):
                raise ConfigError(f"tune.{key} must be a list of numbers", f"tune.{key}")
        if self.n_steps is not None:
            _positive(self, "n_steps", integer=True)


SECTIONS = {
    "model": ModelSection,
    "sampler": SamplerSection,
    "run": RunSection,
    "diagnostics": DiagnosticsSection,
    "tune": TuneSection,
}


@dataclass
class ExperimentSpec:
    model: ModelSection = field(default_factory=ModelSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    run: RunSection = field(default_factory=RunSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)
    tune: TuneSection = field(default_factory=TuneSection)

    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    def replace(self, **changes):
        """Copy with ``section.key`` style changes, e.g. ``{"sampler.method": "sgld"}``."""
        spec = dataclasses.replace(
            self, **{name: dataclasses.replace(getattr(self, name)) for name in SECTIONS})
        return apply_overrides(spec, changes.items())


def _choice(section, key, options):
    v = getattr(section, key)
    if v not in options:
        raise ConfigError(f"{_sname(section)}.{key} = {v!r}; expected one of {options}",
                          f"{_sname(section)}.{key}")


def _positive(section, key, integer=False):
    _bounded(section, key, integer, strict=True)


def _nonneg(section, key, integer=False):
    _bounded(section, key, integer, strict=False)


def _bounded(section, key, integer, strict):
    v = getattr(section, key)
    full = f"{_sname(section)}.{key}"
    if integer and (isinstance(v, bool) or not isinstance(v, int)):
        raise ConfigError(f"{full} must be an integer, got {v!r}", full)
    if strict and not v > 0:
        raise ConfigError(f"{full} must be positive, got {v!r}", full)
    if not strict and not v >= 0:
        raise ConfigError(f"{full} must be non-negative, got {v!r}", full)


def _sname(section):
    for name, cls in SECTIONS.items():
        if isinstance(section, cls):
            return name
    return type(section).__name__


_BARE = {"true": True, "false": False, "none": None, "null": None}


def _literal(text, key):
    text = text.strip()
    if text.lower() in _BARE:
        return _BARE[text.lower()]
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if text and all(ch.isalnum() or ch in "_-./" for ch in text):
            return text  # bare word
        raise ConfigError(f"cannot parse value {text!r} for {key}", key) from None


def _coerce(section, key, value):
    """Check ``value`` against the declared type of ``section.key``."""
    f = next(f for f in fields(section) if f.name == key)
    full = f"{_sname(section)}.{key}"
    want = f.type
    if value is None:
        return value
    if want is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{full} expects a number, got {value!r}", full)
        return float(value)
    if want is int:
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{full} expects an integer, got {value!r}", full)
        return value
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{full} expects true or false, got {value!r}", full)
        return value
    if want is str:
        if not isinstance(value, str):
            raise ConfigError(f"{full} expects a string, got {value!r}", full)
        return value
    if want is list:
        if isinstance(value, tuple):
            value = list(value)
        if not isinstance(value, list):
            if isinstance(value, (int, float)) and not isinstance(value, bool):
                return [value]
            raise ConfigError(f"{full} expects a list, got {value!r}", full)
        return value
    return value


def _set(spec, dotted, raw_value, is_text):
    if "." not in dotted:
        raise ConfigError(f"override {dotted!r} must look like section.key", dotted)
    sname, key = dotted.split(".", 1)
    if sname not in SECTIONS:
        raise ConfigError(f"unknown section {sname!r}", dotted)
    section = getattr(spec, sname)
    if key not in {f.name for f in fields(section)}:
        raise ConfigError(f"unknown key {dotted!r}", dotted)
    value = _literal(raw_value, dotted) if is_text else raw_value
    setattr(section, key, _coerce(section, key, value))


def parse_config_text(text, overrides=()):
    """Parse config text, apply ``section.key=value`` overrides, validate."""
    spec = ExperimentSpec()
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: malformed section header {raw.strip()!r}")
            section = line[1:-1].strip()
            if section not in SECTIONS and section not in IGNORED_SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{section}]", section)
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if section in IGNORED_SECTIONS:
            continue
        _set(spec, f"{section}.{key}", value, True)
    apply_overrides(spec, overrides)
    return spec.validate()


def parse_config(path=None, overrides=()):
    """Read a config file (``None`` gives all defaults) and apply overrides."""
    text = ""
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return parse_config_text(text, overrides)


def apply_overrides(spec, overrides):
    """``overrides`` holds ``"section.key=value"`` strings or ``(dotted, value)`` pairs."""
    for item in overrides:
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError(f"override {item!r} must be section.key=value", item)
            dotted, value = item.split("=", 1)
            _set(spec, dotted.strip(), value, True)
        else:
            dotted, value = item
            _set(spec, dotted, value, isinstance(value, str) and _looks_literal(value))
    return spec


def _looks_literal(value):
    # strings passed programmatically stay strings unless they spell a literal
    try:
        ast.literal_eval(value)
        return True
    except (ValueError, SyntaxError):
        return value.strip().lower() in _BARE


def _strip_comment(line):
    # '#' inside a quoted string is kept
    quote = None
    for i, ch in enumerate(line):
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#":
            return line[:i]
    return line


def format_value(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(format_value(v) for v in value) + "]"
    if isinstance(value, str):
        return repr(value)
    return str(value)


def serialize_config(spec):
    """Config text that parses back to ``spec``; floats keep full precision."""
    out = []
    for name in SECTIONS:
        section = getattr(spec, name)
        out.append(f"[{name}]")
        for f in fields(section):
            out.append(f"{f.name} = {format_value(getattr(section, f.name))}")
        out.append("")
    return "\n".join(out)
