"""Run configuration: INI-style parsing, validation, content hashing.

The file format is line-oriented sections of ``key = value`` pairs.  Every
parameter that affects the numerics participates in the content hash; output
and cache locations do not.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .mfg import PicardParams, ProblemSetup, TimeGrid
from .model import builtin_hamiltonian, builtin_payoff
from .spectral import (
    DiracAt,
    DiracGradientAt,
    ZeroMeanField,
    analyze,
    constant_field,
    random_real_field,
    synthesize_datum,
    torus_grid,
    uniform_density,
)

DEFAULT_CONFIG = """\
[problem]
d = 1
n = 64
s = 6.0
r = 1.25
t0 = 0.0
T = 0.1
n_steps = 200
radius = 1.0
m0 = cosine:0.3
seed = 0

[hamiltonian]
name = coupled-quadratic

[payoff]
decay = 1.0
g = tanh
zero_mean_kernel = false
offset = none

[picard]
tol = 1e-9
max_iter = 200
damping = 0.5

[run]
workers = 1
"""

_NUMERIC_SECTIONS_EXCLUDED = {"run"}


@dataclass
class RunConfig:
    """Parsed configuration: typed core plus raw per-study sections."""

    sections: dict = field(default_factory=dict)

    # -- raw access -------------------------------------------------------
    def get(self, section, key, default=None):
        return self.sections.get(section, {}).get(key, default)

    def get_float(self, section, key, default=None):
        val = self.get(section, key, default)
        if val is None:
            raise ConfigError(f"missing [{section}] {key}")
        try:
            return float(val)
        except (TypeError, ValueError):
            raise ConfigError(f"[{section}] {key} = {val!r} is not a number") from None

    def get_int(self, section, key, default=None):
        val = self.get_float(section, key, default)
        if val != int(val):
            raise ConfigError(f"[{section}] {key} must be an integer, got {val}")
        return int(val)

    def get_bool(self, section, key, default="false"):
        val = str(self.get(section, key, default)).strip().lower()
        if val in ("true", "yes", "1", "on"):
            return True
        if val in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"[{section}] {key} = {val!r} is not a boolean")

    # -- typed core -------------------------------------------------------
    @property
    def d(self):
        return self.get_int("problem", "d")

    @property
    def n(self):
        return self.get_int("problem", "n")

    @property
    def s(self):
        return self.get_float("problem", "s")

    @property
    def r(self):
        return self.get_float("problem", "r")

    @property
    def seed(self):
        return self.get_int("problem", "seed", 0)

    @property
    def workers(self):
        return self.get_int("run", "workers", 1)

    def validate(self):
        d, n, s, r = self.d, self.n, self.s, self.r
        if d < 1:
            raise ConfigError(f"d must be positive, got {d}")
        if n < 4 or n % 2 != 0:
            raise ConfigError(f"n must be even and >= 4, got {n}")
        s_bound = max(math.ceil((d + 5) / 2) + 1, 4 * math.ceil(d / 2) + 1)
        if not s > s_bound:
            raise ConfigError(
                f"s must satisfy s > max(ceil((d+5)/2)+1, 4*ceil(d/2)+1) = {s_bound}"
                f" for d = {d}; got s = {s}")
        if not r > math.ceil(d / 2):
            raise ConfigError(
                f"r must satisfy r > ceil(d/2) = {math.ceil(d / 2)}; got r = {r}")
        if not 4 * r + 1 <= s:
            raise ConfigError(
                f"r must satisfy 4*r + 1 <= s; got 4*{r} + 1 = {4 * r + 1} > s = {s}")
        t0 = self.get_float("problem", "t0")
        T = self.get_float("problem", "T")
        if not T > t0:
            raise ConfigError(f"horizon must satisfy T > t0; got [{t0}, {T}]")
        if self.get_int("problem", "n_steps") < 1:
            raise ConfigError("n_steps must be positive")
        if not self.get_float("problem", "radius") > 0:
            raise ConfigError("radius must be positive")
        tol = self.get_float("picard", "tol")
        if not tol > 0:
            raise ConfigError(f"picard tol must be positive, got {tol}")
        damping = self.get_float("picard", "damping")
        if not 0 < damping <= 1:
            raise ConfigError(f"picard damping must lie in (0, 1], got {damping}")
        if self.get_int("picard", "max_iter") < 1:
            raise ConfigError("picard max_iter must be positive")
        return self

    # -- builders ---------------------------------------------------------
    def grid(self):
        return torus_grid(self.d, self.n)

    def setup(self):
        tg = TimeGrid(self.get_float("problem", "t0"),
                      self.get_float("problem", "T"),
                      self.get_int("problem", "n_steps"))
        pic = PicardParams(self.get_float("picard", "tol"),
                           self.get_int("picard", "max_iter"),
                           self.get_float("picard", "damping"))
        return ProblemSetup(self.grid(), tg, pic, s=self.s, r=self.r,
                            radius=self.get_float("problem", "radius"))

    def hamiltonian(self):
        sec = dict(self.sections.get("hamiltonian", {}))
        name = sec.pop("name", None)
        if name is None:
            raise ConfigError("missing [hamiltonian] name")
        params = {k: float(v) for k, v in sec.items()}
        return builtin_hamiltonian(name, **params)

    def payoff(self):
        offset_spec = str(self.get("payoff", "offset", "none")).strip()
        offset = parse_offset(offset_spec)
        return builtin_payoff(
            decay=self.get_float("payoff", "decay", 1.0),
            g=str(self.get("payoff", "g", "tanh")).strip(),
            zero_mean_kernel=self.get_bool("payoff", "zero_mean_kernel", "false"),
            offset=offset,
        )

    def m0(self):
        return parse_field(self.grid(), str(self.get("problem", "m0", "uniform")),
                           seed=self.seed)

    def content_hash(self):
        """Hash of every section that affects the numerics."""
        payload = {sec: dict(sorted(vals.items()))
                   for sec, vals in sorted(self.sections.items())
                   if sec not in _NUMERIC_SECTIONS_EXCLUDED}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def parse_offset(spec):
    if spec in ("none", "", "null"):
        return None
    kind, _, arg = spec.partition(":")
    if kind == "cos":
        k = float(arg) if arg else 1.0
        return lambda nodes: np.cos(k * nodes[0])
    raise ConfigError(f"unknown payoff offset {spec!r}")


def parse_field(grid, spec, seed=0):
    """Small field DSL shared by m0, datum and norms specifications.

    Forms: ``uniform``, ``constant:c``, ``cosine:amp[:k]`` (density bump
    mbar (1 + amp cos(k x_1))), ``cos:k``, ``mode:k``, ``dirac:y``,
    ``random:kmax:amp``.
    """
    spec = spec.strip()
    kind, _, rest = spec.partition(":")
    args = [a for a in rest.split(":") if a] if rest else []
    x1 = grid.nodes()[0]
    if kind == "uniform":
        return uniform_density(grid)
    if kind == "constant":
        return constant_field(grid, float(args[0]) if args else 1.0)
    if kind == "cosine":
        amp = float(args[0]) if args else 0.3
        k = float(args[1]) if len(args) > 1 else 1.0
        mbar = 1.0 / (2.0 * np.pi) ** grid.d
        return analyze(grid, mbar * (1.0 + amp * np.cos(k * x1)))
    if kind == "cos":
        k = float(args[0]) if args else 1.0
        return analyze(grid, np.cos(k * x1))
    if kind == "mode":
        from .experiments import mode_datum
        return mode_datum(grid, int(args[0]))
    if kind == "dirac":
        y = tuple(float(a) for a in args)
        if len(y) == 1 and grid.d > 1:
            y = y * grid.d
        return synthesize_datum(DiracAt(y), grid)
    if kind == "random":
        kmax = int(args[0]) if args else 4
        amp = float(args[1]) if len(args) > 1 else 1.0
        rng = np.random.default_rng(seed)
        return random_real_field(grid, rng, kmax=kmax, amplitude=amp,
                                 zero_mean=True)
    raise ConfigError(f"unknown field spec {spec!r}")


def parse_datum(grid, spec, seed=0):
    """Datum DSL: ``dirac:y``, ``dirac-grad:y:axis``, or any field form."""
    spec = spec.strip()
    kind, _, rest = spec.partition(":")
    if kind == "dirac":
        y = tuple(float(a) for a in rest.split(":") if a)
        if len(y) == 1 and grid.d > 1:
            y = y * grid.d
        return DiracAt(y)
    if kind == "dirac-grad":
        parts = [a for a in rest.split(":") if a]
        return DiracGradientAt((float(parts[0]),) * grid.d, int(parts[1]))
    return ZeroMeanField(parse_field(grid, spec, seed=seed))


def load_config(path=None, overrides=()):
    """Read the defaults, then a config file, then ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str  # keys are case-sensitive (T vs t0)
    parser.read_string(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        target, value = item.split("=", 1)
        if "." not in target:
            raise ConfigError(f"override key must be section.key: {target!r}")
        section, key = target.split(".", 1)
        section, key = section.strip(), key.strip()
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value.strip())
    sections = {name: dict(parser.items(name)) for name in parser.sections()}
    return RunConfig(sections)
