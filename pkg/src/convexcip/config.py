"""Run configuration: dataclass defaults, INI files and environment overrides.

INI layout: sections ``[problem]``, ``[data]``, ``[forward]``,
``[optimizer]`` and ``[output]`` with ``key = value`` lines.  Every key can
be overridden by an environment variable ``CONVEXCIP_<SECTION>_<KEY>``
(upper case), e.g. ``CONVEXCIP_PROBLEM_LAM=2``.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field
from typing import Optional

ENV_PREFIX = "CONVEXCIP_"


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


def _f(section, default, **kw):
    return field(default=default, metadata={"section": section, **kw})


@dataclass
class InverseConfig:
    # problem
    n: int = _f("problem", 2)
    N: int = _f("problem", 20)
    lo: float = _f("problem", 1.0)
    hi: float = _f("problem", 2.0)
    T: float = _f("problem", 4.0)
    Nt: int = _f("problem", 20)
    epsilon: float = _f("problem", 0.01)
    lam: float = _f("problem", 3.0)
    alpha: float = _f("problem", 3e-5)
    c: float = _f("problem", 5.0)
    reg_order: int = _f("problem", 3)
    reference: str = _f("problem", "background", choices=("none", "background"))
    anchor: bool = _f("problem", True)
    recovery_form: str = _f("problem", "w", choices=("w", "v"))
    clip: bool = _f("problem", False)
    # data
    phantom: str = _f("data", "B")
    amplitude: float = _f("data", 2.0)
    phantom_image: str = _f("data", "")
    sigma: float = _f("data", 0.0)
    seed: int = _f("data", 0)
    noise_mode: str = _f("data", "sample", choices=("sample", "function"))
    # forward
    aux_shape: str = _f("forward", "box", choices=("box", "ball"))
    radius: Optional[float] = _f("forward", None)
    mesh: Optional[float] = _f("forward", None)
    steps: Optional[int] = _f("forward", None)
    xi: float = _f("forward", 0.05)
    formulation: Optional[str] = _f("forward", None, choices=(None, "total", "scattered"))
    fine_until: float = _f("forward", 0.5)
    substeps: int = _f("forward", 4)
    time_scheme: str = _f("forward", "cn", choices=("cn", "ie"))
    linear_solver: str = _f("forward", "direct", choices=("cg", "direct"))
    g1_stencil: str = _f("forward", "outside", choices=("outside", "inside"))
    # optimizer
    method: str = _f("optimizer", "lbfgs", choices=("lbfgs", "gd"))
    grad_tol: float = _f("optimizer", 0.01)
    max_iters: int = _f("optimizer", 5000)
    lbfgs_mem: int = _f("optimizer", 10)
    armijo: float = _f("optimizer", 1e-4)
    gamma: float = _f("optimizer", 1e-3)
    # output
    output_dir: str = _f("output", "out")
    workers: int = _f("output", 1)

    def __post_init__(self):
        self.validate()

    @property
    def forward_formulation(self) -> str:
        """Total field in 2-D; in 3-D the scattered field on a small box."""
        if self.formulation is not None:
            return self.formulation
        return "total" if self.n == 2 else "scattered"

    @property
    def forward_radius(self) -> float:
        if self.radius is not None:
            return self.radius
        return 6.0 if self.n == 2 else 2.5

    @property
    def forward_mesh(self) -> float:
        """Auxiliary mesh; fine in 2-D, coarse in 3-D unless set explicitly."""
        if self.mesh is not None:
            return self.mesh
        return 1.0 / 60.0 if self.n == 2 else 0.1

    @property
    def forward_steps(self) -> int:
        if self.steps is not None:
            return self.steps
        return 800 if self.n == 2 else 400

    def validate(self):
        def need(cond, key, msg):
            if not cond:
                sec = _section_of(key)
                raise ConfigError(f"{sec}.{key}", msg)

        for f in dataclasses.fields(self):
            ch = f.metadata.get("choices")
            if ch and getattr(self, f.name) not in ch:
                need(False, f.name, f"must be one of {ch}, got {getattr(self, f.name)!r}")
        need(self.n in (2, 3), "n", "dimension must be 2 or 3")
        need(self.N >= 4, "N", "need at least 4 nodes per axis")
        need(self.lo < self.hi, "lo", "need lo < hi")
        need(0 < self.epsilon < self.T, "epsilon", "need 0 < epsilon < T")
        need(self.Nt >= 4, "Nt", "need Nt >= 4 for the endpoint time stencil")
        need(self.lam >= 0, "lam", "must be non-negative")
        need(0 <= self.alpha < 1, "alpha", "must lie in [0, 1)")
        need(self.reg_order in (2, 3), "reg_order", "must be 2 or 3")
        need(0 <= self.sigma < 1, "sigma", "must lie in [0, 1)")
        need(self.amplitude >= 0, "amplitude", "must be non-negative")
        need(self.radius is None or self.radius > 0, "radius", "must be positive")
        need(self.mesh is None or self.mesh > 0, "mesh", "must be positive")
        need(self.steps is None or self.steps >= 2, "steps", "need at least 2 steps")
        need(self.xi > 0, "xi", "must be positive")
        need(self.fine_until >= 0, "fine_until", "must be non-negative")
        need(self.substeps >= 1, "substeps", "must be at least 1")
        need(self.grad_tol > 0, "grad_tol", "must be positive")
        need(self.max_iters >= 0, "max_iters", "must be non-negative")
        need(self.lbfgs_mem >= 1, "lbfgs_mem", "must be at least 1")
        need(0 < self.armijo < 1, "armijo", "must lie in (0, 1)")
        need(self.gamma > 0, "gamma", "must be positive")
        need(self.workers >= 1, "workers", "must be at least 1")

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for f in dataclasses.fields(self):
            sec = f.metadata["section"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            val = getattr(self, f.name)
            cp.set(sec, f.name, "" if val is None else repr(val) if isinstance(val, float) else str(val))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def replace(self, **kw) -> "InverseConfig":
        return dataclasses.replace(self, **kw)


def _section_of(key):
    for f in dataclasses.fields(InverseConfig):
        if f.name == key:
            return f.metadata["section"]
    return "?"


def _coerce(f: dataclasses.Field, raw: str, path: str):
    typ = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    raw = raw.strip()
    try:
        if "Optional" in typ:
            if raw in ("", "None", "auto"):
                return None
            typ = typ.replace("Optional[", "").rstrip("]")
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(path, f"cannot parse {raw!r} as {typ}") from None


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None,
                environ: Optional[dict] = None) -> InverseConfig:
    """Defaults, then the INI file, then environment, then ``overrides``."""
    environ = os.environ if environ is None else environ
    fields = {f.name: f for f in dataclasses.fields(InverseConfig)}
    values = {}
    if path:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(str(path), f"malformed config: {exc}") from None
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                if key not in fields or fields[key].metadata["section"] != sec:
                    raise ConfigError(f"{sec}.{key}", "unknown setting")
                values[key] = _coerce(fields[key], raw, f"{sec}.{key}")
    for name, f in fields.items():
        env = f"{ENV_PREFIX}{f.metadata['section']}_{name}".upper()
        if env in environ:
            values[name] = _coerce(f, environ[env], env)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in fields:
            raise ConfigError(key, "unknown setting")
        values[key] = _coerce(fields[key], val, key) if isinstance(val, str) else val
    return InverseConfig(**values)
