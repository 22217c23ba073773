"""Run configuration: flat ``key = value`` files, presets and validation."""

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from .errors import ConfigError
from .power import SCHEMES


@dataclass
class RunConfig:
    model: str = "logreg"
    dataset: str = "synthetic"
    n: int = 2000
    p: int = 20
    margin: float = 4.0
    noise_scale: float = 2.0
    classes: int = 2
    hidden: int = 16
    l2: float = 0.0
    test_fraction: float = 0.2
    M: int = 8
    K: int = 16
    T: int = 2000
    batch_size: int = 4
    gamma: float = 0.01
    sigma2: float = 1.0
    E_avg: Optional[float] = None
    E_m: Optional[List[float]] = None
    scheme: str = "scheme2"
    fixed_alpha: Optional[float] = None
    seed: int = 0
    eval_interval: int = 50
    probe_interval: int = 0
    rho: float = 1.0
    out: str = "run.csv"
    selection: str = "uniform"
    zeta_rule: str = "exact"
    rc_p: Optional[float] = None
    s1_outer: int = 100
    s1_inner: int = 1
    safety: float = 1.5
    plot: bool = True

    @property
    def num_classes(self):
        if self.dataset == "synthetic":
            return self.classes
        return _file_header(self.dataset)[2]

    @property
    def features(self):
        if self.dataset == "synthetic":
            return self.p
        return _file_header(self.dataset)[1]

    @property
    def d(self):
        p = self.features
        if self.model == "logreg":
            return p + 1
        c = self.num_classes
        if self.model == "softmax":
            return p * c + c
        return p * self.hidden + self.hidden + self.hidden * c + c

    @property
    def probe_every(self):
        return self.probe_interval or self.eval_interval

    def budgets(self):
        from .channel import RAYLEIGH_SECOND_MOMENT, energy_from_eavg

        if self.E_m is not None:
            return [float(e) for e in self.E_m]
        E_avg = 0.1 if self.E_avg is None else self.E_avg
        return [energy_from_eavg(E_avg, self.M, self.K, self.sigma2, RAYLEIGH_SECOND_MOMENT)] * self.M

    def replace(self, **changes):
        cfg = dataclasses.replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self):
        errs = []
        if self.model not in ("logreg", "softmax", "mlp"):
            errs.append(f"model: expected logreg, softmax or mlp, got {self.model!r}")
        if self.dataset != "synthetic" and not Path(self.dataset).is_file():
            errs.append(f"dataset: no such file {self.dataset!r}")
        if self.model == "logreg":
            try:
                if self.num_classes != 2:
                    errs.append("model: logreg needs a two-class dataset")
            except (OSError, ValueError):
                pass
        if self.classes < 2:
            errs.append(f"classes: must be >= 2, got {self.classes}")
        for name in ("n", "p", "M", "K", "batch_size", "eval_interval", "hidden", "s1_outer", "s1_inner"):
            if getattr(self, name) < 1:
                errs.append(f"{name}: must be >= 1, got {getattr(self, name)}")
        for name in ("T", "seed", "probe_interval"):
            if getattr(self, name) < 0:
                errs.append(f"{name}: must be >= 0, got {getattr(self, name)}")
        for name in ("gamma", "sigma2", "safety"):
            if not getattr(self, name) > 0:
                errs.append(f"{name}: must be positive, got {getattr(self, name)}")
        if not 0 < self.rho < 2:
            errs.append(f"rho: must lie in (0, 2), got {self.rho}")
        if not 0 <= self.test_fraction < 1:
            errs.append(f"test_fraction: must lie in [0, 1), got {self.test_fraction}")
        if self.l2 < 0:
            errs.append(f"l2: must be >= 0, got {self.l2}")
        if self.scheme not in SCHEMES:
            errs.append(f"scheme: expected one of {', '.join(SCHEMES)}, got {self.scheme!r}")
        if self.selection not in ("uniform", "topk"):
            errs.append(f"selection: expected uniform or topk, got {self.selection!r}")
        if self.zeta_rule not in ("exact", "pooled"):
            errs.append(f"zeta_rule: expected exact or pooled, got {self.zeta_rule!r}")
        if self.E_avg is not None and self.E_m is not None:
            errs.append("E_avg/E_m: give exactly one of E_avg or E_m")
        if self.E_avg is not None and not self.E_avg > 0:
            errs.append(f"E_avg: must be positive, got {self.E_avg}")
        if self.E_m is not None:
            if len(self.E_m) != self.M:
                errs.append(f"E_m: expected {self.M} budgets (one per device), got {len(self.E_m)}")
            if any(e < 0 for e in self.E_m):
                errs.append("E_m: budgets must be nonnegative")
        if self.fixed_alpha is not None and not self.fixed_alpha > 0:
            errs.append(f"fixed_alpha: must be positive, got {self.fixed_alpha}")
        if self.rc_p is not None and not self.rc_p > 0:
            errs.append(f"rc_p: must be positive, got {self.rc_p}")
        if not any(e.startswith(("model", "dataset", "p:", "hidden")) for e in errs):
            if self.K > self.d:
                errs.append(f"K: K={self.K} exceeds model dimension d={self.d}")
        if errs:
            raise ConfigError(errs)
        return self


PRESETS = {
    # desk-scale analogue of the first MNIST experiment: K=64 needs d >= 64
    "fig2": dict(model="mlp", hidden=16, M=8, K=64, batch_size=4, gamma=0.01, sigma2=1.0,
                 E_avg=0.1, fixed_alpha=1 / 8),
}


def _file_header(path):
    with open(path, encoding="utf-8") as fh:
        n, p, c = (int(v) for v in fh.readline().split())
    return n, p, c


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name, raw):
    default = RunConfig.__dataclass_fields__[name].default
    text = raw.strip()
    if name == "E_m":
        return [float(v) for v in text.replace(",", " ").split()]
    if name in ("E_avg", "fixed_alpha", "rc_p"):
        return None if text.lower() in ("", "none") else float(_fraction(text))
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(_fraction(text))
    return text


def _fraction(text):
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def parse_pairs(pairs, base=None):
    """Apply ``(key, value-string)`` pairs on top of ``base`` and validate."""
    values = {} if base is None else dataclasses.asdict(base)
    errs = []
    for key, raw in pairs:
        if key not in _FIELDS:
            errs.append(f"{key}: unknown key")
            continue
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            errs.append(f"{key}: {exc}")
    if errs:
        raise ConfigError(errs)
    return RunConfig(**values).validate()


def read_pairs(path):
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([f"line {lineno}: expected key = value, got {line!r}"])
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def parse_config(path=None, preset=None, overrides=()):
    """Build a validated RunConfig from an optional preset, file and overrides (in that order)."""
    base = RunConfig()
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError([f"preset: unknown preset {preset!r}"])
        base = dataclasses.replace(base, **PRESETS[preset])
    pairs = read_pairs(path) if path is not None else []
    return parse_pairs(list(pairs) + list(overrides), base)


def dump_config(cfg):
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if isinstance(v, list):
            v = " ".join(repr(float(e)) for e in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
