"""INI run configuration with a fixed schema.

Sections and keys (defaults reproduce the full benchmark)::

    [oracle]  kind
    [prior]   lower, upper                 comma-separated floats
    [kernel]  kind, width                  score-regression kernel (task kse)
    [pair]    kind, kernel, width          parameter pairs for task klre
    [loss]    score, ratio
    [train]   seed, n_train, n_seeds, epochs, batch_size, learning_rate,
              beta1, beta2, adam_eps, validation_fraction, lr_schedule
    [eval]    n_eval, search, grid_step, coarse_step, gradient_step,
              iterations, n_ref

Unknown sections or keys and unparsable values are all reported together in
one :class:`SchemaError`.
"""

import configparser
import hashlib
import json
from dataclasses import dataclass

from .architectures import TrainConfig
from .errors import ConfigurationError, InferostaticError, SchemaError
from .inference_apps import SearchConfig
from .oracles import make_oracle
from .samplers import KernelSpec, PriorSpec
from .trainer_eval import TaskSpec


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _opt_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


SCHEMA = {
    "oracle": {"kind": (str, "dirichlet3")},
    "prior": {"lower": (_floats, "0.5, 0.5, 0.5"), "upper": (_floats, "5, 5, 5")},
    "kernel": {"kind": (str, "delta"), "width": (float, "0.25")},
    "pair": {"kind": (str, "kernel"), "kernel": (str, "rectangular"), "width": (float, "0.4")},
    "loss": {"score": (str, "mse"), "ratio": (str, "logistic")},
    "train": {
        "seed": (int, "0"),
        "n_train": (int, "100000"),
        "n_seeds": (int, "5"),
        "epochs": (int, "20"),
        "batch_size": (int, "20"),
        "learning_rate": (float, "0.001"),
        "beta1": (float, "0.9"),
        "beta2": (float, "0.999"),
        "adam_eps": (float, "1e-7"),
        "validation_fraction": (float, "0.1"),
        "lr_schedule": (str, "constant"),
    },
    "eval": {
        "n_eval": (int, "100000"),
        "search": (str, "grid"),
        "grid_step": (float, "0.05"),
        "coarse_step": (float, "0.8"),
        "gradient_step": (float, "0.01"),
        "iterations": (int, "500"),
        "n_ref": (_opt_int, "none"),
    },
}


@dataclass
class RunConfig:
    values: dict
    source: str = "<defaults>"

    def __getitem__(self, key):
        section, name = key.split(".")
        return self.values[section][name]

    @property
    def seed(self):
        return self["train.seed"]

    @property
    def hash(self):
        blob = json.dumps(self.values, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def prior(self):
        return PriorSpec(self["prior.lower"], self["prior.upper"])

    def train_config(self):
        t = self.values["train"]
        return TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"], learning_rate=t["learning_rate"],
                           beta1=t["beta1"], beta2=t["beta2"], adam_eps=t["adam_eps"],
                           validation_fraction=t["validation_fraction"], lr_schedule=t["lr_schedule"])

    def tasks(self):
        common = dict(oracle=self["oracle.kind"], prior=self.prior(), n_train=self["train.n_train"],
                      n_eval=self["eval.n_eval"], n_seeds=self["train.n_seeds"], train_config=self.train_config())
        return {
            "kse": TaskSpec("kse", kernel=KernelSpec(self["kernel.kind"], self["kernel.width"]),
                            loss=self["loss.score"], **common),
            "klre": TaskSpec("klre", kernel=KernelSpec(self["pair.kernel"], self["pair.width"]),
                             pair=self["pair.kind"], loss=self["loss.ratio"], **common),
            "carl": TaskSpec("carl", pair="iid", loss=self["loss.ratio"], **common),
        }

    def search_config(self, method=None):
        e = self.values["eval"]
        return SearchConfig(method=method or e["search"], grid_step=e["grid_step"], coarse_step=e["coarse_step"],
                            gradient_step=e["gradient_step"], iterations=e["iterations"], box=self.prior(),
                            n_ref=e["n_ref"])

    def to_ini(self):
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            for k, v in keys.items():
                if isinstance(v, tuple):
                    v = ", ".join(repr(x) for x in v)
                lines.append(f"{k} = {'none' if v is None else v}")
            lines.append("")
        return "\n".join(lines)


def _parse(raw, source):
    bad, values = [], {}
    for section in raw:
        if section not in SCHEMA:
            bad.append(f"[{section}]: unknown section")
            continue
        for key in raw[section]:
            if key not in SCHEMA[section]:
                bad.append(f"{section}.{key}: unknown key")
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (conv, default) in keys.items():
            text = raw.get(section, {}).get(key, default)
            try:
                values[section][key] = conv(text)
            except ValueError:
                bad.append(f"{section}.{key}: cannot parse {text!r}")
    if bad:
        raise SchemaError(f"invalid configuration {source}: " + "; ".join(bad))
    cfg = RunConfig(values, source)
    try:
        make_oracle(cfg["oracle.kind"])
        for task in cfg.tasks().values():
            task.loss_spec
        cfg.search_config()
    except InferostaticError as exc:
        raise SchemaError(f"invalid configuration {source}: {exc}") from None
    return cfg


def _apply_overrides(raw, overrides):
    for item in overrides or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not (sep and dot):
            raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
        raw.setdefault(section, {})[name] = value.strip()
    return raw


def load_config(path=None, overrides=None):
    """Read an INI file (or the defaults when ``path`` is None) plus ``section.key=value`` overrides."""
    raw = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise SchemaError(f"cannot parse {path}: {exc}") from None
        raw = {s: dict(parser[s]) for s in parser.sections()}
    return _parse(_apply_overrides(raw, overrides), str(path) if path else "<defaults>")
