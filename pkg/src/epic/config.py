"""Run configuration (TOML).

One master ``seed`` drives everything; per-module seeds are derived from it
by labeled hashing. Unknown keys are rejected so that a typo in a
hyperparameter name fails loudly instead of silently using a default.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .datagen import CountrySpec, LineageSpec, SyntheticSpec
from .encoding import EncodingContext, default_alphabet, parse_month, read_records
from .exceptions import ConfigError
from .federated import FedConfig
from .nn import ModelSpec, TrainConfig
from .partition import SplitConfig
from .seeding import derive_seed

_SCHEMA = {
    "seed": int,
    "data": {"path": str, "study_start": str, "months": int, "countries": list, "labels": list},
    "synthetic": {
        "ancestral_length": int,
        "months": int,
        "total_samples": int,
        "noise_mutations_per_sample": int,
        "month_ramp": bool,
        "study_start": str,
        "lineages": [{"name": str, "signature_mutations": int, "frequency": (int, float)}],
        "countries": [{"name": str, "frequency": (int, float)}],
    },
    "encoding": {"max_len": int},
    "split": {"global_test_fraction": float, "global_train_fraction": float, "local_test_fraction": float},
    "model": {
        "hidden_dims": list,
        "dropout_rate": float,
        "use_batchnorm": bool,
        "activation": str,
        "bn_momentum": float,
        "bn_eps": float,
    },
    "train": {
        "epochs": int,
        "batch_size": int,
        "learning_rate": float,
        "adam_beta1": float,
        "adam_beta2": float,
        "adam_epsilon": float,
    },
    "federation": {"scheme": str, "local_fraction": float, "global_weighting": str},
    "run": {"centralized": bool},
}


def _validate(node, schema, path=""):
    if isinstance(schema, dict):
        if not isinstance(node, dict):
            raise ConfigError(f"{path or 'config'}: expected a table")
        for key, value in node.items():
            where = f"{path}.{key}" if path else key
            if key not in schema:
                raise ConfigError(f"unknown key {where!r}")
            _validate(value, schema[key], where)
    elif isinstance(schema, list):
        if not isinstance(node, list):
            raise ConfigError(f"{path}: expected an array of tables")
        for i, item in enumerate(node):
            _validate(item, schema[0], f"{path}[{i}]")
            missing = set(schema[0]) - set(item)
            if missing:
                raise ConfigError(f"{path}[{i}]: missing key {sorted(missing)[0]!r}")
    else:
        types = schema if isinstance(schema, tuple) else (schema,)
        if float in types and isinstance(node, int) and not isinstance(node, bool):
            return
        if isinstance(node, bool) and bool not in types:
            raise ConfigError(f"{path}: expected {types[0].__name__}, got bool")
        if not isinstance(node, types):
            raise ConfigError(f"{path}: expected {types[0].__name__}, got {type(node).__name__}")


@dataclass
class RunConfig:
    raw: dict
    source: Path | None = None
    text: str = ""
    _corpus_cache: dict = field(default_factory=dict, repr=False)

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    def section(self, name) -> dict:
        return dict(self.raw.get(name, {}))

    @property
    def is_synthetic(self) -> bool:
        return "synthetic" in self.raw

    @property
    def study_start(self) -> str:
        block = self.raw.get("synthetic") or self.raw.get("data") or {}
        return block.get("study_start", "2021-01")

    def seeds(self) -> dict[str, int]:
        return {
            label: derive_seed(self.seed, label)
            for label in ("synthetic", "split", "model", "train")
        }

    def synthetic_spec(self) -> SyntheticSpec:
        if not self.is_synthetic:
            raise ConfigError("missing key 'synthetic'")
        s = self.section("synthetic")
        s.pop("study_start", None)
        kwargs = {}
        if "lineages" in s:
            kwargs["lineages"] = tuple(LineageSpec(**l) for l in s.pop("lineages"))
        if "countries" in s:
            kwargs["countries"] = tuple(CountrySpec(**c) for c in s.pop("countries"))
        try:
            return SyntheticSpec(**kwargs, **s, seed=self.seeds()["synthetic"])
        except ValueError as exc:
            raise ConfigError(f"synthetic: {exc}") from exc

    def data_path(self) -> Path:
        p = Path(self.raw["data"]["path"])
        if not p.is_absolute() and self.source is not None and (self.source.parent / p).exists():
            return self.source.parent / p
        return p

    def corpus(self):
        """Records of the configured dataset, with months indexed from the study start."""
        if "records" not in self._corpus_cache:
            if self.is_synthetic:
                from .datagen import generate

                self._corpus_cache["records"] = generate(self.synthetic_spec())
            else:
                start = self.raw["data"].get("study_start")
                records, start = read_records(self.data_path(), start)
                self.raw["data"]["study_start"] = start
                self._corpus_cache["records"] = records
        return self._corpus_cache["records"]

    def countries(self) -> tuple[str, ...]:
        if self.is_synthetic:
            return self.synthetic_spec().country_names
        if "countries" in self.raw["data"]:
            return tuple(self.raw["data"]["countries"])
        return tuple(sorted({r.country for r in self.corpus()}))

    def months(self) -> tuple[int, ...]:
        if self.is_synthetic:
            return tuple(range(self.synthetic_spec().months))
        n = self.raw["data"].get("months")
        if n is None:
            n = max((r.month for r in self.corpus()), default=-1) + 1
        return tuple(range(n))

    def labels(self) -> tuple[str, ...]:
        if self.is_synthetic:
            return self.synthetic_spec().lineage_names
        if "labels" in self.raw["data"]:
            return tuple(self.raw["data"]["labels"])
        return tuple(sorted({r.lineage for r in self.corpus()}))

    def encoding_context(self) -> EncodingContext:
        max_len = self.section("encoding").get("max_len")
        if max_len is None:
            if self.is_synthetic:
                max_len = self.synthetic_spec().ancestral_length
            else:
                max_len = max((len(r.sequence) for r in self.corpus()), default=1)
        return EncodingContext(default_alphabet(), int(max_len), self.labels())

    def split_config(self) -> SplitConfig:
        try:
            return SplitConfig(**self.section("split"), seed=self.seeds()["split"])
        except ValueError as exc:
            raise ConfigError(f"split: {exc}") from exc

    def model_spec(self, ctx: EncodingContext | None = None) -> ModelSpec:
        ctx = ctx or self.encoding_context()
        m = self.section("model")
        if "hidden_dims" in m:
            m["hidden_dims"] = tuple(m["hidden_dims"])
        try:
            return ModelSpec(
                input_dim=ctx.feature_width, num_classes=ctx.num_classes, seed=self.seeds()["model"], **m
            )
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from exc

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(**self.section("train"), shuffle_seed=self.seeds()["train"])
        except ValueError as exc:
            raise ConfigError(f"train: {exc}") from exc

    def fed_config(self) -> FedConfig:
        try:
            return FedConfig(**self.section("federation"))
        except ValueError as exc:
            raise ConfigError(f"federation: {exc}") from exc

    @property
    def run_centralized(self) -> bool:
        return bool(self.section("run").get("centralized", True))

    def validate_for_run(self) -> None:
        if not self.months():
            raise ConfigError("months must be at least 1")
        if not self.countries():
            raise ConfigError("no countries configured")
        self.split_config()
        self.train_config()
        self.fed_config()
        self.model_spec()


def parse_config(text: str, source: Path | None = None) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    _validate(raw, _SCHEMA)
    has_data, has_syn = "data" in raw, "synthetic" in raw
    if not has_data and not has_syn:
        raise ConfigError("missing key 'synthetic' (or 'data'): one dataset source is required")
    if has_data and has_syn:
        raise ConfigError("only one of 'data' or 'synthetic' may be present")
    if has_data and "path" not in raw["data"]:
        raise ConfigError("missing key 'data.path'")
    for block in ("data", "synthetic"):
        if "study_start" in raw.get(block, {}):
            try:
                parse_month(raw[block]["study_start"])
            except ValueError as exc:
                raise ConfigError(f"{block}.study_start: {exc}") from exc
    for key in ("months",):
        for block in ("data", "synthetic"):
            if key in raw.get(block, {}) and raw[block][key] < 1:
                raise ConfigError(f"{block}.{key} must be at least 1")
    return RunConfig(raw=raw, source=source, text=text)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path)
