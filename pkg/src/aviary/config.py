"""Configuration loading and validation.

The config file is a flat key-value text format, hand-editable on a headless
box:

    # lines starting with '#' are comments, blank lines are ignored
    key = value

Booleans accept true/false, yes/no, 1/0 (case-insensitive).  The two
structured keys are ``species_labels`` (comma-separated, order defines the
class index) and ``ftp_credentials`` (``username:password``).  Unknown keys
are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(Exception):
    """Bad config file, bad override, or invariant violation."""


# Default label set: 40 feeder-sized garden species common in Belgium.
# Order is load-bearing: the index is the class index everywhere.
DEFAULT_SPECIES_LABELS = (
    "european_robin",
    "blue_tit",
    "great_tit",
    "house_sparrow",
    "eurasian_blackbird",
    "coal_tit",
    "marsh_tit",
    "crested_tit",
    "long_tailed_tit",
    "eurasian_nuthatch",
    "short_toed_treecreeper",
    "eurasian_wren",
    "dunnock",
    "european_greenfinch",
    "european_goldfinch",
    "common_chaffinch",
    "brambling",
    "eurasian_siskin",
    "common_linnet",
    "lesser_redpoll",
    "eurasian_bullfinch",
    "hawfinch",
    "european_serin",
    "common_starling",
    "song_thrush",
    "redwing",
    "fieldfare",
    "mistle_thrush",
    "european_pied_flycatcher",
    "spotted_flycatcher",
    "common_chiffchaff",
    "willow_warbler",
    "eurasian_blackcap",
    "garden_warbler",
    "goldcrest",
    "firecrest",
    "eurasian_tree_sparrow",
    "great_spotted_woodpecker",
    "middle_spotted_woodpecker",
    "black_redstart",
)

BACKEND_MODES = ("mock", "sidecar")
INGEST_SOURCES = ("ftp", "watcher", "cli")


@dataclass(frozen=True)
class AppConfig:
    ingest_dir: str = "ingest"
    ftp_enabled: bool = True
    ftp_port: int = 2121
    ftp_user: str = "camera"
    ftp_password: str = "secret"
    sample_rate_hz: float = 1.0
    blur_threshold: float = 100.0  # variance-of-Laplacian gate; 0 disables
    det_score_threshold: float = 0.7
    iou_threshold: float = 0.5
    area_fraction_threshold: float = 0.02
    cls_confidence_threshold: float = 0.7
    bird_class_id: int = 14
    species_labels: tuple[str, ...] = DEFAULT_SPECIES_LABELS
    backend_mode: str = "mock"
    # URL / command template for the sidecar backend; fixture root for mock.
    sidecar_endpoint: str = ""
    store_dir: str = "store"
    http_port: int = 8787
    tta_enabled: bool = True
    # External decoder command with {input} {output} {rate} placeholders.
    # Empty means only the raw AVRY1 container is decodable.
    decoder_cmd: str = ""

    def validate(self) -> None:
        for key in (
            "det_score_threshold",
            "iou_threshold",
            "area_fraction_threshold",
            "cls_confidence_threshold",
        ):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{key} must be in [0, 1], got {v}")
        if self.sample_rate_hz <= 0:
            raise ConfigError(f"sample_rate_hz must be > 0, got {self.sample_rate_hz}")
        if self.blur_threshold < 0:
            raise ConfigError(f"blur_threshold must be >= 0, got {self.blur_threshold}")
        # port 0 binds an ephemeral port (handy for tests and dev)
        if not 0 <= self.ftp_port <= 65535:
            raise ConfigError(f"ftp_port must be a valid port, got {self.ftp_port}")
        if not 0 <= self.http_port <= 65535:
            raise ConfigError(f"http_port must be a valid port, got {self.http_port}")
        if self.bird_class_id < 0:
            raise ConfigError(f"bird_class_id must be >= 0, got {self.bird_class_id}")
        if not self.species_labels:
            raise ConfigError("species_labels must be non-empty")
        if len(set(self.species_labels)) != len(self.species_labels):
            raise ConfigError("species_labels must be unique")
        if self.backend_mode not in BACKEND_MODES:
            raise ConfigError(
                f"backend_mode must be one of {'/'.join(BACKEND_MODES)}, got {self.backend_mode!r}"
            )


_BOOL_KEYS = {"ftp_enabled", "tta_enabled"}
_INT_KEYS = {"ftp_port", "http_port", "bird_class_id"}
_FLOAT_KEYS = {
    "sample_rate_hz",
    "blur_threshold",
    "det_score_threshold",
    "iou_threshold",
    "area_fraction_threshold",
    "cls_confidence_threshold",
}
_STR_KEYS = {
    "ingest_dir",
    "backend_mode",
    "sidecar_endpoint",
    "store_dir",
    "decoder_cmd",
}
# Every key the parser accepts; "ftp_credentials" and "species_labels" are
# the structured ones.
_ALL_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | {
    "ftp_credentials",
    "species_labels",
}

_TRUE = {"true", "yes", "1", "on"}
_FALSE = {"false", "no", "0", "off"}


def _parse_value(key: str, raw: str, where: str) -> dict:
    """Convert one raw string value into AppConfig field assignments."""
    if key not in _ALL_KEYS:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    if key in _BOOL_KEYS:
        low = raw.lower()
        if low in _TRUE:
            return {key: True}
        if low in _FALSE:
            return {key: False}
        raise ConfigError(f"{where}: {key} expects true/false, got {raw!r}")
    if key in _INT_KEYS:
        try:
            return {key: int(raw)}
        except ValueError:
            raise ConfigError(f"{where}: {key} expects an integer, got {raw!r}") from None
    if key in _FLOAT_KEYS:
        try:
            return {key: float(raw)}
        except ValueError:
            raise ConfigError(f"{where}: {key} expects a number, got {raw!r}") from None
    if key == "ftp_credentials":
        if ":" not in raw:
            raise ConfigError(f"{where}: ftp_credentials expects 'user:password'")
        user, password = raw.split(":", 1)
        if not user:
            raise ConfigError(f"{where}: ftp_credentials username is empty")
        return {"ftp_user": user, "ftp_password": password}
    if key == "species_labels":
        labels = tuple(x.strip() for x in raw.split(",") if x.strip())
        return {"species_labels": labels}
    return {key: raw}


def _parse_lines(lines, where_prefix: str) -> dict:
    fields = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{where_prefix} line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        fields.update(_parse_value(key.strip(), raw.strip(), f"{where_prefix} line {lineno}"))
    return fields


def load_config(path: str | Path | None, overrides: list[str] | None = None) -> AppConfig:
    """Load config from ``path`` (None means all defaults) with overrides.

    Overrides are ``key=value`` strings and win over file values.  Raises
    ConfigError on a missing file, a parse error (with line info), or an
    invariant violation naming the offending key.
    """
    fields: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        fields.update(_parse_lines(p.read_text().splitlines(), str(p)))
    for i, ov in enumerate(overrides or [], start=1):
        if "=" not in ov:
            raise ConfigError(f"override #{i}: expected key=value, got {ov!r}")
        key, _, raw = ov.partition("=")
        fields.update(_parse_value(key.strip(), raw.strip(), f"override #{i}"))
    cfg = AppConfig(**fields)
    cfg.validate()
    return cfg


def dump_config(cfg: AppConfig) -> str:
    """Serialize a config so that load() of the result round-trips."""
    out = ["# aviary configuration"]
    for f in dataclasses.fields(cfg):
        if f.name == "ftp_user":
            out.append(f"ftp_credentials = {cfg.ftp_user}:{cfg.ftp_password}")
            continue
        if f.name == "ftp_password":
            continue
        value = getattr(cfg, f.name)
        if f.name == "species_labels":
            value = ",".join(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        out.append(f"{f.name} = {value}")
    return "\n".join(out) + "\n"


def parse_config_text(text: str, overrides: list[str] | None = None) -> AppConfig:
    """Parse config from a string (same grammar as load_config)."""
    fields = _parse_lines(text.splitlines(), "<config>")
    for i, ov in enumerate(overrides or [], start=1):
        if "=" not in ov:
            raise ConfigError(f"override #{i}: expected key=value, got {ov!r}")
        key, _, raw = ov.partition("=")
        fields.update(_parse_value(key.strip(), raw.strip(), f"override #{i}"))
    cfg = AppConfig(**fields)
    cfg.validate()
    return cfg
