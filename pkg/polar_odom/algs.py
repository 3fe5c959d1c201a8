""" Named odometry configurations, config files and dotted overrides.

Presets form a chain of copies of one base bundle; apart from the changes each
preset names, every parameter is shared.

"""
import dataclasses
import logging

import yaml

from polar_odom.errors import ConfigError, OdometryError, UnknownPreset
from polar_odom.models.odometry import OdometryConfig
from polar_odom.models.registration import RegistrationConfig

logger = logging.getLogger(__name__)

# section name used in override keys -> OdometryConfig attribute (None: top level)
SECTION_ALIASES = {
    "filter": "filter",
    "features": "features",
    "reg": "registration",
    "registration": "registration",
    "scan": "scan",
    "odom": None,
}


# --- overrides ---

def _coerce(key, value, current, annotation=None):
    if isinstance(value, str):
        try:
            value = yaml.safe_load(value)
        except yaml.YAMLError as e:
            raise ConfigError("cannot parse value for {}: {}".format(key, e))

    if current is None:
        if value is None:
            return None
        return _coerce(key, value, 0 if annotation in (int, "int") else 0.0)

    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError("{} expects true or false, got {!r}".format(key, value))
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError("{} expects an integer, got {!r}".format(key, value))
        return int(value)
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("{} expects a number, got {!r}".format(key, value))
        return float(value)
    if isinstance(current, str):
        return str(value)
    raise ConfigError("{} cannot be overridden".format(key))


def _valid_keys(config):
    keys = []
    for section, attr in sorted(SECTION_ALIASES.items()):
        target = config if attr is None else getattr(config, attr)
        for f in dataclasses.fields(target):
            if not dataclasses.is_dataclass(getattr(target, f.name)):
                keys.append("{}.{}".format(section, f.name))
    return keys


def apply_overrides(config, overrides, aliases=None):
    """ Return a copy of `config` with dotted `overrides` applied.

    Keys are `section.field` where section is one of SECTION_ALIASES (`odom` addresses the
    top-level fields). With `aliases={}` the keys are plain field names of `config` itself,
    which is how non-odometry dataclasses such as SimConfig are overridden.

    """
    aliases = SECTION_ALIASES if aliases is None else aliases
    items = overrides.items() if hasattr(overrides, "items") else overrides

    pending = {}
    for key, value in items:
        if aliases:
            section, _, name = key.partition(".")
            if section not in aliases or not name:
                raise ConfigError("unknown config key {!r}; valid keys: {}".format(key, ", ".join(_valid_keys(config))))
            attr = aliases[section]
        else:
            attr, name = None, key

        target = config if attr is None else getattr(config, attr)
        types = {f.name: f.type for f in dataclasses.fields(target)}
        field_names = set(types)
        if name not in field_names or dataclasses.is_dataclass(getattr(target, name)):
            valid = ", ".join(_valid_keys(config)) if aliases else ", ".join(sorted(field_names))
            raise ConfigError("unknown config key {!r}; valid keys: {}".format(key, valid))

        pending.setdefault(attr, {})[name] = _coerce(key, value, getattr(target, name), types[name])

    try:
        sections = {
            attr: dataclasses.replace(getattr(config, attr), **changes)
            for attr, changes in pending.items() if attr is not None}
        top = dict(pending.get(None, {}), **sections)
        return dataclasses.replace(config, **top)
    except ConfigError:
        raise
    except (TypeError, ValueError, OdometryError) as e:
        raise ConfigError(str(e))


def parse_set_args(assignments):
    """ ["filter.k=8", ...] -> [("filter.k", "8"), ...] """
    pairs = []
    for item in assignments or ():
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError("--set expects key=value, got {!r}".format(item))
        pairs.append((key.strip(), value.strip()))
    return pairs


# --- presets ---

def _copy(config, **changes):
    """ Like Config.copy: nested sections are given as dicts and merged into the existing section. """
    flat = {}
    for key, value in changes.items():
        if isinstance(value, dict):
            flat.update({"{}.{}".format(key, k): v for k, v in value.items()})
        else:
            flat["odom.{}".format(key)] = value
    return apply_overrides(config, flat)


base_config = OdometryConfig(
    name="base",
    registration=RegistrationConfig(metric="p2d", ctf_enabled=False),
    keyframe_distance=1.5,
    keyframe_capacity=4,
)

cfear_3_config = _copy(base_config, name="cfear-3")

cfear_ctf_config = _copy(cfear_3_config, name="cfear-ctf", reg=dict(ctf_enabled=True))

cfear_ctf_s10_config = _copy(cfear_ctf_config, name="cfear-ctf-s10", keyframe_capacity=10)

cfear_p2l_config = _copy(cfear_3_config, name="cfear-p2l", reg=dict(metric="p2l"))

PRESETS = {
    c.name: c for c in (cfear_3_config, cfear_ctf_config, cfear_ctf_s10_config, cfear_p2l_config)}

DEFAULT_PRESET = "cfear-ctf-s10"


def preset_names():
    return sorted(PRESETS)


def preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise UnknownPreset("unknown preset {!r}; valid presets: {}".format(name, ", ".join(preset_names())))


# --- config files ---

def _flatten(mapping, prefix=""):
    flat = []
    for key, value in mapping.items():
        key = "{}{}".format(prefix, key)
        if isinstance(value, dict):
            flat.extend(_flatten(value, key + "."))
        else:
            flat.append((key, value))
    return flat


def read_config_file(path):
    """ YAML config file -> (preset name or None, [(dotted key, value), ...]). """
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError("{}: invalid YAML: {}".format(path, e))

    if data is None:
        return None, []
    if not isinstance(data, dict):
        raise ConfigError("{}: expected a mapping at top level".format(path))

    data = dict(data)
    name = data.pop("preset", None)
    return name, _flatten(data)


def build_config(preset_name=None, config_path=None, overrides=()):
    """ Resolve preset, config file and --set overrides, in that order of increasing priority.

    Returns (OdometryConfig, sim overrides); `sim.*` keys are handed back for the simulator.

    """
    file_preset, file_overrides = (None, [])
    if config_path is not None:
        file_preset, file_overrides = read_config_file(config_path)

    name = preset_name or file_preset or DEFAULT_PRESET
    config = preset(name)

    odom, sim = [], []
    for key, value in list(file_overrides) + list(overrides):
        if key.startswith("sim."):
            sim.append((key[len("sim."):], value))
        else:
            odom.append((key, value))

    config = apply_overrides(config, odom)
    if odom:
        logger.info("preset {} with overrides: {}".format(name, ", ".join("{}={}".format(k, v) for k, v in odom)))
    return config, sim
