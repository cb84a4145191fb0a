import math
import os
from dataclasses import dataclass, field, fields, replace

from errors import ConfigError

# grid
P_OCC = 0.5  # occupied when probability >= P_OCC
UNKNOWN = -1.0  # sentinel for unobserved cells, also its on-disk encoding
GRID_MAGIC = "locus-grid 1"
PGM_UNKNOWN_BYTE = 205  # map_server convention, override per import

# detector - sigma and nms radius in cells
SIGMA = 2.0
DETECTION_THRESHOLD = 0.0025
NMS_RADIUS = 2
D_THRESHOLD = math.inf

# descriptor
RADIUS = 0.8
N_BINS = 17
N_ORIENT_BINS = 36
DISTANCE_WEIGHT = 0.002
SPATIAL_SIGMA = 0.5

# matching
MAX_RATIO = 0.75
INLIER_RADIUS = 0.3
RANSAC_CONFIDENCE = 0.99
RANSAC_MAX_ITERS = 1000
MIN_INLIERS = 5
SINGLETON_MAX_DISTANCE = 0.25
RNG_SEED = 0

# evaluation
OVERLAP_THRESHOLD = 0.3
POSE_TOLERANCE_M = 0.5
POSE_TOLERANCE_DEG = 5.0
N_PAIRS = 1000
D_THRESHOLDS = (0.5, 1.0, 1.5, 2.0)

# env var used when no --seed is given
SEED_ENV_VAR = "LOCUS_SEED"

# synthetic worlds are rasterized at 0.1 m. Room-scale |det H| peaks are
# around 1e-4 to 8e-4 at 5-10 cm cells, far below DETECTION_THRESHOLD
SYNTHETIC_RESOLUTION = 0.1
SYNTHETIC_PRESET = {
    "detect.detection_threshold": "1e-4",
    "match.min_inliers": "4",
}


# value parsers for the key=value format
def _parse_float(text):
    return float(text)


def _parse_positive_int(text):
    value = int(text)
    if value < 0:
        raise ValueError(f"expected a non-negative integer, got {text}")
    return value


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text}")


def _parse_optional_int(text):
    if text.strip().lower() in ("auto", "none", ""):
        return None
    return _parse_positive_int(text)


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "auto"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _opt(default, parse):
    return field(default=default, metadata={"parse": parse})


@dataclass(frozen=True)
class GridParams:
    p_occ: float = _opt(P_OCC, _parse_float)

    def __post_init__(self):
        if not 0.0 < self.p_occ < 1.0:
            raise ValueError(f"p_occ must lie in (0, 1), got {self.p_occ}")


@dataclass(frozen=True)
class DetectorParams:
    """
    sigma is in cells, detection_threshold in m^2/cell^4 (see DESIGN.md),
    border_margin in cells (None derives it from sigma and the descriptor
    radius), d_threshold in meters.
    """
    sigma: float = _opt(SIGMA, _parse_float)
    detection_threshold: float = _opt(DETECTION_THRESHOLD, _parse_float)
    nms_radius: int = _opt(NMS_RADIUS, _parse_positive_int)
    border_margin: int = _opt(None, _parse_optional_int)
    d_threshold: float = _opt(D_THRESHOLD, _parse_float)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.detection_threshold > 0:
            raise ValueError(f"detection_threshold must be positive, got {self.detection_threshold}")
        if self.nms_radius < 1:
            raise ValueError(f"nms_radius must be >= 1, got {self.nms_radius}")
        if not self.d_threshold > 0:
            raise ValueError(f"d_threshold must be positive or inf, got {self.d_threshold}")


@dataclass(frozen=True)
class DescriptorParams:
    radius: float = _opt(RADIUS, _parse_float)
    n_bins: int = _opt(N_BINS, _parse_positive_int)
    n_orient_bins: int = _opt(N_ORIENT_BINS, _parse_positive_int)
    distance_weight: float = _opt(DISTANCE_WEIGHT, _parse_float)
    spatial_sigma: float = _opt(SPATIAL_SIGMA, _parse_float)
    weighted_mean: bool = _opt(True, _parse_bool)

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.n_bins < 2 or self.n_orient_bins < 2:
            raise ValueError("n_bins and n_orient_bins must be >= 2")
        if self.distance_weight < 0:
            raise ValueError(f"distance_weight must be >= 0, got {self.distance_weight}")
        if not self.spatial_sigma > 0:
            raise ValueError(f"spatial_sigma must be positive, got {self.spatial_sigma}")


@dataclass(frozen=True)
class MatchParams:
    max_ratio: float = _opt(MAX_RATIO, _parse_float)
    inlier_radius: float = _opt(INLIER_RADIUS, _parse_float)
    ransac_confidence: float = _opt(RANSAC_CONFIDENCE, _parse_float)
    ransac_max_iters: int = _opt(RANSAC_MAX_ITERS, _parse_positive_int)
    min_inliers: int = _opt(MIN_INLIERS, _parse_positive_int)
    rng_seed: int = _opt(RNG_SEED, _parse_positive_int)
    singleton_max_distance: float = _opt(SINGLETON_MAX_DISTANCE, _parse_float)
    mutual_check: bool = _opt(False, _parse_bool)

    def __post_init__(self):
        if not 0.0 < self.max_ratio < 1.0:
            raise ValueError(f"max_ratio must lie in (0, 1), got {self.max_ratio}")
        if not self.inlier_radius > 0:
            raise ValueError(f"inlier_radius must be positive, got {self.inlier_radius}")
        if not 0.0 < self.ransac_confidence < 1.0:
            raise ValueError(f"ransac_confidence must lie in (0, 1), got {self.ransac_confidence}")


@dataclass(frozen=True)
class EvalParams:
    overlap_threshold: float = _opt(OVERLAP_THRESHOLD, _parse_float)
    pose_tolerance_m: float = _opt(POSE_TOLERANCE_M, _parse_float)
    pose_tolerance_deg: float = _opt(POSE_TOLERANCE_DEG, _parse_float)
    decision_only: bool = _opt(False, _parse_bool)
    n_pairs: int = _opt(N_PAIRS, _parse_positive_int)
    rng_seed: int = _opt(RNG_SEED, _parse_positive_int)


# section name in the config file -> Config attribute
SECTIONS = {
    "grid": "grid",
    "detect": "detector",
    "describe": "descriptor",
    "match": "match",
    "eval": "eval",
}


@dataclass(frozen=True)
class Config:
    grid: GridParams = field(default_factory=GridParams)
    detector: DetectorParams = field(default_factory=DetectorParams)
    descriptor: DescriptorParams = field(default_factory=DescriptorParams)
    match: MatchParams = field(default_factory=MatchParams)
    eval: EvalParams = field(default_factory=EvalParams)

    def with_values(self, values):
        """Return a copy with dotted keys (e.g. "detect.sigma") overridden by raw strings."""
        return config_from_mapping(values, base=self)


def parse_key_values(text, source="<config>"):
    """
    Parse flat key=value text into an ordered dict of raw strings.

    Blank lines and '#' comments are skipped; a repeated key keeps its last value.
    """
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected key = value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{line_no}: empty key")
        values[key] = value.strip()
    return values


def config_from_mapping(values, base=None):
    """Build a Config from dotted keys; unknown keys and bad values raise ConfigError."""
    config = base if base is not None else Config()
    updates = {}
    for key, raw in values.items():
        section, _, name = key.partition(".")
        attr = SECTIONS.get(section)
        if attr is None or not name:
            raise ConfigError(f"unknown config key: {key}")
        params = updates.get(attr, getattr(config, attr))
        spec = {f.name: f for f in fields(params)}
        if name not in spec:
            raise ConfigError(f"unknown config key: {key}")
        try:
            value = spec[name].metadata["parse"](raw)
        except ValueError as e:
            raise ConfigError(f"bad value for {key}: {raw!r} ({e})") from e
        updates[attr] = replace_params(params, key, **{name: value})
    return replace(config, **updates)


def replace_params(params, key, **changes):
    try:
        return replace(params, **changes)
    except ValueError as e:
        raise ConfigError(f"invalid value for {key}: {e}") from e


def parse_config(text, source="<config>"):
    return config_from_mapping(parse_key_values(text, source))


def load_config(path=None, overrides=None):
    """
    Load a config file on top of the defaults.

    Parameters:
        path: key=value file, or None for defaults only
        overrides: optional dotted-key mapping applied after the file

    Returns:
        Config
    """
    config = Config()
    if path is not None:
        with open(path, encoding="utf-8") as f:
            config = config_from_mapping(parse_key_values(f.read(), str(path)), base=config)
    if overrides:
        config = config_from_mapping(overrides, base=config)
    return config


def dump_config(config):
    """Serialize every resolved parameter, one dotted key per line."""
    lines = []
    for section, attr in SECTIONS.items():
        params = getattr(config, attr)
        for f in fields(params):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(params, f.name))}")
    return "\n".join(lines) + "\n"


def resolve_seed(flag_value, fallback):
    """--seed beats LOCUS_SEED beats the config value."""
    if flag_value is not None:
        return int(flag_value)
    env = os.environ.get(SEED_ENV_VAR)
    if env:
        try:
            return int(env)
        except ValueError as e:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from e
    return int(fallback)
