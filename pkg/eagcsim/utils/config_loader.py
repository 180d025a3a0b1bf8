"""
Scenario and application configuration loading.

Scenario files are YAML (``.scenario``, ``.yaml``, ``.yml``) or JSON. Loading
runs three stages, each with its own error category:

    1. read + ``${VAR}`` / ``${VAR:default}`` substitution + parse
       (ScenarioNotFoundError, ScenarioSyntaxError)
    2. pydantic schema validation (ScenarioSchemaError)
    3. cross-reference and topology checks (DanglingReferenceError,
       NonPositiveDefiniteWeightsError, ScenarioSchemaError)

Errors carry the source line when it can be located.
"""

import hashlib
import json
import os
import re
from collections import deque
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import yaml
from pydantic import ValidationError

from ..core.errors import OutputError
from ..core.schemas import AppConfigSchema, NetworkModel, ScenarioDocument, SolverConfig

YAML_SUFFIXES = ('.scenario', '.yaml', '.yml')
PARTICIPATION_TOLERANCE = 1e-9
RESERVED_LAYER_ID = "system"

Location = Tuple[Union[str, int], ...]


class ConfigError(Exception):
    """Base class for configuration and scenario errors."""

    def __init__(self, message: str, path: Optional[Path] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")


class ScenarioNotFoundError(ConfigError):
    """Scenario file does not exist or cannot be read."""
    pass


class ScenarioSyntaxError(ConfigError):
    """Scenario file is not well-formed YAML or JSON."""
    pass


class ScenarioSchemaError(ConfigError):
    """A field is missing, mistyped or violates a constraint."""

    def __init__(self, message: str, path: Optional[Path] = None, line: Optional[int] = None,
                 field_path: str = ""):
        self.field_path = field_path
        if field_path:
            message = f"{field_path}: {message}"
        super().__init__(message, path, line)


class DanglingReferenceError(ConfigError):
    """An id refers to a component that does not exist."""

    def __init__(self, message: str, reference: str, path: Optional[Path] = None,
                 line: Optional[int] = None):
        self.reference = reference
        super().__init__(message, path, line)


class NonPositiveDefiniteWeightsError(ConfigError):
    """LQR weights are not positive definite."""
    pass


def _format_loc(loc: Iterable[Union[str, int]]) -> str:
    parts: List[str] = []
    for item in loc:
        if isinstance(item, int):
            parts.append(f"[{item}]")
        else:
            parts.append(f".{item}" if parts else str(item))
    return "".join(parts)


class _SourceMap:
    """Line lookup for keys of a YAML document."""

    def __init__(self, content: Optional[str]):
        self._root = None
        if content:
            try:
                self._root = yaml.compose(content, Loader=yaml.SafeLoader)
            except yaml.YAMLError:
                self._root = None

    def line_of(self, loc: Location) -> Optional[int]:
        node = self._root
        line = None
        for key in loc:
            if isinstance(node, yaml.MappingNode):
                match = next((pair for pair in node.value if pair[0].value == str(key)), None)
                if match is None:
                    break
                line = match[0].start_mark.line + 1
                node = match[1]
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
                node = node.value[key]
                line = node.start_mark.line + 1
            else:
                break
        return line


class ConfigLoader:
    """
    Configuration and scenario loader with caching and validation.
    """

    def __init__(self, base_path: Optional[Path] = None):
        """
        Initialize config loader.

        Args:
            base_path: Base path for resolving relative paths (defaults to current directory)
        """
        self.base_path = base_path or Path.cwd()
        self._cache: Dict[Any, Any] = {}

    def load_app_config(self, config_path: Optional[Path] = None) -> AppConfigSchema:
        """
        Load application configuration.

        The nested ``paths``, ``execution`` and ``logging`` sections are
        flattened onto AppConfigSchema.

        Args:
            config_path: Path to config file (defaults to config/app.yaml)

        Returns:
            Validated application configuration

        Raises:
            ConfigError: If configuration is invalid or cannot be loaded
        """
        if config_path is None:
            config_path = self.base_path / "config" / "app.yaml"

        cache_key = f"app_config:{config_path}"
        if cache_key in self._cache:
            return self._cache[cache_key]

        try:
            content = self._read_with_env_substitution(Path(config_path))
            raw = self._parse(content, Path(config_path)) or {}
            config = AppConfigSchema(**self._resolve_paths(self._flatten_app_config(raw)))
        except ConfigError:
            raise
        except (ValidationError, TypeError, AttributeError) as e:
            raise ConfigError(f"Failed to load app config: {e}", Path(config_path)) from e

        self._cache[cache_key] = config
        return config

    @staticmethod
    def _flatten_app_config(raw: Dict[str, Any]) -> Dict[str, Any]:
        paths = raw.get("paths") or {}
        execution = raw.get("execution") or {}
        logging_section = raw.get("logging") or {}
        flat: Dict[str, Any] = {"version": raw.get("version", 1)}
        if "scenarios" in paths:
            flat["scenarios_path"] = paths["scenarios"]
        if "runs" in paths:
            flat["runs_path"] = paths["runs"]
        if "max_workers" in execution:
            flat["max_workers"] = execution["max_workers"]
        if "level" in logging_section:
            flat["log_level"] = str(logging_section["level"]).upper()
        if "format" in logging_section:
            flat["log_format"] = logging_section["format"]
        if logging_section.get("output"):
            flat["log_output_path"] = logging_section["output"]
        return flat

    def load_scenario(self, scenario_path: Path) -> ScenarioDocument:
        """
        Load and fully validate a scenario file.

        Args:
            scenario_path: Path to the scenario

        Returns:
            Validated scenario document

        Raises:
            ScenarioNotFoundError: Missing or unreadable file
            ScenarioSyntaxError: Malformed YAML or JSON
            ScenarioSchemaError: Schema or topology violation
            DanglingReferenceError: Unknown id
            NonPositiveDefiniteWeightsError: Invalid LQR weights
        """
        path = Path(scenario_path)
        if not path.is_absolute():
            path = self.base_path / path
        try:
            stamp = path.stat().st_mtime_ns
        except OSError:
            raise ScenarioNotFoundError("scenario file not found", path) from None

        cache_key = ("scenario", str(path), stamp)
        if cache_key in self._cache:
            return self._cache[cache_key]

        content = self._read_with_env_substitution(path)
        data = self._parse(content, path)
        source = _SourceMap(content if path.suffix.lower() in YAML_SUFFIXES else None)
        document = validate_scenario_data(data, path, source)

        self._cache[cache_key] = document
        return document

    def _read_with_env_substitution(self, file_path: Path) -> str:
        """
        Read a file and substitute environment variables.

        Raises:
            ScenarioNotFoundError: If the file cannot be read
        """
        if not file_path.exists():
            raise ScenarioNotFoundError("file not found", file_path)
        try:
            content = file_path.read_text(encoding='utf-8')
        except (OSError, UnicodeDecodeError) as e:
            raise ScenarioNotFoundError(f"cannot read file ({e})", file_path) from e
        return self._substitute_env_vars(content, file_path)

    @staticmethod
    def _parse(content: str, file_path: Path) -> Any:
        """Parse by file extension; YAML for scenario and YAML suffixes, JSON otherwise."""
        if file_path.suffix.lower() in YAML_SUFFIXES:
            try:
                return yaml.safe_load(content)
            except yaml.YAMLError as e:
                mark = getattr(e, "problem_mark", None)
                line = mark.line + 1 if mark is not None else None
                problem = getattr(e, "problem", None) or str(e)
                column = f", column {mark.column + 1}" if mark is not None else ""
                raise ScenarioSyntaxError(f"invalid YAML ({problem}{column})", file_path, line) from e
        try:
            return json.loads(content)
        except json.JSONDecodeError as e:
            raise ScenarioSyntaxError(f"invalid JSON ({e.msg}, column {e.colno})", file_path, e.lineno) from e

    def _substitute_env_vars(self, content: str, file_path: Optional[Path] = None) -> str:
        """
        Substitute environment variables in configuration content.

        Supports formats:
        - ${VAR_NAME}
        - ${VAR_NAME:default_value}
        """
        def replace_env_var(match):
            var_expr = match.group(1)
            if ':' in var_expr:
                var_name, default_value = var_expr.split(':', 1)
                return os.getenv(var_name, default_value)
            value = os.getenv(var_expr)
            if value is None:
                raise ConfigError(f"Environment variable {var_expr} not found", file_path)
            return value

        return re.sub(r'\$\{([^}]+)\}', replace_env_var, content)

    def _resolve_paths(self, config_dict: Dict[str, Any]) -> Dict[str, Any]:
        """Resolve relative path fields against the base path."""
        resolved_config = config_dict.copy()
        for field in ('scenarios_path', 'runs_path', 'log_output_path'):
            path_value = resolved_config.get(field)
            if isinstance(path_value, str):
                path_obj = Path(path_value)
                if not path_obj.is_absolute():
                    resolved_config[field] = str(self.base_path / path_obj)
        return resolved_config

    def clear_cache(self) -> None:
        """Clear configuration cache."""
        self._cache.clear()


def validate_scenario_data(
    data: Any, path: Optional[Path] = None, source: Optional[_SourceMap] = None
) -> ScenarioDocument:
    """
    Schema-validate and cross-check parsed scenario data.

    Raises:
        ScenarioSchemaError, DanglingReferenceError, NonPositiveDefiniteWeightsError
    """
    source = source or _SourceMap(None)
    if not isinstance(data, dict):
        raise ScenarioSchemaError("top level must be a mapping", path, 1)
    try:
        document = ScenarioDocument.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = tuple(first["loc"])
        raise ScenarioSchemaError(
            first["msg"], path, source.line_of(loc), field_path=_format_loc(loc)
        ) from e
    _ScenarioChecker(document, path, source).run()
    return document


class _ScenarioChecker:
    """Cross-reference, topology and weight checks."""

    def __init__(self, document: ScenarioDocument, path: Optional[Path], source: _SourceMap):
        self.doc = document
        self.path = path
        self.source = source

    def _dangling(self, message: str, reference: str, loc: Location) -> DanglingReferenceError:
        return DanglingReferenceError(
            f"{_format_loc(loc)}: {message}", reference, self.path, self.source.line_of(loc)
        )

    def _schema(self, message: str, loc: Location) -> ScenarioSchemaError:
        return ScenarioSchemaError(message, self.path, self.source.line_of(loc), field_path=_format_loc(loc))

    def run(self) -> None:
        self.check_attachments()
        self.check_lines()
        self.check_areas()
        self.check_connectivity()
        self.check_disturbances()
        self.check_controller()
        self.check_initialization()

    def check_attachments(self) -> None:
        doc = self.doc
        attached_generators: Dict[str, str] = {}
        attached_loads: Dict[str, str] = {}
        for bus_id, bus in doc.network.buses.items():
            loc: Location = ("network", "buses", bus_id)
            if bus.generator is not None:
                if bus.generator not in doc.generators:
                    raise self._dangling(f"unknown generator '{bus.generator}'", bus.generator, loc + ("generator",))
                if bus.generator in attached_generators:
                    raise self._schema(
                        f"generator '{bus.generator}' is attached to buses "
                        f"'{attached_generators[bus.generator]}' and '{bus_id}'", loc + ("generator",))
                attached_generators[bus.generator] = bus_id
                if bus.voltage > doc.network.voltage_limit:
                    raise self._schema(
                        f"voltage {bus.voltage} exceeds voltage_limit {doc.network.voltage_limit}",
                        loc + ("voltage",))
            if bus.load is not None:
                if bus.load not in doc.loads:
                    raise self._dangling(f"unknown load '{bus.load}'", bus.load, loc + ("load",))
                if bus.load in attached_loads:
                    raise self._schema(
                        f"load '{bus.load}' is attached to buses "
                        f"'{attached_loads[bus.load]}' and '{bus_id}'", loc + ("load",))
                attached_loads[bus.load] = bus_id
            if bus.area is not None and bus.area not in doc.areas:
                raise self._dangling(f"unknown area '{bus.area}'", bus.area, loc + ("area",))
            if bus.generator is None and bus.area is None and len(doc.areas) > 1:
                raise self._schema("non-generator bus needs an area in a multi-area system", loc)

        for gen_id in doc.generators:
            if gen_id not in attached_generators:
                raise self._schema(f"generator '{gen_id}' is not attached to any bus", ("generators", gen_id))
        for load_id in doc.loads:
            if load_id not in attached_loads:
                raise self._schema(f"load '{load_id}' is not attached to any bus", ("loads", load_id))
        if len({p.omega_0 for p in doc.generators.values()}) > 1:
            raise self._schema("all generators must share the same omega_0", ("generators",))

    def check_lines(self) -> None:
        for line_id, line in self.doc.network.lines.items():
            for end in ("from_bus", "to_bus"):
                bus_id = getattr(line, end)
                if bus_id not in self.doc.network.buses:
                    raise self._dangling(
                        f"unknown bus '{bus_id}'", bus_id, ("network", "lines", line_id, end))

    def check_areas(self) -> None:
        owner: Dict[str, str] = {}
        for area_id, area in self.doc.areas.items():
            if area_id == RESERVED_LAYER_ID:
                raise self._schema(f"'{RESERVED_LAYER_ID}' is reserved and cannot name an area", ("areas", area_id))
            for index, gen_id in enumerate(area.generators):
                loc: Location = ("areas", area_id, "generators", index)
                if gen_id not in self.doc.generators:
                    raise self._dangling(f"unknown generator '{gen_id}'", gen_id, loc)
                if gen_id in owner:
                    raise self._schema(
                        f"generator '{gen_id}' belongs to areas '{owner[gen_id]}' and '{area_id}'", loc)
                owner[gen_id] = area_id
        for gen_id in self.doc.generators:
            if gen_id not in owner:
                raise self._schema(f"generator '{gen_id}' is in no area", ("areas",))

    def check_connectivity(self) -> None:
        buses = list(self.doc.network.buses)
        neighbours: Dict[str, List[str]] = {b: [] for b in buses}
        for line in self.doc.network.lines.values():
            neighbours[line.from_bus].append(line.to_bus)
            neighbours[line.to_bus].append(line.from_bus)
        seen = {buses[0]}
        queue = deque([buses[0]])
        while queue:
            for nxt in neighbours[queue.popleft()]:
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        isolated = [b for b in buses if b not in seen]
        if isolated:
            raise self._schema(
                f"network is not connected; unreachable buses: {', '.join(isolated)}",
                ("network", "buses", isolated[0]))

    def check_disturbances(self) -> None:
        targets = set(self.doc.network.buses) | set(self.doc.loads)
        for index, spec in enumerate(self.doc.disturbances):
            if spec.target not in targets:
                raise self._dangling(
                    f"unknown disturbance target '{spec.target}'", spec.target,
                    ("disturbances", index, "target"))

    def _check_participation(self, factors: Sequence[float], members: int, loc: Location) -> None:
        if len(factors) != members:
            raise self._schema(f"{len(factors)} participation factors for {members} generators", loc)
        if any(f < 0 for f in factors) or abs(sum(factors) - 1.0) > PARTICIPATION_TOLERANCE:
            raise self._schema("participation factors must be nonnegative and sum to 1", loc)

    def _check_weights(self, weights, participants: int, loc: Location) -> None:
        if weights.q <= 0 or any(r <= 0 for r in weights.r):
            raise NonPositiveDefiniteWeightsError(
                f"{_format_loc(loc)}: LQR weights must be positive definite "
                f"(Q={weights.q}, R diagonal={list(weights.r)})",
                self.path, self.source.line_of(loc))
        if len(weights.r) != participants:
            raise self._schema(f"R has {len(weights.r)} entries for {participants} participants", loc + ("r",))

    def check_controller(self) -> None:
        doc = self.doc
        eagc = doc.controller.eagc
        for area_id, weights in eagc.area_weights.items():
            loc: Location = ("controller", "eagc", "area_weights", area_id)
            if area_id not in doc.areas:
                raise self._dangling(f"unknown area '{area_id}'", area_id, loc)
            self._check_weights(weights, len(doc.areas[area_id].generators), loc)
        if eagc.system_weights is not None:
            self._check_weights(eagc.system_weights, len(doc.areas), ("controller", "eagc", "system_weights"))
        for area_id, factors in eagc.area_participation.items():
            loc = ("controller", "eagc", "area_participation", area_id)
            if area_id not in doc.areas:
                raise self._dangling(f"unknown area '{area_id}'", area_id, loc)
            self._check_participation(factors, len(doc.areas[area_id].generators), loc)
        for area_id, section in doc.controller.conventional.areas.items():
            loc = ("controller", "conventional", "areas", area_id)
            if area_id not in doc.areas:
                raise self._dangling(f"unknown area '{area_id}'", area_id, loc)
            if section.participation is not None:
                self._check_participation(
                    section.participation, len(doc.areas[area_id].generators), loc + ("participation",))

    def check_initialization(self) -> None:
        doc = self.doc
        init = doc.initialization
        for gen_id in init.angles:
            if gen_id not in doc.generators:
                raise self._dangling(f"unknown generator '{gen_id}'", gen_id, ("initialization", "angles", gen_id))
        if init.state is None:
            return
        capacitor_buses = {b for b, spec in doc.network.buses.items() if spec.generator is None}
        for section, known in (
            ("generators", doc.generators),
            ("loads", doc.loads),
            ("lines", doc.network.lines),
            ("buses", capacitor_buses),
            ("z_c", doc.generators),
            ("z_r", doc.areas),
        ):
            for item in getattr(init.state, section):
                if item not in known:
                    raise self._dangling(
                        f"unknown id '{item}'", item, ("initialization", "state", section, item))


# Global config loader instance
_global_config_loader: Optional[ConfigLoader] = None


def get_config_loader(base_path: Optional[Path] = None) -> ConfigLoader:
    """
    Get global configuration loader instance.

    Args:
        base_path: Base path for configuration (only used on first call)

    Returns:
        Global ConfigLoader instance
    """
    global _global_config_loader

    if _global_config_loader is None:
        _global_config_loader = ConfigLoader(base_path)

    return _global_config_loader


def load_app_config(config_path: Optional[Path] = None) -> AppConfigSchema:
    """Convenience function to load application configuration."""
    return get_config_loader().load_app_config(config_path)


def parse_scenario(path: Union[str, Path]) -> ScenarioDocument:
    """
    Load a fully validated scenario.

    Args:
        path: Scenario file

    Returns:
        ScenarioDocument
    """
    return get_config_loader().load_scenario(Path(path))


def scenario_to_dict(document: ScenarioDocument) -> Dict[str, Any]:
    """Normalized plain-data form of a scenario."""
    return document.model_dump(mode="json")


def dump_scenario(document: ScenarioDocument, path: Union[str, Path]) -> Path:
    """
    Write the normalized scenario as YAML.

    Raises:
        OutputError: If the file cannot be written
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            yaml.safe_dump(scenario_to_dict(document), f, sort_keys=False,
                           default_flow_style=False, allow_unicode=True)
    except OSError as e:
        raise OutputError(f"failed to write scenario ({e.strerror or e})", path) from e
    return path


def scenario_hash(document: ScenarioDocument) -> str:
    """SHA-256 of the canonical JSON form."""
    canonical = json.dumps(scenario_to_dict(document), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def apply_overrides(
    document: ScenarioDocument,
    seed: Optional[int] = None,
    dt: Optional[float] = None,
    horizon: Optional[float] = None,
    network: Optional[str] = None,
) -> ScenarioDocument:
    """
    Scenario with command-line overrides applied and re-validated.

    ``network`` replaces the network dynamics (dynamic or quasi_static).

    Raises:
        ScenarioSchemaError: If the resulting settings are invalid
    """
    if network is not None:
        try:
            dynamics = NetworkModel(network)
        except ValueError:
            raise ScenarioSchemaError(
                f"unknown network dynamics '{network}'", field_path="network.dynamics"
            ) from None
        document = document.model_copy(
            update={"network": document.network.model_copy(update={"dynamics": dynamics})}
        )
    updates = {k: v for k, v in (("seed", seed), ("dt", dt), ("horizon", horizon)) if v is not None}
    if not updates:
        return document
    try:
        solver = SolverConfig(**{**document.solver.model_dump(), **updates})
    except ValidationError as e:
        first = e.errors()[0]
        raise ScenarioSchemaError(first["msg"], field_path=_format_loc(("solver", *first["loc"]))) from e
    return document.model_copy(update={"solver": solver})
