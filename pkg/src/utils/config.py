"""
Configuration management for Gametodyn.

Loads solver, fitting and preset settings from a YAML file, with
${VAR} substitution from the environment for string values.
"""

import os
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from .errors import ConfigError

_ENV_PATTERN = re.compile(r'\$\{([^}]+)\}')

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent.parent / "config.yaml"


class Config:
    """Configuration manager."""

    def __init__(self, config_path: Optional[Union[str, Path]] = None):
        """
        Initialize configuration.

        Args:
            config_path: Path to config file (defaults to config.yaml at the repo root)
        """
        if config_path is None:
            config_path = DEFAULT_CONFIG_PATH

        self.config_path = Path(config_path)
        self._config: Dict[str, Any] = {}
        self._load_config()

    def _load_config(self):
        """Load configuration from YAML file."""
        try:
            with open(self.config_path, 'r') as f:
                loaded = yaml.safe_load(f)
        except FileNotFoundError:
            raise FileNotFoundError(f"Configuration file not found: {self.config_path}")
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML configuration: {e}")

        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"Configuration root must be a mapping: {self.config_path}")
        self._config = loaded

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Config":
        """Build a configuration from an in-memory mapping (tests, embedding)."""
        instance = cls.__new__(cls)
        instance.config_path = None
        instance._config = dict(data)
        return instance

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get configuration value by key.

        Args:
            key: Configuration key (supports dot notation)
            default: Default value if key not found

        Returns:
            Configuration value
        """
        value = self._config
        try:
            for k in key.split('.'):
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def get_solver_config(self, model: str) -> Dict[str, Any]:
        """Get solver settings for 'ode' or 'pde', with the shared t_end."""
        section = dict(self.get(f'solver.{model}', {}) or {})
        section.setdefault('t_end', self.get('solver.t_end', 960.0))
        return section

    def get_fitting_config(self) -> Dict[str, Any]:
        """Get parameter estimation settings."""
        return self.get('fitting', {}) or {}

    def get_regression_config(self) -> Dict[str, Any]:
        """Get two-regime regression settings."""
        return self.get('regression', {}) or {}

    def get_synthetic_config(self) -> Dict[str, Any]:
        """Get synthetic data settings."""
        return self.get('synthetic', {}) or {}

    def get_logging_config(self) -> Dict[str, Any]:
        """Get logging settings with env vars substituted."""
        return self.get_with_env_substitution('logging', {}) or {}

    def get_run_config(self) -> Dict[str, Any]:
        """Get the flat run section mirroring command-line flags."""
        return self.get_with_env_substitution('run', {}) or {}

    def _named_entry(self, section: str, name: str) -> Dict[str, Any]:
        entries = self.get(section, {}) or {}
        if name not in entries:
            known = ", ".join(sorted(entries)) or "none"
            raise ConfigError(f"Unknown {section[:-1] if section.endswith('s') else section} "
                              f"'{name}' (known: {known})")
        return dict(entries[name] or {})

    def get_preset(self, name: str) -> Dict[str, Any]:
        """Get a named parameter preset."""
        return self._named_entry('presets', name)

    def get_species(self, name: str) -> Dict[str, Any]:
        """Get the RBC-age preference switches for a parasite species."""
        return self._named_entry('species', name)

    def get_patient(self, patient_id: str) -> Dict[str, Any]:
        """Get patient-specific parameter estimates."""
        return self._named_entry('patients', patient_id)

    def list_patients(self) -> List[str]:
        """List patients with stored estimates."""
        return list((self.get('patients', {}) or {}).keys())

    def substitute_env_vars(self, value: str) -> Optional[str]:
        """
        Substitute environment variables in string values.

        Args:
            value: String that may contain ${VAR_NAME} patterns

        Returns:
            String with environment variables substituted, or None when a
            referenced variable is unset
        """
        if not isinstance(value, str):
            return value

        missing = []

        def replace_env_var(match):
            var_name = match.group(1)
            if var_name not in os.environ:
                missing.append(var_name)
                return match.group(0)
            return os.environ[var_name]

        substituted = _ENV_PATTERN.sub(replace_env_var, value)
        return None if missing else substituted

    def get_with_env_substitution(self, key: str, default: Any = None) -> Any:
        """
        Get configuration value with environment variable substitution.

        Args:
            key: Configuration key
            default: Default value

        Returns:
            Configuration value with env vars substituted
        """
        value = self.get(key, default)

        if isinstance(value, str):
            return self.substitute_env_vars(value)
        elif isinstance(value, dict):
            return {k: self.substitute_env_vars(v) if isinstance(v, str) else v
                    for k, v in value.items()}
        elif isinstance(value, list):
            return [self.substitute_env_vars(v) if isinstance(v, str) else v
                    for v in value]

        return value


# Global configuration instance
_config_instance: Optional[Config] = None


def get_config() -> Config:
    """Get global configuration instance."""
    global _config_instance
    if _config_instance is None:
        _config_instance = Config()
    return _config_instance


def load_config(config_path: Optional[Union[str, Path]] = None) -> Config:
    """Load a configuration file and make it the global instance."""
    global _config_instance
    _config_instance = Config(config_path)
    return _config_instance


def reload_config():
    """Reload configuration from file."""
    global _config_instance
    _config_instance = None
    return get_config()
