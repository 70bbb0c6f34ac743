"""
Environment Variable Validation Utility
Checks that the CHANGECHIP_* settings form a valid pipeline configuration
"""
import os
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from changechip.config import ENV_FIELDS, ENV_PREFIX, ENV_RANSAC_FIELDS, build_config, env_values  # noqa: E402
from changechip.errors import ConfigValidationError  # noqa: E402

KNOWN_SUFFIXES = set(ENV_FIELDS) | set(ENV_RANSAC_FIELDS) | {"ROI", "LOG_LEVEL", "CDPCB_MANIFEST"}


def validate_pipeline_env():
    """Validate that the CHANGECHIP_* variables build a valid configuration"""
    try:
        config = build_config(**env_values())
    except ConfigValidationError as e:
        print("ERROR: Invalid environment variable values:")
        for problem in e.problems:
            print(f"  - {problem}")
        return False

    print("SUCCESS: Pipeline configuration is valid")
    print(f"  - window size h={config.h}, classes n={config.n}, S_rgb={config.s_rgb}, S_gray={config.s_gray}")
    print(f"  - eps={config.effective_eps} ({config.modality}), seed={config.seed}")
    return True


def validate_unknown_vars():
    """Warn about CHANGECHIP_* variables that nothing reads (usually typos)"""
    unknown = sorted(
        name for name in os.environ
        if name.startswith(ENV_PREFIX) and name[len(ENV_PREFIX):] not in KNOWN_SUFFIXES
    )
    if unknown:
        print("\nWARNING: Unknown ChangeChip environment variables:")
        for name in unknown:
            print(f"  - {name}")


def validate_log_level():
    level = os.environ.get(ENV_PREFIX + "LOG_LEVEL", "INFO").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        print(f"ERROR: {ENV_PREFIX}LOG_LEVEL must be DEBUG, INFO, WARNING or ERROR (got {level})")
        return False
    return True


if __name__ == "__main__":
    print("Validating ChangeChip Environment Configuration...")
    print("=" * 50)

    try:
        from dotenv import load_dotenv
        load_dotenv()
        print("SUCCESS: .env file loaded")
    except Exception as e:
        print(f"WARNING: Could not load .env file: {e}")

    print()

    if validate_pipeline_env() and validate_log_level():
        validate_unknown_vars()
        print("\nSUCCESS: Configuration validation successful!")
        sys.exit(0)
    else:
        print("\nERROR: Configuration validation failed!")
        sys.exit(1)
