"""swingdual package initialization.

Single source of truth for the package version and the result-record layout
version so that code, tests, and scripts can import without duplicating
literals.
"""

RESULT_SCHEMA_VERSION = "1"
PACKAGE_VERSION = "0.1.0"  # Keep in sync with pyproject version.

__all__ = ["RESULT_SCHEMA_VERSION", "PACKAGE_VERSION"]
