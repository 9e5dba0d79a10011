"""Exception types shared across the package."""

from __future__ import annotations


class AgriDwError(Exception):
    """Base class for all errors raised by this package."""


class CatalogParseError(AgriDwError):
    """Catalog file could not be parsed; carries a locus into the document."""

    def __init__(self, message: str, locus: str = ""):
        self.locus = locus
        super().__init__(f"{message} (at {locus})" if locus else message)


class MappingError(AgriDwError):
    """Mapping spec is malformed or inconsistent with the catalog."""


class UnitConversionError(AgriDwError):
    """Unknown unit token or incompatible unit pair."""


class StoreError(AgriDwError):
    """Store directory is unreadable, corrupt, or misused."""


class CatalogMismatchError(StoreError):
    """Supplied catalog digest differs from the one recorded in the manifest."""


class StoreTypeError(StoreError):
    """Row value does not satisfy the catalog typing for its table."""


class DanglingKeyError(StoreError):
    """Fact batch references a surrogate key that does not exist."""


class StoreLockError(StoreError):
    """Another writer holds the store's exclusive lock."""


class QueryError(AgriDwError):
    """Query spec is inconsistent with the catalog."""


class UnknownAttributeError(QueryError):
    """Query references an attribute that does not exist."""


class ConfigError(AgriDwError):
    """Invalid run or generator configuration."""
