"""Exception hierarchy shared by all modules."""


class ExcursionError(Exception):
    """Base class for every error raised by excursion_kit."""


class ConfigurationError(ExcursionError, ValueError):
    """Invalid option, column name, or parameter combination."""


class DataError(ExcursionError, ValueError):
    """Input data violate a structural requirement."""


class SchemaError(DataError):
    """A mapped column is missing from a long table."""


class NumericalError(ExcursionError, ArithmeticError):
    """A numerical routine cannot proceed (e.g. singular design without ridge)."""


class DegenerateArmError(DataError):
    """One treatment arm has no available rows."""


class DegenerateFoldError(DataError):
    """A cross-fitting training complement lacks one outcome class."""


class DegenerateClusterError(DataError):
    """Cluster-robust inference requested with fewer than two subjects."""


class ScenarioFailure(ExcursionError):
    """Too many replications of a simulation scenario were excluded."""
