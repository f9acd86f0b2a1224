class ChaintestError(Exception):
    """Base class for every error raised by this package."""


class MalformedModel(ChaintestError):
    def __init__(self, issues):
        self.issues = list(issues)
        lines = "; ".join(str(i) for i in self.issues[:5])
        super().__init__(f"program model has {len(self.issues)} issue(s): {lines}")


class MalformedCfg(ChaintestError):
    pass


class PathBudgetExceeded(ChaintestError):
    def __init__(self, max_paths):
        self.max_paths = max_paths
        super().__init__(f"path enumeration exceeded max_paths={max_paths}")


class UnknownDependencyRef(ChaintestError):
    def __init__(self, ref):
        self.ref = ref
        super().__init__(f"context reference {ref!r} does not resolve to a function in the model")


class BudgetTooSmall(ChaintestError):
    pass


class GatewayError(ChaintestError):
    pass


class TransientProviderError(GatewayError):
    """A failure worth retrying (timeouts, 429, 5xx)."""


class ProviderUnavailable(GatewayError):
    pass


class BudgetExhausted(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


class EmptyExtraction(ChaintestError):
    pass


class UnparseableChangeLog(ChaintestError):
    pass


class StaleEdit(ChaintestError):
    pass


class ToolchainMissing(ChaintestError):
    pass


class BuildTimeout(ChaintestError):
    pass


class DiagnosticParseError(ChaintestError):
    pass


class CoverageToolMissing(ChaintestError):
    pass


class CoverageError(ChaintestError):
    pass


class InvalidTransition(ChaintestError):
    pass
