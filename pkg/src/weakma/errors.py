"""Exception hierarchy shared by all modules."""


def required_grid_size(points_needed):
    """Smallest n = 2**k + 1 with n - 1 >= points_needed."""
    m = 8
    while m < points_needed:
        m *= 2
    return m + 1


class WeakMAError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(WeakMAError, ValueError):
    pass


class KernelUnresolved(WeakMAError, ValueError):
    """Mollification scale is too small (or too large) for the grid."""


class NonPositiveDiagonal(WeakMAError):
    def __init__(self, min_d2, node):
        self.min_d2 = min_d2
        self.node = node
        super().__init__(
            f"diagonal amplitude d^2 = {min_d2:.6g} <= 0 at node {node}; "
            "input is too far from the identity"
        )


class NotDiagonallyDominant(WeakMAError):
    def __init__(self, margin, node):
        self.margin = margin
        self.node = node
        super().__init__(
            f"min(D11, D22) - sup|D12| = {margin:.6g} <= 0 at node {node}"
        )


class FrequencyUnresolved(WeakMAError):
    def __init__(self, freq, n):
        self.freq = freq
        self.n = n
        self.required_n = required_grid_size(8.0 * freq)
        super().__init__(
            f"frequency {freq:.6g} exceeds grid capacity at n={n} "
            f"(freq*h must be <= 1/8; requires n >= {self.required_n})"
        )


class ResolutionExhausted(WeakMAError):
    def __init__(self, message, required_n):
        self.required_n = required_n
        super().__init__(f"{message} (requires n >= {required_n})")


class ToleranceNotMet(WeakMAError):
    def __init__(self, message, measured):
        self.measured = measured
        super().__init__(message)


class AlphaTooLarge(WeakMAError, ValueError):
    pass


class AdmissibilityFailed(WeakMAError):
    def __init__(self, report):
        self.report = report
        failed = report.failures()
        first = failed[0] if failed else None
        detail = f"; first failure: {first.ineq} at q={first.q}" if first else ""
        super().__init__(f"{len(failed)} admissibility inequalities fail{detail}")


class InsufficientStages(WeakMAError):
    pass


class TestModeUnresolved(WeakMAError):
    __test__ = False  # keep pytest from collecting this as a test class
