"""Exception types.  Each carries a short ``code`` string that also ends up
in JSON summaries, so scripted callers can match on it."""


class TnlsError(Exception):
    code = "error"

    def __init__(self, msg=None):
        super().__init__(msg or self.code)


class GridError(TnlsError, ValueError):
    code = "invalid-grid"


class GridMismatch(TnlsError, ValueError):
    code = "grid-mismatch"


class NoNegativeMode(TnlsError):
    code = "no-negative-mode"


class SpectralCollision(TnlsError, ValueError):
    code = "spectral-collision"


class SingularSolve(TnlsError):
    code = "singular-solve"


class DegenerateProjection(TnlsError):
    code = "degenerate-projection"


class AmplitudeTooLarge(TnlsError, ValueError):
    code = "amplitude-too-large"


class IllConditioned(TnlsError):
    code = "ill-conditioned"


class SolverDiverged(TnlsError):
    code = "solver-diverged"


class NotNearW(TnlsError, ValueError):
    code = "not-near-W"


class NewtonStall(TnlsError):
    code = "newton-stall"


class Unsolvable(TnlsError, ValueError):
    code = "unsolvable"


class WindowEmpty(TnlsError, ValueError):
    code = "window-empty"


class ConstraintViolated(TnlsError):
    code = "constraint-violated"


class SupportExceedsGrid(TnlsError, ValueError):
    code = "support-exceeds-grid"


class NotThreshold(TnlsError):
    code = "not-threshold"
