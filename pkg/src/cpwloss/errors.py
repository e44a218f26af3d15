"""Exception hierarchy shared across the toolkit."""


class CpwLossError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(CpwLossError):
    """Invalid or inconsistent input parameters / config files."""


class MeshError(CpwLossError):
    """Mesh generation failed (degenerate geometry, bad refinement)."""


class SolveError(CpwLossError):
    """The linear solve did not converge or produced invalid fields."""


class FitError(CpwLossError):
    """Base class for fitting failures."""


class NoDipFoundError(FitError):
    """No resonance dip detected in the trace."""


class FitDivergedError(FitError):
    """Nonlinear fit failed to converge or produced unphysical values."""


class IllConditionedError(FitError):
    """Fit is ill-conditioned (e.g. impedance-mismatch angle near pi/2)."""
