"""Exception hierarchy shared by all modules.

Each class carries an ``exit_code`` used by the command line front end.
"""


class EulerForgeError(Exception):
    exit_code = 1


class ValidationError(EulerForgeError, ValueError):
    exit_code = 10


# field_core
class GridError(ValidationError):
    pass


class NearCriticalLevel(EulerForgeError):
    exit_code = 12


class EmptyLevel(EulerForgeError):
    exit_code = 12


# neumann_oval
class PoleProximity(EulerForgeError):
    exit_code = 11


class OutsideDomain(EulerForgeError):
    exit_code = 11


class NewtonDivergence(EulerForgeError):
    exit_code = 13


class NonContraction(EulerForgeError):
    exit_code = 14


# elliptic
class SolverBreakdown(EulerForgeError):
    exit_code = 15


class SingularOperator(EulerForgeError):
    exit_code = 15


class IterationStall(EulerForgeError):
    exit_code = 15


# transport
class NonClosingOrbit(EulerForgeError):
    exit_code = 24


class CriticalPointProximity(EulerForgeError):
    exit_code = 24


class CriticalPointInRegion(EulerForgeError):
    exit_code = 24


class NotInRange(EulerForgeError):
    exit_code = 25


class CriticalSupport(EulerForgeError):
    exit_code = 25


class BandContainsCriticalValue(EulerForgeError):
    exit_code = 22


# forge
class NoSaddle(EulerForgeError):
    exit_code = 21


class OverlappingWindows(EulerForgeError):
    exit_code = 26


class KernelLeak(EulerForgeError):
    exit_code = 27


class MeanViolation(EulerForgeError):
    exit_code = 28


class PicardDivergence(EulerForgeError):
    exit_code = 23


# verify
class IntegrityError(EulerForgeError):
    exit_code = 31


class CollinearityViolation(EulerForgeError):
    exit_code = 32


class ArnoldViolation(EulerForgeError):
    exit_code = 33


class CFLViolation(EulerForgeError):
    exit_code = 34


class SymmetryViolation(EulerForgeError):
    exit_code = 35


class AsymmetricGrid(EulerForgeError):
    exit_code = 35
