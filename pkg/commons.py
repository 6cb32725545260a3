import enum
import hashlib
import os

DEFAULT_T2_FACTOR = 4
ID_EXPONENT = 2


class InputError(ValueError):
    """Raised when a graph, node, rank or size argument is malformed."""


class ConfigError(InputError):
    """Raised when an experiment configuration cannot be run as written."""


class NoMajorityError(RuntimeError):
    """Raised when no map in a ballot is backed by a strict majority of runs."""


class ExplorationError(RuntimeError):
    """Raised inside a token exploration whose observations cannot be reconciled."""


class ProtocolViolation(AssertionError):
    """Raised when the simulator catches an honest robot breaking the model."""


class Honesty(enum.StrEnum):
    HONEST = "honest"
    WEAK = "weak-byz"
    STRONG = "strong-byz"

    @property
    def byzantine(self) -> bool:
        return self is not Honesty.HONEST


class Status(enum.StrEnum):
    TOBE_SETTLED = "tobeSettled"
    SETTLED = "Settled"


def digest(payload: object) -> str:
    """
    Returns a short, process-independent digest of a payload.

    Payloads are built from ints, strings and tuples, whose ``repr`` is stable
    across interpreter runs, so traces that carry digests stay byte-identical.
    """
    return hashlib.blake2b(repr(payload).encode("utf-8"), digest_size=6).hexdigest()


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def is_dispersion_feasible(k: int, n: int, f: int) -> bool:
    """
    Ceiling test behind the impossibility bound: dispersing k robots on n nodes
    with f weak Byzantine robots is only possible when ceil(k/n) <= ceil((k-f)/n).

    Raises:
        InputError: If k or n is below 1, or f is outside [0, k).
    """
    if k < 1 or n < 1:
        raise InputError(f"k and n must be positive, got k={k} n={n}")
    if not 0 <= f < k:
        raise InputError(f"f must satisfy 0 <= f < k, got f={f} k={k}")
    return ceil_div(k, n) <= ceil_div(k - f, n)


def id_space(n: int) -> int:
    """Upper end of the robot ID range [1, n^c]."""
    return max(2, n) ** ID_EXPONENT


def get_t2_factor() -> int:
    """
    Retrieves the exploration budget constant c_T (T2 = c_T * n^3) from the environment.

    Returns:
        int: The value of BYZDISP_T2_FACTOR, or 4 when unset.
    """
    return int(os.environ.get("BYZDISP_T2_FACTOR", DEFAULT_T2_FACTOR))


def get_gather_cost(n: int) -> int:
    """
    Retrieves the round cost charged by oracle gathering.

    Returns:
        int: The value of BYZDISP_GATHER_COST, or n^3 when unset.
    """
    value = os.environ.get("BYZDISP_GATHER_COST")
    return int(value) if value else n**3


def get_find_map_cost(n: int) -> int:
    """
    Retrieves the round cost charged for a single robot's quotient-map construction.

    Returns:
        int: The value of BYZDISP_FIND_MAP_COST, or n^3 when unset.
    """
    value = os.environ.get("BYZDISP_FIND_MAP_COST")
    return int(value) if value else n**3


def get_trace_dir() -> str:
    """
    Retrieves the directory traces are written to when a config names none.

    Returns:
        str: The value of BYZDISP_TRACE_DIR, or "." when unset.
    """
    return os.environ.get("BYZDISP_TRACE_DIR", ".")


def log2_ceil(value: int) -> int:
    return (value - 1).bit_length() if value > 1 else 0
