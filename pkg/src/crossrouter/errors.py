"""Exception hierarchy shared across the package."""


class CrossRouterError(Exception):
    """Base class for every error raised by this package."""


# packet model
class InvariantViolation(CrossRouterError, ValueError):
    pass


class TruncatedMessage(CrossRouterError, ValueError):
    pass


class MalformedField(CrossRouterError, ValueError):
    pass


# simulation
class PastEvent(CrossRouterError, ValueError):
    pass


class DisabledService(CrossRouterError):
    pass


class SchemaError(CrossRouterError, ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# channels
class ChannelUnsupported(CrossRouterError):
    pass


class GadgetUnavailable(ChannelUnsupported):
    """The profile does not expose the service a gadget relies on."""


class ChannelTooWeak(CrossRouterError):
    def __init__(self, p_value: float, message: str = ""):
        self.p_value = p_value
        super().__init__(message or f"loaded and idle timings are indistinguishable (p={p_value:.4g})")


class NoPreamble(CrossRouterError):
    pass


class SyncLost(CrossRouterError):
    def __init__(self, matches: int, message: str = ""):
        self.matches = matches
        super().__init__(message or f"preamble correlation too weak ({matches}/8 symbols)")


class CrcMismatch(CrossRouterError):
    """A structurally recoverable frame whose checksum does not verify.

    ``bits`` holds the recovered frame bits (``None`` marks an erased bit) so
    callers holding the ground truth can compute a bit error rate.
    """

    def __init__(self, bits, frame_index: int = 0, message: str = ""):
        self.bits = list(bits)
        self.frame_index = frame_index
        self.erasures = sum(b is None for b in self.bits)
        super().__init__(message or f"CRC mismatch in frame {frame_index} ({self.erasures} erased bits)")

    def ber_against(self, truth_bits) -> float:
        truth = list(truth_bits)
        n = len(truth)
        if n == 0:
            return 0.0
        errors = 0
        for i, ref in enumerate(truth):
            got = self.bits[i] if i < len(self.bits) else None
            if got is None or got != ref:
                errors += 1
        return errors / n


# detection
class DegenerateSample(CrossRouterError, ValueError):
    pass
