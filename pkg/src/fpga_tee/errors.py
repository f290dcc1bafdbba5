"""Exception hierarchy shared by every layer of the simulator."""


class TeeError(Exception):
    """Base class for all simulator errors."""


class CryptoError(TeeError):
    pass


class IntegrityError(CryptoError):
    """Authentication tag mismatch (or equivalent) on some sealed object."""


class CounterOverflowError(CryptoError):
    pass


class KeyExchangeError(CryptoError):
    pass


class BootError(IntegrityError):
    """BootROM could not authenticate the SPB firmware; boot halts."""


class ProvisioningError(TeeError):
    pass


# attestation ----------------------------------------------------------------

class ProtocolError(TeeError):
    """Malformed or unexpected message on the proxy channel."""


class ChannelTimeout(ProtocolError):
    pass


class StaleCounterError(IntegrityError):
    """A sealed message arrived with a counter that was already consumed."""


class AttestationRefused(TeeError):
    """The Security Kernel refuses to attest (port monitor tripped)."""


class LoadError(TeeError):
    """The Security Kernel refused to load the accelerator bitstream."""


class BitstreamHashMismatch(LoadError):
    pass


class VerifyError(CryptoError):
    """Base for the vendor-side report verification failures.

    Exactly one subclass is raised per failed verification: the first check
    that fails in the fixed order device cert, kernel list, report signature,
    nonce, bitstream hash, session certificate.
    """

    check = 0


class BadDeviceCert(VerifyError):
    check = 1


class UnknownKernel(VerifyError):
    check = 2


class BadReportSig(VerifyError):
    check = 3


class NonceMismatch(VerifyError):
    check = 4


class BitstreamMismatch(VerifyError):
    check = 5


class BadSessionCert(VerifyError):
    check = 6


# shield -----------------------------------------------------------------------

class ConfigError(TeeError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RegionFault(TeeError):
    pass


class CrossRegionFault(RegionFault):
    pass


class PermissionFault(TeeError):
    pass


class AuthFailure(IntegrityError):
    """Chunk authentication failed (spoof, splice and replay look identical here)."""


class VersionExhausted(TeeError):
    pass


class RegisterError(TeeError):
    """Register envelope rejected; the register file is unchanged."""


# sim --------------------------------------------------------------------------

class DramFault(TeeError):
    pass


class AdversaryError(TeeError):
    pass


class CalibrationError(TeeError):
    pass


class TraceError(TeeError):
    pass
