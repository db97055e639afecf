"""Exception hierarchy shared by all modules."""


class TrustGridError(Exception):
    """Base class for every error raised by this package."""


# identity
class InvalidValidityWindow(TrustGridError, ValueError):
    pass


class AlreadySigned(TrustGridError):
    pass


class CertificateRevoked(TrustGridError):
    pass


class ParseError(TrustGridError, ValueError):
    pass


# trust network
class NetworkTooSmall(TrustGridError, ValueError):
    pass


class AttestationFailed(TrustGridError):
    pass


class NoEmpoweredNode(TrustGridError):
    pass


class UnknownNode(TrustGridError, KeyError):
    pass


class NoTrustPath(TrustGridError):
    pass


class NodeRevoked(TrustGridError):
    pass


class CertificateNotFound(TrustGridError):
    pass


class NeighborhoodEmpty(TrustGridError):
    pass


class PositionOccupied(TrustGridError, ValueError):
    pass


# ledger
class NotEmpowered(TrustGridError):
    """Proof-of-authority violation: the validator is not an empowered node."""


class EmptyBlock(TrustGridError, ValueError):
    pass


class WrongLedger(TrustGridError, ValueError):
    pass


# attestation
class EmptyState(TrustGridError, ValueError):
    pass


class NoAttesters(TrustGridError, ValueError):
    pass


# market
class NonpositivePrice(TrustGridError, ValueError):
    pass


class UntrustedNode(TrustGridError):
    pass


class InsufficientEnergy(TrustGridError):
    pass


class InsufficientFunds(TrustGridError):
    pass


class InvalidOrder(TrustGridError, ValueError):
    pass


# simulation
class ConfigInvalid(TrustGridError, ValueError):
    pass


class MissingComponent(TrustGridError, KeyError):
    pass
