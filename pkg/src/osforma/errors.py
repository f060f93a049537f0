"""Exception hierarchy shared by every osforma module."""

from __future__ import annotations


class OsformaError(Exception):
    """Base class for all modeling and simulation errors."""


# model core

class DuplicateId(OsformaError):
    pass


class InvalidSize(OsformaError):
    pass


class AddressOutOfRange(OsformaError):
    pass


class UnregisteredFunction(OsformaError):
    pass


class UnknownResource(OsformaError):
    pass


class EmptyProgram(OsformaError):
    pass


class ProcessorClaimError(OsformaError):
    """A process must claim exactly one processor."""


# process states

class NotLive(OsformaError):
    pass


class ResourceNotClaimed(OsformaError):
    pass


class NotHeld(OsformaError):
    pass


class NotActive(OsformaError):
    pass


class InvalidRelease(OsformaError):
    """Processors are never released explicitly."""


# layer model

class CountMismatch(OsformaError):
    pass


class AlreadyOwned(OsformaError):
    pass


class UnknownLayer(OsformaError):
    pass


class Overflow(OsformaError):
    pass


class WrongLocus(OsformaError):
    pass


class NotOwned(OsformaError):
    pass


class BusyMember(OsformaError):
    pass


class TopLayer(OsformaError):
    pass


# engine

class UndefinedRead(OsformaError):
    pass


class InvalidTarget(OsformaError):
    pass


class StackOverflow(OsformaError):
    pass


class StackUnderflow(OsformaError):
    pass


class SelfTransfer(OsformaError):
    pass


# analysis

class ModelTooLarge(OsformaError):
    pass


class MalformedTrace(OsformaError):
    pass
