"""Shared fixtures: the small textbook networks, built through the Python API."""
from fractions import Fraction

import numpy as np
import pytest

from contagion_clear import ContingentContract, DynamicSpec, FinancialNetwork


def two_bank_cds():
    """Banks 1..3 without society; bank 2 owes bank 1 a CDS on bank 3."""
    L = np.zeros((3, 3))
    L[1, 2] = L[2, 1] = 1.0
    return FinancialNetwork([0.0, 3 / 16, 0.0], L, [ContingentContract("CDS", 1, 0, 2)])


def chain(contract):
    L = np.zeros((3, 3))
    L[0, 1] = 2.0
    L[1, 2] = 1.5
    return FinancialNetwork([1.0, 0.0, 2.0], L, [contract])


def digital_chain():
    return chain(ContingentContract("DigitalCDS", 2, 0, 1, notional=1.0))


def self_insured_chain():
    return chain(ContingentContract("SelfInsurance", 2, 0))


def two_period(x0, x1, L0, contracts):
    L = np.zeros((2, 3, 3))
    L[0] = L0
    return DynamicSpec([x0, x1], L, contracts)


def digital_dynamic(eps):
    return two_period([eps, 0, 1], [1 - eps, 0, 1], digital_chain().base_liabilities,
                      [ContingentContract("DigitalCDS", 2, 0, 1, notional=1.0)])


def self_insured_dynamic(eps):
    return two_period([eps, 0, 1], [1 - eps, 0, 1], self_insured_chain().base_liabilities,
                      [ContingentContract("SelfInsurance", 2, 0)])


def cds_dynamic(eps):
    return two_period([0, eps, 0], [0, 3 / 16 - eps, 0], two_bank_cds().base_liabilities,
                      [ContingentContract("CDS", 1, 0, 2)])


THREE_SIXTEENTHS = float(Fraction(3, 16))
EQ_HIGH = np.array([0.0, 3 / 16, 0.0])
EQ_LOW = np.array([3 / 16, -21 / 16, -3 / 4])


@pytest.fixture
def cds_net():
    return two_bank_cds()


@pytest.fixture
def digital_net():
    return digital_chain()


@pytest.fixture
def self_insured_net():
    return self_insured_chain()
