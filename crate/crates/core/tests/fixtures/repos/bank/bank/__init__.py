from bank.account import Account, InsufficientFunds
from bank.ledger import Ledger, Entry
from bank.interest import compound, simple_interest, schedule

__all__ = [
    "Account",
    "InsufficientFunds",
    "Ledger",
    "Entry",
    "compound",
    "simple_interest",
    "schedule",
]
