"""Role-governed permissioned ledger with a deterministic multi-validator sim."""

__version__ = "0.1.0"
