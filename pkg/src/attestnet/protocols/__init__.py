"""Replicated systems built on the attested-messaging primitive: append-only
memory, a BFT counter, Byzantine chain replication, and accountability via
witness-audited tamper-evident logs."""
