"""Fault-injection switches used to check that the verification suite notices breakage.

Only ``guided-bfn verify --inject-fault`` and the test suite set these.
"""

KNOWN_FAULTS = frozenset({"zeta_v_sign"})

active: set[str] = set()
