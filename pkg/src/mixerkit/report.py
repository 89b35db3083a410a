"""Structured pass/fail records emitted by the verification suites.

A report is a named collection of checks, each carrying the measured
error, the threshold it was held to, and the verdict. Reports serialize
to versioned JSON and parse back losslessly, which the CLI relies on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

SCHEMA_VERSION = 1


@dataclass
class CheckRecord:
    name: str
    measured: float
    threshold: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "measured": self.measured,
            "threshold": self.threshold,
            "passed": self.passed,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CheckRecord":
        return cls(
            name=d["name"],
            measured=d["measured"],
            threshold=d["threshold"],
            passed=d["passed"],
            detail=d.get("detail", ""),
        )


@dataclass
class VerificationReport:
    suite: str
    checks: list[CheckRecord] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def max_measured(self) -> float:
        return max((c.measured for c in self.checks), default=0.0)

    def add(self, name: str, measured: float, threshold: float, detail: str = "") -> CheckRecord:
        rec = CheckRecord(name=name, measured=float(measured), threshold=float(threshold),
                          passed=bool(measured <= threshold), detail=detail)
        self.checks.append(rec)
        return rec

    def add_skipped(self, name: str, detail: str) -> CheckRecord:
        """Record a documented unsupported path; counts as a pass."""
        rec = CheckRecord(name=name, measured=0.0, threshold=0.0, passed=True,
                          detail=f"skipped: {detail}")
        self.checks.append(rec)
        return rec

    def merge(self, other: "VerificationReport") -> None:
        for c in other.checks:
            self.checks.append(CheckRecord(f"{other.suite}/{c.name}", c.measured,
                                           c.threshold, c.passed, c.detail))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "suite": self.suite,
            "overall_pass": self.passed,
            "max_measured": self.max_measured,
            "checks": [c.to_dict() for c in self.checks],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "VerificationReport":
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema version: {d.get('schema_version')}")
        rep = cls(suite=d["suite"],
                  checks=[CheckRecord.from_dict(c) for c in d["checks"]])
        if rep.passed != d["overall_pass"]:
            raise ValueError("report overall_pass inconsistent with its checks")
        return rep

    @classmethod
    def from_json(cls, text: str) -> "VerificationReport":
        return cls.from_dict(json.loads(text))
