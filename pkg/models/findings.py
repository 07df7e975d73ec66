#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Findings produced by the verification suites.

A ``Finding`` is a message template with a key and a severity. Calling it
with the template parameters yields a rendered copy, so suites can write
``FindingType.SUITE_SLOW(seconds=12.0)``.
"""
from enum import Enum
import logging
from typing import List

MISSING_VALUE = '##N/A##'

class Severity(Enum):
    """How much a finding matters for the verdict of a suite"""
    ERROR = "error"
    WARNING = "warning"
    NOTICE = "notice"

    def __str__(self):
        return self.value

class _Missing:
    """Stands in for an absent template parameter, whatever its format spec"""
    def __format__(self, spec: str) -> str:
        return MISSING_VALUE

class _Parameters(dict):
    def __init__(self, key: str, values: dict):
        super().__init__(values)
        self.key = key

    def __missing__(self, name: str) -> _Missing:
        logging.warning(f'Finding "{self.key}" rendered without parameter "{name}"')
        return _Missing()

class Finding:
    def __init__(self, key: str, template: str, severity: Severity, message: str = None):
        self.key = key
        self.template = template
        self.severity = severity
        self._message = message

    def __call__(self, **params) -> 'Finding':
        rendered = self.template.format_map(_Parameters(self.key, params))
        return Finding(self.key, self.template, self.severity, rendered)

    def __repr__(self):
        return f'Finding({self.key}, {self.severity}, {self.message!r})'

    @property
    def message(self) -> str:
        """Rendered text, or the bare template when never rendered"""
        return self._message if self._message is not None else self.template

    @property
    def failed(self) -> bool:
        return self.severity == Severity.ERROR

class FindingType:
    """Outcomes recorded by the verification suites"""

    PROPERTY_HOLDS = Finding("PROPERTY_HOLDS", "{prop}: holds ({detail})", Severity.NOTICE)
    PROPERTY_VIOLATED = Finding("PROPERTY_VIOLATED", "{prop}: violated ({detail})", Severity.ERROR)
    SUITE_CRASHED = Finding("SUITE_CRASHED", "Suite raised {error}", Severity.ERROR)
    SUITE_SLOW = Finding("SUITE_SLOW", "Suite took {seconds:.1f} s", Severity.WARNING)

    @classmethod
    def get_all_codes(cls) -> List[str]:
        """Get the keys of every finding type declared on the class"""
        return [value.key for name, value in vars(cls).items()
                if not name.startswith('_') and isinstance(value, Finding)]

def check(prop: str, condition: bool, detail: str) -> Finding:
    """PROPERTY_HOLDS or PROPERTY_VIOLATED for one measured property"""
    finding = FindingType.PROPERTY_HOLDS if condition else FindingType.PROPERTY_VIOLATED
    return finding(prop=prop, detail=detail)
