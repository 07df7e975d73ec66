#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import getpass
import hashlib
import logging
import os
import platform
import socket
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Dict, List, Optional

import numpy as np

# Make git functionality optional
try:
    from git import Repo, InvalidGitRepositoryError, NoSuchPathError
    GIT_AVAILABLE = True
except ImportError:
    GIT_AVAILABLE = False

STAMP = '%Y-%m-%d %H:%M:%S %Z'

def file_sha256(filename: str) -> str:
    sha = hashlib.sha256()
    with open(filename, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            sha.update(block)
    return sha.hexdigest()

@dataclass(frozen=True)
class AuditedFile:
    path: str
    role: str
    size: int
    modified: datetime
    sha256: str

    def lines(self) -> List[str]:
        return [
            f'File: {self.path}',
            f'Role: {self.role}',
            f'Size: {self.size} bytes',
            f'Modified: {self.modified.strftime(STAMP)}',
            f'SHA256: {self.sha256}',
        ]

def _section(title: str, body: List[str]) -> List[str]:
    return [title, '-' * len(title)] + body + ['']

class Receipt:
    """Provenance of a training run: the command, its configuration, the machine and every file it read or wrote"""

    def __init__(self, command: str, config_hash: Optional[str] = None):
        self.command = command
        self.config_hash = config_hash
        self.started = datetime.now(timezone.utc).astimezone()
        self.files: Dict[str, AuditedFile] = {}
        self.commit = self._commit_info() if GIT_AVAILABLE else None

    @staticmethod
    def _environment() -> Dict[str, Optional[str]]:
        try:
            user = getpass.getuser()
        except (KeyError, OSError) as e:
            logging.warning(f'Could not determine user: {e}')
            user = None
        return {
            'User': user,
            'Hostname': socket.gethostname() or None,
            'Python': platform.python_version(),
            'numpy': np.__version__,
        }

    @staticmethod
    def _commit_info() -> Optional[Dict[str, object]]:
        """Commit of the checkout this package runs from, None outside a git work tree"""
        try:
            repo = Repo(os.path.dirname(os.path.abspath(__file__)), search_parent_directories=True)
            return {
                'hash': repo.head.commit.hexsha,
                'branch': None if repo.head.is_detached else repo.active_branch.name,
                'dirty': repo.is_dirty(),
            }
        except (InvalidGitRepositoryError, NoSuchPathError, ValueError):
            return None

    def audit_file(self, filename: str, role: str) -> AuditedFile:
        """Record a file the run read or produced

        Args:
            filename: Path to the file
            role: What the file is to the run (input series, checkpoint, history, ...)

        Raises:
            FileNotFoundError: If the file does not exist
        """
        if not os.path.isfile(filename):
            raise FileNotFoundError(f'Cannot audit "{filename}": no such file')
        stats = os.stat(filename)
        entry = AuditedFile(filename, role, stats.st_size,
                            datetime.fromtimestamp(stats.st_mtime, timezone.utc).astimezone(), file_sha256(filename))
        self.files[filename] = entry
        return entry

    def render(self) -> str:
        run = [f'Command: {self.command}', f'Started: {self.started.strftime(STAMP)}']
        if self.config_hash:
            run.append(f'Config SHA256: {self.config_hash}')
        run += [f'{name}: {value}' for name, value in self._environment().items() if value]
        lines = ['Forecasting Run Receipt', '=======================', ''] + _section('Run', run)
        if self.commit:
            lines += _section('Git', [
                f"Branch: {self.commit['branch'] or '(detached)'}",
                f"Commit: {self.commit['hash']}{' (dirty)' if self.commit['dirty'] else ''}",
            ])
        body: List[str] = []
        for entry in self.files.values():
            body += entry.lines() + ['']
        lines += _section(f'Files ({len(self.files)})', body[:-1])
        return '\n'.join(lines)

    def save(self, filename: str) -> str:
        """Write the receipt as text and return the SHA-256 of what was written"""
        content = self.render().encode('utf-8')
        try:
            with open(filename, 'wb') as f:
                f.write(content)
        except OSError as e:
            logging.error(f'Error saving receipt to {filename}: {e}')
            raise
        return hashlib.sha256(content).hexdigest()
