"""Data operations on the local endpoint and per-provider sandbox endpoints."""

from __future__ import annotations

import enum
import os
import shutil
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .core import DataRef, Endpoint
from .errors import AlreadyExists, CrossEndpointLink, NotFound, PermissionDenied, UnknownProvider


class DataOpKind(str, enum.Enum):
    COPY = "COPY"
    MOVE = "MOVE"
    LINK = "LINK"
    DELETE = "DELETE"
    LIST = "LIST"


@dataclass(frozen=True)
class OpResult:
    kind: DataOpKind
    src: DataRef
    dst: Optional[DataRef] = None
    entries: tuple = ()
    bytes_moved: int = 0


@dataclass(frozen=True)
class StagedFile:
    ref: DataRef
    dst: DataRef
    size_bytes: int
    t_start: float
    t_done: float


@dataclass
class DataManager:
    """``local_root`` backs the LOCAL endpoint; each provider gets
    ``sandbox_root/<provider>`` as its remote endpoint."""

    local_root: str
    sandbox_root: str
    providers: tuple = ()
    _locks: dict = field(default_factory=dict, init=False, repr=False, compare=False)
    _guard: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False,
                                   compare=False)

    def __getstate__(self):
        return {"local_root": self.local_root, "sandbox_root": self.sandbox_root,
                "providers": self.providers}

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._locks = {}
        self._guard = threading.Lock()

    def root(self, endpoint: str) -> Path:
        if endpoint == Endpoint.LOCAL:
            return Path(self.local_root)
        if endpoint not in self.providers:
            raise UnknownProvider(f"unknown data endpoint {endpoint!r}")
        return Path(self.sandbox_root) / endpoint

    def resolve(self, ref: DataRef) -> Path:
        root = self.root(ref.endpoint).resolve()
        path = root / ref.path
        # a symlink inside the root must not lead outside it
        real = path.resolve()
        if real != root and root not in real.parents:
            raise PermissionDenied(f"{ref} resolves outside its endpoint")
        return path

    def _lock(self, ref: DataRef) -> threading.Lock:
        key = (ref.endpoint, ref.path)
        with self._guard:
            lock = self._locks.get(key)
            if lock is None:
                lock = self._locks[key] = threading.Lock()
            return lock

    def _locked(self, *refs):
        # fixed order so two ops on the same pair cannot deadlock
        return _MultiLock(sorted({(r.endpoint, r.path): self._lock(r) for r in refs}.items()))

    def data_op(self, kind, src: DataRef, dst: Optional[DataRef] = None,
                overwrite: bool = False) -> OpResult:
        kind = DataOpKind(kind)
        if kind in (DataOpKind.COPY, DataOpKind.MOVE, DataOpKind.LINK) and dst is None:
            raise ValueError(f"{kind.value} needs a destination")
        try:
            if kind is DataOpKind.LIST:
                return self._list(src)
            if kind is DataOpKind.DELETE:
                with self._locked(src):
                    return self._delete(src)
            with self._locked(src, dst):
                if kind is DataOpKind.LINK:
                    return self._link(src, dst, overwrite)
                return self._copy(src, dst, overwrite, move=kind is DataOpKind.MOVE)
        except PermissionError as exc:
            raise PermissionDenied(str(exc)) from exc

    def _prepare_dst(self, dst: DataRef, overwrite: bool) -> Path:
        out = self.resolve(dst)
        if out.exists() or out.is_symlink():
            if not overwrite:
                raise AlreadyExists(f"{dst} already exists")
            if out.is_dir() and not out.is_symlink():
                shutil.rmtree(out)
            else:
                out.unlink()
        out.parent.mkdir(parents=True, exist_ok=True)
        return out

    def _copy(self, src, dst, overwrite, move):
        inp = self.resolve(src)
        if not inp.exists():
            raise NotFound(f"{src} does not exist")
        size = _size(inp)
        out = self._prepare_dst(dst, overwrite)
        if move:
            try:
                os.replace(inp, out)
            except OSError:
                # different filesystems: copy to a temp name, then swap in
                tmp = out.with_name(out.name + ".part")
                _copy_any(inp, tmp)
                os.replace(tmp, out)
                _remove(inp)
        else:
            _copy_any(inp, out)
        return OpResult(DataOpKind.MOVE if move else DataOpKind.COPY, src, dst, (), size)

    def _link(self, src, dst, overwrite):
        if src.endpoint != dst.endpoint:
            raise CrossEndpointLink(f"cannot link {src} to another endpoint ({dst})")
        inp = self.resolve(src)
        if not inp.exists():
            raise NotFound(f"{src} does not exist")
        out = self._prepare_dst(dst, overwrite)
        out.symlink_to(os.path.relpath(inp, out.parent))
        return OpResult(DataOpKind.LINK, src, dst)

    def _delete(self, src):
        p = self.resolve(src)
        if not p.exists() and not p.is_symlink():
            raise NotFound(f"{src} does not exist")
        size = _size(p) if p.exists() else 0
        _remove(p)
        return OpResult(DataOpKind.DELETE, src, None, (), size)

    def _list(self, src):
        p = self.resolve(src) if src.path != "." else self.root(src.endpoint)
        if not p.exists():
            raise NotFound(f"{src} does not exist")
        if p.is_file():
            return OpResult(DataOpKind.LIST, src, None, (DataRef(src.endpoint, src.path, p.stat().st_size),))
        entries = []
        for child in sorted(p.iterdir(), key=lambda c: c.name):
            rel = child.name if src.path == "." else f"{src.path}/{child.name}"
            entries.append(DataRef(src.endpoint, rel, _size(child)))
        return OpResult(DataOpKind.LIST, src, None, tuple(entries))

    # -- staging -------------------------------------------------------------

    def stage_in(self, task, provider: str, t0: float = 0.0,
                 bandwidth_mb_s: Optional[float] = None) -> list:
        """Copy every input of ``task`` into ``provider``'s sandbox.

        Transfers are sequential; each takes ``size / bandwidth`` virtual
        seconds (zero without a bandwidth). Raises NotFound on a missing input.
        """
        staged = []
        t = t0
        for ref in task.inputs:
            dst = DataRef(provider, ref.path)
            if ref.endpoint == provider:
                src = self.resolve(ref)
                if not src.exists():
                    raise NotFound(f"{task.id}: input {ref} does not exist")
                staged.append(StagedFile(ref, dst, _size(src), t, t))
                continue
            try:
                res = self.data_op(DataOpKind.COPY, ref, dst, overwrite=True)
            except NotFound as exc:
                raise NotFound(f"{task.id}: input {ref} does not exist") from exc
            dt = res.bytes_moved / (bandwidth_mb_s * 1e6) if bandwidth_mb_s else 0.0
            staged.append(StagedFile(ref, dst, res.bytes_moved, t, t + dt))
            t += dt
        return staged


class _MultiLock:
    def __init__(self, items):
        self.locks = [lock for _, lock in items]

    def __enter__(self):
        for lock in self.locks:
            lock.acquire()

    def __exit__(self, *exc):
        for lock in reversed(self.locks):
            lock.release()


def _size(p: Path) -> int:
    if p.is_dir():
        return sum(f.stat().st_size for f in p.rglob("*") if f.is_file())
    return p.stat().st_size


def _copy_any(src: Path, dst: Path):
    if src.is_dir():
        shutil.copytree(src, dst)
    else:
        shutil.copy2(src, dst)


def _remove(p: Path):
    if p.is_dir() and not p.is_symlink():
        shutil.rmtree(p)
    else:
        p.unlink()


def data_op(manager: DataManager, kind, src: DataRef, dst: Optional[DataRef] = None,
            overwrite: bool = False) -> OpResult:
    return manager.data_op(kind, src, dst, overwrite)


def stage_in(manager: DataManager, task, provider: str, t0: float = 0.0,
             bandwidth_mb_s: Optional[float] = None) -> list:
    return manager.stage_in(task, provider, t0, bandwidth_mb_s)
