"""Run orchestration: up-to-dateness policies, bounded-parallel dispatch,
failure propagation, and the journal/cache/provenance bookkeeping around
task execution.

The scheduler thread is the single owner of run state and the journal;
executor calls happen in a worker pool whose size is the jobs bound, and
workers communicate outcomes back only through their futures.

Policy semantics (per task):
  recompute  always Execute.
  link       LinkCached when the cache holds the fingerprint, else Execute.
  update     SkipUpToDate when declared outputs exist in the workspace,
             the stored stamp matches the current fingerprint, and no
             dependency executed this run; else Execute. The "no
             dependency executed" clause makes the executed set exactly
             {fingerprint changed} plus downstream, the make-like
             reading of the update policy.
"""

from __future__ import annotations

import json
import logging
import os
import shutil
import socket
import time
import uuid
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field, replace
from enum import Enum

from . import provenance, runstate
from .cache import CacheError, CacheStore
from .cache import CacheEntry
from .canon import file_digest, tree_digest
from .executors import OutputSpec, StagedInput, TaskSpec
from .executors.local import LocalExecutor
from .model import env_to_data
from .planner import (
    Blob,
    Literal,
    Pending,
    PlanError,
    TaskGraph,
    TaskInstance,
    task_fingerprint,
    resolve_argv,
)

log = logging.getLogger(__name__)

OK_STATES = frozenset({"succeeded", "cached", "skipped-up-to-date"})
BAD_STATES = frozenset({"failed", "blocked", "aborted"})

STAMPS_DIR = os.path.join(".flowforge", "stamps")


class SchedulerError(Exception):
    pass


class Policy(str, Enum):
    RECOMPUTE = "recompute"
    LINK = "link"
    UPDATE = "update"


@dataclass(frozen=True)
class TaskAction:
    kind: str  # "execute" | "link" | "skip"
    fingerprint: str | None = None
    cached_from: str | None = None

    @property
    def is_execute(self) -> bool:
        return self.kind == "execute"


EXECUTE = TaskAction("execute")


@dataclass
class TaskResult:
    state: str  # succeeded|failed|cached|skipped-up-to-date|blocked|aborted
    exit_code: int | None = None
    fingerprint: str | None = None
    file_digests: dict[str, str] = field(default_factory=dict)
    value_outputs: dict[str, object] = field(default_factory=dict)
    cached_from: str | None = None
    error: str | None = None


@dataclass
class RunResult:
    run_id: str
    states: dict[str, TaskResult]
    wall_seconds: float

    @property
    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for result in self.states.values():
            out[result.state] = out.get(result.state, 0) + 1
        return out

    @property
    def ok(self) -> bool:
        return all(r.state in OK_STATES for r in self.states.values())

    def tasks_in_state(self, state: str) -> list[str]:
        return sorted(t for t, r in self.states.items() if r.state == state)


# ---------------------------------------------------------------------------
# workspace stamps (update policy bookkeeping; workspace-scoped on purpose:
# up-to-dateness is a property of a workspace, linking of the cache)

def stamp_path(workspace: str, task_id: str) -> str:
    return os.path.join(workspace, STAMPS_DIR, task_id)


def read_stamp(workspace: str, task_id: str) -> dict | None:
    try:
        with open(stamp_path(workspace, task_id), encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    if not isinstance(data, dict) or "fingerprint" not in data:
        return None
    data.setdefault("files", {})
    data.setdefault("values", {})
    return data


def write_stamp(workspace: str, task_id: str, fingerprint: str,
                files: dict, values: dict):
    path = stamp_path(workspace, task_id)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump({"fingerprint": fingerprint, "files": files, "values": values}, fh)
        fh.write("\n")
    os.replace(tmp, path)


def _outputs_present(task: TaskInstance, workspace: str) -> bool:
    for port, rel in task.file_output_paths.items():
        full = os.path.join(workspace, rel.replace("/", os.sep))
        if task.output_decls[port].type.kind == "directory":
            if not os.path.isdir(full):
                return False
        elif not os.path.isfile(full):
            return False
    return True


def decide_action(task: TaskInstance, policy: Policy, cache: CacheStore,
                  workspace: str, fingerprint: str | None = None) -> TaskAction:
    """Per-task policy decision. Requires resolved bindings (the
    fingerprint must be computable). Cache corruption counts as a miss;
    the cache layer warns."""
    if policy == Policy.RECOMPUTE:
        return EXECUTE
    fp = fingerprint or task_fingerprint(task)
    if policy == Policy.LINK:
        entry = cache.get_entry(fp)
        if entry is not None:
            return TaskAction("link", fp, entry.run_id)
        return TaskAction("execute", fp)
    # update
    stamp = read_stamp(workspace, task.id)
    if stamp is not None and stamp["fingerprint"] == fp \
            and _outputs_present(task, workspace):
        return TaskAction("skip", fp)
    return TaskAction("execute", fp)


def generate_run_id() -> str:
    """Sortable-by-start-time and collision-proof within a workspace."""
    return "r%s-%s" % (time.strftime("%Y%m%d-%H%M%S"), uuid.uuid4().hex[:6])


class Runner:
    """Owns one workspace + cache pair and executes task graphs in it."""

    def __init__(self, workspace: str, cache: CacheStore | None = None,
                 executor=None, jobs: int = 1, keep_going: bool = False):
        if jobs < 1:
            raise ValueError("jobs must be >= 1")
        self.workspace = os.path.abspath(os.fspath(workspace))
        self.cache = cache or CacheStore(os.path.join(self.workspace, "cache"))
        self.executor = executor or LocalExecutor()
        self.jobs = jobs
        self.keep_going = keep_going

    # -- public surface ----------------------------------------------------

    def run(self, graph: TaskGraph, policy: Policy = Policy.UPDATE,
            run_id: str | None = None, meta: dict | None = None) -> RunResult:
        policy = Policy(policy)
        run_id = run_id or generate_run_id()
        run_dir = os.path.join(self.workspace, "runs", run_id)
        if os.path.exists(run_dir):
            raise SchedulerError("run directory already exists: %s" % run_dir)
        os.makedirs(run_dir)
        with open(os.path.join(run_dir, runstate.PID_NAME), "w",
                  encoding="utf-8") as fh:
            fh.write("%d\n" % os.getpid())
        started = time.monotonic()

        self._ingest_external_inputs(graph)

        journal = runstate.Journal.create(run_dir)
        meta = meta or {}
        journal.append("run-started", payload={
            "run_id": run_id,
            "tasks": sorted(graph.tasks),
            "policy": policy.value,
            "jobs": self.jobs,
            "keep_going": self.keep_going,
            "executor": getattr(self.executor, "name", "local"),
            "workflow": meta.get("workflow"),
            "workflow_digest": meta.get("workflow_digest"),
            "params": meta.get("params", {}),
            "sinks": {name: list(ref) for name, ref in graph.sinks.items()},
            "engine": _engine_version(),
            "user": _username(),
            "hostname": socket.gethostname(),
        })

        results: dict[str, TaskResult] = {}
        dispatched: set[str] = set()
        executed: set[str] = set()  # tasks whose action was Execute
        futures: dict = {}
        stop_dispatch = False

        pool = ThreadPoolExecutor(max_workers=self.jobs)
        try:
            while True:
                progressed = self._dispatch_pass(
                    graph, policy, journal, results, dispatched, executed,
                    futures, pool, stop_dispatch)

                if futures:
                    done, _ = wait(futures, return_when=FIRST_COMPLETED)
                    for fut in done:
                        task, fp = futures.pop(fut)
                        outcome = fut.result()
                        self._absorb_outcome(
                            graph, journal, results, task, fp, outcome, run_id)
                        if results[task.id].state == "failed" and not self.keep_going:
                            stop_dispatch = True
                    continue

                if len(results) == len(graph.tasks):
                    break
                if stop_dispatch:
                    self._wind_down(graph, journal, results)
                    break
                if not progressed:
                    raise SchedulerError(
                        "scheduler stalled; remaining tasks %s"
                        % sorted(set(graph.tasks) - set(results)))
        finally:
            pool.shutdown(wait=True)
            run_state = "succeeded" if all(
                r.state in OK_STATES for r in results.values()) \
                and len(results) == len(graph.tasks) else "failed"
            try:
                journal.append("run-finished", payload={
                    "state": run_state,
                    "counts": _count_states(results),
                })
            finally:
                journal.close()

        self._write_provenance(run_dir)
        return RunResult(run_id, results, time.monotonic() - started)

    def plan_preview(self, graph: TaskGraph, policy: Policy = Policy.UPDATE) -> dict[str, TaskAction]:
        """The actions run() would take if no task outcome changed.
        Pure: touches neither workspace nor cache nor journals."""
        policy = Policy(policy)
        actions: dict[str, TaskAction] = {}
        # predicted outputs: task -> (files, values) or None when unknowable
        predicted: dict[str, tuple | None] = {}

        for tid in graph.topo_order():
            task = graph.tasks[tid]
            if policy == Policy.RECOMPUTE:
                actions[tid] = EXECUTE
                continue

            stamp = read_stamp(self.workspace, tid)
            stamp_outputs = (stamp["files"], stamp["values"]) if stamp else None

            resolved = self._resolve_from_predicted(graph, task, predicted)
            forced = policy == Policy.UPDATE and any(
                actions[dep].is_execute for dep in task.deps)

            if forced or resolved is None:
                actions[tid] = EXECUTE
                predicted[tid] = stamp_outputs
                continue

            action = decide_action(resolved, policy, self.cache, self.workspace)
            actions[tid] = action
            if action.kind == "skip":
                predicted[tid] = stamp_outputs
            elif action.kind == "link":
                entry = self.cache.get_entry(action.fingerprint)
                predicted[tid] = (entry.file_outputs, entry.value_outputs) \
                    if entry else None
            else:
                predicted[tid] = stamp_outputs
        return actions

    # -- dispatch helpers ----------------------------------------------------

    def _dispatch_pass(self, graph, policy, journal, results, dispatched,
                       executed, futures, pool, stop_dispatch) -> bool:
        if stop_dispatch:
            return False
        progressed = False
        for tid in sorted(graph.tasks):
            if tid in results or tid in dispatched:
                continue
            task = graph.tasks[tid]
            if not all(dep in results for dep in task.deps):
                continue
            if any(results[dep].state in BAD_STATES for dep in task.deps):
                results[tid] = TaskResult("blocked")
                journal.append("task-finished", tid, {"state": "blocked"})
                progressed = True
                continue

            resolved = self._resolve_bindings(graph, task, results)
            fp = task_fingerprint(resolved)
            forced = policy == Policy.UPDATE and bool(task.deps & executed)
            action = TaskAction("execute", fp) if forced else decide_action(
                resolved, policy, self.cache, self.workspace, fp)

            if action.kind == "skip":
                stamp = read_stamp(self.workspace, tid) or {}
                results[tid] = TaskResult(
                    "skipped-up-to-date", fingerprint=fp,
                    file_digests=dict(stamp.get("files", {})),
                    value_outputs=dict(stamp.get("values", {})))
                journal.append("task-finished", tid,
                               {"state": "skipped-up-to-date", "fingerprint": fp})
                progressed = True
            elif action.kind == "link":
                entry = self.cache.get_entry(fp)
                if entry is None:
                    # Raced away or corrupt after the decision; execute.
                    action = TaskAction("execute", fp)
                else:
                    self._link_outputs(resolved, entry)
                    results[tid] = TaskResult(
                        "cached", fingerprint=fp,
                        file_digests=dict(entry.file_outputs),
                        value_outputs=dict(entry.value_outputs),
                        cached_from=entry.run_id)
                    journal.append("task-finished", tid, self._finish_payload(
                        resolved, "cached", fp,
                        files=entry.file_outputs, values=entry.value_outputs,
                        cached_from=entry.run_id))
                    progressed = True

            if action.is_execute:
                if len(futures) >= self.jobs:
                    continue
                journal.append("task-started", tid, {
                    "fingerprint": fp,
                    "executor": getattr(self.executor, "name", "local"),
                })
                dispatched.add(tid)
                executed.add(tid)
                run_dir = os.path.dirname(journal.path)
                futures[pool.submit(self._execute_task, resolved, run_dir)] = (
                    resolved, fp)
                progressed = True
        return progressed

    def _absorb_outcome(self, graph, journal, results, task, fp, outcome, run_id):
        if outcome.success:
            workdir = os.path.join(self.workspace, "runs", run_id,
                                   "tasks", task.id)
            try:
                files = self._publish_outputs(task, outcome, workdir)
            except CacheError as exc:
                results[task.id] = TaskResult(
                    "failed", exit_code=outcome.exit_code, fingerprint=fp,
                    error="publishing outputs failed: %s" % exc)
                journal.append("task-finished", task.id, self._finish_payload(
                    task, "failed", fp, exit_code=outcome.exit_code,
                    error=str(exc)))
                return
            write_stamp(self.workspace, task.id, fp, files, outcome.value_outputs)
            self.cache.put_entry(CacheEntry(
                fp, run_id, files, dict(outcome.value_outputs)))
            results[task.id] = TaskResult(
                "succeeded", exit_code=0, fingerprint=fp,
                file_digests=files, value_outputs=dict(outcome.value_outputs))
            journal.append("task-finished", task.id, self._finish_payload(
                task, "succeeded", fp, exit_code=0,
                files=files, values=outcome.value_outputs))
        else:
            results[task.id] = TaskResult(
                "failed", exit_code=outcome.exit_code, fingerprint=fp,
                error=outcome.error)
            journal.append("task-finished", task.id, self._finish_payload(
                task, "failed", fp, exit_code=outcome.exit_code,
                error=outcome.error))

    def _wind_down(self, graph, journal, results):
        failed = {t for t, r in results.items() if r.state == "failed"}
        downstream = graph.descendants(failed)
        for tid in sorted(set(graph.tasks) - set(results)):
            state = "blocked" if tid in downstream else "aborted"
            results[tid] = TaskResult(state)
            journal.append("task-finished", tid, {"state": state})

    # -- binding resolution and materialization ------------------------------

    def _resolve_bindings(self, graph, task: TaskInstance, results) -> TaskInstance:
        new_bindings: dict[str, object] = {}
        for port, binding in task.input_bindings.items():
            if not isinstance(binding, Pending):
                new_bindings[port] = binding
                continue
            upstream = results[binding.producer]
            port_type = task.input_types[port]
            if port_type.is_artifact:
                try:
                    digest = upstream.file_digests[binding.port]
                except KeyError:
                    raise SchedulerError(
                        "task %s needs %s.%s, which the upstream result lacks"
                        % (task.id, binding.producer, binding.port)) from None
                decl = graph.tasks[binding.producer].output_decls[binding.port]
                new_bindings[port] = Blob(
                    digest,
                    name=os.path.basename(decl.path),
                    source=os.path.join(self.workspace,
                                        decl.path.replace("/", os.sep)),
                    tree=port_type.kind == "directory")
            else:
                try:
                    value = upstream.value_outputs[binding.port]
                except KeyError:
                    raise SchedulerError(
                        "task %s needs value %s.%s, which the upstream result lacks"
                        % (task.id, binding.producer, binding.port)) from None
                new_bindings[port] = Literal(value)
        return replace(task, input_bindings=new_bindings)

    def _resolve_from_predicted(self, graph, task, predicted):
        """Preview-time variant of _resolve_bindings; None when an
        upstream prediction is unavailable."""
        new_bindings: dict[str, object] = {}
        for port, binding in task.input_bindings.items():
            if not isinstance(binding, Pending):
                new_bindings[port] = binding
                continue
            outputs = predicted.get(binding.producer)
            if outputs is None:
                return None
            files, values = outputs
            port_type = task.input_types[port]
            if port_type.is_artifact:
                if binding.port not in files:
                    return None
                new_bindings[port] = Blob(files[binding.port],
                                          tree=port_type.kind == "directory")
            else:
                if binding.port not in values:
                    return None
                new_bindings[port] = Literal(values[binding.port])
        return replace(task, input_bindings=new_bindings)

    def _ingest_external_inputs(self, graph):
        """Copy param-supplied artifacts into the cache up front, so
        every later materialization comes from one place and lineage
        sees external inputs as first-class artifacts."""
        for task in graph.tasks.values():
            for binding in task.input_bindings.values():
                if not isinstance(binding, Blob) or binding.source is None:
                    continue
                if self.cache.has_blob(binding.digest):
                    continue
                if binding.tree:
                    actual = self.cache.put_tree(binding.source)
                else:
                    actual = self.cache.put_blob(binding.source)
                if actual != binding.digest:
                    raise PlanError(
                        "input %s changed since the graph was built "
                        "(expected %s, got %s)"
                        % (binding.source, binding.digest[:12], actual[:12]))

    def _materialize_input(self, port: str, binding: Blob, workdir: str) -> str:
        rel = "inputs/%s/%s" % (port, binding.name or binding.digest[:12])
        dest = os.path.join(workdir, rel.replace("/", os.sep))
        if binding.tree:
            if self.cache.has_blob(binding.digest):
                self.cache.materialize_tree(binding.digest, dest)
                return rel
            if binding.source and os.path.isdir(binding.source) \
                    and tree_digest(binding.source) == binding.digest:
                shutil.copytree(binding.source, dest)
                return rel
        else:
            if self.cache.has_blob(binding.digest):
                self.cache.materialize_blob(binding.digest, dest)
                return rel
            if binding.source and os.path.isfile(binding.source) \
                    and file_digest(binding.source) == binding.digest:
                os.makedirs(os.path.dirname(dest), exist_ok=True)
                shutil.copyfile(binding.source, dest)
                return rel
        raise CacheError(
            "no source for input %s (digest %s)" % (port, binding.digest[:12]))

    def _execute_task(self, task: TaskInstance, run_dir: str):
        """Worker-thread body: hermetic workdir, staged inputs, executor
        call. Returns an Outcome; infrastructure problems become failed
        outcomes rather than exceptions so the run can keep accounting."""
        from .executors import Outcome

        workdir = os.path.join(run_dir, "tasks", task.id)
        try:
            if os.path.exists(workdir):
                shutil.rmtree(workdir)
            os.makedirs(workdir)

            staged: list[StagedInput] = []
            input_paths: dict[str, str] = {}
            for port in sorted(task.input_bindings):
                binding = task.input_bindings[port]
                if isinstance(binding, Blob):
                    rel = self._materialize_input(port, binding, workdir)
                    input_paths[port] = rel
                    staged.append(StagedInput(port, rel, binding.tree))

            argv = resolve_argv(task, input_paths)
            outputs = tuple(
                OutputSpec(port, decl.type, decl.path)
                for port, decl in sorted(task.output_decls.items()))
            spec = TaskSpec(
                task_id=task.id,
                argv=tuple(argv),
                workdir=workdir,
                inputs=tuple(staged),
                outputs=outputs,
                wrapper=task.wrapper,
                resources=task.resources)
            return self.executor.execute(spec)
        except (CacheError, OSError) as exc:
            log.warning("task %s could not be staged: %s", task.id, exc)
            return Outcome(-1, error="staging failure: %s" % exc)

    def _publish_outputs(self, task: TaskInstance, outcome,
                         workdir: str) -> dict[str, str]:
        """Ingest declared outputs into the cache and place them at their
        workspace paths. Returns port -> digest."""
        files: dict[str, str] = {}
        for port, rel in sorted(task.file_output_paths.items()):
            produced = os.path.join(workdir, rel.replace("/", os.sep))
            is_dir = task.output_decls[port].type.kind == "directory"
            digest = self.cache.put_tree(produced) if is_dir \
                else self.cache.put_blob(produced)
            if digest != outcome.file_digests.get(port):
                raise CacheError(
                    "output %s.%s changed during collection" % (task.id, port))
            dest = os.path.join(self.workspace, rel.replace("/", os.sep))
            if is_dir:
                if os.path.isdir(dest):
                    shutil.rmtree(dest)
                self.cache.materialize_tree(digest, dest)
            else:
                self.cache.materialize_blob(digest, dest)
            files[port] = digest
        return files

    def _link_outputs(self, task: TaskInstance, entry: CacheEntry):
        """Materialize a cached result into the workspace without executing."""
        for port, rel in sorted(task.file_output_paths.items()):
            digest = entry.file_outputs[port]
            dest = os.path.join(self.workspace, rel.replace("/", os.sep))
            if task.output_decls[port].type.kind == "directory":
                if os.path.isdir(dest):
                    shutil.rmtree(dest)
                self.cache.materialize_tree(digest, dest)
            else:
                self.cache.materialize_blob(digest, dest)
        write_stamp(self.workspace, task.id, entry.fingerprint,
                    dict(entry.file_outputs), dict(entry.value_outputs))

    # -- journal payloads ----------------------------------------------------

    def _finish_payload(self, task: TaskInstance, state: str, fp: str,
                        exit_code: int | None = None, files=None, values=None,
                        cached_from=None, error=None) -> dict:
        literal_inputs = {}
        input_files = {}
        sources = {}
        for port, binding in task.input_bindings.items():
            if isinstance(binding, Literal):
                literal_inputs[port] = binding.value
            elif isinstance(binding, Blob):
                input_files[port] = binding.digest
            src = task.input_sources.get(port, "")
            if src and not src.startswith("params."):
                sources[port] = src  # full "<producer>.<port>" ref
        payload = {
            "state": state,
            "fingerprint": fp,
            "exit_code": exit_code,
            "files": dict(files or {}),
            "values": dict(values or {}),
            "cached_from": cached_from,
            "error": error,
            "env": task.env_fingerprint,
            "env_spec": env_to_data(task.env_spec),
            "executor": getattr(self.executor, "name", "local"),
            "inputs": {
                "literals": literal_inputs,
                "files": input_files,
                "sources": sources,
            },
        }
        return payload

    def _write_provenance(self, run_dir: str):
        events, _ = runstate.read_events(
            os.path.join(run_dir, runstate.JOURNAL_NAME))
        doc = provenance.record(events)
        provenance.write_doc(run_dir, doc)
        provenance.update_index(os.path.dirname(run_dir), doc)


def _count_states(results: dict[str, TaskResult]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for result in results.values():
        counts[result.state] = counts.get(result.state, 0) + 1
    return counts


def _engine_version() -> str:
    from . import __version__

    return __version__


def _username() -> str:
    try:
        import getpass

        return getpass.getuser()
    except Exception:
        return os.environ.get("USER", "unknown")


# Module-level wrappers matching the documented operation shapes.

def run(graph: TaskGraph, policy: Policy, executor, jobs: int,
        keep_going: bool, *, workspace: str, cache: CacheStore | None = None,
        run_id: str | None = None, meta: dict | None = None) -> RunResult:
    runner = Runner(workspace, cache, executor, jobs, keep_going)
    return runner.run(graph, policy, run_id, meta)


def plan_preview(graph: TaskGraph, policy: Policy, cache: CacheStore,
                 workspace: str) -> dict[str, TaskAction]:
    return Runner(workspace, cache).plan_preview(graph, policy)
