"""The trial loop: analyze, halt on watched imprecision, trace, classify,
translate findings into configuration deltas, and re-run until the watched
variables are precise, no new information arrives, or the budget runs out.

Config deltas per pattern:

* Function: raise k at the precise-successor call sites (default 1, bump by
  1 when already set, capped).
* Loop: enable iteration contexts for the loop.
* HeapClone: clone the allocation site, and raise k at the call sites of
  its enclosing function so cloned locations actually differ per context.
* Model: override the named builtin result / initial property with its
  documented constant.  Overrides change the analyzed semantics, so trials
  using them are flagged unsound-for-verification.

All deltas of one trial apply at once; configurations only grow.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Optional

from . import cfg as C
from . import patterns as P
from . import tracer as T
from .analyzer import AnalysisConfig, Analyzer, SolveResult, imprecise_calls
from .checker import PrecisionChecker, WatchSet

log = logging.getLogger(__name__)

K_DEFAULT = 1
K_MAX = 5
MAX_ITER_DEFAULT = 10
MAX_DEPTH_DEFAULT = 3

CLEAN = "clean"
NO_NEW_INFO = "noNewInfo"
BUDGET_EXCEEDED = "budgetExceeded"


@dataclass
class Budget:
    max_trials: int = 10
    wall_ms: int = 60_000


@dataclass
class Trial:
    index: int
    config_before: AnalysisConfig
    config_after: AnalysisConfig
    halted: bool
    timed_out: bool
    findings: Optional[P.PatternReport]
    graph: Optional[T.TraceGraph]
    ic_count: int
    ic_sites: list
    graph_nodes: int
    graph_build_ms: float
    elapsed_ms: float
    uses_overrides: bool
    flagged_leaves: list

    def unsound_for_verification(self) -> bool:
        return self.uses_overrides


@dataclass
class TrialReport:
    trials: list
    outcome: str
    total_ms: float

    def final_config(self) -> AnalysisConfig:
        return self.trials[-1].config_after

    def to_json(self) -> dict:
        trials = []
        for t in self.trials:
            trials.append({
                "index": t.index,
                "config_before": t.config_before.to_json(),
                "config_after": t.config_after.to_json(),
                "halted": t.halted,
                "timed_out": t.timed_out,
                "findings": t.findings.to_json() if t.findings else [],
                "ic_count": t.ic_count,
                "ic_sites": t.ic_sites,
                "graph_nodes": t.graph_nodes,
                "unsound_for_verification": t.uses_overrides,
                "flagged_leaves": t.flagged_leaves,
            })
        return {"schema": 1, "outcome": self.outcome, "trials": trials,
                "timing": {"total_ms": self.total_ms,
                           "per_trial_ms": [t.elapsed_ms for t in self.trials],
                           "graph_build_ms": [t.graph_build_ms for t in self.trials]}}


def delta(findings: P.PatternReport, current: AnalysisConfig) -> AnalysisConfig:
    """Translate findings into a grown configuration; idempotent for targets
    already at their configured maximum."""
    cfg = current.copy()

    def raise_k(site: int):
        cur = cfg.kcfa_sites.get(site, 0)
        cfg.kcfa_sites[site] = min(max(cur + 1, K_DEFAULT), K_MAX)

    for f in sorted(findings.findings, key=lambda f: (f.pattern, f.node.sort_key())):
        if f.pattern == P.FUNCTION:
            for site in f.hint.targets:
                if cfg.kcfa_sites.get(site, 0) < K_MAX:
                    raise_k(site)
        elif f.pattern == P.LOOP:
            for loop in f.hint.targets:
                cfg.lsa_loops.setdefault(loop, (MAX_ITER_DEFAULT, MAX_DEPTH_DEFAULT))
        elif f.pattern == P.HEAP_CLONE:
            site, *callers = f.hint.targets
            cfg.clone_sites = cfg.clone_sites | {site}
            for c in callers:
                if cfg.kcfa_sites.get(c, 0) < K_DEFAULT:
                    raise_k(c)
        elif f.pattern == P.MODEL:
            for name in f.hint.targets:
                cfg.model_overrides.setdefault(name, P.MODEL_CONSTANTS.get(name, 0.0))
    return cfg


def config_geq(a: AnalysisConfig, b: AnalysisConfig) -> bool:
    """a extends b pointwise (sensitivities only grow)."""
    return (all(a.kcfa_sites.get(s, 0) >= k for s, k in b.kcfa_sites.items())
            and all(s in a.lsa_loops for s in b.lsa_loops)
            and b.clone_sites <= a.clone_sites
            and all(n in a.model_overrides for n in b.model_overrides))


def _config_equal(a: AnalysisConfig, b: AnalysisConfig) -> bool:
    return (a.kcfa_sites == b.kcfa_sites and a.lsa_loops == b.lsa_loops
            and a.clone_sites == b.clone_sites
            and a.model_overrides == b.model_overrides)


@dataclass
class TrialRun:
    """One analyze-to-classify cycle's artifacts (before the delta)."""
    result: SolveResult
    graph: Optional[T.TraceGraph]
    findings: Optional[P.PatternReport]
    graph_build_ms: float


def run_one(static_cfg: C.StaticCfg, config: AnalysisConfig,
            watch: WatchSet) -> TrialRun:
    analyzer = Analyzer(static_cfg, config)
    checker = PrecisionChecker(watch)
    result = analyzer.solve(checker)
    graph = None
    findings = None
    build_ms = 0.0
    if result.halt is not None:
        t0 = time.monotonic()
        graph = T.generate_graph(result.halt.impre_vars, result.summary,
                                 result.call_graph)
        findings = P.report(graph, result.summary, result.call_graph)
        build_ms = (time.monotonic() - t0) * 1000.0
    return TrialRun(result, graph, findings, build_ms)


def run_trials(static_cfg: C.StaticCfg, watch: WatchSet, base: AnalysisConfig,
               budget: Optional[Budget] = None) -> TrialReport:
    budget = budget or Budget()
    assert budget.max_trials >= 1
    t_start = time.monotonic()
    trials: list[Trial] = []
    config = base.copy()
    outcome = BUDGET_EXCEEDED

    for index in range(1, budget.max_trials + 1):
        t0 = time.monotonic()
        run = run_one(static_cfg, config, watch)
        result = run.result
        ics = imprecise_calls(result.summary, result.call_graph)
        flagged = _flagged_leaves(run.graph) if run.graph else []
        config_after = delta(run.findings, config) if run.findings else config.copy()
        trial = Trial(
            index=index,
            config_before=config.copy(),
            config_after=config_after,
            halted=result.halt is not None,
            timed_out=result.timed_out,
            findings=run.findings,
            graph=run.graph,
            ic_count=len(ics),
            ic_sites=[{"line": n.line, "node": n.node_id, "callees": c}
                      for n, c in ics],
            graph_nodes=len(run.graph.nodes) if run.graph else 0,
            graph_build_ms=run.graph_build_ms,
            elapsed_ms=(time.monotonic() - t0) * 1000.0,
            uses_overrides=bool(config.model_overrides),
            flagged_leaves=flagged,
        )
        trials.append(trial)
        assert config_geq(config_after, config), "configs must only grow"

        if result.halt is None and not result.timed_out:
            outcome = CLEAN
            break
        if result.timed_out:
            log.warning("trial %d timed out; continuing with the next delta", index)
        if _config_equal(config_after, config):
            outcome = NO_NEW_INFO
            break
        config = config_after
        if (time.monotonic() - t_start) * 1000.0 > budget.wall_ms:
            outcome = BUDGET_EXCEEDED
            break
    return TrialReport(trials, outcome, (time.monotonic() - t_start) * 1000.0)


def _flagged_leaves(graph: T.TraceGraph) -> list:
    out = []
    for t in graph.all_nodes():
        if t.flags:
            out.append({"line": t.line, "subject": t.subject_str(),
                        "flags": sorted(t.flags)})
    return out


def watched_imprecision_count(run: TrialRun, watch: WatchSet) -> int:
    """Number of watched entries imprecise in this run's summary."""
    summary = run.result.summary
    count = 0
    for entry in watch.entries:
        for fnode in summary.flow_nodes_of(entry.node_id):
            if summary.is_imprecise(fnode, ("var", entry.var)):
                count += 1
                break
    return count
