"""PMU siting utilities.

Two greedy graph covers give fully observable (dominating set) and fully
branch-metered (vertex cover) placements.  The incremental search grows a
placement one bus at a time for a chosen estimator: every candidate bus is
scored by retraining at a reduced budget on features re-extracted from
cached power-flow solutions, and the best bus is adopted.
"""

import logging
from dataclasses import dataclass

from . import measurement
from .scenario import build_dataset

log = logging.getLogger(__name__)


def _adjacency(model):
    adj = {b.id: set() for b in model.buses}
    for br in model.branches:
        if br.in_service:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
    return adj


def greedy_dominating_set(model):
    """Greedy cover of every bus by a placed bus or a placed neighbor.

    Repeatedly places at the bus covering the most uncovered buses
    (itself + neighbors); ties break toward the lower bus id.
    """
    adj = _adjacency(model)
    uncovered = set(adj)
    chosen = []
    while uncovered:
        best = min(adj, key=lambda b: (-len(({b} | adj[b]) & uncovered), b))
        gain = ({best} | adj[best]) & uncovered
        if not gain:
            raise RuntimeError("network is disconnected from remaining buses")
        chosen.append(best)
        uncovered -= gain
    return measurement.placement_for_buses(model, chosen)


def greedy_vertex_cover(model):
    """Greedy endpoint cover of every in-service branch."""
    edges = {(br.from_bus, br.to_bus) for br in model.branches if br.in_service}
    degree = {}
    chosen = []
    while edges:
        degree.clear()
        for u, v in edges:
            degree[u] = degree.get(u, 0) + 1
            degree[v] = degree.get(v, 0) + 1
        best = min(degree, key=lambda b: (-degree[b], b))
        chosen.append(best)
        edges = {e for e in edges if best not in e}
    return measurement.placement_for_buses(model, chosen)


@dataclass(frozen=True)
class PlacementSearchResult:
    kind: str
    start_buses: tuple
    sequence: tuple        # (bus id, recorded validation RMSE in MW) per step


def default_candidate_pool(model, placed, size):
    """Deterministic desk-scale candidate restriction: the highest-degree
    unplaced buses, ties toward lower id."""
    adj = _adjacency(model)
    free = [b for b in adj if b not in placed]
    free.sort(key=lambda b: (-len(adj[b]), b))
    return free[:size] if size else free


def incremental_search(model, cache, kind, start, steps, config, noise=None,
                       seed=0, sizes=None, candidate_pool_size=0, n_bin=5,
                       full_budget_config=None, pool_map=None):
    """Grow a placement one bus at a time for the given estimator kind.

    Per step every candidate bus is scored by retraining with `config`
    (the reduced budget) and measuring validation RMSE on noisy features;
    the arg-min bus (ties toward lower id) is adopted and retrained with
    `full_budget_config` (defaults to `config`) to record the step's RMSE.
    """
    from . import estimators  # deferred: estimators trains, placement sites

    if steps < 1:
        raise ValueError("steps must be at least 1")
    if sizes is None:
        n = cache.voltages.shape[0]
        n_test = max(1, n // 10)
        n_val = max(1, n // 10)
        sizes = {"train": n - n_val - n_test, "val": n_val, "test": n_test}

    record_config = full_budget_config if full_budget_config is not None else config

    def score(buses, train_cfg):
        placement = measurement.placement_for_buses(model, buses)
        ds = build_dataset(model, None, placement, sizes, seed=seed, cache=cache)
        est = estimators.train_kind(kind, ds, noise, train_cfg, n_bin=n_bin)
        return estimators.validation_rmse(est, ds, noise)

    placed = list(start.buses)
    sequence = []
    for step in range(steps):
        pool = default_candidate_pool(model, set(placed), candidate_pool_size)
        if not pool:
            raise ValueError("candidate set is empty")

        def eval_candidate(bus):
            return bus, score(placed + [bus], config)

        mapper = pool_map if pool_map is not None else map
        scored = sorted(mapper(eval_candidate, pool), key=lambda t: (t[1], t[0]))
        bus, reduced_rmse = scored[0]
        placed.append(bus)
        recorded = (score(placed, record_config)
                    if record_config is not config else reduced_rmse)
        log.info("step %d: adopted bus %s (val RMSE %.3f MW)", step + 1, bus, recorded)
        sequence.append((bus, float(recorded)))
    return PlacementSearchResult(kind=kind, start_buses=start.buses,
                                 sequence=tuple(sequence))
