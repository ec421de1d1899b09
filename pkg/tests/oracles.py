"""Independent brute-force oracles the real implementations are checked against.

Everything here favors obviousness over speed and shares no code with
the package: cycle detection by path enumeration, reachability by fixed
point, Spearman by O(n^2) rank assignment + textbook Pearson, and
Kendall tau-b by classifying every pair.
"""

from __future__ import annotations

import math
from itertools import permutations


def has_cycle_bruteforce(n_nodes: int, edges: list[tuple[int, int]]) -> bool:
    """True iff some node reaches itself; walks every simple path."""
    adjacency: dict[int, list[int]] = {i: [] for i in range(1, n_nodes + 1)}
    for parent, child in edges:
        adjacency[parent].append(child)

    def reaches(start: int, target: int, seen: frozenset[int]) -> bool:
        for nxt in adjacency[start]:
            if nxt == target:
                return True
            if nxt not in seen and reaches(nxt, target, seen | {nxt}):
                return True
        return False

    return any(reaches(i, i, frozenset({i})) for i in adjacency)


def reachable_bruteforce(n_nodes: int, edges: list[tuple[int, int]], start: int) -> set[int]:
    """Fixed-point closure of the edge relation from one node."""
    out: set[int] = set()
    changed = True
    while changed:
        changed = False
        for parent, child in edges:
            if (parent == start or parent in out) and child not in out:
                out.add(child)
                changed = True
    return out


def is_topological(order: list[int], edges: list[tuple[int, int]]) -> bool:
    position = {node: i for i, node in enumerate(order)}
    return all(position[p] < position[c] for p, c in edges)


def expected_scores_bruteforce(
    n_nodes: int, edges: list[tuple[int, int]], raw_answers: dict[int, int]
) -> dict[int, int]:
    """Definitional score map: 1 iff the node and all its ancestors answered yes."""
    parents: dict[int, list[int]] = {i: [] for i in range(1, n_nodes + 1)}
    for p, c in edges:
        parents[c].append(p)

    def ancestors(node: int) -> set[int]:
        out: set[int] = set()
        frontier = list(parents[node])
        while frontier:
            cur = frontier.pop()
            if cur not in out:
                out.add(cur)
                frontier.extend(parents[cur])
        return out

    return {
        i: int(raw_answers[i] == 1 and all(raw_answers[a] == 1 for a in ancestors(i)))
        for i in range(1, n_nodes + 1)
    }


def spearman_bruteforce(x: list[float], y: list[float]) -> float:
    """Average ranks by counting, then the textbook Pearson formula."""

    def ranks(values: list[float]) -> list[float]:
        out = []
        for v in values:
            smaller = sum(1 for w in values if w < v)
            equal = sum(1 for w in values if w == v)
            out.append(smaller + (equal + 1) / 2)
        return out

    rx, ry = ranks(x), ranks(y)
    n = len(x)
    mean_x = sum(rx) / n
    mean_y = sum(ry) / n
    num = sum((a - mean_x) * (b - mean_y) for a, b in zip(rx, ry))
    den = math.sqrt(
        sum((a - mean_x) ** 2 for a in rx) * sum((b - mean_y) ** 2 for b in ry)
    )
    return num / den


def kendall_tau_b_bruteforce(x: list[float], y: list[float]) -> float:
    """Classify every pair as concordant/discordant/tied and apply the formula."""
    concordant = discordant = tied_x_only = tied_y_only = 0
    n = len(x)
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tied_x_only += 1
            elif dy == 0:
                tied_y_only += 1
            elif (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    c, d = concordant, discordant
    return (c - d) / math.sqrt((c + d + tied_x_only) * (c + d + tied_y_only))


def all_dags_upto(max_nodes: int):
    """Yield (n, edge_list) for every canonical DAG with <= max_nodes nodes.

    Canonical means edges only point from lower to higher id; every DAG is
    a relabeling of exactly one of these.
    """
    for n in range(0, max_nodes + 1):
        possible = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
        for mask in range(1 << len(possible)):
            yield n, [possible[k] for k in range(len(possible)) if mask >> k & 1]


def all_permutation_pairs(max_n: int):
    """(x, y) with x = 1..n and y each permutation, for n = 2..max_n."""
    for n in range(2, max_n + 1):
        x = list(range(1, n + 1))
        for perm in permutations(x):
            yield x, list(perm)
