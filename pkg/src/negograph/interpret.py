"""Interpretability reports over exported attention traces: per-node influence
maps (min-max normalized incoming attention), strategy association scores
(cluster co-membership weights), and the propose-boundary statistic. All
functions are pure over the trace JSON payloads produced by the encoder, so
re-running a report on the same files is bit-identical.

Only stage-1 structures are read: that is the one stage where node identities
are still strategy-utterance pairs (later stages operate on clusters).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field


class InterpretError(Exception):
    pass


@dataclass
class InfluenceEntry:
    source: int
    source_label: str
    source_turn: int
    raw: float
    normalized: float


@dataclass
class InfluenceMap:
    target: int
    target_label: str
    entries: list[InfluenceEntry]
    uninformative: bool = False


def _layer1(payload: dict):
    if not payload.get("layers"):
        raise InterpretError("trace payload has no layers")
    return payload["layers"][0]


def influence_map(payload: dict, target_node: int) -> InfluenceMap:
    """Incoming non-self attention of `target_node`, min-max normalized:
    (raw - min) / (max - min). A single in-edge maps to 1; if all raw values
    tie, every weight is 0 by convention and the map is flagged
    uninformative."""
    nodes = payload.get("nodes", [])
    if target_node < 0 or target_node >= len(nodes):
        raise InterpretError(f"node {target_node} not in trace")
    incoming = [e for e in _layer1(payload)["alpha"]
                if e["dst"] == target_node and e["src"] != e["dst"]]
    if not incoming:
        raise InterpretError(f"node {target_node} has no incoming edges")
    raws = [e["w"] for e in incoming]
    lo, hi = min(raws), max(raws)
    uninformative = False
    if len(raws) == 1:
        normalized = [1.0]
    elif hi == lo:
        normalized = [0.0] * len(raws)
        uninformative = True
    else:
        normalized = [(r - lo) / (hi - lo) for r in raws]
    entries = [
        InfluenceEntry(
            source=e["src"],
            source_label=nodes[e["src"]]["label"],
            source_turn=nodes[e["src"]]["turn"],
            raw=e["w"],
            normalized=w,
        )
        for e, w in zip(incoming, normalized)
    ]
    return InfluenceMap(
        target=target_node,
        target_label=nodes[target_node]["label"],
        entries=entries,
        uninformative=uninformative,
    )


def influence_map_to_json(imap: InfluenceMap) -> str:
    return json.dumps({
        "target": imap.target,
        "target_label": imap.target_label,
        "uninformative": imap.uninformative,
        "incoming": [
            {"src": e.source, "label": e.source_label, "turn": e.source_turn,
             "raw": e.raw, "normalized": e.normalized}
            for e in imap.entries
        ],
    }, sort_keys=True)


def influence_to_dot(payload: dict, min_normalized: float = 0.0) -> str:
    """DOT rendering of the stage-1 influence structure; edge pen width tracks
    the min-max normalized weight."""
    nodes = payload.get("nodes", [])
    lines = ["digraph influence {", "  rankdir=LR;"]
    for i, n in enumerate(nodes):
        lines.append(f'  n{i} [label="u{n["turn"]}:{n["label"]}"];')
    for i in range(len(nodes)):
        try:
            imap = influence_map(payload, i)
        except InterpretError:
            continue
        for e in imap.entries:
            if e.normalized < min_normalized:
                continue
            width = 0.5 + 3.0 * e.normalized
            lines.append(
                f'  n{e.source} -> n{i} [penwidth={width:.2f} label="{e.normalized:.2f}"];')
    lines.append("}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# association scores


@dataclass
class AssociationTable:
    """Symmetric strategy-pair scores in [0, 1] with co-occurrence counts.
    Pairs never co-clustered are simply absent."""

    scores: dict[tuple[str, str], float] = field(default_factory=dict)
    counts: dict[tuple[str, str], int] = field(default_factory=dict)

    def score(self, a: str, b: str) -> float | None:
        return self.scores.get((a, b))

    def pairs(self) -> list[tuple[str, str]]:
        return sorted(k for k in self.scores if k[0] < k[1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["strategy_a", "strategy_b", "score", "observations"])
            for a, b in self.pairs():
                writer.writerow([a, b, f"{self.scores[(a, b)]:.6f}", self.counts[(a, b)]])


def association_scores(payloads: list[dict]) -> AssociationTable:
    """For every co-membership of labels a and b inside a kept stage-1
    cluster, record the member weight on the a side under direction (a, b);
    the final score averages the two directions. The diagonal (a, a) is
    excluded from reports."""
    if not payloads:
        raise InterpretError("no traces given")
    sums: dict[tuple[str, str], float] = {}
    counts: dict[tuple[str, str], int] = {}
    for payload in payloads:
        labels = [n["label"] for n in payload.get("nodes", [])]
        clusters = _layer1(payload)["clusters"]
        s_matrix = clusters["S"]
        for c in clusters["kept"]:
            row = s_matrix[c]
            members = [i for i, w in enumerate(row) if w > 0]
            for i in members:
                for j in members:
                    if i == j or labels[i] == labels[j]:
                        continue
                    key = (labels[i], labels[j])
                    sums[key] = sums.get(key, 0.0) + row[i]
                    counts[key] = counts.get(key, 0) + 1
    table = AssociationTable()
    seen = set()
    for a, b in sums:
        if (b, a) not in sums or (a, b) in seen:
            continue
        seen.add((a, b))
        seen.add((b, a))
        score = 0.5 * (sums[(a, b)] / counts[(a, b)] + sums[(b, a)] / counts[(b, a)])
        n = counts[(a, b)] + counts[(b, a)]
        table.scores[(a, b)] = table.scores[(b, a)] = score
        table.counts[(a, b)] = table.counts[(b, a)] = n
    return table


# ---------------------------------------------------------------------------
# propose-boundary report


@dataclass
class BoundaryReport:
    n_dialogues: int = 0
    n_crossing: int = 0
    n_non_crossing: int = 0
    crossing_mean: float | None = None
    non_crossing_mean: float | None = None

    @property
    def empty(self) -> bool:
        return self.n_dialogues == 0


def propose_boundary_report(payloads: list[dict], propose_label: str = "propose") -> BoundaryReport:
    """Mean min-max-normalized attention on edges that cross a dialogue's
    first propose turn (source strictly before it, destination strictly
    after) versus all other non-self edges. Traces without a propose node are
    skipped; the report is empty when none carries one."""
    report = BoundaryReport()
    crossing: list[float] = []
    non_crossing: list[float] = []
    for payload in payloads:
        nodes = payload.get("nodes", [])
        propose_turns = [n["turn"] for n in nodes if n["label"] == propose_label]
        if not propose_turns:
            continue
        report.n_dialogues += 1
        boundary = min(propose_turns)
        for dst in range(len(nodes)):
            try:
                imap = influence_map(payload, dst)
            except InterpretError:
                continue
            for e in imap.entries:
                src_turn, dst_turn = e.source_turn, nodes[dst]["turn"]
                if src_turn < boundary and dst_turn > boundary:
                    crossing.append(e.normalized)
                else:
                    non_crossing.append(e.normalized)
    report.n_crossing = len(crossing)
    report.n_non_crossing = len(non_crossing)
    if crossing:
        report.crossing_mean = sum(crossing) / len(crossing)
    if non_crossing:
        report.non_crossing_mean = sum(non_crossing) / len(non_crossing)
    return report
