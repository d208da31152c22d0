"""Graph attention, hierarchical pooling, and the interpretability reports.

A structure encoder pass yields both a fixed-size encoding and an attention
trace; min-max normalized incoming attention gives per-strategy influence
maps, and cluster assignments give strategy association scores.
"""

import numpy as np

from negograph import corpus as C
from negograph import gnn, graphbuild as G, interpret

vocab = C.strategy_vocab()
turns = [["politeness_greet"], ["liwc_informal", "pos_sentiment"], ["propose", "trade_in"], ["family"]]
graph = G.build_graph([[vocab.id(s) for s in t] for t in turns], n_labels=len(vocab))

params = gnn.StructureEncoderParams.create(seed=3, name="demo", n_labels=len(vocab),
                                           d=16, layers=2, ratio=0.8, fc_hidden=16)
enc = gnn.structure_encode(graph, params)
print(f"encoding h has dim {enc.h.shape[0]}; {len(enc.trace.layers)} pooling stages")
for s, stage in enumerate(enc.trace.layers):
    print(f"  stage {s}: {len(stage.nodes)} nodes -> kept clusters {stage.kept}")

payload = gnn.trace_to_payload(enc.trace, vocab)

print("\ninfluence map of the last node (family at u3):")
target = graph.num_nodes - 1
imap = interpret.influence_map(payload, target)
for e in sorted(imap.entries, key=lambda e: -e.normalized):
    print(f"  u{e.source_turn} {e.source_label:16s} raw={e.raw:.3f} normalized={e.normalized:.3f}")

print("\nassociation scores from cluster co-membership:")
table = interpret.association_scores([payload])
for a, b in table.pairs()[:6]:
    print(f"  {a} <-> {b}: {table.scores[(a, b)]:.4f} ({table.counts[(a, b)]} observations)")

print("\npropose-boundary report (crossing vs non-crossing attention):")
report = interpret.propose_boundary_report([payload])
print(f"  dialogues with propose: {report.n_dialogues}; "
      f"crossing mean={report.crossing_mean}, non-crossing mean={report.non_crossing_mean}")
