"""Forward-directed strategy graphs.

Every per-utterance strategy becomes a node; each node receives an edge from
every strategy of every earlier turn, so influence can only flow forward in
time. The same construction applied to one dialogue act per turn yields the
dialogue-act graph.
"""

from negograph import corpus as C
from negograph import graphbuild as G

vocab = C.strategy_vocab()
turns = [
    ["politeness_greet", "liwc_informal"],
    ["propose"],
    ["hedge_count", "pos_sentiment", "trade_in"],
]

g = G.build_graph([[vocab.id(s) for s in t] for t in turns], n_labels=len(vocab))
print(f"turns with strategy counts {[len(t) for t in turns]}")
print(f"-> {g.num_nodes} nodes, {g.num_edges} edges "
      f"(2*1 + 2*3 + 1*3 = {2 * 1 + 2 * 3 + 1 * 3})")

print("\nnodes (turn, strategy):")
for i, (turn, lab) in enumerate(g.nodes):
    print(f"  n{i}: u{turn} {vocab.label(lab)}")

print("\nincremental extension equals a fresh build:")
g2 = G.extend_graph(g, [vocab.id("politeness_gratitude")])
fresh = G.build_graph([[vocab.id(s) for s in t] for t in turns] + [[vocab.id("politeness_gratitude")]],
                      n_labels=len(vocab))
print(f"  extend == build: {g2.equals(fresh)}")

print("\ndebug dump (consumed by the UI and oracle tests):")
print(G.graph_to_json(g, vocab)[:120] + " ...")
