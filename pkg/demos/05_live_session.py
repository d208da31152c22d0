"""A scripted live negotiation session.

Trains a small model on synthetic dialogues, then drives the session API the
same way the HTTP service and the browser client do: messages are tagged,
graphs extend turn by turn, the bot replies with realized prices, and the
deal closes through explicit offer/accept actions.
"""

import warnings

from negograph import synth, train
from negograph.corpus import Corpus, Scenario
from negograph.model import ModelConfig
from negograph.service import NegotiationSessions

warnings.filterwarnings("ignore")

rules = synth.chain_rules(["hedge_count", "politeness_greet", "trade_in"])
corpus = synth.generate(rules, n_dialogues=40, turns_per_dialogue=8, noise_rate=0.05, seed=5)
train_c = Corpus(corpus.dialogues, corpus.strategy_vocab, corpus.da_vocab)
cfg = ModelConfig(seed=3, variant="graph", hidden_dim=16, graph_layers=1,
                  dialogue_context_embedding=12, context_hidden=12, word_dim=8,
                  projection_hidden=16, dialogue_context_dropout=0.0, epochs=5,
                  lr=1e-3, max_decode_len=10, decoder_hidden=12)
model = train.fit(train_c, train_c, cfg).model

sessions = NegotiationSessions(model)
sid, opening = sessions.create_session(Scenario(listed_price=40.0, buyer_target_price=36.0,
                                                title="tubeless tire kit"))
print(f"[seller] {opening}")

for message in ["hi, is the tire kit new?", "that's too much for me, how about $35?"]:
    print(f"[buyer]  {message}")
    resp = sessions.post_buyer_message(sid, message)
    print(f"[seller] {resp['bot_reply']}")
    print(f"         buyer tags: {resp['buyer_strategies']}  bot da: {resp['bot_da']}")
    print(f"         price state: {resp['price_state']}")

print("[buyer]  <offer> 37")
print(sessions.post_action(sid, "offer", 37.0))
outcome = sessions.post_action(sid, "accept")
print(f"deal: sale ${outcome['sale_price']}, sale-to-list ratio {outcome['ratio']:+.2f}")
print(f"session graphs consistent with history: {sessions.graphs_consistent(sid)}")
