// DOM rendering of the chat pane, strategy badges, deal controls, outcome
// banner and the live attention graph. Buyer badges come from the service's
// keyword tagger, bot badges from the model's own predictions; the two are
// visually distinguished by class.

import { renderGraph } from "./graphView.js";
import type { NegotiationViewModel, ViewState } from "./viewModel.js";

export interface ChatDom {
  messages: HTMLElement;
  banner: HTMLElement;
  priceState: HTMLElement;
  graph: HTMLElement;
  input: HTMLInputElement;
  sendButton: HTMLButtonElement;
  offerInput: HTMLInputElement;
  offerButton: HTMLButtonElement;
  acceptButton: HTMLButtonElement;
  rejectButton: HTMLButtonElement;
  quitButton: HTMLButtonElement;
  error: HTMLElement;
}

export function renderState(state: ViewState, dom: ChatDom, terminal: boolean,
                            offerOutstanding: boolean): void {
  const doc = dom.messages.ownerDocument;
  dom.messages.textContent = "";
  for (const msg of state.messages) {
    const row = doc.createElement("div");
    row.className = `message ${msg.speaker}${msg.failed ? " failed" : ""}${msg.pending ? " pending" : ""}`;
    const text = doc.createElement("span");
    text.className = "text";
    text.textContent = msg.text;
    row.appendChild(text);
    if (msg.failed) {
      const note = doc.createElement("span");
      note.className = "unsent-note";
      note.textContent = "not sent - retry";
      row.appendChild(note);
    }
    for (const badge of msg.badges) {
      const chip = doc.createElement("span");
      chip.className = `badge ${msg.badgeKind === "model" ? "badge-model" : "badge-tagger"}`;
      chip.textContent = badge;
      row.appendChild(chip);
    }
    dom.messages.appendChild(row);
  }

  if (state.priceState) {
    const ps = state.priceState;
    const offer = ps.outstanding_offer
      ? `outstanding offer: $${ps.outstanding_offer.amount}`
      : "no outstanding offer";
    const proposal = ps.proposal_fraction == null
      ? "no proposal yet"
      : `last proposal $${ps.last_buyer_proposal} (fraction ${ps.proposal_fraction})`;
    dom.priceState.textContent =
      `listed $${ps.listed_price} | target $${ps.buyer_target_price} | ${proposal} | ${offer}`;
  }

  if (state.outcome) {
    const o = state.outcome;
    dom.banner.className = `banner outcome-${o.status}`;
    dom.banner.textContent = o.status === "accept"
      ? `deal at $${o.salePrice} - sale-to-list ratio ${o.ratio}`
      : `negotiation ended: ${o.status}`;
  } else {
    dom.banner.className = "banner";
    dom.banner.textContent = "";
  }

  dom.error.textContent = state.lastError ?? "";
  dom.input.disabled = terminal;
  dom.sendButton.disabled = terminal;
  dom.offerButton.disabled = terminal;
  dom.acceptButton.disabled = terminal || !offerOutstanding;
  dom.rejectButton.disabled = terminal || !offerOutstanding;
  dom.quitButton.disabled = terminal;

  if (state.snapshot) {
    renderGraph(state.snapshot, dom.graph);
  }
}

export function wire(vm: NegotiationViewModel, dom: ChatDom): void {
  vm.subscribe((state) => renderState(state, dom, vm.terminal, vm.offerOutstanding));
  dom.sendButton.addEventListener("click", () => {
    const text = dom.input.value.trim();
    if (!text) return;
    dom.input.value = "";
    void vm.sendMessage(text);
  });
  dom.input.addEventListener("keydown", (ev) => {
    if ((ev as KeyboardEvent).key === "Enter") dom.sendButton.click();
  });
  dom.offerButton.addEventListener("click", () => {
    const amount = Number(dom.offerInput.value);
    if (Number.isFinite(amount) && amount > 0) void vm.sendAction("offer", amount);
  });
  dom.acceptButton.addEventListener("click", () => void vm.sendAction("accept"));
  dom.rejectButton.addEventListener("click", () => void vm.sendAction("reject"));
  dom.quitButton.addEventListener("click", () => void vm.sendAction("quit"));
}
