// Entry point: binds the static page to the view model against a running
// negotiation service (default: same origin, override with ?api=http://host:port).

import { ApiClient } from "./api.js";
import { wire, type ChatDom } from "./chatView.js";
import { NegotiationViewModel } from "./viewModel.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const params = new URLSearchParams(window.location.search);
const base = params.get("api") ?? "";
const api = new ApiClient(base);
const vm = new NegotiationViewModel(api);

const dom: ChatDom = {
  messages: el("messages"),
  banner: el("banner"),
  priceState: el("price-state"),
  graph: el("graph"),
  input: el<HTMLInputElement>("message-input"),
  sendButton: el<HTMLButtonElement>("send"),
  offerInput: el<HTMLInputElement>("offer-amount"),
  offerButton: el<HTMLButtonElement>("offer"),
  acceptButton: el<HTMLButtonElement>("accept"),
  rejectButton: el<HTMLButtonElement>("reject"),
  quitButton: el<HTMLButtonElement>("quit"),
  error: el("error"),
};

wire(vm, dom);

el<HTMLButtonElement>("start").addEventListener("click", () => {
  const listed = Number(el<HTMLInputElement>("listed-price").value);
  const target = Number(el<HTMLInputElement>("target-price").value);
  const title = el<HTMLInputElement>("item-title").value;
  void vm.start({ listed_price: listed, buyer_target_price: target, title });
});
