// Session view model: message list with strategy badges, price state,
// outstanding-offer gating, outcome banner, and the latest trace snapshot.
// The UI never computes prices or ratios itself; every displayed number is a
// service response field. Requests for one session are serialized so replies
// reconcile in order.

import {
  ApiClient,
  type ActionResponse,
  type PriceState,
  type Scenario,
  type TraceSnapshot,
} from "./api.js";

export type Speaker = "buyer" | "bot";

export interface ChatMessage {
  speaker: Speaker;
  text: string;
  badges: string[];
  badgeKind: "tagger" | "model" | "none";
  pending: boolean;
  failed: boolean;
}

export interface Outcome {
  status: string;
  salePrice: number | null;
  ratio: number | null;
}

export interface ViewState {
  sessionId: string | null;
  messages: ChatMessage[];
  priceState: PriceState | null;
  predictedNext: string[];
  snapshot: TraceSnapshot | null;
  outcome: Outcome | null;
  lastError: string | null;
}

export class NegotiationViewModel {
  private state: ViewState = {
    sessionId: null,
    messages: [],
    priceState: null,
    predictedNext: [],
    snapshot: null,
    outcome: null,
    lastError: null,
  };
  private queue: Promise<unknown> = Promise.resolve();
  private listeners: Array<(s: ViewState) => void> = [];

  constructor(private api: ApiClient) {}

  getState(): ViewState {
    return this.state;
  }

  get terminal(): boolean {
    return this.state.outcome !== null && this.state.outcome.status !== "offer";
  }

  get offerOutstanding(): boolean {
    return this.state.priceState?.outstanding_offer != null;
  }

  subscribe(fn: (s: ViewState) => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.state);
  }

  private serialize<T>(job: () => Promise<T>): Promise<T> {
    const next = this.queue.then(job, job);
    this.queue = next.catch(() => undefined);
    return next;
  }

  async start(scenario: Scenario): Promise<void> {
    const created = await this.api.createSession(scenario);
    this.state = {
      sessionId: created.session,
      messages: [
        {
          speaker: "bot",
          text: created.opening,
          badges: [],
          badgeKind: "none",
          pending: false,
          failed: false,
        },
      ],
      priceState: created.price_state,
      predictedNext: [],
      snapshot: null,
      outcome: null,
      lastError: null,
    };
    this.emit();
  }

  async sendMessage(text: string): Promise<void> {
    if (!this.state.sessionId || this.terminal) return;
    const mine: ChatMessage = {
      speaker: "buyer",
      text,
      badges: [],
      badgeKind: "tagger",
      pending: true,
      failed: false,
    };
    this.state.messages.push(mine);
    this.emit();
    await this.serialize(async () => {
      try {
        const resp = await this.api.sendMessage(this.state.sessionId!, text);
        mine.pending = false;
        mine.badges = resp.buyer_strategies;
        this.state.messages.push({
          speaker: "bot",
          text: resp.bot_reply,
          badges: resp.bot_strategies,
          badgeKind: "model",
          pending: false,
          failed: false,
        });
        this.state.priceState = resp.price_state;
        this.state.predictedNext = resp.predicted_next_strategies;
        this.state.snapshot = resp.trace_snapshot;
        this.state.lastError = null;
      } catch (err) {
        // no phantom turns: the buyer message stays visible, marked unsent
        mine.pending = false;
        mine.failed = true;
        this.state.lastError = err instanceof Error ? err.message : String(err);
      }
      this.emit();
    });
  }

  async sendAction(action: string, amount?: number): Promise<ActionResponse | null> {
    if (!this.state.sessionId) return null;
    return this.serialize(async () => {
      try {
        const resp = await this.api.sendAction(this.state.sessionId!, action, amount);
        if (resp.status === "offer") {
          this.state.priceState = {
            ...(this.state.priceState as PriceState),
            outstanding_offer: resp.outstanding_offer ?? null,
          };
        } else {
          this.state.outcome = {
            status: resp.status,
            salePrice: resp.sale_price ?? null,
            ratio: resp.ratio ?? null,
          };
        }
        this.state.lastError = null;
        this.emit();
        return resp;
      } catch (err) {
        this.state.lastError = err instanceof Error ? err.message : String(err);
        this.emit();
        return null;
      }
    });
  }
}
