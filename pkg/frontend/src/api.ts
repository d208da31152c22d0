// Typed client for the negotiation service HTTP+JSON API. All payloads are
// versioned with a `v` field; every number shown in the UI originates here.

export interface Scenario {
  listed_price: number;
  buyer_target_price: number;
  title?: string;
  description?: string;
}

export interface OutstandingOffer {
  amount: number;
  proposer: string;
}

export interface PriceState {
  listed_price: number;
  buyer_target_price: number;
  last_buyer_proposal: number | null;
  proposal_fraction: number | null;
  outstanding_offer: OutstandingOffer | null;
}

export interface TraceNode {
  turn: number;
  label: string;
}

export interface AlphaEdge {
  src: number;
  dst: number;
  w: number;
}

export interface TraceLayer {
  alpha: AlphaEdge[];
  clusters: { S: number[][]; kept: number[]; fitness: number[] };
}

export interface TraceSnapshot {
  nodes: TraceNode[];
  layers: TraceLayer[];
}

export interface CreateResponse {
  v: number;
  session: string;
  opening: string;
  price_state: PriceState;
}

export interface MessageResponse {
  v: number;
  session: string;
  buyer_strategies: string[];
  buyer_da: string;
  bot_reply: string;
  bot_strategies: string[];
  bot_da: string;
  predicted_next_strategies: string[];
  price_state: PriceState;
  trace_snapshot: TraceSnapshot;
}

export interface ActionResponse {
  v: number;
  session: string;
  status: string;
  sale_price?: number | null;
  ratio?: number | null;
  outstanding_offer?: OutstandingOffer;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(url: string, method: string, body?: unknown): Promise<T> {
  const resp = await fetch(url, {
    method,
    headers: { "Content-Type": "application/json" },
    body: body === undefined ? undefined : JSON.stringify(body),
  });
  const payload = (await resp.json()) as T & { error?: string };
  if (!resp.ok) {
    throw new ApiError(resp.status, payload.error ?? `HTTP ${resp.status}`);
  }
  return payload;
}

export class ApiClient {
  constructor(private base: string) {}

  createSession(scenario: Scenario): Promise<CreateResponse> {
    return request(`${this.base}/sessions`, "POST", scenario);
  }

  sendMessage(sessionId: string, text: string): Promise<MessageResponse> {
    return request(`${this.base}/sessions/${sessionId}/message`, "POST", { text });
  }

  sendAction(sessionId: string, action: string, amount?: number): Promise<ActionResponse> {
    return request(`${this.base}/sessions/${sessionId}/action`, "POST", { action, amount });
  }

  getTrace(sessionId: string): Promise<{ v: number; session: string; trace: TraceSnapshot }> {
    return request(`${this.base}/sessions/${sessionId}/trace`, "GET");
  }

  health(): Promise<{ v: number; status: string; model_loaded: boolean }> {
    return request(`${this.base}/healthz`, "GET");
  }
}
