/** Typed client for the elicitation service HTTP+JSON API. */

export type Phase = "collecting" | "training" | "ready";

export interface CreatedSession {
  session_id: string;
  responder: string;
  phase: Phase;
}

export interface QuestionPayload {
  question_id: string;
  items: number[];
  stimuli: string[];
}

export interface AnswerAck {
  recorded: boolean;
  duplicate: boolean;
  pool_size: number;
}

export interface ProgressPayload {
  session_id: string;
  responder: string;
  phase: Phase;
  iteration: number;
  pool_size: number;
  questions_served: number;
  pending: number;
  has_tree: boolean;
  purity?: number;
}

export interface TreeNodePayload {
  id: number;
  members: number[];
  majority_label: string | null;
  accuracy: number | null;
  d_H: number;
  children: TreeNodePayload[];
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      if (typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

/**
 * All requests go through one base URL so the client works same-origin in
 * the browser ("" base) and cross-process in tests (absolute base).
 */
export class Client {
  constructor(
    private readonly base = "",
    private readonly fetcher: typeof fetch = fetch,
  ) {}

  async createSession(responder: string, config?: Record<string, unknown>): Promise<CreatedSession> {
    const response = await this.fetcher(`${this.base}/sessions`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(config ? { responder, config } : { responder }),
    });
    return parseOrThrow<CreatedSession>(response);
  }

  async nextQuestion(sessionId: string): Promise<QuestionPayload> {
    const response = await this.fetcher(`${this.base}/sessions/${sessionId}/question`);
    return parseOrThrow<QuestionPayload>(response);
  }

  async submitAnswer(sessionId: string, questionId: string, chosen: number): Promise<AnswerAck> {
    const response = await this.fetcher(`${this.base}/sessions/${sessionId}/answers`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ question_id: questionId, chosen }),
    });
    return parseOrThrow<AnswerAck>(response);
  }

  async triggerTrain(sessionId: string): Promise<void> {
    const response = await this.fetcher(`${this.base}/sessions/${sessionId}/train`, {
      method: "POST",
    });
    await parseOrThrow<{ phase: Phase }>(response);
  }

  /** Resolves null while the session has no tree yet (404 from the server). */
  async tree(sessionId: string): Promise<TreeNodePayload | null> {
    const response = await this.fetcher(`${this.base}/sessions/${sessionId}/tree`);
    if (response.status === 404) return null;
    const payload = await parseOrThrow<{ tree: TreeNodePayload }>(response);
    return payload.tree;
  }

  async progress(sessionId: string): Promise<ProgressPayload> {
    const response = await this.fetcher(`${this.base}/sessions/${sessionId}/progress`);
    return parseOrThrow<ProgressPayload>(response);
  }

  /** Stimulus paths arrive server-relative; prefix them for cross-origin use. */
  stimulusUrl(path: string): string {
    return `${this.base}${path}`;
  }
}

export function countNodes(node: TreeNodePayload): number {
  return 1 + node.children.reduce((sum, child) => sum + countNodes(child), 0);
}
