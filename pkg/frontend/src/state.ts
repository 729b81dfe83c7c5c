/** Session state container: mirrors server responses, no local bookkeeping. */

import { ApiError, Client, Phase, QuestionPayload, TreeNodePayload } from "./api";

export interface UiSessionState {
  sessionId: string | null;
  question: QuestionPayload | null;
  answeredCount: number;
  phase: Phase;
  tree: TreeNodePayload | null;
  /** Answers recorded since the last completed training; drives staleness. */
  answersSinceTraining: number;
  banner: string | null;
}

export type Listener = (state: UiSessionState) => void;

const INITIAL: UiSessionState = {
  sessionId: null,
  question: null,
  answeredCount: 0,
  phase: "collecting",
  tree: null,
  answersSinceTraining: 0,
  banner: null,
};

/**
 * Drives one annotation session. At most one answer submission is in flight
 * at a time; a second click while waiting is ignored rather than queued.
 */
export class SessionController {
  private state: UiSessionState = { ...INITIAL };
  private listeners: Listener[] = [];
  private submitting = false;

  constructor(
    readonly client: Client,
    readonly trainPromptAt = 300,
  ) {}

  get current(): UiSessionState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private update(patch: Partial<UiSessionState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  async start(responder: string): Promise<void> {
    const created = await this.client.createSession(responder);
    this.update({ ...INITIAL, sessionId: created.session_id, phase: created.phase });
    await this.refresh();
    await this.loadQuestion();
  }

  /** Reattach to an existing session, rebuilding all state from the server. */
  async resume(sessionId: string): Promise<void> {
    this.update({ ...INITIAL, sessionId });
    await this.refresh();
    if (this.state.phase !== "training") await this.loadQuestion();
  }

  async refresh(): Promise<void> {
    const sessionId = this.requireSession();
    const progress = await this.client.progress(sessionId);
    const tree = progress.has_tree ? await this.client.tree(sessionId) : null;
    this.update({
      answeredCount: progress.pool_size,
      phase: progress.phase,
      tree,
    });
  }

  async loadQuestion(): Promise<void> {
    const sessionId = this.requireSession();
    try {
      const question = await this.client.nextQuestion(sessionId);
      this.update({ question, phase: "collecting", banner: null });
    } catch (error) {
      this.update({ banner: describe(error) });
      throw error;
    }
  }

  /**
   * Submit the stimulus in the given slot (0-2) as the odd one out. The
   * question is retained on failure so the annotator can retry.
   */
  async answer(slot: number): Promise<void> {
    const { question } = this.state;
    const sessionId = this.requireSession();
    if (!question || this.submitting) return;
    if (slot < 0 || slot >= question.items.length) return;
    this.submitting = true;
    try {
      const ack = await this.client.submitAnswer(
        sessionId,
        question.question_id,
        question.items[slot],
      );
      this.update({
        answeredCount: ack.pool_size,
        answersSinceTraining: this.state.answersSinceTraining + (ack.recorded ? 1 : 0),
        banner: null,
      });
    } catch (error) {
      this.update({ banner: describe(error) });
      return;
    } finally {
      this.submitting = false;
    }
    await this.loadQuestion();
  }

  get shouldPromptTraining(): boolean {
    return this.state.phase === "collecting" && this.state.answersSinceTraining >= this.trainPromptAt;
  }

  get treeIsStale(): boolean {
    return this.state.tree !== null && this.state.answersSinceTraining > 0;
  }

  async train(): Promise<void> {
    const sessionId = this.requireSession();
    await this.client.triggerTrain(sessionId);
    this.update({ phase: "training", question: null });
  }

  /** Poll until training finishes, then pull the fresh tree. */
  async waitUntilReady(intervalMs = 500, timeoutMs = 120_000): Promise<void> {
    const sessionId = this.requireSession();
    const deadline = Date.now() + timeoutMs;
    while (Date.now() < deadline) {
      const progress = await this.client.progress(sessionId);
      if (progress.phase !== "training") {
        const tree = progress.has_tree ? await this.client.tree(sessionId) : null;
        this.update({
          phase: progress.phase,
          answeredCount: progress.pool_size,
          tree,
          answersSinceTraining: 0,
        });
        return;
      }
      await new Promise((resolve) => setTimeout(resolve, intervalMs));
    }
    throw new Error("training did not finish in time");
  }

  private requireSession(): string {
    if (!this.state.sessionId) throw new Error("no session started");
    return this.state.sessionId;
  }
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return `server rejected the request: ${error.message}`;
  return "network failure; the question is kept, retry when back online";
}
