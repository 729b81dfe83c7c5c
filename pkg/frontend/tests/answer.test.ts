import { beforeEach, describe, expect, it, vi } from "vitest";

import { Client, QuestionPayload } from "../src/api";
import { bindKeys, renderAnswerScreen } from "../src/answer";
import { SessionController } from "../src/state";

const QUESTION: QuestionPayload = {
  question_id: "q7",
  items: [11, 22, 33],
  stimuli: ["/stimuli/11", "/stimuli/22", "/stimuli/33"],
};

interface Scripted {
  controller: SessionController;
  submitted: Array<{ question_id: string; chosen: number }>;
  failNext: { on: boolean };
}

/** Controller over a scripted fetch covering the answering flow only. */
function scriptedController(trainPromptAt = 300): Scripted {
  const submitted: Array<{ question_id: string; chosen: number }> = [];
  const failNext = { on: false };
  let served = 0;
  const fetcher = (async (url: RequestInfo | URL, init?: RequestInit) => {
    const path = String(url);
    const ok = (body: unknown) =>
      new Response(JSON.stringify(body), { status: 200, headers: { "content-type": "application/json" } });
    if (path.endsWith("/question")) {
      served += 1;
      return ok({ ...QUESTION, question_id: `q${served}` });
    }
    if (path.endsWith("/answers")) {
      if (failNext.on) {
        failNext.on = false;
        return new Response(JSON.stringify({ detail: "chosen item not in question" }), { status: 422 });
      }
      submitted.push(JSON.parse(String(init?.body)));
      return ok({ recorded: true, duplicate: false, pool_size: submitted.length });
    }
    if (path.endsWith("/progress")) {
      return ok({
        session_id: "s1",
        responder: "tester",
        phase: "collecting",
        iteration: 0,
        pool_size: submitted.length,
        questions_served: served,
        pending: 10,
        has_tree: false,
      });
    }
    throw new Error(`unexpected request ${path}`);
  }) as typeof fetch;
  const controller = new SessionController(new Client("", fetcher), trainPromptAt);
  return { controller, submitted, failNext };
}

async function primed(scripted: Scripted): Promise<HTMLElement> {
  await scripted.controller.resume("s1");
  const root = document.createElement("div");
  document.body.replaceChildren(root);
  renderAnswerScreen(root, scripted.controller);
  return root;
}

describe("answer screen", () => {
  beforeEach(() => {
    document.body.replaceChildren();
  });

  it("renders the three stimuli in served order", async () => {
    const scripted = scriptedController();
    const root = await primed(scripted);
    const buttons = root.querySelectorAll<HTMLButtonElement>("button.stimulus");
    expect(buttons).toHaveLength(3);
    expect([...buttons].map((b) => b.dataset.itemId)).toEqual(["11", "22", "33"]);
    const images = root.querySelectorAll<HTMLImageElement>("button.stimulus img");
    expect(images[1].src).toContain("/stimuli/22");
  });

  it("submits the clicked slot's item id unreordered", async () => {
    const scripted = scriptedController();
    const root = await primed(scripted);
    const buttons = root.querySelectorAll<HTMLButtonElement>("button.stimulus");
    buttons[1].click();
    await vi.waitFor(() => expect(scripted.submitted).toHaveLength(1));
    expect(scripted.submitted[0]).toEqual({ question_id: "q1", chosen: 22 });
  });

  it("keeps the question and shows a banner on a validation error", async () => {
    const scripted = scriptedController();
    const root = await primed(scripted);
    scripted.failNext.on = true;
    root.querySelectorAll<HTMLButtonElement>("button.stimulus")[0].click();
    await vi.waitFor(() => expect(scripted.controller.current.banner).toBeTruthy());
    renderAnswerScreen(root, scripted.controller);
    expect(root.querySelector(".banner")?.textContent).toContain("chosen item not in question");
    expect(scripted.controller.current.question?.question_id).toBe("q1");
    expect(root.querySelectorAll("button.stimulus")).toHaveLength(3);
  });

  it("offers training once the batch threshold is reached", async () => {
    const scripted = scriptedController(2);
    const root = await primed(scripted);
    for (let i = 0; i < 2; i += 1) {
      root.querySelectorAll<HTMLButtonElement>("button.stimulus")[0].click();
      await vi.waitFor(() =>
        expect(scripted.controller.current.answeredCount).toBe(i + 1),
      );
      renderAnswerScreen(root, scripted.controller);
    }
    expect(scripted.controller.shouldPromptTraining).toBe(true);
    expect(root.querySelector("button.train-now")).not.toBeNull();
    expect(root.querySelector(".progress")?.textContent).toBe("2 answered");
  });

  it("answers via the 1/2/3 keyboard shortcuts", async () => {
    const scripted = scriptedController();
    await primed(scripted);
    const unbind = bindKeys(document, scripted.controller);
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "3" }));
    await vi.waitFor(() => expect(scripted.submitted).toHaveLength(1));
    expect(scripted.submitted[0].chosen).toBe(33);
    unbind();
    document.dispatchEvent(new KeyboardEvent("keydown", { key: "1" }));
    await new Promise((resolve) => setTimeout(resolve, 20));
    expect(scripted.submitted).toHaveLength(1);
  });
});
