/** Single-page wiring: hash routing between answering and hierarchy views. */

import { Client } from "./api";
import { bindKeys, renderAnswerScreen } from "./answer";
import { renderHierarchyScreen } from "./hierarchy";
import { SessionController } from "./state";

const SESSION_KEY = "hke-session-id";

export function mount(root: HTMLElement, client = new Client(), trainPromptAt = 300): SessionController {
  const controller = new SessionController(client, trainPromptAt);
  const nav = document.createElement("nav");
  const answerLink = document.createElement("a");
  answerLink.href = "#answer";
  answerLink.textContent = "Answer";
  const treeLink = document.createElement("a");
  treeLink.href = "#tree";
  treeLink.textContent = "Hierarchy";
  nav.append(answerLink, treeLink);
  const view = document.createElement("main");
  root.replaceChildren(nav, view);

  const redraw = () => {
    if (window.location.hash === "#tree") {
      renderHierarchyScreen(view, controller.current.tree, client, {
        stale: controller.treeIsStale,
      });
    } else {
      renderAnswerScreen(view, controller);
    }
  };

  controller.subscribe(redraw);
  window.addEventListener("hashchange", redraw);
  bindKeys(document, controller);
  redraw();
  return controller;
}

/** Reuse the session id across refreshes; all state comes from the server. */
export async function boot(root: HTMLElement): Promise<SessionController> {
  const controller = mount(root);
  const existing = window.sessionStorage.getItem(SESSION_KEY);
  if (existing) {
    try {
      await controller.resume(existing);
      return controller;
    } catch {
      window.sessionStorage.removeItem(SESSION_KEY);
    }
  }
  await controller.start("anonymous");
  const sessionId = controller.current.sessionId;
  if (sessionId) window.sessionStorage.setItem(SESSION_KEY, sessionId);
  return controller;
}

declare global {
  interface Window {
    hkeBootstrapped?: boolean;
  }
}

if (typeof window !== "undefined" && !window.hkeBootstrapped && document.getElementById("app")) {
  window.hkeBootstrapped = true;
  void boot(document.getElementById("app") as HTMLElement);
}
