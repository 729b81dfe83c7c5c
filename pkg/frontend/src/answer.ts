/** The forced-choice answering screen: three stimuli, click the odd one out. */

import { SessionController } from "./state";

const SLOT_KEYS = ["1", "2", "3"];

export function renderAnswerScreen(root: HTMLElement, controller: SessionController): void {
  const state = controller.current;
  root.replaceChildren();

  const heading = document.createElement("h2");
  heading.textContent = "Which one does not belong?";
  root.appendChild(heading);

  if (state.banner) {
    // The question stays rendered below; clicking a stimulus again retries.
    const banner = document.createElement("div");
    banner.className = "banner";
    banner.setAttribute("role", "alert");
    banner.textContent = state.banner;
    root.appendChild(banner);
  }

  if (state.phase === "training") {
    const note = document.createElement("p");
    note.className = "training-note";
    note.textContent = "Training in progress; answering resumes when the model is ready.";
    root.appendChild(note);
    return;
  }

  const row = document.createElement("div");
  row.className = "stimulus-row";
  const question = state.question;
  if (question) {
    question.items.forEach((itemId, slot) => {
      const button = document.createElement("button");
      button.className = "stimulus";
      button.dataset.itemId = String(itemId);
      button.title = `choice ${slot + 1}`;
      const image = document.createElement("img");
      image.src = controller.client.stimulusUrl(question.stimuli[slot]);
      image.alt = `stimulus ${itemId}`;
      button.appendChild(image);
      button.addEventListener("click", () => void controller.answer(slot));
      row.appendChild(button);
    });
  }
  root.appendChild(row);

  const progress = document.createElement("p");
  progress.className = "progress";
  progress.textContent = `${state.answeredCount} answered`;
  root.appendChild(progress);

  if (controller.shouldPromptTraining) {
    const prompt = document.createElement("div");
    prompt.className = "train-prompt";
    const label = document.createElement("span");
    label.textContent = "Batch complete.";
    const trainButton = document.createElement("button");
    trainButton.className = "train-now";
    trainButton.textContent = "Train now";
    trainButton.addEventListener("click", () =>
      void controller.train().then(() => controller.waitUntilReady()),
    );
    prompt.append(label, trainButton);
    root.appendChild(prompt);
  }
}

/** Keyboard shortcuts 1/2/3 pick the corresponding stimulus. */
export function bindKeys(target: Document, controller: SessionController): () => void {
  const handler = (event: KeyboardEvent) => {
    const slot = SLOT_KEYS.indexOf(event.key);
    if (slot >= 0) void controller.answer(slot);
  };
  target.addEventListener("keydown", handler);
  return () => target.removeEventListener("keydown", handler);
}
