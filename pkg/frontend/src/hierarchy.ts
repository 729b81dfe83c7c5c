/** Collapsible dendrogram of the current tree, with per-node summaries. */

import { Client, TreeNodePayload } from "./api";

const THUMBNAIL_LIMIT = 12;

export interface HierarchyOptions {
  /** Show the stale badge: answers arrived after the last training. */
  stale: boolean;
}

export function renderHierarchyScreen(
  root: HTMLElement,
  tree: TreeNodePayload | null,
  client: Client,
  options: HierarchyOptions = { stale: false },
): void {
  root.replaceChildren();

  const heading = document.createElement("h2");
  heading.textContent = "Extracted hierarchy";
  root.appendChild(heading);

  if (tree === null) {
    const placeholder = document.createElement("p");
    placeholder.className = "placeholder";
    placeholder.textContent = "No hierarchy yet. Answer a batch of questions and train first.";
    root.appendChild(placeholder);
    return;
  }

  if (options.stale) {
    const stale = document.createElement("div");
    stale.className = "stale";
    stale.textContent = "New answers since the last training; retrain to refresh this tree.";
    root.appendChild(stale);
  }

  root.appendChild(renderNode(tree, client));
}

function renderNode(node: TreeNodePayload, client: Client): HTMLElement {
  const details = document.createElement("details");
  details.className = "node";
  details.open = true;
  details.dataset.nodeId = String(node.id);

  const summary = document.createElement("summary");
  summary.appendChild(badge("count", `${node.members.length} items`));
  if (node.majority_label) {
    summary.appendChild(badge("label", node.majority_label));
  }
  // Perfect nodes carry no badge; only imperfect ones get flagged.
  if (node.accuracy !== null && node.accuracy < 1) {
    summary.appendChild(badge("accuracy", `${(node.accuracy * 100).toFixed(0)}%`));
  }
  details.appendChild(summary);

  if (node.children.length === 0) {
    details.appendChild(renderThumbnails(node.members, client));
  } else {
    const children = document.createElement("div");
    children.className = "children";
    for (const child of node.children) {
      children.appendChild(renderNode(child, client));
    }
    details.appendChild(children);
  }
  return details;
}

function renderThumbnails(members: number[], client: Client): HTMLElement {
  const strip = document.createElement("div");
  strip.className = "thumbnails";
  for (const itemId of members.slice(0, THUMBNAIL_LIMIT)) {
    const image = document.createElement("img");
    image.className = "thumbnail";
    image.src = client.stimulusUrl(`/stimuli/${itemId}`);
    image.alt = `item ${itemId}`;
    strip.appendChild(image);
  }
  if (members.length > THUMBNAIL_LIMIT) {
    const more = document.createElement("span");
    more.className = "more";
    more.textContent = `+${members.length - THUMBNAIL_LIMIT} more`;
    strip.appendChild(more);
  }
  return strip;
}

function badge(kind: string, text: string): HTMLElement {
  const span = document.createElement("span");
  span.className = `badge ${kind}`;
  span.textContent = text;
  return span;
}
