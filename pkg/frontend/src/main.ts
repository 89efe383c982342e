import { ApiClient } from "./api.js";
import { actionForKey } from "./keyboard.js";
import { ReviewQueueController } from "./queue.js";
import { renderDashboard, renderQueue, renderSpeciesOptions } from "./view.js";

const api = new ApiClient("");
let speciesLabels: string[] = [];

const queueEl = document.getElementById("queue")!;
const dashboardEl = document.getElementById("dashboard")!;
const noticeEl = document.getElementById("notice")!;
const badgeEl = document.getElementById("labeled-badge")!;
const speciesListEl = document.getElementById("species-list")!;
const fromEl = document.getElementById("from") as HTMLInputElement;
const toEl = document.getElementById("to") as HTMLInputElement;

const controller = new ReviewQueueController(api, {
  onChange: render,
  onNotice: showNotice,
});

let noticeTimer: number | undefined;
function showNotice(message: string): void {
  noticeEl.textContent = message;
  noticeEl.classList.add("visible");
  window.clearTimeout(noticeTimer);
  noticeTimer = window.setTimeout(() => noticeEl.classList.remove("visible"), 4000);
}

function render(): void {
  queueEl.innerHTML = renderQueue(controller.cards, controller.loading);
  badgeEl.textContent = String(controller.labeledCount);
}

async function refreshDashboard(): Promise<void> {
  try {
    const summary = await api.dailySummary(fromEl.value || undefined, toEl.value || undefined);
    dashboardEl.innerHTML = renderDashboard(summary.days);
  } catch (e) {
    dashboardEl.innerHTML = `<p class="error">daily summary unavailable: ${(e as Error).message}</p>`;
  }
}

// keyboard-first flow: keys act on the front (oldest) card
document.addEventListener("keydown", (ev) => {
  if ((ev.target as HTMLElement)?.tagName === "INPUT") return;
  const front = controller.front();
  if (!front) return;
  const action = actionForKey(ev.key);
  if (action.kind === "select") {
    controller.selectCandidate(front.item.id, action.candidate);
  } else if (action.kind === "reject") {
    void controller.reject(front.item.id);
  } else if (action.kind === "confirm") {
    void controller.confirmSelected(front.item.id);
  }
});

// clicks: candidate select, confirm/reject buttons, manual species search
queueEl.addEventListener("click", (ev) => {
  const target = ev.target as HTMLElement;
  const candidate = target.closest<HTMLElement>(".candidate");
  if (candidate) {
    controller.selectCandidate(candidate.dataset.item!, Number(candidate.dataset.candidate));
    return;
  }
  const button = target.closest<HTMLElement>("button[data-action]");
  if (!button) return;
  const itemId = button.dataset.item!;
  if (button.dataset.action === "confirm") void controller.confirmSelected(itemId);
  if (button.dataset.action === "reject") void controller.reject(itemId);
});

queueEl.addEventListener("change", (ev) => {
  const input = ev.target as HTMLInputElement;
  if (input.dataset?.action !== "search") return;
  const index = speciesLabels.indexOf(input.value);
  if (index >= 0) {
    void controller.label(input.dataset.item!, index);
  } else if (input.value) {
    showNotice(`unknown species: ${input.value}`);
  }
});

// infinite scroll via the API cursor
window.addEventListener("scroll", () => {
  if (window.innerHeight + window.scrollY >= document.body.offsetHeight - 240) {
    void controller.loadMore();
  }
});

document.getElementById("range-apply")!.addEventListener("click", () => {
  void refreshDashboard();
});

async function init(): Promise<void> {
  try {
    const health = await api.health();
    speciesLabels = health.species_labels;
    speciesListEl.innerHTML = renderSpeciesOptions(speciesLabels);
  } catch (e) {
    showNotice(`API unreachable: ${(e as Error).message}; retrying…`);
    window.setTimeout(() => void init(), 3000);
    return;
  }
  await controller.loadMore();
  await refreshDashboard();
}

void init();
