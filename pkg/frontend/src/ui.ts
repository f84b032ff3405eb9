import { AnswerChoice, Item } from "./api.js";
import { HistoryRound, SessionStore, UiState, questionKey } from "./state.js";

const CHOICES: AnswerChoice[] = ["yes", "no", "skip"];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderItemCard(item: Item, heading: string): HTMLElement {
  const card = el("div", "item-card");
  card.appendChild(el("div", "item-heading", heading));
  card.appendChild(el("h2", "item-title", item.title));
  const chips = el("div", "av-chips");
  for (const pair of item.av_pairs) {
    chips.appendChild(el("span", "chip", `${pair.aspect}: ${pair.value}`));
  }
  card.appendChild(chips);
  return card;
}

function renderQuestions(state: UiState, store: SessionStore): HTMLElement {
  const wrap = el("div", "questions");
  if (state.pending.length === 0 && !state.finished) {
    wrap.appendChild(el("p", "muted", "No more questions for this item."));
  }
  for (const question of state.pending) {
    const row = el("div", "question-row");
    row.appendChild(el("span", "question-text", question.text));
    const buttons = el("div", "answer-buttons");
    for (const choice of CHOICES) {
      const button = el("button", "answer", choice);
      button.dataset.aspect = question.aspect;
      button.dataset.value = question.value;
      button.dataset.choice = choice;
      if (state.selections[questionKey(question)] === choice) {
        button.classList.add("selected");
      }
      button.disabled = state.inFlight;
      button.addEventListener("click", () => store.setAnswer(question, choice));
      buttons.appendChild(button);
    }
    row.appendChild(buttons);
    wrap.appendChild(row);
  }
  return wrap;
}

function renderHistory(history: HistoryRound[]): HTMLElement {
  const wrap = el("div", "history");
  if (history.length) wrap.appendChild(el("h3", undefined, "Session timeline"));
  for (const round of history) {
    const entry = el("div", "history-round");
    entry.appendChild(el("div", "history-head", `Round ${round.iteration}: ${round.item.title}`));
    const marks = el("div", "history-answers");
    for (const answer of round.answers) {
      if (answer.answer === "skip") continue;
      const mark = answer.answer === "yes" ? "✓" : "✗";
      marks.appendChild(
        el("span", `mark ${answer.answer}`, `${mark} ${answer.aspect}: ${answer.value}`),
      );
    }
    entry.appendChild(marks);
    wrap.appendChild(entry);
  }
  return wrap;
}

export function render(root: HTMLElement, store: SessionStore): void {
  const state = store.getState();
  root.textContent = "";

  if (state.error) {
    const banner = el("div", "error-banner", state.error);
    root.appendChild(banner);
  }

  if (state.currentItem) {
    const status = state.finished
      ? `Session finished after ${state.iteration} round(s).`
      : `Round ${state.iteration}` +
        (state.personalization ? "" : " (not personalized)");
    root.appendChild(renderItemCard(state.currentItem, status));
    if (!state.finished) {
      root.appendChild(renderQuestions(state, store));
      const next = el("button", "next-round", state.inFlight ? "..." : "Send answers");
      next.id = "next-round";
      next.disabled = state.inFlight;
      next.addEventListener("click", () => void store.answerRound());
      root.appendChild(next);
    } else {
      root.appendChild(el("div", "summary", "End of session."));
    }
    root.appendChild(renderHistory(state.history));
  } else if (state.inFlight) {
    root.appendChild(el("p", "muted", "Searching..."));
  }
}

export function mount(root: HTMLElement, store: SessionStore): void {
  const form = el("form", "search-form");
  const user = el("input") as HTMLInputElement;
  user.placeholder = "user id (optional)";
  user.id = "user-input";
  const query = el("input") as HTMLInputElement;
  query.placeholder = "what are you shopping for?";
  query.id = "query-input";
  const go = el("button", undefined, "Search");
  go.type = "submit";
  form.append(user, query, go);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    if (!query.value.trim()) {
      alertBox.textContent = "Please enter a query.";
      return;
    }
    alertBox.textContent = "";
    void store.startSearch(user.value, query.value).then(() => {
      const sid = store.getState().sessionId;
      if (sid) window.location.hash = sid;
    });
  });

  const alertBox = el("div", "form-alert");
  const app = el("div");
  app.id = "session-root";
  root.append(form, alertBox, app);
  store.subscribe(() => render(app, store));

  const fromHash = window.location.hash.replace(/^#/, "");
  if (fromHash) {
    void store.restore(fromHash);
  }
}
