// @vitest-environment jsdom
import { beforeEach, describe, expect, it, vi } from "vitest";

import { SessionApi, SessionRound } from "../src/api.js";
import { SessionStore } from "../src/state.js";
import { mount, render } from "../src/ui.js";

function round(overrides: Partial<SessionRound> = {}): SessionRound {
  return {
    session_id: "s1",
    iteration: 1,
    shown_item: {
      item_id: "i0001",
      title: "Item i0001",
      av_pairs: [
        { aspect: "color", value: "red", mentions: 3 },
        { aspect: "fit", value: "snug", mentions: 1 },
      ],
    },
    questions: [{ aspect: "color", value: "red", text: "Do you want color to be red?" }],
    personalization: false,
    finished: false,
    ...overrides,
  };
}

function storeWith(payloads: Record<string, unknown>): SessionStore {
  const fetchFn = vi.fn(async (url: RequestInfo | URL) => {
    const payload = payloads[String(url)];
    if (!payload) return new Response(JSON.stringify({ detail: "missing" }), { status: 404 });
    return new Response(JSON.stringify(payload), { status: 200 });
  });
  return new SessionStore(new SessionApi("", fetchFn as unknown as typeof fetch));
}

beforeEach(() => {
  document.body.innerHTML = '<div id="app"></div>';
  window.location.hash = "";
});

describe("ui rendering", () => {
  it("renders the item card with aspect-value chips and questions", async () => {
    const store = storeWith({ "/sessions": round() });
    const app = document.getElementById("app")!;
    await store.startSearch("u1", "case");
    render(app, store);
    expect(app.querySelector(".item-title")?.textContent).toBe("Item i0001");
    const chips = [...app.querySelectorAll(".chip")].map((c) => c.textContent);
    expect(chips).toEqual(["color: red", "fit: snug"]);
    expect(app.querySelectorAll(".question-row")).toHaveLength(1);
    expect(app.querySelectorAll("button.answer")).toHaveLength(3);
  });

  it("selecting no marks the button and the history shows a cross after the round", async () => {
    const second = round({
      iteration: 2,
      shown_item: { item_id: "i0002", title: "Item i0002", av_pairs: [] },
      questions: [],
    });
    const store = storeWith({ "/sessions": round(), "/sessions/s1/answers": second });
    const app = document.getElementById("app")!;
    store.subscribe(() => render(app, store));
    await store.startSearch("u1", "case");
    const noButton = [...app.querySelectorAll<HTMLButtonElement>("button.answer")].find(
      (b) => b.dataset.choice === "no",
    )!;
    noButton.click();
    expect(
      [...app.querySelectorAll<HTMLButtonElement>("button.answer.selected")].map(
        (b) => b.dataset.choice,
      ),
    ).toEqual(["no"]);
    await store.answerRound();
    const marks = [...app.querySelectorAll(".mark")].map((m) => m.textContent);
    expect(marks).toContain("✗ color: red");
    expect(app.textContent).toContain("Round 2");
  });

  it("renders the end-of-session summary when finished", async () => {
    const store = storeWith({ "/sessions": round({ finished: true, questions: [] }) });
    const app = document.getElementById("app")!;
    await store.startSearch("u1", "case");
    render(app, store);
    expect(app.textContent).toContain("Session finished");
    expect(app.querySelector("#next-round")).toBeNull();
  });

  it("mount restores a deep-linked session from the hash", async () => {
    const snapshot = {
      session_id: "deadbeef",
      user_id: "u1",
      query: "case",
      iteration: 2,
      shown_items: [
        { item_id: "a", title: "Item a", av_pairs: [] },
        { item_id: "b", title: "Item b", av_pairs: [] },
      ],
      pending_questions: [],
      feedback: { positive: [], negative: [] },
      personalization: true,
      finished: false,
    };
    window.location.hash = "#deadbeef";
    const store = storeWith({ "/sessions/deadbeef": snapshot });
    mount(document.getElementById("app")!, store);
    await vi.waitFor(() => {
      expect(store.getState().sessionId).toBe("deadbeef");
    });
    expect(document.querySelectorAll(".history-round")).toHaveLength(2);
  });

  it("deep link to an unknown session shows an error state", async () => {
    window.location.hash = "#ghost";
    const store = storeWith({});
    mount(document.getElementById("app")!, store);
    await vi.waitFor(() => {
      expect(store.getState().error).toBeTruthy();
    });
    expect(document.querySelector(".error-banner")).not.toBeNull();
  });

  it("client-side validation message for an empty query", () => {
    const store = storeWith({});
    mount(document.getElementById("app")!, store);
    const form = document.querySelector("form")!;
    form.dispatchEvent(new Event("submit", { cancelable: true }));
    expect(document.querySelector(".form-alert")?.textContent).toMatch(/enter a query/i);
  });
});
