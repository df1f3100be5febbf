import { beforeEach, describe, expect, test } from "vitest";

import { DraftStore, canSubmit, effectiveMoment, emptyDraft } from "../src/draft.js";

describe("draft state", () => {
  test("submit gate requires moment, score, and text", () => {
    const draft = emptyDraft("v1");
    expect(canSubmit(draft)).toBe(false);
    draft.moment = 4.2;
    expect(canSubmit(draft)).toBe(false);
    draft.score = 0.7;
    expect(canSubmit(draft)).toBe(false);
    draft.explanation = "   ";
    expect(canSubmit(draft)).toBe(false);
    draft.explanation = "i will stop";
    expect(canSubmit(draft)).toBe(true);
  });

  test("effective moment applies the fine-tune offset with clamping", () => {
    const draft = { ...emptyDraft("v1"), moment: 4.2, fineTuneOffset: 0.3 };
    expect(effectiveMoment(draft, 10)).toBeCloseTo(4.5, 10);
    draft.fineTuneOffset = 99;
    expect(effectiveMoment(draft, 10)).toBe(10);
    draft.fineTuneOffset = -99;
    expect(effectiveMoment(draft, 10)).toBe(0);
  });

  test("out-of-range capture is passed through, not silently repaired", () => {
    const draft = { ...emptyDraft("v1"), moment: 99, fineTuneOffset: 0 };
    expect(effectiveMoment(draft, 10)).toBe(99);
  });
});

describe("draft persistence", () => {
  beforeEach(() => window.localStorage.clear());

  test("round-trips through storage until cleared", () => {
    const store = new DraftStore(window.localStorage, "a1");
    const draft = {
      vid: "v7",
      moment: 3.4,
      score: 0.55,
      explanation: "i slow down",
      fineTuneOffset: 0.1,
    };
    store.save(draft);
    expect(store.load("v7")).toEqual(draft);
    store.clear("v7");
    expect(store.load("v7")).toEqual(emptyDraft("v7"));
  });

  test("drafts are namespaced per annotator", () => {
    const a = new DraftStore(window.localStorage, "a1");
    const b = new DraftStore(window.localStorage, "a2");
    a.save({ ...emptyDraft("v1"), moment: 2 });
    expect(b.load("v1").moment).toBeNull();
  });

  test("corrupt storage degrades to an empty draft", () => {
    window.localStorage.setItem("xnec-draft/a1/v1", "{not json");
    const store = new DraftStore(window.localStorage, "a1");
    expect(store.load("v1")).toEqual(emptyDraft("v1"));
  });
});
