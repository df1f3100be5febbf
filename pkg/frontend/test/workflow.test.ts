/** Scripted browser-style test of the full annotation workflow against the
 * real annotation service running on the 12-clip synthetic fixture:
 * play -> Record -> score -> explain -> fine-tune -> submit, for every clip,
 * then verify the server export against the scripted capture times.
 */

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { afterAll, beforeAll, describe, expect, test } from "vitest";

import { ApiClient } from "../src/api.js";
import { AnnotationApp } from "../src/app.js";

const PYTHON = process.env.XNEC_PYTHON ?? "python3";
const PORT = 8000 + Math.floor(Math.random() * 1000);
const BASE = `http://127.0.0.1:${PORT}`;
const ANNOTATOR = "webtester";

let service: ChildProcess | null = null;

async function until(cond: () => boolean, ms = 5000, what = "condition"): Promise<void> {
  const deadline = Date.now() + ms;
  while (!cond()) {
    if (Date.now() > deadline) {
      throw new Error(`timed out waiting for ${what}`);
    }
    await new Promise((resolve) => setTimeout(resolve, 25));
  }
}

beforeAll(async () => {
  const workdir = mkdtempSync(join(tmpdir(), "xnec-ui-"));
  execFileSync(PYTHON, [
    "-m", "xnec.cli", "fixture", "--out", workdir, "--mode", "labeled",
    "--high", "7", "--low", "5", "--seed", "3",
  ]);
  const manifest = join(workdir, "manifest.json");
  const log = join(workdir, "events.jsonl");
  const launcher =
    "from xnec.service import ServiceConfig, run_service; " +
    `run_service(ServiceConfig(corpus_path=r'${manifest}', log_path=r'${log}', ` +
    `seed=1, port=${PORT}))`;
  service = spawn(PYTHON, ["-c", launcher], { stdio: "ignore" });

  const deadline = Date.now() + 120_000;
  for (;;) {
    try {
      const res = await fetch(`${BASE}/health`);
      if (res.ok) {
        break;
      }
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      throw new Error("annotation service did not come up");
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
});

afterAll(() => {
  service?.kill("SIGKILL");
});

describe("annotation workflow against the live service", () => {
  test("annotates all 12 fixture clips; export matches capture times", async () => {
    window.localStorage.clear();
    document.body.innerHTML = '<div id="app"></div>';
    const api = new ApiClient(BASE);
    const app = new AnnotationApp(
      api, ANNOTATOR, document.getElementById("app")!, window.localStorage,
    );
    await app.start();

    const expected = new Map<string, { moment: number; score: number; text: string }>();
    for (let i = 0; i < 12; i++) {
      await until(() => !app.video.dataset.vid ? false : !expected.has(app.video.dataset.vid),
        5000, `clip ${i} to load`);
      const vid = app.video.dataset.vid!;
      expect(app.progress.textContent).toBe(`${i}/12`);
      expect(app.recordBtn.disabled).toBe(true); // playback not started yet

      const captureAt = 2.0 + i * 0.4;
      app.video.currentTime = captureAt;
      app.video.dispatchEvent(new Event("play"));
      await until(() => !app.recordBtn.disabled, 2000, "record to enable");
      app.recordBtn.click();
      expect(app.dialog.hidden).toBe(false);

      const score = Math.round((0.15 + (i % 8) * 0.1) * 100) / 100;
      app.scoreSlider.value = String(score);
      app.scoreSlider.dispatchEvent(new Event("input"));
      const text = `i am explaining scripted moment ${i}`;
      app.explanation.value = text;
      app.explanation.dispatchEvent(new Event("input"));

      // fine-tune one frame forward on every third clip, one back on every
      // fourth; captures stay within +-0.1 s of the scripted times
      let offset = 0;
      if (i % 3 === 0) {
        app.stepForward.click();
        offset = 0.1;
      } else if (i % 4 === 0) {
        app.stepBack.click();
        offset = -0.1;
      }
      expected.set(vid, { moment: captureAt + offset, score, text });

      expect(app.submitBtn.disabled).toBe(false);
      app.submitBtn.click();
      await until(
        () => app.dialog.hidden && app.video.dataset.vid !== vid || !app.donePanel.hidden,
        10_000,
        `submission ${i} to ack`,
      );
    }

    expect(app.donePanel.hidden).toBe(false);
    expect(app.progress.textContent).toBe("12/12");

    const exportText = await (await fetch(`${BASE}/export.csv`)).text();
    const rows = exportText.trim().split(/\r?\n/).slice(1);
    expect(rows).toHaveLength(12);
    for (const row of rows) {
      const [vid, annotator, momentText, scoreText, ...textParts] = row.split(",");
      expect(annotator).toBe(ANNOTATOR);
      const want = expected.get(vid!)!;
      expect(want).toBeDefined();
      const moment = Number(momentText);
      expect(Math.abs(moment - want.moment)).toBeLessThanOrEqual(0.1 + 1e-9);
      expect(Number(scoreText)).toBeCloseTo(want.score, 9);
      expect(textParts.join(",")).toBe(want.text);
    }
  });

  test("server-side validation surfaces as an inline field error", async () => {
    // fresh annotator so the session starts at clip one
    window.localStorage.clear();
    document.body.innerHTML = '<div id="app"></div>';
    const app = new AnnotationApp(
      new ApiClient(BASE), "validator", document.getElementById("app")!,
      window.localStorage,
    );
    await app.start();
    await until(() => Boolean(app.video.dataset.vid), 5000, "first clip");

    app.video.currentTime = 99.0; // beyond the 10 s clip
    app.video.dispatchEvent(new Event("play"));
    app.recordBtn.click();
    app.scoreSlider.value = "0.5";
    app.scoreSlider.dispatchEvent(new Event("input"));
    app.explanation.value = "too late";
    app.explanation.dispatchEvent(new Event("input"));
    const vid = app.video.dataset.vid;
    app.submitBtn.click();
    await until(() => !app.fieldError.hidden, 5000, "field error");
    expect(app.fieldError.textContent).toContain("moment");
    expect(app.video.dataset.vid).toBe(vid); // no advance
  });
});
