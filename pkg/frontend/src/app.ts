/** Annotation workflow page: play the clip, press Record at the moment that
 * needs an explanation, enter a necessity score and a first-person
 * explanation, fine-tune the moment by single frames, submit, advance.
 */

import { ApiClient, NextClip } from "./api.js";
import {
  DraftStore,
  UiAnnotationDraft,
  canSubmit,
  effectiveMoment,
  emptyDraft,
} from "./draft.js";

export const FRAME_STEP_S = 0.1; // one frame at the corpus 10 Hz rate

export class AnnotationApp {
  private draft: UiAnnotationDraft = emptyDraft("");
  private current: NextClip | null = null;
  private playbackStarted = false;
  private revising = false; // true after back-navigation to a submitted clip
  private lastSubmittedVid: string | null = null;

  readonly video: HTMLVideoElement;
  readonly recordBtn: HTMLButtonElement;
  readonly dialog: HTMLElement;
  readonly scoreSlider: HTMLInputElement;
  readonly scoreEcho: HTMLElement;
  readonly explanation: HTMLTextAreaElement;
  readonly stepBack: HTMLButtonElement;
  readonly stepForward: HTMLButtonElement;
  readonly momentLabel: HTMLElement;
  readonly submitBtn: HTMLButtonElement;
  readonly backBtn: HTMLButtonElement;
  readonly progress: HTMLElement;
  readonly banner: HTMLElement;
  readonly retryBtn: HTMLButtonElement;
  readonly fieldError: HTMLElement;
  readonly donePanel: HTMLElement;

  constructor(
    private readonly api: ApiClient,
    private readonly annotatorId: string,
    private readonly root: HTMLElement,
    storage: Storage,
    private readonly drafts = new DraftStore(storage, annotatorId),
  ) {
    root.innerHTML = `
      <section class="player">
        <video id="clip-video" controls></video>
        <div class="controls">
          <button id="record" disabled>Record</button>
          <button id="back-nav" disabled>Back</button>
          <span id="progress"></span>
        </div>
      </section>
      <section id="dialog" hidden>
        <p>Moment: <strong id="moment-label"></strong> s
          <button id="step-back">-1 frame</button>
          <button id="step-forward">+1 frame</button>
        </p>
        <label>How necessary is an explanation here?
          <input id="score" type="range" min="0" max="1" step="0.01" value="0.5" />
          <output id="score-echo"></output>
        </label>
        <label>Explanation (first person)
          <textarea id="explanation" rows="3"></textarea>
        </label>
        <p id="field-error" class="error" hidden></p>
        <button id="submit" disabled>Submit</button>
      </section>
      <section id="banner" class="banner" hidden>
        <span>Could not reach the server; your draft is saved locally.</span>
        <button id="retry">Retry</button>
      </section>
      <section id="done" hidden>All clips annotated. Thank you!</section>
    `;
    const get = <T extends HTMLElement>(id: string): T =>
      root.querySelector<T>(`#${id}`)!;
    this.video = get<HTMLVideoElement>("clip-video");
    this.recordBtn = get<HTMLButtonElement>("record");
    this.backBtn = get<HTMLButtonElement>("back-nav");
    this.dialog = get("dialog");
    this.scoreSlider = get<HTMLInputElement>("score");
    this.scoreEcho = get("score-echo");
    this.explanation = get<HTMLTextAreaElement>("explanation");
    this.stepBack = get<HTMLButtonElement>("step-back");
    this.stepForward = get<HTMLButtonElement>("step-forward");
    this.momentLabel = get("moment-label");
    this.submitBtn = get<HTMLButtonElement>("submit");
    this.progress = get("progress");
    this.banner = get("banner");
    this.retryBtn = get<HTMLButtonElement>("retry");
    this.fieldError = get("field-error");
    this.donePanel = get("done");
    this.wire();
  }

  private wire(): void {
    const markPlaying = () => {
      this.playbackStarted = true;
      this.recordBtn.disabled = this.current?.done !== false;
    };
    this.video.addEventListener("play", markPlaying);
    this.video.addEventListener("timeupdate", markPlaying);

    this.recordBtn.addEventListener("click", () => this.onRecord());
    this.scoreSlider.addEventListener("input", () => {
      this.draft.score = Number(this.scoreSlider.value);
      this.scoreEcho.textContent = this.scoreSlider.value;
      this.persist();
    });
    this.explanation.addEventListener("input", () => {
      this.draft.explanation = this.explanation.value;
      this.persist();
    });
    this.stepBack.addEventListener("click", () => this.nudge(-FRAME_STEP_S));
    this.stepForward.addEventListener("click", () => this.nudge(FRAME_STEP_S));
    this.submitBtn.addEventListener("click", () => void this.onSubmit());
    this.retryBtn.addEventListener("click", () => void this.onSubmit());
    this.backBtn.addEventListener("click", () => void this.onBack());
  }

  async start(): Promise<void> {
    await this.loadNext();
  }

  // -- clip loading -----------------------------------------------------

  private async loadNext(): Promise<void> {
    const next = await this.api.nextClip(this.annotatorId);
    this.revising = false;
    this.showClip(next);
  }

  private async onBack(): Promise<void> {
    if (!this.lastSubmittedVid || !this.current) {
      return;
    }
    // revisit the previously submitted clip; a resubmission becomes a PUT
    const clip: NextClip = {
      done: false,
      vid: this.lastSubmittedVid,
      duration: this.current.duration,
      video_url: `/clips/${this.lastSubmittedVid}/video`,
      progress: this.current.progress,
      total: this.current.total,
    };
    this.revising = true;
    this.showClip(clip);
  }

  private showClip(clip: NextClip): void {
    this.current = clip;
    this.progress.textContent = `${clip.progress}/${clip.total}`;
    this.backBtn.disabled = this.lastSubmittedVid === null;
    if (clip.done) {
      this.donePanel.hidden = false;
      this.dialog.hidden = true;
      this.recordBtn.disabled = true;
      return;
    }
    this.donePanel.hidden = true;
    this.playbackStarted = false;
    this.recordBtn.disabled = true; // enabled once playback starts
    this.video.src = this.api.url(clip.video_url!);
    this.video.dataset.vid = clip.vid!;
    try {
      const playing = this.video.play?.();
      if (playing) void playing.catch(() => undefined);
    } catch {
      // autoplay blocked (or jsdom): the user presses play themselves
    }
    this.draft = this.drafts.load(clip.vid!);
    if (this.draft.moment !== null) {
      this.openDialog(); // reload recovery: resume the saved draft
    } else {
      this.dialog.hidden = true;
    }
  }

  // -- record / fine-tune -----------------------------------------------

  private onRecord(): void {
    if (!this.playbackStarted || !this.current || this.current.done) {
      return;
    }
    this.draft.moment = this.video.currentTime;
    this.draft.fineTuneOffset = 0;
    this.persist();
    try {
      this.video.pause?.();
    } catch {
      // jsdom has no media pipeline
    }
    this.openDialog();
  }

  private nudge(delta: number): void {
    if (this.draft.moment === null || !this.current?.duration) {
      return;
    }
    const duration = this.current.duration;
    const next = effectiveMoment(this.draft, duration) + delta;
    this.draft.fineTuneOffset =
      Math.min(Math.max(next, 0), duration) - this.draft.moment;
    this.persist();
    this.refreshDialog();
  }

  private openDialog(): void {
    this.dialog.hidden = false;
    this.fieldError.hidden = true;
    if (this.draft.score !== null) {
      this.scoreSlider.value = String(this.draft.score);
    }
    this.scoreEcho.textContent = this.draft.score === null ? "" : this.scoreSlider.value;
    this.explanation.value = this.draft.explanation;
    this.refreshDialog();
  }

  private refreshDialog(): void {
    const duration = this.current?.duration ?? 0;
    this.momentLabel.textContent =
      this.draft.moment === null ? "" : effectiveMoment(this.draft, duration).toFixed(1);
    this.submitBtn.disabled = !canSubmit(this.draft);
  }

  private persist(): void {
    this.drafts.save(this.draft);
    this.refreshDialog();
  }

  // -- submission ---------------------------------------------------------

  private async onSubmit(): Promise<void> {
    if (!this.current?.vid || !canSubmit(this.draft)) {
      return;
    }
    this.banner.hidden = true;
    const payload = {
      vid: this.current.vid,
      annotator_id: this.annotatorId,
      moment: effectiveMoment(this.draft, this.current.duration ?? Infinity),
      score: this.draft.score!,
      explanation: this.draft.explanation,
    };
    const result = await this.api.submit(payload, this.revising);
    if (result.ok) {
      this.drafts.clear(this.current.vid);
      this.lastSubmittedVid = this.current.vid;
      this.dialog.hidden = true;
      await this.loadNext();
      return;
    }
    if (result.kind === "field") {
      this.fieldError.textContent = `${result.field}: ${result.message}`;
      this.fieldError.hidden = false;
      return; // no advance, draft intact
    }
    // conflict or network trouble: keep the draft, offer retry
    this.banner.hidden = false;
  }
}
